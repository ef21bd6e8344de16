// t2s: synthetic data, DVQ-VAE and GPT training, encoding, decoding and
// generation from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 data or model error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "t2s/checkpoint.hpp"
#include "t2s/formats.hpp"
#include "t2s/gradcheck.hpp"
#include "t2s/stats.hpp"
#include "t2s/synthetic.hpp"

namespace fs = std::filesystem;
using namespace t2s;

namespace {

std::vector<std::uint8_t> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, std::span<const std::uint8_t> bytes) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& p, const std::string& s) {
    write_file(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string seq_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%05zu", i);
    return buf;
}

// Config file: {"dvq": {...}, "gpt": {...}}; --config wins over T2S_CONFIG.
nlohmann::json load_config(const std::string& flag) {
    std::string path = flag;
    if (path.empty())
        if (const char* env = std::getenv("T2S_CONFIG")) path = env;
    if (path.empty()) return nlohmann::json::object();
    const auto bytes = read_file(path);
    try {
        auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
        if (!j.is_object()) throw ConfigError(path + ": top level must be an object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

struct Corpus {
    std::vector<std::string> names;
    std::vector<Tensor<float>> frames;
    std::vector<stats::SegmentRecord> segments;
};

Corpus load_corpus(const fs::path& dir) {
    const auto bytes = read_file(dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
    Corpus c;
    for (const auto& s : manifest.at("sequences")) {
        const std::string name = s.at("name");
        c.names.push_back(name);
        c.frames.push_back(io::read_sequence(read_file(dir / (name + ".tseq"))).to_tensor());
        c.segments.push_back({s.at("tokens").get<std::vector<std::uint32_t>>(),
                              s.at("lengths").get<std::vector<std::uint32_t>>()});
    }
    if (c.names.empty()) throw EmptyInputError(dir.string() + ": manifest lists no sequences");
    return c;
}

std::vector<std::uint32_t> parse_tokens(const std::string& s) {
    std::vector<std::uint32_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(static_cast<std::uint32_t>(std::stoul(item)));
        } catch (const std::exception&) {
            throw CLI::ValidationError("--tokens", "'" + item + "' is not a token id");
        }
    }
    return out;
}

struct Common {
    std::uint64_t seed = 0;
    std::string config;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "Seed for all randomness")->capture_default_str();
    app->add_option("--config", c.config, "JSON config with 'dvq' / 'gpt' sections (default: $T2S_CONFIG)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sign-sequence workbench: DVQ-VAE coding and code GPT"};
    app.require_subcommand(1);

    // gen-data
    Common gen_c;
    synth::SyntheticSpec spec;
    std::string gen_out, mode = "uniform";
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic piecewise-constant corpus");
    add_common(gen, gen_c);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--num", spec.num_sequences, "Number of sequences")->capture_default_str();
    gen->add_option("--dim", spec.dim, "Frame dimension")->capture_default_str();
    gen->add_option("--min-segments", spec.min_segments)->capture_default_str();
    gen->add_option("--max-segments", spec.max_segments)->capture_default_str();
    gen->add_option("--min-length", spec.min_length, "Minimum frames per sequence")->capture_default_str();
    gen->add_option("--max-length", spec.max_length, "Maximum frames per sequence")->capture_default_str();
    gen->add_option("--min-segment-length", spec.min_segment_length)->capture_default_str();
    gen->add_option("--length-mode", mode, "Segment length weights")->check(CLI::IsMember({"uniform", "geometric"}))->capture_default_str();
    gen->add_option("--geometric-p", spec.geometric_p)->capture_default_str();
    gen->add_option("--vocab", spec.vocab_size, "Number of distinct segment values")->capture_default_str();
    gen->add_option("--noise", spec.noise, "Gaussian noise sigma")->capture_default_str();
    gen->add_option("--first-index", spec.first_index, "Index of the first sequence")->capture_default_str();

    // stats
    std::string stats_data, stats_csv, stats_json, stats_codes;
    auto* st = app.add_subcommand("stats", "Segment-length histograms overall and per token");
    Common st_c;
    add_common(st, st_c);
    st->add_option("--data", stats_data, "Corpus directory")->required();
    st->add_option("--csv", stats_csv, "Write histogram CSV here");
    st->add_option("--json", stats_json, "Write histogram JSON here");
    st->add_option("--codes", stats_codes, "Directory of encoded .tcod files for compression accounting");

    // train-dvq
    Common tdvq_c;
    std::string tdvq_data, tdvq_out, tdvq_log;
    long long tdvq_iters = -1;
    auto* tdvq = app.add_subcommand("train-dvq", "Train the DVQ-VAE");
    add_common(tdvq, tdvq_c);
    tdvq->add_option("--data", tdvq_data, "Corpus directory")->required();
    tdvq->add_option("--out", tdvq_out, "Checkpoint path")->required();
    tdvq->add_option("--log", tdvq_log, "Line-delimited JSON training log");
    tdvq->add_option("--iterations", tdvq_iters, "Override the configured iteration count");

    // encode
    Common enc_c;
    std::string enc_model, enc_in, enc_out;
    auto* enc = app.add_subcommand("encode", "Sequence file(s) to code stream(s)");
    add_common(enc, enc_c);
    enc->add_option("--model", enc_model, "DVQ-VAE checkpoint")->required();
    enc->add_option("--in", enc_in, "Sequence file, or corpus directory")->required();
    enc->add_option("--out", enc_out, "Code stream file, or output directory")->required();

    // decode
    Common dec_c;
    std::string dec_model, dec_in, dec_out;
    auto* dec = app.add_subcommand("decode", "Code stream to sequence file");
    add_common(dec, dec_c);
    dec->add_option("--model", dec_model, "DVQ-VAE checkpoint")->required();
    dec->add_option("--in", dec_in, "Code stream file")->required();
    dec->add_option("--out", dec_out, "Sequence file")->required();

    // train-gpt
    Common tgpt_c;
    std::string tgpt_data, tgpt_codes, tgpt_out, tgpt_log;
    long long tgpt_iters = -1;
    auto* tgpt = app.add_subcommand("train-gpt", "Train the code and duration transformers");
    add_common(tgpt, tgpt_c);
    tgpt->add_option("--data", tgpt_data, "Corpus directory (condition tokens)")->required();
    tgpt->add_option("--codes", tgpt_codes, "Directory of encoded .tcod files")->required();
    tgpt->add_option("--out", tgpt_out, "Checkpoint path")->required();
    tgpt->add_option("--log", tgpt_log, "Line-delimited JSON training log");
    tgpt->add_option("--iterations", tgpt_iters, "Override the configured iteration count");

    // generate
    Common gen2_c;
    std::string g_model, g_tokens, g_out, g_dvq, g_decoded, g_sampling = "greedy";
    std::size_t g_topk = 5, g_max_len = 64;
    double g_temp = 1.0;
    auto* g = app.add_subcommand("generate", "Condition tokens to a code stream");
    add_common(g, gen2_c);
    g->add_option("--model", g_model, "GPT checkpoint")->required();
    g->add_option("--tokens", g_tokens, "Comma-separated condition token ids")->required();
    g->add_option("--out", g_out, "Code stream file")->required();
    g->add_option("--sampling", g_sampling)->check(CLI::IsMember({"greedy", "top-k", "temperature"}))->capture_default_str();
    g->add_option("--top-k", g_topk)->capture_default_str();
    g->add_option("--temperature", g_temp)->capture_default_str();
    g->add_option("--max-len", g_max_len)->capture_default_str();
    g->add_option("--dvq", g_dvq, "DVQ-VAE checkpoint for decoding the result");
    g->add_option("--decoded", g_decoded, "Sequence file for the decoded result (needs --dvq)");

    // gradcheck
    Common gc_c;
    std::size_t gc_instances = 20;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every autodiff op");
    add_common(gc, gc_c);
    gc->add_option("--instances", gc_instances)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            spec.seed = gen_c.seed;
            spec.length_mode = mode == "geometric" ? synth::LengthMode::geometric : synth::LengthMode::uniform;
            const auto data = synth::gen_synthetic(spec);
            fs::create_directories(gen_out);
            nlohmann::json manifest;
            manifest["spec"] = {{"num_sequences", spec.num_sequences}, {"dim", spec.dim},
                                {"min_segments", spec.min_segments},   {"max_segments", spec.max_segments},
                                {"min_length", spec.min_length},       {"max_length", spec.max_length},
                                {"min_segment_length", spec.min_segment_length},
                                {"length_mode", mode},                 {"geometric_p", spec.geometric_p},
                                {"vocab_size", spec.vocab_size},       {"noise", spec.noise},
                                {"seed", spec.seed},                   {"first_index", spec.first_index}};
            manifest["sequences"] = nlohmann::json::array();
            std::string csv = "sequence,segment,token,start,length\n";
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto name = seq_name(spec.first_index + i);
                write_file(fs::path(gen_out) / (name + ".tseq"),
                           io::write_sequence(io::SequenceFile::from_tensor(data[i].frames)));
                manifest["sequences"].push_back(
                    {{"name", name}, {"tokens", data[i].tokens}, {"lengths", data[i].lengths}, {"starts", data[i].starts}});
                for (std::size_t s = 0; s < data[i].tokens.size(); ++s)
                    csv += name + "," + std::to_string(s) + "," + std::to_string(data[i].tokens[s]) + "," +
                           std::to_string(data[i].starts[s]) + "," + std::to_string(data[i].lengths[s]) + "\n";
            }
            write_text(fs::path(gen_out) / "manifest.json", manifest.dump(1) + "\n");
            write_text(fs::path(gen_out) / "segments.csv", csv);
            std::cout << "wrote " << data.size() << " sequences to " << gen_out << "\n";
        } else if (*st) {
            const auto corpus = load_corpus(stats_data);
            const auto report = stats::length_report(corpus.segments);
            if (!stats_csv.empty()) write_text(stats_csv, stats::to_csv(report));
            if (!stats_json.empty()) write_text(stats_json, stats::to_json(report));
            std::cout << "sequences " << report.sequences << "\nsegments " << report.segments << "\nframes "
                      << report.frames << "\ndistinct lengths " << report.overall.counts.size() << "\n";
            if (!stats_codes.empty()) {
                std::size_t frames = 0, codes = 0;
                for (const auto& name : corpus.names) {
                    const auto cs = io::read_code_stream(read_file(fs::path(stats_codes) / (name + ".tcod")));
                    codes += cs.codes.size();
                    for (auto d : cs.durations) frames += d;
                }
                std::cout << "codes " << codes << "\nmean downsampling rate " << stats::downsampling_rate(frames, codes)
                          << "\n";
            }
            if (stats_csv.empty() && stats_json.empty()) std::cout << stats::to_csv(report);
        } else if (*tdvq) {
            const auto cfg_json = load_config(tdvq_c.config);
            auto cfg = ckpt::dvq_config_from_json(cfg_json.value("dvq", nlohmann::json::object()));
            if (tdvq_iters >= 0) cfg.iterations = static_cast<std::size_t>(tdvq_iters);
            const auto corpus = load_corpus(tdvq_data);
            std::vector<dvq::Example> ex;
            for (std::size_t i = 0; i < corpus.frames.size(); ++i) ex.push_back({corpus.frames[i], corpus.segments[i].tokens});
            std::ofstream log;
            if (!tdvq_log.empty()) log.open(tdvq_log);
            dvq::TrainOptions opts;
            opts.seed = tdvq_c.seed;
            opts.on_record = [&](const dvq::TrainRecord& r) {
                if (log) log << dvq::to_json_line(r) << "\n";
                if (r.iteration % 100 == 0 || r.iteration + 1 == cfg.iterations)
                    std::cerr << dvq::to_json_line(r) << "\n";
                return true;
            };
            auto res = dvq::train(ex, cfg, opts);
            write_file(tdvq_out, ckpt::save(res.model));
            std::cout << "saved " << tdvq_out << "\n";
        } else if (*enc) {
            const auto model = ckpt::load_dvq(read_file(enc_model));
            auto encode_one = [&](const fs::path& in, const fs::path& out) {
                const auto seq = io::read_sequence(read_file(in));
                const auto r = model.encode(seq.to_tensor());
                io::CodeStreamFile cs{static_cast<std::uint32_t>(model.codebook().size()), r.code_indices, r.durations};
                write_file(out, io::write_code_stream(cs));
                return std::pair<std::size_t, std::size_t>{seq.rows, r.code_indices.size()};
            };
            if (fs::is_directory(enc_in)) {
                std::size_t frames = 0, codes = 0;
                for (const auto& name : load_corpus(enc_in).names) {
                    const auto [t, m] = encode_one(fs::path(enc_in) / (name + ".tseq"), fs::path(enc_out) / (name + ".tcod"));
                    frames += t;
                    codes += m;
                }
                std::cout << "encoded " << frames << " frames into " << codes << " codes, mean downsampling rate "
                          << stats::downsampling_rate(frames, codes) << "\n";
            } else {
                const auto [t, m] = encode_one(enc_in, enc_out);
                std::cout << "encoded " << t << " frames into " << m << " codes\n";
            }
        } else if (*dec) {
            const auto model = ckpt::load_dvq(read_file(dec_model));
            const auto cs = io::read_code_stream(read_file(dec_in));
            if (cs.codebook_size != model.codebook().size())
                throw CodebookError("code stream was written for K=" + std::to_string(cs.codebook_size) +
                                    ", model has K=" + std::to_string(model.codebook().size()));
            const auto frames = model.decode(cs.codes, cs.durations);
            write_file(dec_out, io::write_sequence(io::SequenceFile::from_tensor(frames)));
            std::cout << "decoded " << frames.rows() << " frames\n";
        } else if (*tgpt) {
            const auto cfg_json = load_config(tgpt_c.config);
            auto cfg = ckpt::gpt_config_from_json(cfg_json.value("gpt", nlohmann::json::object()));
            if (tgpt_iters >= 0) cfg.iterations = static_cast<std::size_t>(tgpt_iters);
            const auto corpus = load_corpus(tgpt_data);
            std::vector<gpt::GptExample> ex;
            for (std::size_t i = 0; i < corpus.names.size(); ++i) {
                const auto cs = io::read_code_stream(read_file(fs::path(tgpt_codes) / (corpus.names[i] + ".tcod")));
                if (cs.codebook_size != cfg.codebook_size)
                    throw ConfigError("code streams use K=" + std::to_string(cs.codebook_size) + " but the GPT config has " +
                                      std::to_string(cfg.codebook_size));
                ex.push_back({corpus.segments[i].tokens, cs.codes, cs.durations});
            }
            std::ofstream log;
            if (!tgpt_log.empty()) log.open(tgpt_log);
            gpt::TrainOptions opts;
            opts.seed = tgpt_c.seed;
            opts.on_record = [&](const gpt::TrainRecord& r) {
                if (log) log << gpt::to_json_line(r) << "\n";
                if (r.iteration % 100 == 0 || r.iteration + 1 == cfg.iterations)
                    std::cerr << gpt::to_json_line(r) << "\n";
                return true;
            };
            auto res = gpt::train(ex, cfg, opts);
            write_file(tgpt_out, ckpt::save(res.model));
            std::cout << "saved " << tgpt_out << "\n";
        } else if (*g) {
            if (!g_decoded.empty() && g_dvq.empty()) throw CLI::ValidationError("--decoded", "requires --dvq");
            const auto model = ckpt::load_gpt(read_file(g_model));
            gpt::Sampling sampling;
            sampling.mode = g_sampling == "greedy"  ? gpt::Sampling::Mode::greedy
                            : g_sampling == "top-k" ? gpt::Sampling::Mode::top_k
                                                    : gpt::Sampling::Mode::temperature;
            sampling.top_k = g_topk;
            sampling.temperature = g_temp;
            std::mt19937_64 rng(gen2_c.seed);
            const auto out = model.generate(parse_tokens(g_tokens), sampling, g_max_len, rng);
            io::CodeStreamFile cs{static_cast<std::uint32_t>(model.config().codebook_size), out.codes, out.durations};
            write_file(g_out, io::write_code_stream(cs));
            std::cout << "generated " << out.codes.size() << " codes" << (out.truncated ? " (truncated at max-len)" : "")
                      << "\n";
            if (!g_dvq.empty() && !g_decoded.empty()) {
                if (out.codes.empty()) throw EmptyInputError("generation is empty; nothing to decode");
                const auto dvq_model = ckpt::load_dvq(read_file(g_dvq));
                const auto frames = dvq_model.decode(out.codes, out.durations);
                write_file(g_decoded, io::write_sequence(io::SequenceFile::from_tensor(frames)));
                std::cout << "decoded " << frames.rows() << " frames\n";
            }
        } else if (*gc) {
            const auto reports = gradcheck::run_battery(gc_c.seed, gc_instances);
            bool ok = true;
            std::printf("%-28s %9s %12s %10s  %s\n", "op", "instances", "max_rel_err", "tolerance", "result");
            for (const auto& r : reports) {
                std::printf("%-28s %9zu %12.3e %10.0e  %s\n", r.op.c_str(), r.instances, r.max_rel_error, r.tolerance,
                            r.passed ? "pass" : "FAIL");
                ok = ok && r.passed;
            }
            return ok ? 0 : 2;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
