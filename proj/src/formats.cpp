#include "t2s/formats.hpp"

#include <bit>
#include <cstring>

namespace t2s::io {

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
}

void ByteReader::need(std::size_t n) const {
    if (b_.size() - pos_ < n)
        throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) +
                          ", have " + std::to_string(b_.size() - pos_) + ")");
}

std::uint8_t ByteReader::u8() {
    need(1);
    return b_[pos_++];
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
}

std::string ByteReader::str() {
    const auto n = u32();
    const auto s = bytes(n);
    return {s.begin(), s.end()};
}

void ByteReader::magic(const char (&m)[5]) {
    const auto s = bytes(4);
    if (std::memcmp(s.data(), m, 4) != 0) throw FormatError(what_ + ": bad magic, expected " + std::string(m));
}

void ByteReader::expect_end() const {
    if (pos_ != b_.size())
        throw FormatError(what_ + ": " + std::to_string(b_.size() - pos_) + " trailing bytes after payload");
}

SequenceFile SequenceFile::from_tensor(const Tensor<float>& frames) {
    SequenceFile f;
    f.rows = static_cast<std::uint32_t>(frames.rows());
    f.dim = static_cast<std::uint32_t>(frames.cols());
    f.width = 4;
    f.data.assign(frames.values().begin(), frames.values().end());
    return f;
}

Tensor<float> SequenceFile::to_tensor() const {
    std::vector<float> v(data.begin(), data.end());
    return Tensor<float>(Shape{rows, dim}, std::move(v));
}

std::vector<std::uint8_t> write_sequence(const SequenceFile& f) {
    if (f.width != 4 && f.width != 8) throw FormatError("sequence: float width must be 4 or 8");
    if (static_cast<std::size_t>(f.rows) * f.dim != f.data.size())
        throw FormatError("sequence: header declares " + std::to_string(f.rows) + "x" + std::to_string(f.dim) +
                          " but holds " + std::to_string(f.data.size()) + " values");
    ByteWriter w;
    w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("TSEQ"), 4));
    w.u32(kFormatVersion);
    w.u32(f.rows);
    w.u32(f.dim);
    w.u32(f.width);
    for (double v : f.data) {
        if (f.width == 4)
            w.f32(static_cast<float>(v));
        else
            w.f64(v);
    }
    return w.take();
}

SequenceFile read_sequence(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "sequence file");
    r.magic("TSEQ");
    const auto version = r.u32();
    if (version != kFormatVersion) throw FormatError("sequence file: unsupported version " + std::to_string(version));
    SequenceFile f;
    f.rows = r.u32();
    f.dim = r.u32();
    f.width = r.u32();
    if (f.width != 4 && f.width != 8) throw FormatError("sequence file: float width " + std::to_string(f.width));
    const std::uint64_t n = static_cast<std::uint64_t>(f.rows) * f.dim;
    if (n * f.width != r.remaining())
        throw FormatError("sequence file: header declares " + std::to_string(n) + " values but payload has " +
                          std::to_string(r.remaining()) + " bytes");
    f.data.resize(n);
    for (auto& v : f.data) v = f.width == 4 ? static_cast<double>(r.f32()) : r.f64();
    return f;
}

std::vector<std::uint8_t> write_code_stream(const CodeStreamFile& f) {
    if (f.codes.size() != f.durations.size()) throw FormatError("code stream: codes and durations differ in length");
    ByteWriter w;
    w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("TCOD"), 4));
    w.u32(kFormatVersion);
    w.u32(f.codebook_size);
    w.u32(static_cast<std::uint32_t>(f.codes.size()));
    for (std::size_t i = 0; i < f.codes.size(); ++i) {
        if (f.codes[i] >= f.codebook_size) throw FormatError("code stream: index " + std::to_string(f.codes[i]) + " >= K");
        if (f.durations[i] == 0) throw FormatError("code stream: zero duration at " + std::to_string(i));
        w.u32(f.codes[i]);
        w.u32(f.durations[i]);
    }
    return w.take();
}

CodeStreamFile read_code_stream(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "code stream");
    r.magic("TCOD");
    const auto version = r.u32();
    if (version != kFormatVersion) throw FormatError("code stream: unsupported version " + std::to_string(version));
    CodeStreamFile f;
    f.codebook_size = r.u32();
    const auto m = r.u32();
    if (static_cast<std::uint64_t>(m) * 8 != r.remaining())
        throw FormatError("code stream: header declares " + std::to_string(m) + " records but payload has " +
                          std::to_string(r.remaining()) + " bytes");
    for (std::uint32_t i = 0; i < m; ++i) {
        const auto c = r.u32(), d = r.u32();
        if (c >= f.codebook_size) throw FormatError("code stream: index " + std::to_string(c) + " >= K");
        if (d == 0) throw FormatError("code stream: zero duration at record " + std::to_string(i));
        f.codes.push_back(c);
        f.durations.push_back(d);
    }
    return f;
}

}  // namespace t2s::io
