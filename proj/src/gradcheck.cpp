#include "t2s/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "t2s/dynamic_sampler.hpp"
#include "t2s/nn.hpp"

namespace t2s::gradcheck {

Result check(const ScalarFn& f, std::vector<ad::Var<double>> inputs, double h, double floor) {
    for (auto& in : inputs)
        if (!in.requires_grad()) in = ad::Var<double>(in.value(), true);
    for (auto& in : inputs) in.zero_grad();

    ad::backward(f(inputs));
    std::vector<Tensor<double>> analytic;
    for (const auto& in : inputs) analytic.push_back(in.grad());

    Result r;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& x = inputs[k].mutable_value();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + h;
            const double up = f(inputs).item();
            x[i] = saved - h;
            const double down = f(inputs).item();
            x[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k][i];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
            r.max_abs_error = std::max(r.max_abs_error, abs_err);
            r.max_rel_error = std::max(r.max_rel_error, rel);
            ++r.entries;
        }
    }
    return r;
}

namespace {

using V = ad::Var<double>;
using T = Tensor<double>;

T random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    T t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

V leaf(T t) { return V(std::move(t), true); }

// Reduces an arbitrary-shape output to a scalar with fixed random weights so
// every output entry carries a distinct upstream gradient.
V weighted_sum(const V& out, std::mt19937_64& rng) {
    return ad::sum(ad::mul(out, ad::constant(random_tensor(out.shape(), rng))));
}

struct Case {
    std::string name;
    double tolerance;
    // Builds inputs and the scalar function for one random instance.
    std::function<std::pair<std::vector<V>, ScalarFn>(std::mt19937_64&)> make;
};

std::vector<Case> cases() {
    std::vector<Case> cs;
    auto unary = [&cs](std::string name, Shape shape, std::function<V(const V&)> op) {
        cs.push_back({std::move(name), 1e-4, [shape, op](std::mt19937_64& rng) {
                          const std::uint64_t wseed = rng();
                          ScalarFn f = [op, wseed](std::span<const V> in) {
                              std::mt19937_64 r(wseed);
                              return weighted_sum(op(in[0]), r);
                          };
                          return std::pair{std::vector<V>{leaf(random_tensor(shape, rng))}, f};
                      }});
    };
    auto binary = [&cs](std::string name, Shape sa, Shape sb, std::function<V(const V&, const V&)> op,
                        double lo = -1.0, double hi = 1.0) {
        cs.push_back({std::move(name), 1e-4, [sa, sb, op, lo, hi](std::mt19937_64& rng) {
                          const std::uint64_t wseed = rng();
                          ScalarFn f = [op, wseed](std::span<const V> in) {
                              std::mt19937_64 r(wseed);
                              const V out = op(in[0], in[1]);
                              return out.size() == 1 ? out : weighted_sum(out, r);
                          };
                          return std::pair{
                              std::vector<V>{leaf(random_tensor(sa, rng, lo, hi)), leaf(random_tensor(sb, rng, lo, hi))},
                              f};
                      }});
    };

    binary("matmul", {3, 4}, {4, 2}, [](const V& a, const V& b) { return ad::matmul(a, b); });
    binary("matmul_nt", {3, 4}, {5, 4}, [](const V& a, const V& b) { return ad::matmul_nt(a, b); });
    unary("transpose", {3, 5}, [](const V& a) { return ad::transpose(a); });
    binary("add", {3, 4}, {3, 4}, [](const V& a, const V& b) { return ad::add(a, b); });
    binary("add(scalar)", {3, 4}, {1}, [](const V& a, const V& b) { return ad::add(a, b); });
    binary("sub", {3, 4}, {3, 4}, [](const V& a, const V& b) { return ad::sub(a, b); });
    binary("mul", {3, 4}, {3, 4}, [](const V& a, const V& b) { return ad::mul(a, b); });
    binary("mul(scalar)", {3, 4}, {1}, [](const V& a, const V& b) { return ad::mul(a, b); });
    unary("scale", {3, 4}, [](const V& a) { return ad::scale(a, -1.7); });
    unary("add_scalar", {3, 4}, [](const V& a) { return ad::add_scalar(a, 0.3); });
    unary("relu", {4, 5}, [](const V& a) { return ad::relu(a); });
    unary("sigmoid", {4, 5}, [](const V& a) { return ad::sigmoid(ad::scale(a, 4.0)); });
    binary("add_row", {4, 3}, {3}, [](const V& a, const V& b) { return ad::add_row(a, b); });
    binary("scale_rows", {4, 3}, {4}, [](const V& a, const V& b) { return ad::scale_rows(a, b); });
    unary("sum", {3, 4}, [](const V& a) { return ad::sum(a); });
    unary("mean", {3, 4}, [](const V& a) { return ad::mean(a); });
    cs.push_back({"layer_norm", 1e-4, [](std::mt19937_64& rng) {
                      const std::uint64_t wseed = rng();
                      ScalarFn f = [wseed](std::span<const V> in) {
                          std::mt19937_64 r(wseed);
                          return weighted_sum(ad::layer_norm(in[0], in[1], in[2]), r);
                      };
                      return std::pair{std::vector<V>{leaf(random_tensor({3, 4}, rng, -2.0, 2.0)),
                                                      leaf(random_tensor({4}, rng, 0.5, 1.5)),
                                                      leaf(random_tensor({4}, rng))},
                                       f};
                  }});
    cs.push_back({"softmax_cross_entropy", 1e-4, [](std::mt19937_64& rng) {
                      std::uniform_int_distribution<std::uint32_t> pick(0, 3);
                      std::vector<std::uint32_t> targets{pick(rng), pick(rng), pick(rng)};
                      ScalarFn f = [targets](std::span<const V> in) {
                          return ad::softmax_cross_entropy(in[0], std::span<const std::uint32_t>(targets));
                      };
                      return std::pair{std::vector<V>{leaf(random_tensor({3, 4}, rng, -3.0, 3.0))}, f};
                  }});
    binary("smooth_l1", {3, 4}, {3, 4}, [](const V& a, const V& b) { return ad::smooth_l1(a, b, 1.0); }, -2.0, 2.0);
    binary("mse", {3, 4}, {3, 4}, [](const V& a, const V& b) { return ad::mse(a, b); });
    binary("mean_sq_row_dist", {3, 4}, {3, 4}, [](const V& a, const V& b) { return ad::mean_sq_row_dist(a, b); });
    unary("segment_sum", {6, 3}, [](const V& a) {
        const std::vector<std::uint32_t> ids{0, 0, 1, 2, 2, 2};
        return ad::segment_sum(a, std::span<const std::uint32_t>(ids), 3);
    });
    unary("gather_rows", {4, 3}, [](const V& a) {
        const std::vector<std::uint32_t> idx{3, 0, 0, 2, 3};
        return ad::gather_rows(a, std::span<const std::uint32_t>(idx));
    });
    unary("slice_rows", {5, 3}, [](const V& a) { return ad::slice_rows(a, 1, 4); });
    unary("slice_cols", {3, 5}, [](const V& a) { return ad::slice_cols(a, 1, 4); });
    binary("concat_rows", {2, 3}, {4, 3}, [](const V& a, const V& b) {
        const std::vector<V> parts{a, b};
        return ad::concat_rows<double>(parts);
    });
    binary("concat_cols", {3, 2}, {3, 4}, [](const V& a, const V& b) {
        const std::vector<V> parts{a, b};
        return ad::concat_cols<double>(parts);
    });
    unary("masked_softmax_rows", {4, 4}, [](const V& a) {
        const std::vector<std::uint8_t> mask{1, 1, 0, 1};
        return ad::masked_softmax_rows(ad::scale(a, 3.0), true, std::span<const std::uint8_t>(mask));
    });

    for (bool causal : {false, true}) {
        cs.push_back({causal ? "attention_block(causal)" : "attention_block", 1e-3, [causal](std::mt19937_64& rng) {
                          nn::ParamSet<double> ps;
                          nn::Rng prng(rng());
                          auto p = nn::make_attention(ps, "blk", 8, 2, 16, prng);
                          // Perturb norm gains/biases off their 1/0 init.
                          for (auto& [name, var] : ps.entries())
                              if (var.value().rank() == 1)
                                  for (auto& v : var.mutable_value().values())
                                      v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
                          std::vector<V> inputs{leaf(random_tensor({4, 8}, rng))};
                          for (auto& [name, var] : ps.entries()) inputs.push_back(var);
                          const std::uint64_t wseed = rng();
                          ScalarFn f = [causal, wseed, heads = p.heads](std::span<const V> in) {
                              ad::AttentionParams<double> q;
                              q.heads = heads;
                              std::size_t i = 1;
                              for (V* slot : {&q.ln1_gain, &q.ln1_bias, &q.wq, &q.bq, &q.wk, &q.bk, &q.wv, &q.bv,
                                              &q.wo, &q.bo, &q.ln2_gain, &q.ln2_bias, &q.w1, &q.b1, &q.w2, &q.b2})
                                  *slot = in[i++];
                              std::mt19937_64 r(wseed);
                              return weighted_sum(ad::attention_block(in[0], q, causal), r);
                          };
                          return std::pair{inputs, f};
                      }});
    }

    cs.push_back({"info_weights", 1e-4, [](std::mt19937_64& rng) {
                      nn::ParamSet<double> ps;
                      nn::Rng prng(rng());
                      dyn::make_info_mlp(ps, "info", 8, prng);
                      std::vector<V> inputs{leaf(random_tensor({5, 8}, rng))};
                      for (auto& [name, var] : ps.entries()) {
                          if (var.value().rank() == 1)
                              var.mutable_value() = random_tensor(var.shape(), rng, -0.5, 0.5);
                          inputs.push_back(var);
                      }
                      const std::uint64_t wseed = rng();
                      ScalarFn f = [wseed](std::span<const V> in) {
                          dyn::InfoMlp<double> mlp{{in[1], in[2]}, {in[3], in[4]}};
                          std::mt19937_64 r(wseed);
                          return weighted_sum(dyn::info_weights(in[0], mlp), r);
                      };
                      return std::pair{inputs, f};
                  }});

    cs.push_back({"downsample", 1e-4, [](std::mt19937_64& rng) {
                      const T weights = random_tensor({7, 1}, rng, 0.05, 0.95);
                      // Markers are frozen at the initial weights: segment
                      // assignment is a constant of the backward pass.
                      auto markers = dyn::segment<double>(weights.values(), 1.0);
                      const std::uint64_t wseed = rng();
                      ScalarFn f = [markers, wseed](std::span<const V> in) {
                          std::mt19937_64 r(wseed);
                          return weighted_sum(dyn::downsample(in[0], in[1], markers).latents, r);
                      };
                      return std::pair{std::vector<V>{leaf(random_tensor({7, 3}, rng)), leaf(weights)}, f};
                  }});

    cs.push_back({"budget_loss", 1e-4, [](std::mt19937_64& rng) {
                      ScalarFn f = [](std::span<const V> in) { return dyn::budget_loss(in[0], 12, 4.0); };
                      return std::pair{std::vector<V>{leaf(random_tensor({12, 1}, rng, 0.3, 0.9))}, f};
                  }});

    cs.push_back({"composite", 1e-4, [](std::mt19937_64& rng) {
                      ScalarFn f = [](std::span<const V> in) {
                          const V h = ad::sigmoid(ad::matmul(in[0], in[1]));
                          const V shared = ad::layer_norm(h, in[2], in[3]);
                          // `shared` feeds two consumers; contributions must sum.
                          return ad::add(ad::smooth_l1(shared, ad::relu(h), 0.5), ad::mean(ad::mul(shared, shared)));
                      };
                      return std::pair{std::vector<V>{leaf(random_tensor({3, 4}, rng)), leaf(random_tensor({4, 5}, rng)),
                                                      leaf(random_tensor({5}, rng, 0.5, 1.5)),
                                                      leaf(random_tensor({5}, rng))},
                                       f};
                  }});
    return cs;
}

}  // namespace

std::vector<OpReport> run_battery(std::uint64_t seed, std::size_t instances) {
    std::vector<OpReport> reports;
    std::mt19937_64 rng(seed);
    for (const auto& c : cases()) {
        OpReport rep{c.name, instances, 0.0, c.tolerance, true};
        for (std::size_t i = 0; i < instances; ++i) {
            auto [inputs, f] = c.make(rng);
            const Result r = check(f, std::move(inputs));
            rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
        }
        rep.passed = rep.max_rel_error < rep.tolerance;
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace t2s::gradcheck
