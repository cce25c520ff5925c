#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "exprfuse/attention.hpp"
#include "exprfuse/errors.hpp"
#include "support/gradcheck.hpp"
#include "support/reference_math.hpp"

using namespace exprfuse;
using exprfuse::testing::check_gradients;
using exprfuse::testing::random_tensor;
namespace ref = exprfuse::testing::ref;

namespace {

// Independent multi-head attention: explicit per-head loops over scalar math.
ref::Matrix reference_mhsa(const ref::Matrix& x, const AttentionLayerWeights& w, const AttentionConfig& cfg) {
    const std::size_t d = cfg.model_dim;
    const std::size_t inner = cfg.inner_dim();
    const auto q = ref::affine(x, ref::from_flat(w.wq.values(), d, inner), w.bq.values());
    const auto k = ref::affine(x, ref::from_flat(w.wk.values(), d, inner), w.bk.values());
    const auto v = ref::affine(x, ref::from_flat(w.wv.values(), d, inner), w.bv.values());
    const std::size_t s = x.size();
    ref::Matrix merged(s, std::vector<double>(inner, 0.0));
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        for (std::size_t i = 0; i < s; ++i) {
            std::vector<double> logits(s);
            for (std::size_t j = 0; j < s; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cfg.head_dim; ++c) dot += q[i][h * cfg.head_dim + c] * k[j][h * cfg.head_dim + c];
                logits[j] = dot / std::sqrt(static_cast<double>(cfg.head_dim));
            }
            const auto p = ref::softmax(logits);
            for (std::size_t c = 0; c < cfg.head_dim; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < s; ++j) acc += p[j] * v[j][h * cfg.head_dim + c];
                merged[i][h * cfg.head_dim + c] = acc;
            }
        }
    }
    return ref::affine(merged, ref::from_flat(w.wo.values(), inner, d), w.bo.values());
}

AttentionConfig small_config(std::size_t heads = 2, std::size_t head_dim = 3, std::size_t model_dim = 6) {
    AttentionConfig cfg;
    cfg.num_heads = heads;
    cfg.head_dim = head_dim;
    cfg.model_dim = model_dim;
    return cfg;
}

void randomize_biases(AttentionLayerWeights& w, Rng& rng) {
    for (Tensor* t : {&w.bq, &w.bk, &w.bv, &w.bo})
        for (double& v : t->mutable_values()) v = rng.uniform(-0.5, 0.5);
}

}  // namespace

TEST_SUITE("attention") {

TEST_CASE("defaults match the reference hyperparameters") {
    AttentionConfig cfg;
    CHECK(cfg.depth == 1);
    CHECK(cfg.num_heads == 2);
    CHECK(cfg.head_dim == 64);
    CHECK(cfg.dropout == 0.0);
    CHECK(cfg.model_dim == 888);
    CHECK(cfg.inner_dim() == 128);
    CHECK_FALSE(cfg.positional_encoding);
}

TEST_CASE("scaled dot product: single position") {
    Tape tape;
    auto q = tape.constant({1, 2}, {0.3, -0.7});
    auto k = tape.constant({1, 2}, {1.5, 2.0});
    auto v = tape.constant({1, 3}, {4, 5, 6});
    auto [out, weights] = scaled_dot_product(q, k, v);
    CHECK(weights.shape() == Shape{1, 1});
    CHECK(weights.value()[0] == 1.0);
    CHECK(std::vector<double>(out.value().begin(), out.value().end()) == std::vector<double>{4, 5, 6});
}

TEST_CASE("scaled dot product: zero logits average the values") {
    Tape tape;
    auto q = tape.constant(Tensor({3, 2}));
    auto k = tape.constant({3, 2}, {1, 2, 3, 4, 5, 6});
    auto v = tape.constant({3, 2}, {1, 10, 2, 20, 6, 30});
    auto [out, weights] = scaled_dot_product(q, k, v);
    for (double w : weights.value()) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(out.value()[r * 2] == doctest::Approx(3.0).epsilon(1e-14));
        CHECK(out.value()[r * 2 + 1] == doctest::Approx(20.0).epsilon(1e-14));
    }
}

TEST_CASE("scaled dot product: two-position hand example") {
    Tape tape;
    auto q = tape.constant({2, 1}, {1, 2});
    auto k = tape.constant({2, 1}, {1, 0});
    auto v = tape.constant({2, 1}, {10, 20});
    auto [out, weights] = scaled_dot_product(q, k, v);
    CHECK(std::abs(weights.value()[0] - 0.73106) < 1e-5);
    CHECK(std::abs(weights.value()[1] - 0.26894) < 1e-5);
    CHECK(std::abs(out.value()[0] - 12.6894) < 1e-4);
    CHECK(std::abs(out.value()[1] - 11.1920) < 1e-4);
}

TEST_CASE("scaled dot product rejects mismatched operands") {
    Tape tape;
    auto q = tape.constant(Tensor({2, 3}));
    auto k = tape.constant(Tensor({2, 4}));
    auto v = tape.constant(Tensor({2, 4}));
    CHECK_THROWS_AS(scaled_dot_product(q, k, v), DimensionError);
    auto k2 = tape.constant(Tensor({3, 3}));
    CHECK_THROWS_AS(scaled_dot_product(q, k2, v), DimensionError);
}

TEST_CASE("attention rows sum to one, including extreme logits") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        Tape tape;
        const double spread = trial % 2 == 0 ? 1.0 : 1000.0;
        auto q = tape.constant(random_tensor({3, 5, 4}, rng, -spread, spread, false));
        auto k = tape.constant(random_tensor({3, 5, 4}, rng, -spread, spread, false));
        auto v = tape.constant(random_tensor({3, 5, 2}, rng, -1, 1, false));
        auto weights = scaled_dot_product(q, k, v).weights.value();
        for (std::size_t r = 0; r < 15; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(weights[r * 5 + j] >= 0.0);
                total += weights[r * 5 + j];
            }
            CHECK(std::abs(total - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("multi-head attention on one position is the value path") {
    Rng rng(2);
    auto cfg = small_config();
    auto w = init_attention_layer(cfg, rng);
    randomize_biases(w, rng);
    Tensor x = random_tensor({1, 6}, rng, -1, 1, false);
    Tape tape;
    auto out = multi_head_self_attention(tape.constant(x), w, cfg, false, rng);
    const auto xm = ref::from_flat(x.values(), 1, 6);
    const auto v = ref::affine(xm, ref::from_flat(w.wv.values(), 6, 6), w.bv.values());
    const auto expect = ref::affine(v, ref::from_flat(w.wo.values(), 6, 6), w.bo.values());
    CHECK(ref::max_abs_diff(expect, out.value()) < 1e-12);
}

TEST_CASE("one head equals scaled dot product between the projections") {
    Rng rng(3);
    auto cfg = small_config(1, 4, 5);
    auto w = init_attention_layer(cfg, rng);
    randomize_biases(w, rng);
    Tensor x = random_tensor({4, 5}, rng, -1, 1, false);
    Tape tape;
    auto xv = tape.constant(x);
    auto out = multi_head_self_attention(xv, w, cfg, false, rng);
    auto q = linear(xv, tape.constant(w.wq), tape.constant(w.bq));
    auto k = linear(xv, tape.constant(w.wk), tape.constant(w.bk));
    auto v = linear(xv, tape.constant(w.wv), tape.constant(w.bv));
    auto wrapped = linear(scaled_dot_product(q, k, v).output, tape.constant(w.wo), tape.constant(w.bo));
    CHECK(std::vector<double>(out.value().begin(), out.value().end()) ==
          std::vector<double>(wrapped.value().begin(), wrapped.value().end()));
}

TEST_CASE("two heads match the per-head loop oracle") {
    Rng rng(4);
    auto cfg = small_config(2, 3, 6);
    auto w = init_attention_layer(cfg, rng);
    randomize_biases(w, rng);
    Tensor x = random_tensor({3, 6}, rng, -1, 1, false);
    Tape tape;
    auto out = multi_head_self_attention(tape.constant(x), w, cfg, false, rng);
    CHECK(ref::max_abs_diff(reference_mhsa(ref::from_flat(x.values(), 3, 6), w, cfg), out.value()) < 1e-10);
}

TEST_CASE("batched input equals per-sequence calls") {
    Rng rng(5);
    auto cfg = small_config();
    AttentionWeights w = init_attention(cfg, rng);
    Tensor x = random_tensor({3, 4, 6}, rng, -1, 1, false);
    Tape tape;
    auto batched = attention_branch(tape.constant(x), w, cfg, false, rng);
    CHECK(batched.shape() == Shape{3, 4, 6});
    for (std::size_t b = 0; b < 3; ++b) {
        Tensor one({4, 6}, std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(b * 24),
                                               x.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * 24)));
        auto single = attention_branch(tape.constant(one), w, cfg, false, rng);
        for (std::size_t i = 0; i < 24; ++i) CHECK(single.value()[i] == batched.value()[b * 24 + i]);
    }
}

TEST_CASE("permuting positions permutes the output") {
    Rng rng(6);
    auto cfg = small_config();
    AttentionWeights w = init_attention(cfg, rng);
    const std::size_t s = 5;
    Tensor x = random_tensor({s, 6}, rng, -1, 1, false);
    std::vector<std::size_t> perm(s);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor xp({s, 6});
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t c = 0; c < 6; ++c) xp.mutable_values()[i * 6 + c] = x[perm[i] * 6 + c];
    Tape tape;
    auto y = attention_branch(tape.constant(x), w, cfg, false, rng);
    auto yp = attention_branch(tape.constant(xp), w, cfg, false, rng);
    CHECK(yp.shape() == Shape{s, 6});
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(yp.value()[i * 6 + c] - y.value()[perm[i] * 6 + c]) < 1e-12);
}

TEST_CASE("positional encoding is opt-in") {
    Rng rng(7);
    auto cfg = small_config();
    AttentionWeights w = init_attention(cfg, rng);
    Tensor x = random_tensor({4, 6}, rng, -1, 1, false);
    Tape tape;
    auto plain = attention_branch(tape.constant(x), w, cfg, false, rng);
    cfg.positional_encoding = true;
    auto encoded = attention_branch(tape.constant(x), w, cfg, false, rng);
    CHECK(std::vector<double>(plain.value().begin(), plain.value().end()) !=
          std::vector<double>(encoded.value().begin(), encoded.value().end()));
    Tensor pe = sinusoidal_encoding(3, 4);
    CHECK(pe[0] == 0.0);  // sin(0)
    CHECK(pe[1] == 1.0);  // cos(0)
}

TEST_CASE("parameter count") {
    AttentionConfig defaults;
    // 3·(888·128 + 128) + (128·888 + 888)
    CHECK(attention_parameter_count(defaults) == 455928);

    Rng rng(0);
    AttentionWeights w = init_attention(defaults, rng);
    ParameterList params;
    append_parameters(w, "", params);
    CHECK(count_parameters(params) == attention_parameter_count(defaults));

    AttentionConfig tiny;
    tiny.model_dim = 1;
    tiny.num_heads = 1;
    tiny.head_dim = 1;
    CHECK(attention_parameter_count(tiny) == 8);

    AttentionConfig deep = defaults;
    deep.depth = 2;
    CHECK(attention_parameter_count(deep) == 2 * attention_parameter_count(defaults));
}

TEST_CASE("config and weight disagreements are configuration errors") {
    Rng rng(1);
    auto cfg = small_config();
    AttentionWeights w = init_attention(cfg, rng);
    Tape tape;
    auto x = tape.constant(Tensor({2, 6}));
    auto other = small_config(3, 3, 6);
    CHECK_THROWS_AS(attention_branch(x, w, other, false, rng), ConfigError);
    auto wide = tape.constant(Tensor({2, 7}));
    CHECK_THROWS_AS(attention_branch(wide, w, cfg, false, rng), ConfigError);
    AttentionConfig bad;
    bad.num_heads = 0;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = AttentionConfig{};
    bad.dropout = 1.0;
    CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("gradients of every projection match finite differences") {
    Rng rng(8);
    auto cfg = small_config();
    AttentionWeights w = init_attention(cfg, rng);
    randomize_biases(w.layers[0], rng);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor probe = random_tensor({4, 6}, rng, -1, 1, false);
    ParameterList params;
    append_parameters(w, "", params);
    std::vector<Tensor*> tensors{&x};
    for (auto& p : params) tensors.push_back(p.tensor);
    auto report = check_gradients(
        [&](Tape& t) { return sum(mul(attention_branch(t.bind(x), w, cfg, true, rng), t.constant(probe))); }, tensors,
        rng, 6);
    CHECK(report.probes >= 40);
    CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("attention dropout only acts in training mode") {
    Rng rng(9);
    auto cfg = small_config();
    cfg.dropout = 0.5;
    AttentionWeights w = init_attention(cfg, rng);
    Tensor x = random_tensor({5, 6}, rng, -1, 1, false);
    Tape tape;
    Rng a(1);
    Rng b(2);
    auto e1 = attention_branch(tape.constant(x), w, cfg, false, a);
    auto e2 = attention_branch(tape.constant(x), w, cfg, false, b);
    CHECK(std::vector<double>(e1.value().begin(), e1.value().end()) ==
          std::vector<double>(e2.value().begin(), e2.value().end()));
    auto t1 = attention_branch(tape.constant(x), w, cfg, true, a);
    CHECK(std::vector<double>(e1.value().begin(), e1.value().end()) !=
          std::vector<double>(t1.value().begin(), t1.value().end()));
}

}  // TEST_SUITE
