#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bidc/autograd.hpp"
#include "bidc/errors.hpp"
#include "bidc/gradcheck.hpp"
#include "bidc/model.hpp"
#include "bidc/rng.hpp"

using namespace bidc;

namespace {

Array random_array(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Array a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = scale * (2.0 * rng.uniform() - 1.0);
    return a;
}

}  // namespace

TEST_CASE("matmul identity and projector") {
    auto eye = leaf(Array::row_matrix({{1, 0}, {0, 1}}));
    auto m = leaf(Array::row_matrix({{1, 2}, {3, 4}}));
    auto prod = matmul(eye, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod->value[i] == m->value[i]);

    auto proj = leaf(Array::row_matrix({{1, 0}, {0, 0}}));
    auto rhs = leaf(Array::row_matrix({{5, 6}, {7, 8}}));
    auto picked = matmul(proj, rhs);
    CHECK(picked->value.at(0, 0) == 5);
    CHECK(picked->value.at(0, 1) == 6);
    CHECK(picked->value.at(1, 0) == 0);
    CHECK(picked->value.at(1, 1) == 0);
}

TEST_CASE("matmul gradient of sum equals B transpose row") {
    auto a = leaf(Array::row_matrix({{1, 2}}));
    auto b = leaf(Array::row_matrix({{3}, {4}}));
    backward(sum(matmul(a, b)));
    CHECK(a->grad.at(0, 0) == doctest::Approx(3).epsilon(1e-12));
    CHECK(a->grad.at(0, 1) == doctest::Approx(4).epsilon(1e-12));
    CHECK(b->grad.at(0, 0) == doctest::Approx(1).epsilon(1e-12));

    // central finite differences at eps=1e-5 agree
    auto f = [&]() { return sum(matmul(a, b)); };
    auto report = grad_check(f, {{"a", a}, {"b", b}}, 1e-5, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = leaf(Array({2, 3}));
    auto b = leaf(Array({4, 5}));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
    try {
        matmul(a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("softmax rows: symmetry, stability, closed form") {
    auto flat = softmax_rows(leaf(Array::row_matrix({{0, 0}})));
    CHECK(flat->value.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(flat->value.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

    auto large = softmax_rows(leaf(Array::row_matrix({{1000, 0}})));
    CHECK(large->value.all_finite());
    CHECK(large->value.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(large->value.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));

    auto logs = softmax_rows(
        leaf(Array::row_matrix({{std::log(1.0), std::log(2.0), std::log(3.0)}})));
    CHECK(logs->value.at(0, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    CHECK(logs->value.at(0, 1) == doctest::Approx(2.0 / 6.0).epsilon(1e-14));
    CHECK(logs->value.at(0, 2) == doctest::Approx(3.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng(11);
    Array raw = random_array({6, 9}, rng, 4.0);
    auto base = softmax_rows(leaf(raw));
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 9; ++c) s += base->value.at(r, c);
        CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
    Array shifted = raw;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 3.25;
    auto moved = softmax_rows(leaf(shifted));
    for (std::size_t i = 0; i < raw.size(); ++i) {
        CHECK(std::fabs(moved->value[i] - base->value[i]) <= 1e-12);
    }
}

TEST_CASE("masked softmax excludes keys exactly") {
    Rng rng(3);
    Array raw = random_array({4, 6}, rng, 2.0);
    Array wide({4, 8});
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 6; ++c) wide.at(r, c) = raw.at(r, c);
        wide.at(r, 6) = 55.0;  // masked-out garbage
        wide.at(r, 7) = -99.0;
    }
    std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1, 1, 0, 0};
    auto full = softmax_rows(leaf(raw));
    auto masked = softmax_rows(leaf(wide), mask);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 6; ++c) {
            CHECK(masked->value.at(r, c) == full->value.at(r, c));  // bitwise
        }
        CHECK(masked->value.at(r, 6) == 0.0);
        CHECK(masked->value.at(r, 7) == 0.0);
    }
    std::vector<std::uint8_t> none(3, 0);
    CHECK_THROWS_AS(softmax_rows(leaf(Array({2, 3})), none), DataError);
}

TEST_CASE("layer_norm closed forms") {
    auto gain = leaf(Array::full({3}, 1.0));
    auto bias = leaf(Array({3}));
    auto constant = layer_norm(leaf(Array::row_matrix({{7.5, 7.5, 7.5}})), gain, bias);
    for (std::size_t i = 0; i < 3; ++i) CHECK(constant->value[i] == doctest::Approx(0.0));

    auto gain2 = leaf(Array::full({2}, 1.0));
    auto bias2 = leaf(Array({2}));
    auto unit = layer_norm(leaf(Array::row_matrix({{1, -1}})), gain2, bias2, 1e-5);
    CHECK(unit->value.at(0, 0) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(unit->value.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-3));
}

TEST_CASE("layer_norm moments and gradient vs finite differences") {
    Rng rng(5);
    // row variance well above eps so the eps term cannot disturb the moments
    auto moments_x = leaf(random_array({3, 4}, rng, 25.0));
    auto gain = leaf(Array::full({4}, 1.0));
    auto bias = leaf(Array({4}));
    auto normed = layer_norm(moments_x, gain, bias);
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 4; ++c) mean += normed->value.at(r, c);
        mean /= 4.0;
        for (std::size_t c = 0; c < 4; ++c) {
            const double d = normed->value.at(r, c) - mean;
            var += d * d;
        }
        var /= 4.0;
        CHECK(std::fabs(mean) < 1e-9);
        CHECK(std::fabs(var - 1.0) < 1e-6);
    }

    // weight the output so the gradient is non-trivial
    Rng rng2(17);
    auto x = leaf(random_array({3, 4}, rng2, 2.0));
    auto w = leaf(random_array({3, 4}, rng2));
    auto f = [&]() { return sum(mul(layer_norm(x, gain, bias), w)); };
    auto report = grad_check(f, {{"x", x}, {"gain", gain}, {"bias", bias}}, 1e-5, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("layer_norm rejects degenerate width") {
    auto gain = leaf(Array::full({1}, 1.0));
    auto bias = leaf(Array({1}));
    CHECK_THROWS_AS(layer_norm(leaf(Array({3, 1})), gain, bias), ConfigError);
}

TEST_CASE("elementwise ops") {
    auto r = relu(leaf(Array::row_matrix({{-1, 0, 2}})));
    CHECK(r->value[0] == 0.0);
    CHECK(r->value[1] == 0.0);
    CHECK(r->value[2] == 2.0);

    auto s0 = sigmoid(leaf(Array::scalar(0.0)));
    CHECK(s0->value[0] == 0.5);

    auto tiny = sigmoid(leaf(Array::scalar(-745.0)));
    CHECK(tiny->value[0] > 0.0);
    CHECK(tiny->value[0] <= 1e-300);
    CHECK(std::isfinite(tiny->value[0]));

    CHECK_THROWS_AS(add(leaf(Array({2, 2})), leaf(Array({2, 3}))), ShapeError);
    CHECK_THROWS_AS(mul(leaf(Array({4})), leaf(Array({5}))), ShapeError);

    auto sc = scale(leaf(Array::row_matrix({{2, -4}})), -1.0, 1.0);
    CHECK(sc->value[0] == -1.0);
    CHECK(sc->value[1] == 5.0);
}

TEST_CASE("concat_cols including empty operand, gradient routing") {
    auto joined = concat_cols(leaf(Array::row_matrix({{1}})), leaf(Array::row_matrix({{2}})));
    CHECK(joined->value.shape() == std::vector<std::size_t>{1, 2});
    CHECK(joined->value[0] == 1.0);
    CHECK(joined->value[1] == 2.0);

    Rng rng(2);
    auto a = leaf(random_array({3, 4}, rng));
    auto empty = leaf(Array({3, 0}));
    auto same = concat_cols(a, empty);
    CHECK(same->value.shape() == std::vector<std::size_t>{3, 4});
    for (std::size_t i = 0; i < a->value.size(); ++i) CHECK(same->value[i] == a->value[i]);

    auto b = leaf(random_array({3, 2}, rng));
    backward(sum(concat_cols(a, b)));
    for (std::size_t i = 0; i < a->grad.size(); ++i) CHECK(a->grad[i] == 1.0);
    for (std::size_t i = 0; i < b->grad.size(); ++i) CHECK(b->grad[i] == 1.0);

    CHECK_THROWS_AS(concat_cols(leaf(Array({2, 1})), leaf(Array({3, 1}))), ShapeError);
}

TEST_CASE("embedding lookup gather and scatter") {
    auto table = leaf(Array::row_matrix({{1, 2}, {3, 4}, {5, 6}, {7, 8}}));
    auto row0 = embedding_lookup(table, {0});
    CHECK(row0->value.at(0, 0) == 1.0);
    CHECK(row0->value.at(0, 1) == 2.0);

    backward(sum(embedding_lookup(table, {3, 3})));
    CHECK(table->grad.at(3, 0) == 2.0);
    CHECK(table->grad.at(3, 1) == 2.0);
    CHECK(table->grad.at(0, 0) == 0.0);

    CHECK_THROWS_AS(embedding_lookup(table, {4}), DataError);
    CHECK_THROWS_AS(embedding_lookup(table, {-1}), DataError);
}

TEST_CASE("cross entropy closed forms") {
    std::vector<std::uint8_t> one(1, 1);
    auto uniform = cross_entropy(leaf(Array::row_matrix({{0.5, 0.5, 0.5, 0.5}})), {2}, one);
    CHECK(uniform->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    auto peaked = cross_entropy(leaf(Array::row_matrix({{30, 0, 0, 0}})), {0}, one);
    CHECK(peaked->value[0] == doctest::Approx(0.0).epsilon(1e-10));

    auto pair = cross_entropy(leaf(Array::row_matrix({{1, 2}})), {0}, one);
    CHECK(pair->value[0] == doctest::Approx(1.313262).epsilon(1e-6));
    CHECK(pair->value[0] == doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-14));

    std::vector<std::uint8_t> masked(2, 0);
    CHECK_THROWS_AS(cross_entropy(leaf(Array({2, 3})), {0, 1}, masked), DataError);
    CHECK_THROWS_AS(cross_entropy(leaf(Array({1, 3})), {5}, one), DataError);
}

TEST_CASE("backward basics and accumulation across reuse") {
    Rng rng(7);
    auto x = leaf(random_array({2, 3}, rng));
    backward(sum(x));
    for (std::size_t i = 0; i < x->grad.size(); ++i) CHECK(x->grad[i] == 1.0);

    auto y = leaf(Array::vec({1, 2}));
    backward(sum(mul(y, y)));
    CHECK(y->grad[0] == doctest::Approx(2.0));
    CHECK(y->grad[1] == doctest::Approx(4.0));

    // the same subexpression feeding two consumers accumulates both paths
    auto z = leaf(Array::vec({1.5, -2.0}));
    auto shared = mul(z, z);
    backward(sum(add(shared, shared)));
    CHECK(z->grad[0] == doctest::Approx(4.0 * 1.5));
    CHECK(z->grad[1] == doctest::Approx(4.0 * -2.0));

    CHECK_THROWS_AS(backward(leaf(Array({2, 2}))), NumericError);
}

TEST_CASE("gradient shapes always match value shapes") {
    Rng rng(13);
    auto a = leaf(random_array({4, 3}, rng));
    auto b = leaf(random_array({3, 5}, rng));
    auto gain = leaf(Array::full({5}, 1.0));
    auto bias = leaf(Array({5}));
    auto out = layer_norm(sigmoid(matmul(a, b)), gain, bias);
    backward(sum(out));
    for (const auto& n : {a, b, gain, bias, out}) {
        CHECK(n->grad.shape() == n->value.shape());
    }
}

TEST_CASE("grad_check quadratic and relu kink policy") {
    auto p = leaf(Array::scalar(3.0));
    auto fsq = [&]() { return mul(p, p); };
    auto report = grad_check(fsq, {{"p", p}}, 1e-5, 1e-4);
    CHECK(report.pass);
    CHECK(report.entries[0].checked == 1);
    p->zero_grad();
    backward(fsq());
    CHECK(p->grad[0] == doctest::Approx(6.0));

    auto kink = leaf(Array::scalar(0.0));
    auto frelu = [&]() { return sum(relu(kink)); };
    auto kreport = grad_check(frelu, {{"p", kink}}, 1e-5, 1e-4);
    CHECK(kreport.pass);
    CHECK(kreport.entries[0].checked == 0);
    CHECK(kreport.entries[0].kink_skipped == 1);
}

TEST_CASE("slice and row concat round trips") {
    Rng rng(23);
    auto a = leaf(random_array({5, 6}, rng));
    auto left = slice_cols(a, 0, 2);
    auto right = slice_cols(a, 2, 4);
    auto glued = concat_cols(left, right);
    for (std::size_t i = 0; i < a->value.size(); ++i) CHECK(glued->value[i] == a->value[i]);

    auto top = slice_rows(a, 0, 2);
    auto bottom = slice_rows(a, 2, 3);
    auto stacked = concat_rows({top, bottom});
    for (std::size_t i = 0; i < a->value.size(); ++i) CHECK(stacked->value[i] == a->value[i]);

    backward(sum(stacked));
    for (std::size_t i = 0; i < a->grad.size(); ++i) CHECK(a->grad[i] == 1.0);

    CHECK_THROWS_AS(slice_cols(a, 5, 3), ShapeError);
    CHECK_THROWS_AS(slice_rows(a, 4, 3), ShapeError);
}

TEST_CASE("attention composition matches hand computation") {
    // 2 tokens, d_h = 2: scores = Q K^T / sqrt(2), row softmax, times V.
    Array qv = Array::row_matrix({{1, 0}, {0, 1}});
    Array kv = Array::row_matrix({{1, 0}, {0, 2}});
    Array vv = Array::row_matrix({{1, 2}, {3, 4}});
    auto q = leaf(qv), k = leaf(kv), v = leaf(vv);
    const double inv = 1.0 / std::sqrt(2.0);
    auto probs = softmax_rows(scale(matmul(q, transpose(k)), inv));
    auto out = matmul(probs, v);

    for (std::size_t r = 0; r < 2; ++r) {
        double s0 = qv.at(r, 0) * kv.at(0, 0) + qv.at(r, 1) * kv.at(0, 1);
        double s1 = qv.at(r, 0) * kv.at(1, 0) + qv.at(r, 1) * kv.at(1, 1);
        s0 *= inv;
        s1 *= inv;
        const double mx = std::max(s0, s1);
        const double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
        const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
        for (std::size_t c = 0; c < 2; ++c) {
            const double expect = p0 * vv.at(0, c) + p1 * vv.at(1, c);
            CHECK(out->value.at(r, c) == doctest::Approx(expect).epsilon(1e-14));
        }
    }

    // single key: softmax over one element is 1, output equals the V row
    auto q1 = leaf(Array::row_matrix({{0.3, -0.7}}));
    auto k1 = leaf(Array::row_matrix({{1.1, 0.2}}));
    auto v1 = leaf(Array::row_matrix({{5.5, -6.5}}));
    auto out1 = matmul(softmax_rows(scale(matmul(q1, transpose(k1)), inv)), v1);
    CHECK(out1->value.at(0, 0) == 5.5);
    CHECK(out1->value.at(0, 1) == -6.5);

    // identical keys: attention is uniform over keys
    auto k_same = leaf(Array::row_matrix({{0.4, 0.4}, {0.4, 0.4}, {0.4, 0.4}}));
    auto q3 = leaf(Array::row_matrix({{1.0, -2.0}}));
    auto probs3 = softmax_rows(scale(matmul(q3, transpose(k_same)), inv));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(probs3->value.at(0, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    }
}

TEST_CASE("tiny model gradients match finite differences (seed 0)") {
    ModelConfig tiny;
    tiny.vocab_size = 20;
    tiny.d_h = 8;
    tiny.d_ff = 16;
    tiny.n_heads = 1;
    tiny.det_depth = 1;
    tiny.cor_depth = 1;
    tiny.interaction_layers = 1;
    tiny.max_len = 8;
    tiny.mode = Mode::BiDC;
    auto report = check_model_gradients(tiny, 0);
    CHECK(report.pass);
    CHECK(report.worst_rel_err < 1e-4);
}

TEST_CASE("deterministic forward for identical seeds and inputs") {
    ModelConfig tiny;
    tiny.vocab_size = 12;
    tiny.d_h = 8;
    tiny.d_ff = 12;
    tiny.det_depth = 1;
    tiny.cor_depth = 1;
    tiny.interaction_layers = 1;
    tiny.max_len = 8;
    Model m1(tiny, 42), m2(tiny, 42);
    Batch b = make_batch({{2, 3, 4, 5}}, 0, false);
    auto t1 = m1.forward(b);
    auto t2 = m2.forward(b);
    for (std::size_t i = 0; i < t1.cor_logits->value.size(); ++i) {
        CHECK(t1.cor_logits->value[i] == t2.cor_logits->value[i]);  // bitwise
    }
    for (std::size_t i = 0; i < t1.det_logits->value.size(); ++i) {
        CHECK(t1.det_logits->value[i] == t2.det_logits->value[i]);
    }
}
