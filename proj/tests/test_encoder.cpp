#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "freezetst/encoder.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace freezetst;

namespace {

EncoderBlock<double> make_block(Index d_model, Index n_heads, Index d_ff, std::uint64_t seed) {
    EncoderBlock<double> b;
    b.d_model = d_model;
    b.n_heads = n_heads;
    b.d_ff = d_ff;
    Rng rng(seed);
    b.init(rng);
    return b;
}

void zero_params(EncoderBlock<double>& b) {
    for (Param<double>* p : b.params())
        if (p->name != "ln1_g" && p->name != "ln2_g")
            for (double& v : p->value.data) v = 0.0;
}

Tensor<double> random_tokens(Rng& rng, Index n, Index dm) {
    Tensor<double> z(Shape{n, dm});
    for (Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return z;
}

}  // namespace

TEST_CASE("freeze scheme planner matches the published counts") {
    auto count = [](const std::vector<bool>& m) {
        int c = 0;
        for (bool b : m) c += b;
        return c;
    };

    CHECK(count(plan_freeze_scheme(FreezeScheme::F0, 5)) == 0);
    CHECK(count(plan_freeze_scheme(FreezeScheme::Fall, 5)) == 5);

    const auto fa3 = plan_freeze_scheme(FreezeScheme::Fa, 3);
    CHECK(fa3 == std::vector<bool>{false, true, false});
    const auto fa4 = plan_freeze_scheme(FreezeScheme::Fa, 4);
    CHECK(fa4 == std::vector<bool>{false, true, false, true});
    const auto fa5 = plan_freeze_scheme(FreezeScheme::Fa, 5);
    CHECK(count(fa5) == 2);
    CHECK(fa5 == std::vector<bool>{false, true, false, true, false});

    CHECK(plan_freeze_scheme(FreezeScheme::F1, 4) ==
          std::vector<bool>{true, false, false, false});
    CHECK(plan_freeze_scheme(FreezeScheme::Ffl, 4) ==
          std::vector<bool>{true, false, false, true});
    CHECK(plan_freeze_scheme(FreezeScheme::Ffl, 1) == std::vector<bool>{true});
    CHECK_THROWS_AS(plan_freeze_scheme(FreezeScheme::F0, 0), ConfigError);
}

TEST_CASE("zero-weight block with unit scale is the identity") {
    EncoderBlock<double> b = make_block(8, 2, 16, 1);
    zero_params(b);
    Rng rng(2);
    const Tensor<double> z = random_tokens(rng, 5, 8);
    const Tensor<double> out = b.forward_value(z);
    for (Index i = 0; i < z.size(); ++i) CHECK(out[i] == doctest::Approx(z[i]).epsilon(1e-12));

    b.block_scale = 0.0;
    const Tensor<double> zero = b.forward_value(z);
    for (Index i = 0; i < zero.size(); ++i) CHECK(zero[i] == 0.0);
}

TEST_CASE("n_heads must divide d_model") {
    EncoderBlock<double> b;
    b.d_model = 10;
    b.n_heads = 3;
    Rng rng(1);
    CHECK_THROWS_AS(b.init(rng), ConfigError);
}

TEST_CASE("single-head two-token block matches a hand-unrolled computation") {
    EncoderBlock<double> b = make_block(2, 1, 2, 7);
    Rng rng(8);
    const Tensor<double> z = random_tokens(rng, 2, 2);
    const Tensor<double> got = b.forward_value(z);

    // Everything below re-derives the block output with bare scalar
    // arithmetic, no library calls.
    const double eps = 1e-5;
    auto ln_row = [&](const double x[2], const Tensor<double>& g, const Tensor<double>& bi,
                      double out[2]) {
        const double mean = 0.5 * (x[0] + x[1]);
        const double var = 0.5 * ((x[0] - mean) * (x[0] - mean) + (x[1] - mean) * (x[1] - mean));
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < 2; ++j) out[j] = g[j] * ((x[j] - mean) * inv) + bi[j];
    };
    auto affine_row = [](const double x[2], const Tensor<double>& w, const Tensor<double>& bi,
                         double out[2]) {
        for (int j = 0; j < 2; ++j) out[j] = w(j, 0) * x[0] + w(j, 1) * x[1] + bi[j];
    };
    auto gelu1 = [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); };

    double zr[2][2] = {{z(0, 0), z(0, 1)}, {z(1, 0), z(1, 1)}};
    double ln1[2][2], q[2][2], k[2][2], v[2][2];
    for (int i = 0; i < 2; ++i) {
        ln_row(zr[i], b.ln1_g.value, b.ln1_b.value, ln1[i]);
        affine_row(ln1[i], b.wq.value, b.bq.value, q[i]);
        affine_row(ln1[i], b.wk.value, b.bk.value, k[i]);
        affine_row(ln1[i], b.wv.value, b.bv.value, v[i]);
    }
    const double inv_sqrt = 1.0 / std::sqrt(2.0);
    double att[2][2], ctx[2][2];
    for (int i = 0; i < 2; ++i) {
        double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) * inv_sqrt;
        double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) * inv_sqrt;
        const double mx = std::max(s0, s1);
        const double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
        att[i][0] = e0 / (e0 + e1);
        att[i][1] = e1 / (e0 + e1);
        for (int j = 0; j < 2; ++j) ctx[i][j] = att[i][0] * v[0][j] + att[i][1] * v[1][j];
    }
    double a[2][2];
    for (int i = 0; i < 2; ++i) {
        double proj[2];
        affine_row(ctx[i], b.wo.value, b.bo.value, proj);
        for (int j = 0; j < 2; ++j) a[i][j] = zr[i][j] + proj[j];
    }
    double want[2][2];
    for (int i = 0; i < 2; ++i) {
        double ln2[2], hid[2], ffn[2];
        ln_row(a[i], b.ln2_g.value, b.ln2_b.value, ln2);
        affine_row(ln2, b.w1.value, b.b1.value, hid);
        hid[0] = gelu1(hid[0]);
        hid[1] = gelu1(hid[1]);
        affine_row(hid, b.w2.value, b.b2.value, ffn);
        for (int j = 0; j < 2; ++j) want[i][j] = b.block_scale * (a[i][j] + ffn[j]);
    }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(std::abs(got(i, j) - want[i][j]) <= 1e-10);
}

TEST_CASE("block gradients reach inputs and parameters") {
    EncoderBlock<double> b = make_block(4, 2, 8, 21);
    Rng rng(22);
    for (int probe = 0; probe < 10; ++probe) {
        const Tensor<double> z0 = random_tokens(rng, 3, 4);
        Tensor<double> w = random_tokens(rng, 3, 4);
        auto f = [&](const Tensor<double>& z) {
            Tape<double> t;
            Binder<double> bind(t);
            int y = b.forward(t, bind, t.constant(z));
            return t.val(t.sum(t.mul(y, t.constant(w))))[0];
        };
        auto g = [&](const Tensor<double>& z) {
            Tape<double> t;
            Binder<double> bind(t);
            int zi = t.leaf(z, true);
            t.backward(t.sum(t.mul(b.forward(t, bind, zi), t.constant(w))));
            return t.grad(zi);
        };
        auto r = gradcheck::directional_check(f, g, z0, rng);
        CHECK_MESSAGE(r.ok, "input grad rel err ", r.rel_err);

        auto fw = [&](const Tensor<double>& wq) {
            EncoderBlock<double> b2 = b;
            b2.wq.value = wq;
            Tape<double> t;
            Binder<double> bind(t);
            int y = b2.forward(t, bind, t.constant(z0));
            return t.val(t.sum(t.mul(y, t.constant(w))))[0];
        };
        auto gw = [&](const Tensor<double>& wq) {
            EncoderBlock<double> b2 = b;
            b2.wq.value = wq;
            Tape<double> t;
            Binder<double> bind(t);
            int y = b2.forward(t, bind, t.constant(z0));
            t.backward(t.sum(t.mul(y, t.constant(w))));
            Tensor<double> out;
            bind.for_each_bound([&](Param<double>& p, int id) {
                if (&p == &b2.wq) out = t.grad(id);
            });
            return out;
        };
        auto rw = gradcheck::directional_check(fw, gw, b.wq.value, rng);
        CHECK_MESSAGE(rw.ok, "weight grad rel err ", rw.rel_err);
    }
}

TEST_CASE("freezing clamps layer-norm gains and stops gradient tracking") {
    EncoderBlock<double> b = make_block(4, 1, 8, 31);
    b.ln1_g.value[2] = 3.0;
    b.ln2_g.value[1] = -2.5;
    b.freeze();
    CHECK(b.frozen);
    CHECK(b.ln1_g.value[2] == 1.0);
    CHECK(b.ln2_g.value[1] == -1.0);
    for (Param<double>* p : b.params()) CHECK_FALSE(p->trainable);

    Tape<double> t;
    Binder<double> bind(t);
    int zi = t.constant(random_tokens(*(new Rng(1)), 3, 4));
    b.forward(t, bind, zi);
    bind.for_each_bound([&](Param<double>&, int id) { CHECK_FALSE(t.requires_grad(id)); });
}

TEST_CASE("identity-like frozen block rescales to unit scale") {
    EncoderBlock<double> b = make_block(6, 2, 12, 41);
    zero_params(b);
    b.freeze();
    Rng rng(42);
    rescale_frozen_block(b, 4, 200, rng);
    CHECK(b.block_scale == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("scale rule: estimator sees a doubling map, scale becomes one half") {
    TapeFn<double> doubling = [](Tape<double>& t, int z) { return t.scale(z, 2.0); };
    Rng rng(5);
    const double lhat = refined_lipschitz<double>(doubling, Shape{4, 6}, 200, rng);
    CHECK(lhat == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(1.0 / std::max(1.0, lhat) == doctest::Approx(0.5).epsilon(1e-9));

    TapeFn<double> identity = [](Tape<double>& t, int z) { return t.scale(z, 1.0); };
    const double one = refined_lipschitz<double>(identity, Shape{4, 6}, 50, rng);
    CHECK(1.0 / std::max(1.0, one) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("random frozen block passes fresh probe pairs after rescaling") {
    EncoderBlock<double> b = make_block(8, 2, 16, 77);
    b.freeze();
    Rng rng(78);
    rescale_frozen_block(b, 6, 2000, rng);
    CHECK(b.block_scale <= 1.0);
    CHECK(b.block_scale > 0.0);

    Rng fresh(0xf5e5);
    const double post = empirical_lipschitz<double>(b.as_tape_fn(), Shape{6, 8}, 1000, fresh);
    CHECK(post <= 1.0 + 1e-4);
}

TEST_CASE("spectral projection caps every weight matrix at unit norm") {
    EncoderBlock<double> b = make_block(4, 2, 8, 91);
    SUBCASE("diagonal example") {
        Tensor<double> w(Shape{2, 2}, {2, 0, 0, 1});
        b.w1.value = w;  // any slot; projection walks all matrices
        const double sigma = spectral_norm_estimate(b.w1.value, 200, 1e-13);
        CHECK(sigma == doctest::Approx(2.0).epsilon(1e-9));
        for (double& v : b.w1.value.data) v /= sigma;
        CHECK(b.w1.value(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(b.w1.value(1, 1) == doctest::Approx(0.5).epsilon(1e-9));
    }
    SUBCASE("sub-unit matrices stay untouched") {
        EncoderBlock<double> c = make_block(4, 2, 8, 92);
        for (Param<double>* w : c.weight_matrices())
            for (double& v : w->value.data) v *= 0.2;
        std::vector<Tensor<double>> before;
        for (Param<double>* w : c.weight_matrices()) before.push_back(w->value);
        project_spectral(c);
        std::size_t i = 0;
        for (Param<double>* w : c.weight_matrices()) {
            for (Index j = 0; j < w->value.size(); ++j)
                CHECK(w->value[j] == before[i][j]);
            ++i;
        }
    }
    SUBCASE("after projection the estimate and an SVD oracle agree on <= 1") {
        Rng rng(93);
        for (int rep = 0; rep < 100; ++rep) {
            EncoderBlock<double> c = make_block(4, 2, 8, 1000 + rep);
            for (Param<double>* w : c.weight_matrices())
                for (double& v : w->value.data) v *= (0.3 + 2.5 * rng.uniform());
            project_spectral(c);
            for (Param<double>* w : c.weight_matrices()) {
                CHECK(spectral_norm_estimate(w->value, 100, 1e-12) <= 1.0 + 1e-6);
                CHECK(oracles::jacobi_sigma_max(w->value) <= 1.0 + 1e-4);
            }
        }
    }
    SUBCASE("frozen blocks are rejected") {
        EncoderBlock<double> c = make_block(4, 2, 8, 94);
        c.freeze();
        CHECK_THROWS_AS(project_spectral(c), ConfigError);
    }
}

TEST_CASE("stack_forward: zero head, channel symmetry, permutation equivariance") {
    Rng rng(101);
    const Index n = 4, dm = 6, horizon = 5;

    EncoderStack<double> empty_stack;
    ForecastHead<double> zero_head;
    zero_head.horizon = horizon;
    zero_head.init(rng, dm, n);
    for (double& v : zero_head.w.value.data) v = 0.0;
    Tensor<double> tokens(Shape{3, n, dm});
    for (Index i = 0; i < tokens.size(); ++i) tokens[i] = rng.normal();
    const Tensor<double> zero = stack_forward(empty_stack, zero_head, tokens);
    CHECK(zero.shape == Shape{horizon, 3});
    for (Index i = 0; i < zero.size(); ++i) CHECK(zero[i] == 0.0);

    EncoderStack<double> stack;
    stack.blocks.push_back(make_block(dm, 2, 12, 103));
    stack.blocks.push_back(make_block(dm, 2, 12, 104));
    ForecastHead<double> head;
    head.horizon = horizon;
    head.init(rng, dm, n);

    Tensor<double> twin(Shape{2, n, dm});
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < dm; ++j) {
            const double v = rng.normal();
            twin(0, i, j) = v;
            twin(1, i, j) = v;
        }
    const Tensor<double> same = stack_forward(stack, head, twin);
    for (Index h = 0; h < horizon; ++h) CHECK(same(h, 0) == same(h, 1));

    Tensor<double> three(Shape{3, n, dm});
    for (Index i = 0; i < three.size(); ++i) three[i] = rng.normal();
    Tensor<double> permuted(three.shape);
    const Index perm[3] = {1, 2, 0};
    for (Index c = 0; c < 3; ++c)
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < dm; ++j) permuted(c, i, j) = three(perm[c], i, j);
    const Tensor<double> base = stack_forward(stack, head, three);
    const Tensor<double> perm_out = stack_forward(stack, head, permuted);
    for (Index c = 0; c < 3; ++c)
        for (Index h = 0; h < horizon; ++h) CHECK(perm_out(h, c) == base(h, perm[c]));
}

TEST_CASE("flattening head consumes every token") {
    Rng rng(111);
    const Index n = 3, dm = 4;
    ForecastHead<double> head;
    head.horizon = 2;
    head.flatten = true;
    head.init(rng, dm, n);
    CHECK(head.w.value.shape == Shape{2, n * dm});

    Tensor<double> tokens = random_tokens(rng, n, dm);
    Tape<double> t;
    Binder<double> bind(t);
    int y = head.forward(t, bind, t.constant(tokens));
    for (Index h = 0; h < 2; ++h) {
        double want = head.b.value[h];
        for (Index i = 0; i < n * dm; ++i) want += head.w.value(h, i) * tokens[i];
        CHECK(t.val(y)(0, h) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("frozen digest is stable and sensitive") {
    std::vector<EncoderBlock<double>> blocks;
    blocks.push_back(make_block(4, 2, 8, 121));
    blocks.push_back(make_block(4, 2, 8, 122));
    blocks[0].freeze();

    const std::string d1 = frozen_digest(blocks);
    const std::string d2 = frozen_digest(blocks);
    CHECK(d1 == d2);
    CHECK(d1.size() == 64);

    blocks[1].wq.value[0] += 1.0;  // trainable block: digest unaffected
    CHECK(frozen_digest(blocks) == d1);

    const double saved = blocks[0].wq.value[0];
    blocks[0].wq.value[0] = saved + 1e-15;
    CHECK(frozen_digest(blocks) != d1);
    blocks[0].wq.value[0] = saved;
    CHECK(frozen_digest(blocks) == d1);
}

TEST_CASE("short frozen rescaled stack is empirically non-expansive") {
    const Index dm = 8, n = 5;
    std::vector<EncoderBlock<double>> blocks;
    blocks.push_back(make_block(dm, 2, 16, 131));
    blocks.push_back(make_block(dm, 2, 16, 132));
    Rng rng(133);
    for (auto& b : blocks) {
        b.freeze();
        rescale_frozen_block(b, n, 800, rng);
    }
    TapeFn<double> stack_fn = [&](Tape<double>& t, int z) {
        Binder<double> bind(t);
        return channel_stack_forward(t, bind, blocks, z);
    };
    Rng probe_rng(134);
    const double lip = empirical_lipschitz<double>(stack_fn, Shape{n, dm}, 300, probe_rng);
    CHECK(lip <= 1.0 + 1e-3);
}
