#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cla/autodiff.hpp"
#include "cla/rng.hpp"

using namespace cla;
using namespace cla::ad;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = scale * rng.gaussian();
    return t;
}

}  // namespace

TEST_CASE("matmul forward examples") {
    Graph g;
    Var a = g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    Var b = g.constant(Tensor::matrix(2, 2, {2, 3, 4, 5}));
    Var c = matmul(a, b);
    CHECK(g.value(c).data == std::vector<double>{2, 3, 4, 5});

    Var d = matmul(g.constant(Tensor::matrix(1, 2, {1, 2})), g.constant(Tensor::matrix(2, 1, {3, 4})));
    CHECK(g.value(d).data[0] == 11.0);

    CHECK_THROWS_AS(matmul(a, g.constant(Tensor::matrix(3, 2, {0, 0, 0, 0, 0, 0}))), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(11);
    Tensor B = random_tensor({4, 2}, rng);
    Tensor A = random_tensor({3, 4}, rng);
    const double errA = finite_diff_check(
        [&](Graph& g, Var x) { return sum_all(matmul(x, g.constant(B))); }, A);
    CHECK(errA < 1e-4);
    const double errB = finite_diff_check(
        [&](Graph& g, Var x) { return sum_all(matmul(g.constant(A), x)); }, B);
    CHECK(errB < 1e-4);
}

TEST_CASE("elementwise examples") {
    Graph g;
    Var r = relu(g.constant(Tensor::row({-1, 0, 2})));
    CHECK(g.value(r).data == std::vector<double>{0, 0, 2});
    Var s = add(g.constant(Tensor::row({1, 2})), g.constant(Tensor::row({3, 4})));
    CHECK(g.value(s).data == std::vector<double>{4, 6});
    CHECK_THROWS_AS(add(g.constant(Tensor::row({1, 2})), g.constant(Tensor::row({1, 2, 3}))),
                    DimensionError);
}

TEST_CASE("mul gradient on random 5-vector") {
    Rng rng(12);
    Tensor a = random_tensor({5}, rng);
    Tensor b = random_tensor({5}, rng);
    const double err = finite_diff_check(
        [&](Graph& g, Var x) { return sum_all(mul(x, mul(x, g.constant(b)))); }, a);
    CHECK(err < 1e-4);
}

TEST_CASE("l2_normalize examples") {
    Graph g;
    Var v = l2_normalize(g.constant(Tensor::row({3, 4})));
    CHECK(g.value(v).data[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(g.value(v).data[1] == doctest::Approx(0.8).epsilon(1e-12));

    Var u = l2_normalize(g.constant(Tensor::row({1, 0, 0})));
    CHECK(g.value(u).data[0] == doctest::Approx(1.0).epsilon(1e-9));

    // zero-norm row is epsilon-stabilized and flagged
    Var z = l2_normalize(g.constant(Tensor::row({0, 0})));
    CHECK(g.value(z).all_finite());
    CHECK(g.diagnostics.zero_norm_rows == 1);
}

TEST_CASE("l2_normalize gradient on random 6-vector") {
    Rng rng(13);
    Tensor a = random_tensor({6}, rng);
    Tensor t = random_tensor({6}, rng);
    const double err = finite_diff_check(
        [&](Graph& g, Var x) { return sum_all(mul(l2_normalize(x), g.constant(t))); }, a);
    CHECK(err < 1e-4);
}

TEST_CASE("batch_norm zero-variance and identity cases") {
    Tensor gamma = Tensor::row({1, 1, 1});
    Tensor beta = Tensor::row({0, 0, 0});
    std::vector<double> rm(3, 0.0), rv(3, 1.0);
    {
        Graph g;
        Var y = batch_norm(g.constant(Tensor::matrix(2, 3, {1, 2, 3, 1, 2, 3})), g.constant(gamma),
                           g.constant(beta), true, rm, rv);
        for (double v : g.value(y).data) CHECK(std::abs(v) < 1e-9);
    }
    {
        // columns with mean 0 and unit (biased) variance pass through
        std::vector<double> rm2(1, 0.0), rv2(1, 1.0);
        Graph g;
        Var y = batch_norm(g.constant(Tensor::matrix(2, 1, {1, -1})), g.constant(Tensor::row({1})),
                           g.constant(Tensor::row({0})), true, rm2, rv2);
        CHECK(g.value(y).data[0] == doctest::Approx(1.0).epsilon(1e-4));
        CHECK(g.value(y).data[1] == doctest::Approx(-1.0).epsilon(1e-4));
    }
    {
        std::vector<double> rm3(2, 0.0), rv3(2, 1.0);
        Graph g;
        CHECK_THROWS_AS(batch_norm(g.constant(Tensor::matrix(1, 2, {1, 2})),
                                   g.constant(Tensor::row({1, 1})), g.constant(Tensor::row({0, 0})),
                                   true, rm3, rv3),
                        DimensionError);
    }
}

TEST_CASE("batch_norm train-mode gradient") {
    Rng rng(14);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor gamma = random_tensor({3}, rng, 0.3);
    for (double& v : gamma.data) v += 1.0;
    Tensor beta = random_tensor({3}, rng, 0.1);
    Tensor w = random_tensor({4, 3}, rng);  // mixing weights make the loss non-trivial

    auto make = [&](Graph& g, Var vx) {
        std::vector<double> rm(3, 0.0), rv(3, 1.0);
        Var y = batch_norm(vx, g.constant(gamma), g.constant(beta), true, rm, rv);
        return sum_all(mul(y, g.constant(w)));
    };
    CHECK(finite_diff_check(make, x) < 1e-3);

    auto make_gamma = [&](Graph& g, Var vg) {
        std::vector<double> rm(3, 0.0), rv(3, 1.0);
        Var y = batch_norm(g.constant(x), vg, g.constant(beta), true, rm, rv);
        return sum_all(mul(y, g.constant(w)));
    };
    CHECK(finite_diff_check(make_gamma, gamma) < 1e-4);
}

TEST_CASE("backward basics") {
    Tensor w = Tensor::row({1, 2, 3});
    w.requires_grad = true;
    Graph g;
    Var loss = sum_all(g.leaf(w));
    g.backward(loss);
    CHECK(w.grad == std::vector<double>{1, 1, 1});

    // constant-marked tensor receives no gradient
    Tensor c = Tensor::row({5, 6});
    Graph g2;
    Var l2 = sum_all(g2.constant(c));
    g2.backward(l2);
    CHECK(c.grad.empty());

    // non-scalar loss rejected
    Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
    m.requires_grad = true;
    Graph g3;
    Var v = g3.leaf(m);
    CHECK_THROWS_AS(g3.backward(v), DimensionError);
}

TEST_CASE("composite MLP loss matches finite differences") {
    Rng rng(15);
    Tensor w1 = random_tensor({4, 6}, rng, 0.5);
    Tensor b1 = random_tensor({6}, rng, 0.1);
    Tensor w2 = random_tensor({6, 3}, rng, 0.5);
    Tensor x = random_tensor({5, 4}, rng);
    auto net = [&](Graph& g, Var vw1) {
        Var h = relu(add_rowvec(matmul(g.constant(x), vw1), g.constant(b1)));
        Var o = matmul(h, g.constant(w2));
        return scale(sum_all(mul(o, o)), 0.5);
    };
    CHECK(finite_diff_check(net, w1) < 1e-4);
}

TEST_CASE("finite_diff_check oracle sanity") {
    Rng rng(16);
    Tensor x = random_tensor({7}, rng);
    // quadratic: central differences are exact
    const double q = finite_diff_check(
        [](Graph&, Var v) { return scale(sum_all(mul(v, v)), 0.5); }, x);
    CHECK(q < 1e-6);

    Tensor target = random_tensor({7}, rng);
    const double c = finite_diff_check(
        [&](Graph& g, Var v) {
            Var vn = l2_normalize(v);
            Var tn = l2_normalize(g.constant(target));
            return scale(sum_all(mul(vn, tn)), -1.0);
        },
        x);
    CHECK(c < 1e-4);
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(17);
    Tensor w = random_tensor({8}, rng);
    w.requires_grad = true;
    Tensor a = random_tensor({8}, rng);
    Tensor b = random_tensor({8}, rng);

    auto grad_of = [&](double ca, double cb) {
        w.zero_grad();
        Graph g;
        Var vw = g.leaf(w);
        Var l1 = sum_all(mul(vw, g.constant(a)));
        Var l2 = sum_all(mul(mul(vw, vw), g.constant(b)));
        g.backward(add(scale(l1, ca), scale(l2, cb)));
        return w.grad;
    };
    const auto g1 = grad_of(1.0, 0.0);
    const auto g2 = grad_of(0.0, 1.0);
    const auto gc = grad_of(2.0, -0.5);
    for (std::size_t i = 0; i < gc.size(); ++i)
        CHECK(gc[i] == doctest::Approx(2.0 * g1[i] - 0.5 * g2[i]).epsilon(1e-10));
}

TEST_CASE("stop-gradient: identical forward, zero grads") {
    Rng rng(18);
    Tensor w = random_tensor({5}, rng);
    w.requires_grad = true;
    Tensor frozen = random_tensor({5}, rng);
    frozen.requires_grad = false;

    auto run = [&](bool detach_branch) {
        Graph g;
        Var vw = g.leaf(w);
        Var vf = g.leaf(frozen);
        Var branch = mul(vw, vf);
        if (detach_branch) branch = detach(branch);
        Var loss = sum_all(mul(branch, vw));
        const double v = g.scalar_value(loss);
        w.zero_grad();
        g.backward(loss);
        return v;
    };
    const double v_plain = run(false);
    const double v_detached = run(true);
    CHECK(v_plain == v_detached);  // bitwise identical forward
    CHECK(frozen.grad.empty());
}

TEST_CASE("determinism: identical seeds give bitwise-identical results") {
    auto run_once = [] {
        Rng rng(99);
        Tensor w = random_tensor({6, 4}, rng);
        w.requires_grad = true;
        Tensor x = random_tensor({3, 6}, rng);
        Graph g;
        Var y = l2_normalize(relu(matmul(g.constant(x), g.leaf(w))));
        Var loss = sum_all(y);
        g.backward(loss);
        return std::make_pair(g.scalar_value(loss), w.grad);
    };
    const auto a = run_once();
    const auto b = run_once();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("per-op finite-difference property (sampled)") {
    Rng rng(20);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({6}, rng);
        Tensor y = random_tensor({6}, rng);
        const double e1 = finite_diff_check(
            [&](Graph& g, Var v) { return sum_all(mul(sub(v, g.constant(y)), v)); }, x);
        CHECK(e1 < 1e-4);
        Tensor m = random_tensor({3, 4}, rng);
        Tensor mw = random_tensor({3, 4}, rng);
        const double e2 = finite_diff_check(
            [&](Graph& g, Var v) { return sum_all(mul(l2_normalize(v), g.constant(mw))); }, m);
        CHECK(e2 < 1e-4);
    }
}

TEST_CASE("softmax cross-entropy gradient and value") {
    Rng rng(21);
    Tensor logits = random_tensor({4, 5}, rng);
    std::vector<int> targets = {1, 0, 4, 2};
    const double err = finite_diff_check(
        [&](Graph&, Var v) { return softmax_cross_entropy_rows(v, targets); }, logits);
    CHECK(err < 1e-4);

    // uniform logits: loss is ln(C)
    Graph g;
    Var l = softmax_cross_entropy_rows(g.constant(Tensor::zeros({2, 4})), std::vector<int>{0, 3});
    CHECK(g.scalar_value(l) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("transpose, concat, slice adjoints") {
    Rng rng(22);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({2, 4}, rng);
    Tensor mix = random_tensor({5, 3}, rng);
    const double err = finite_diff_check(
        [&](Graph& g, Var v) {
            Var cat = concat_rows(v, g.constant(b));
            Var sl = slice_rows(cat, 1, 3);
            return sum_all(mul(transpose(sl), g.constant(Tensor::matrix(4, 3, std::vector<double>(
                                                            mix.data.begin(), mix.data.begin() + 12)))));
        },
        a);
    CHECK(err < 1e-4);
}
