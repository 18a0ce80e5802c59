#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "hkd/rng.hpp"
#include "hkd/tensor.hpp"
#include "oracles.hpp"

using hkd::Rng;
using hkd::Shape;
using hkd::Tensor;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad = false,
                     float scale = 1.0f) {
    std::vector<float> v(hkd::shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-scale, scale));
    return Tensor::from_data(shape, std::move(v), requires_grad);
}

// Backward once, then compare against central finite differences on x.
double grad_check(const std::function<Tensor()>& expr, Tensor& x) {
    x.zero_grad();
    {
        hkd::Tape tape;
        Tensor loss = expr();
        tape.backward(loss);
    }
    auto eval = [&]() { return double(expr().item()); };
    return oracle::fd_gradient_error(eval, x, x.grad());
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
    Tensor in = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k = Tensor::from_data({1, 1, 1, 1}, {1.0f});
    Tensor b = Tensor::from_data({1}, {0.0f});
    Tensor out = hkd::conv2d(in, k, b, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 3, 3});
    for (size_t i = 0; i < 9; ++i) CHECK(out.vec()[i] == in.vec()[i]);
}

TEST_CASE("conv2d 2x2 all-ones sums") {
    Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 1, 1, 1});
    Tensor k = Tensor::from_data({1, 1, 2, 2}, {1, 1, 1, 1});
    Tensor b = Tensor::from_data({1}, {0.0f});
    Tensor out = hkd::conv2d(in, k, b, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out.item() == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("conv2d matches nested-loop oracle") {
    Rng rng(11);
    Tensor in = random_tensor({2, 3, 8, 8}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            Tensor out = hkd::conv2d(in, k, b, stride, pad);
            auto ref = oracle::conv2d(in.vec(), 2, 3, 8, 8, k.vec(), 4, 3, 3, b.vec(),
                                      stride, pad);
            REQUIRE(out.vec().size() == ref.size());
            for (size_t i = 0; i < ref.size(); ++i)
                CHECK(out.vec()[i] ==
                      doctest::Approx(ref[i]).epsilon(1e-5).scale(std::abs(ref[i]) + 1.0));
        }
    }
}

TEST_CASE("conv2d rejects bad shapes") {
    Rng rng(1);
    Tensor in = random_tensor({1, 3, 4, 4}, rng);
    Tensor k = random_tensor({2, 2, 3, 3}, rng);  // channel mismatch
    Tensor b = random_tensor({2}, rng);
    CHECK_THROWS_AS((void)hkd::conv2d(in, k, b, 1, 1), hkd::shape_error);
    Tensor k2 = random_tensor({2, 3, 3, 3}, rng);
    Tensor b2 = random_tensor({3}, rng);  // bias mismatch
    CHECK_THROWS_AS((void)hkd::conv2d(in, k2, b2, 1, 1), hkd::shape_error);
}

TEST_CASE("resample2 down averages a constant") {
    Tensor in = Tensor::full({1, 2, 4, 4}, 0.75f);
    Tensor out = hkd::resample2(in, hkd::Resample::down);
    CHECK(out.shape() == Shape{1, 2, 2, 2});
    for (float v : out.vec()) CHECK(v == doctest::Approx(0.75f));
}

TEST_CASE("resample2 up then down is identity") {
    Rng rng(5);
    Tensor in = random_tensor({2, 3, 4, 4}, rng);
    Tensor round = hkd::resample2(hkd::resample2(in, hkd::Resample::up), hkd::Resample::down);
    REQUIRE(round.shape() == in.shape());
    for (size_t i = 0; i < in.vec().size(); ++i)
        CHECK(round.vec()[i] == doctest::Approx(in.vec()[i]).epsilon(1e-6));
}

TEST_CASE("resample2 down matches explicit 2x2 mean") {
    Rng rng(7);
    Tensor in = random_tensor({1, 2, 4, 4}, rng);
    Tensor out = hkd::resample2(in, hkd::Resample::down);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                auto at = [&](int yy, int xx) {
                    return in.vec()[(size_t(c) * 4 + yy) * 4 + xx];
                };
                float mean = (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) +
                              at(2 * y + 1, 2 * x + 1)) /
                             4.0f;
                CHECK(out.vec()[(size_t(c) * 2 + y) * 2 + x] == doctest::Approx(mean));
            }
    CHECK_THROWS_AS((void)hkd::resample2(random_tensor({1, 1, 3, 3}, rng),
                                         hkd::Resample::down),
                    hkd::shape_error);
}

TEST_CASE("backward of sum is all ones") {
    Rng rng(3);
    Tensor x = random_tensor({2, 3}, rng, true);
    hkd::Tape tape;
    tape.backward(hkd::sum(x));
    for (float g : x.grad()) CHECK(g == doctest::Approx(1.0f));
}

TEST_CASE("backward of mse matches hand formula") {
    Rng rng(4);
    Tensor x = random_tensor({2, 4}, rng, true);
    Tensor y = random_tensor({2, 4}, rng);
    hkd::Tape tape;
    tape.backward(hkd::mse(x, y));
    for (size_t i = 0; i < x.vec().size(); ++i)
        CHECK(x.grad()[i] ==
              doctest::Approx(2.0f * (x.vec()[i] - y.vec()[i]) / 8.0f).epsilon(1e-5));
}

TEST_CASE("non-scalar loss rejected") {
    Rng rng(6);
    Tensor x = random_tensor({2, 2}, rng, true);
    hkd::Tape tape;
    Tensor y = hkd::scale(x, 2.0f);
    CHECK_THROWS_AS(tape.backward(y), hkd::shape_error);
}

TEST_CASE("unreached leaves keep zero grad") {
    Rng rng(8);
    Tensor x = random_tensor({3}, rng, true);
    Tensor y = random_tensor({3}, rng, true);
    hkd::Tape tape;
    tape.backward(hkd::sum(x));
    for (float g : y.grad()) CHECK(g == 0.0f);
}

TEST_CASE("gradients accumulate over multiple consumers") {
    Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    hkd::Tape tape;
    Tensor loss = hkd::sum(hkd::add(x, x));
    tape.backward(loss);
    for (float g : x.grad()) CHECK(g == doctest::Approx(2.0f));
}

TEST_CASE("tape linearity") {
    Rng rng(9);
    Tensor x = random_tensor({4}, rng, true);
    Tensor y = random_tensor({4}, rng);

    auto grad_of = [&](const std::function<Tensor()>& f) {
        x.zero_grad();
        hkd::Tape tape;
        tape.backward(f());
        return x.grad();
    };
    auto g1 = grad_of([&] { return hkd::mse(x, y); });
    auto g2 = grad_of([&] { return hkd::sum(hkd::silu(x)); });
    auto g12 = grad_of([&] { return hkd::add(hkd::mse(x, y), hkd::sum(hkd::silu(x))); });
    for (size_t i = 0; i < g1.size(); ++i)
        CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-6));
}

TEST_CASE("ops never mutate inputs") {
    Rng rng(10);
    Tensor a = random_tensor({1, 2, 4, 4}, rng, true);
    Tensor b = random_tensor({1, 2, 4, 4}, rng, true);
    std::vector<float> a0 = a.vec(), b0 = b.vec();
    hkd::Tape tape;
    Tensor out = hkd::mse(hkd::silu(hkd::mul(a, b)), hkd::resample2(
        hkd::resample2(a, hkd::Resample::down), hkd::Resample::up));
    tape.backward(out);
    CHECK(a.vec() == a0);
    CHECK(b.vec() == b0);
}

TEST_CASE("finite-difference gradient checks for every op") {
    Rng rng(42);
    const double tol = 1e-4;

    SUBCASE("add/sub/mul/scale") {
        Tensor x = random_tensor({3, 3}, rng, true);
        Tensor y = random_tensor({3, 3}, rng);
        CHECK(grad_check([&] { return hkd::sum(hkd::add(x, y)); }, x) < tol);
        CHECK(grad_check([&] { return hkd::sum(hkd::sub(y, x)); }, x) < tol);
        CHECK(grad_check([&] { return hkd::sum(hkd::mul(x, y)); }, x) < tol);
        CHECK(grad_check([&] { return hkd::sum(hkd::scale(x, -1.7f)); }, x) < tol);
    }
    SUBCASE("silu/mean/mse") {
        Tensor x = random_tensor({2, 5}, rng, true);
        Tensor y = random_tensor({2, 5}, rng);
        CHECK(grad_check([&] { return hkd::sum(hkd::silu(x)); }, x) < tol);
        CHECK(grad_check([&] { return hkd::mean(hkd::mul(x, x)); }, x) < tol);
        CHECK(grad_check([&] { return hkd::mse(x, y); }, x) < tol);
    }
    SUBCASE("conv2d wrt input, kernel and bias") {
        Tensor in = random_tensor({1, 2, 4, 4}, rng, true);
        Tensor k = random_tensor({3, 2, 3, 3}, rng, true);
        Tensor b = random_tensor({3}, rng, true);
        Tensor probe = random_tensor({1, 3, 4, 4}, rng);
        auto expr = [&] { return hkd::mse(hkd::conv2d(in, k, b, 1, 1), probe); };
        CHECK(grad_check(expr, in) < tol);
        CHECK(grad_check(expr, k) < tol);
        CHECK(grad_check(expr, b) < tol);
    }
    SUBCASE("conv2d strided") {
        Tensor in = random_tensor({1, 2, 6, 6}, rng, true);
        Tensor k = random_tensor({2, 2, 3, 3}, rng, true);
        Tensor b = random_tensor({2}, rng, true);
        Tensor probe = random_tensor({1, 2, 3, 3}, rng);
        auto expr = [&] { return hkd::mse(hkd::conv2d(in, k, b, 2, 1), probe); };
        CHECK(grad_check(expr, in) < tol);
        CHECK(grad_check(expr, k) < tol);
    }
    SUBCASE("resample2 both directions") {
        Tensor x = random_tensor({1, 2, 4, 4}, rng, true);
        Tensor pd = random_tensor({1, 2, 2, 2}, rng);
        Tensor pu = random_tensor({1, 2, 8, 8}, rng);
        CHECK(grad_check([&] { return hkd::mse(hkd::resample2(x, hkd::Resample::down), pd); },
                         x) < tol);
        CHECK(grad_check([&] { return hkd::mse(hkd::resample2(x, hkd::Resample::up), pu); },
                         x) < tol);
    }
    SUBCASE("concat_const_channel") {
        Tensor x = random_tensor({1, 2, 3, 3}, rng, true);
        Tensor probe = random_tensor({1, 3, 3, 3}, rng);
        CHECK(grad_check([&] { return hkd::mse(hkd::concat_const_channel(x, 0.4f), probe); },
                         x) < tol);
    }
}

TEST_CASE("forward and gradients are deterministic") {
    auto run = [] {
        Rng rng(77);
        Tensor x = random_tensor({1, 2, 4, 4}, rng, true);
        Tensor k = random_tensor({2, 2, 3, 3}, rng);
        Tensor b = random_tensor({2}, rng);
        hkd::Tape tape;
        Tensor loss = hkd::mean(hkd::silu(hkd::conv2d(x, k, b, 1, 1)));
        tape.backward(loss);
        auto out = x.grad();
        out.push_back(loss.item());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("adam fixed point with zero grads") {
    Tensor p = Tensor::from_data({3}, {1.0f, -2.0f, 3.0f}, true);
    {
        hkd::Tape tape;
        tape.backward(hkd::mean(hkd::scale(p, 0.0f)));
    }
    std::vector<Tensor> params = {p};
    hkd::AdamState st;
    hkd::AdamParams hp;
    hp.decay = 1.0f;
    hkd::adam_step(params, st, hp);
    CHECK(p.vec() == std::vector<float>{1.0f, -2.0f, 3.0f});
    CHECK(st.step_count == 1);
}

TEST_CASE("adam first-step magnitude is close to lr") {
    for (float g : {1e-3f, 1.0f, 1e3f}) {
        Tensor p = Tensor::from_data({1}, {0.0f}, true);
        p.node()->grad = {g};
        std::vector<Tensor> params = {p};
        hkd::AdamState st;
        hkd::AdamParams hp;
        hp.lr = 0.01f;
        hp.decay = 1.0f;
        hkd::adam_step(params, st, hp);
        CHECK(std::abs(p.vec()[0] + hp.lr) < 0.1f * hp.lr);  // step is -lr * sign(g) approx
    }
}

TEST_CASE("adam matches a reference recurrence over 5 scripted steps") {
    Tensor p = Tensor::from_data({3}, {0.5f, -0.25f, 1.0f}, true);
    std::vector<Tensor> params = {p};
    hkd::AdamState st;
    hkd::AdamParams hp;
    hp.lr = 0.05f;
    hp.decay = 0.9f;
    hp.steps_per_epoch = 5;

    double rp[3] = {0.5, -0.25, 1.0};
    double m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
    std::vector<std::vector<float>> grads = {{0.3f, -1.0f, 0.1f},
                                             {0.2f, 0.4f, -0.6f},
                                             {-0.7f, 0.0f, 0.9f},
                                             {1.5f, -0.2f, 0.3f},
                                             {0.1f, 0.1f, -0.1f}};
    double decay_factor = std::pow(double(hp.decay), 1.0 / hp.steps_per_epoch);
    for (int step = 1; step <= 5; ++step) {
        const auto& g = grads[step - 1];
        p.node()->grad.assign(g.begin(), g.end());
        hkd::adam_step(params, st, hp);
        for (int i = 0; i < 3; ++i) {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * double(g[i]) * g[i];
            double mhat = m[i] / (1.0 - std::pow(double(hp.beta1), step));
            double vhat = v[i] / (1.0 - std::pow(double(hp.beta2), step));
            rp[i] = (rp[i] - hp.lr * mhat / (std::sqrt(vhat) + hp.eps)) * decay_factor;
            CHECK(p.vec()[i] == doctest::Approx(rp[i]).epsilon(1e-6));
        }
    }
    CHECK(st.step_count == 5);
}

TEST_CASE("all_finite flags bad values") {
    Tensor good = Tensor::from_data({2}, {1.0f, 2.0f});
    CHECK(hkd::all_finite(good));
    Tensor bad = Tensor::from_data({2}, {1.0f, std::nanf("")});
    CHECK_FALSE(hkd::all_finite(bad));
}
