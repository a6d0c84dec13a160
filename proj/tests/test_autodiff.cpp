#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <random>

#include "waveunet/ops.hpp"

using namespace waveunet;
using Catch::Approx;

namespace {

// Central finite differences against the analytic gradient of a scalar loss.
// Inputs are drawn away from the leaky_relu kink so the difference quotient is
// valid. Relative error uses max(|a|, |n|) with an absolute floor for
// near-zero pairs.
void check_gradients(const std::function<TensorPtr<double>()>& loss_fn,
                     const std::vector<TensorPtr<double>>& leaves, double h = 1e-4,
                     double tol = 1e-4) {
    auto loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& leaf : leaves) analytic.push_back(leaf->grad);

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (std::size_t i = 0; i < leaf->data.size(); ++i) {
            const double keep = leaf->data[i];
            leaf->data[i] = keep + h;
            const double up = loss_fn()->data[0];
            leaf->data[i] = keep - h;
            const double down = loss_fn()->data[0];
            leaf->data[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[li][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            INFO("leaf " << li << " element " << i << " analytic " << a << " numeric " << numeric);
            if (std::abs(a) < 1e-10 && std::abs(numeric) < 1e-10) continue;
            REQUIRE(std::abs(a - numeric) / denom < tol);
        }
    }
}

TensorPtr<double> random_leaf(Shape s, std::mt19937_64& rng, bool away_from_zero = false) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto t = Tensor<double>::zeros(s, true);
    for (auto& v : t->data) {
        v = dist(rng);
        if (away_from_zero && std::abs(v) < 0.2) v = v < 0 ? v - 0.2 : v + 0.2;
    }
    return t;
}

} // namespace

TEST_CASE("mse gradient of a scalar", "[backward]") {
    auto x = Tensor<double>::scalar(3.0, true);
    auto loss = mse_loss(x, Tensor<double>::scalar(0.0));
    backward(loss);
    REQUIRE(x->grad[0] == Approx(6.0)); // d/dx x^2 at 3
}

TEST_CASE("backward misuse", "[backward]") {
    auto leaf = Tensor<double>::scalar(1.0, true);
    REQUIRE_THROWS_AS(backward(leaf), UsageError); // unrecorded tensor

    auto loss = mse_loss(leaf, Tensor<double>::scalar(0.0));
    backward(loss);
    REQUIRE_THROWS_AS(backward(loss), UsageError); // graphs are single-use

    auto vec = Tensor<double>::from_frames({1, 2}, true);
    REQUIRE_THROWS_AS(backward(add(vec, vec)), UsageError); // non-scalar
}

TEST_CASE("decimate routes gradient to even input frames only", "[backward]") {
    auto x = Tensor<double>::from_frames({1, 2, 3, 4, 5}, true);
    auto loss = mse_loss(decimate(x), Tensor<double>::from_frames({0, 0, 0}));
    backward(loss);
    // d mean((x_even)^2) / dx = 2/3 * x at even positions, 0 at odd
    REQUIRE(x->grad[0] == Approx(2.0 / 3.0 * 1.0));
    REQUIRE(x->grad[1] == 0.0);
    REQUIRE(x->grad[2] == Approx(2.0 / 3.0 * 3.0));
    REQUIRE(x->grad[3] == 0.0);
    REQUIRE(x->grad[4] == Approx(2.0 / 3.0 * 5.0));
}

TEST_CASE("finite differences: conv1d valid and same", "[gradcheck]") {
    std::mt19937_64 rng(21);
    for (Padding pad : {Padding::valid, Padding::same}) {
        auto x = random_leaf({2, 11, 3}, rng);
        auto filters = random_leaf({5, 3, 2}, rng);
        auto bias = random_leaf({1, 1, 2}, rng);
        auto target = random_leaf({2, pad == Padding::valid ? 7 : 11, 2}, rng);
        target->requires_grad = false;
        check_gradients(
            [&] { return mse_loss(conv1d(x, ConvParams<double>{filters, bias}, pad), target); },
            {x, filters, bias});
    }
}

TEST_CASE("finite differences: activations", "[gradcheck]") {
    std::mt19937_64 rng(22);
    for (Activation kind : {Activation::leaky_relu, Activation::tanh, Activation::sigmoid}) {
        auto x = random_leaf({1, 9, 2}, rng, kind == Activation::leaky_relu);
        auto target = random_leaf({1, 9, 2}, rng);
        target->requires_grad = false;
        check_gradients([&] { return mse_loss(activation(x, kind, 0.2), target); }, {x});
    }
}

TEST_CASE("finite differences: resampling ops", "[gradcheck]") {
    std::mt19937_64 rng(23);
    auto x = random_leaf({2, 7, 3}, rng);

    auto t_dec = random_leaf({2, 4, 3}, rng);
    t_dec->requires_grad = false;
    check_gradients([&] { return mse_loss(decimate(x), t_dec); }, {x});

    auto t_lin = random_leaf({2, 13, 3}, rng);
    t_lin->requires_grad = false;
    check_gradients([&] { return mse_loss(upsample_linear(x), t_lin); }, {x});

    auto t_dbl = random_leaf({2, 14, 3}, rng);
    t_dbl->requires_grad = false;
    check_gradients([&] { return mse_loss(upsample_double(x), t_dbl); }, {x});

    auto w = random_leaf({1, 1, 3}, rng);
    check_gradients(
        [&] { return mse_loss(upsample_learned(x, UpsampleWeights<double>{w}), t_lin); }, {x, w});
    check_gradients(
        [&] { return mse_loss(upsample_learned_double(x, UpsampleWeights<double>{w}), t_dbl); },
        {x, w});
}

TEST_CASE("finite differences: crop, concat and arithmetic", "[gradcheck]") {
    std::mt19937_64 rng(24);
    auto high = random_leaf({1, 5, 2}, rng);
    auto local = random_leaf({1, 11, 3}, rng);
    auto target = random_leaf({1, 5, 5}, rng);
    target->requires_grad = false;
    check_gradients([&] { return mse_loss(concat_crop(high, local), target); }, {high, local});

    auto a = random_leaf({1, 6, 2}, rng);
    auto b = random_leaf({1, 6, 2}, rng);
    auto t = random_leaf({1, 6, 2}, rng);
    t->requires_grad = false;
    check_gradients([&] { return mse_loss(sub(add(a, scale(b, 1.7)), b), t); }, {a, b});

    auto c = random_leaf({1, 12, 1}, rng);
    auto tc = random_leaf({1, 6, 1}, rng);
    tc->requires_grad = false;
    check_gradients([&] { return mse_loss(crop_center(c, 6), tc); }, {c});
}

TEST_CASE("gradient accumulates across fan-out", "[gradcheck]") {
    std::mt19937_64 rng(25);
    auto x = random_leaf({1, 8, 1}, rng);
    auto t = random_leaf({1, 8, 1}, rng);
    t->requires_grad = false;
    // x used twice: grads from both paths must sum
    check_gradients([&] { return mse_loss(add(x, activation(x, Activation::tanh)), t); }, {x});
}
