#include <doctest.h>

#include <cmath>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "gcap/errors.hpp"
#include "gcap/loss.hpp"
#include "helpers.hpp"

using namespace gcap;
using testing::random_matrix;
using testing::random_net;

namespace {

using Big = boost::multiprecision::cpp_dec_float_50;

double ce_oracle(const Vector& logits, std::size_t label) {
    Big sum = 0;
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
        sum += boost::multiprecision::exp(Big(logits(k)));
    }
    const Big v = boost::multiprecision::log(sum) - Big(logits(static_cast<Eigen::Index>(label)));
    return v.convert_to<double>();
}

// Central differences of the mean loss on one coordinate.
double finite_difference(const std::vector<Matrix>& layers, std::size_t i, Eigen::Index r, Eigen::Index c,
                         const Matrix& x, const std::vector<std::size_t>& y, LossKind kind, double h) {
    std::vector<Matrix> plus = layers;
    std::vector<Matrix> minus = layers;
    plus[i](r, c) += h;
    minus[i](r, c) -= h;
    const double lp = mean_loss(kind, forward_batch(Network(plus), x), y);
    const double lm = mean_loss(kind, forward_batch(Network(minus), x), y);
    return (lp - lm) / (2.0 * h);
}

bool close(double got, double want, double rel, double abs_floor) {
    return std::abs(got - want) <= rel * std::max(std::abs(want), abs_floor);
}

}  // namespace

TEST_CASE("cross entropy examples") {
    Vector z(2);
    z << 0, 0;
    CHECK(cross_entropy(z, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    z << 1000, 0;
    CHECK(cross_entropy(z, 0) >= 0.0);
    CHECK(cross_entropy(z, 0) < 1e-300);
    CHECK(std::isfinite(cross_entropy(z, 1)));
    CHECK(cross_entropy(z, 1) == doctest::Approx(1000.0));
    CHECK_THROWS_AS(cross_entropy(z, 2), ArgumentError);
}

TEST_CASE("cross entropy matches a 50-digit oracle") {
    rng::Stream s(21);
    for (int trial = 0; trial < 200; ++trial) {
        const Vector z = testing::random_vector(10, s, 5.0);
        const std::size_t y = s.index(10);
        const double want = ce_oracle(z, y);
        CHECK(std::abs(cross_entropy(z, y) - want) <= 1e-10 * std::max(1.0, want));
    }
}

TEST_CASE("squared and zero-one losses") {
    Vector z(3);
    z << 0.5, 2.0, -1.0;
    CHECK(squared_error(z, 1) == doctest::Approx(0.25 + 1.0 + 1.0));
    CHECK(zero_one(z, 1) == 0.0);
    CHECK(zero_one(z, 0) == 1.0);
    z << 1.0, 1.0, 0.0;
    CHECK(zero_one(z, 0) == 1.0);
    CHECK(parse_loss_kind("squared") == LossKind::squared);
    CHECK(to_string(LossKind::zero_one) == "zero_one");
    CHECK_THROWS_AS(parse_loss_kind("hinge"), ArgumentError);
}

TEST_CASE("mean loss over a dataset agrees with per-sample sums") {
    rng::Stream s(22);
    const Network net = random_net({4, 6, 3}, s);
    const LabeledDataset data = testing::random_dataset(2500, 4, 3, s);
    double sum = 0.0;
    double errors = 0.0;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const Vector z = forward(net, data.inputs.col(static_cast<Eigen::Index>(j))).logits;
        sum += cross_entropy(z, data.labels[j]);
        errors += zero_one(z, data.labels[j]);
    }
    CHECK(mean_loss(net, data, LossKind::cross_entropy) == doctest::Approx(sum / 2500.0).epsilon(1e-12));
    CHECK(error_rate(net, data) == doctest::Approx(errors / 2500.0).epsilon(1e-12));
}

TEST_CASE("gradient of a single linear layer is the logistic-regression formula") {
    rng::Stream s(23);
    const Matrix w = random_matrix(3, 4, s);
    const Matrix x = random_matrix(4, 1, s);
    const std::vector<std::size_t> y{2};
    const LossGradient g = gradient(Network({w}), x, y);
    Vector z = w * x.col(0);
    Vector p = (z.array() - z.maxCoeff()).exp();
    p /= p.sum();
    p(2) -= 1.0;
    CHECK((g.grads[0] - p * x.col(0).transpose()).norm() <= 1e-14);
    CHECK(g.loss == doctest::Approx(cross_entropy(z, 2)).epsilon(1e-14));
}

TEST_CASE("gradient of a zero-weight network matches finite differences") {
    rng::Stream s(24);
    const Network net = Network::zeros(std::vector<std::size_t>{3, 4, 3});
    const Matrix x = random_matrix(3, 5, s);
    const std::vector<std::size_t> y{0, 1, 2, 1, 0};
    const LossGradient g = gradient(net, x, y);
    for (std::size_t i = 0; i < 2; ++i) {
        for (Eigen::Index r = 0; r < net.layer(i).rows(); ++r) {
            for (Eigen::Index c = 0; c < net.layer(i).cols(); ++c) {
                const double fd = finite_difference(net.layers(), i, r, c, x, y, LossKind::cross_entropy, 1e-5);
                CHECK(std::abs(g.grads[i](r, c) - fd) <= 1e-8);
            }
        }
    }
    // All logits zero: output-layer gradient is a product with zero hidden
    // activations, hence exactly zero.
    CHECK(g.grads[1].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backprop agrees with central differences on random 3-layer nets") {
    rng::Stream s(25);
    for (LossKind kind : {LossKind::cross_entropy, LossKind::squared}) {
        for (int trial = 0; trial < 10; ++trial) {
            const Network net = random_net({4, 5, 4, 3}, s, 0.8);
            const Matrix x = random_matrix(4, 6, s);
            std::vector<std::size_t> y;
            for (int j = 0; j < 6; ++j) {
                y.push_back(s.index(3));
            }
            const LossGradient g = gradient(net, x, y, kind);
            for (std::size_t i = 0; i < 3; ++i) {
                for (Eigen::Index r = 0; r < net.layer(i).rows(); ++r) {
                    for (Eigen::Index c = 0; c < net.layer(i).cols(); ++c) {
                        const double fd = finite_difference(net.layers(), i, r, c, x, y, kind, 1e-5);
                        CHECK(close(g.grads[i](r, c), fd, 1e-4, 1e-6));
                    }
                }
            }
        }
    }
}

TEST_CASE("gradient input validation") {
    const Network net = Network::zeros(std::vector<std::size_t>{2, 2});
    CHECK_THROWS(gradient(net, Matrix::Ones(2, 0), std::vector<std::size_t>{}));
    CHECK_THROWS(gradient(net, Matrix::Ones(3, 1), std::vector<std::size_t>{0}));
    CHECK_THROWS(gradient(net, Matrix::Ones(2, 1), std::vector<std::size_t>{5}));
    CHECK_THROWS(gradient(net, Matrix::Ones(2, 1), std::vector<std::size_t>{0}, LossKind::zero_one));
}
