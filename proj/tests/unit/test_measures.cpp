#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/SVD>

#include "gcap/errors.hpp"
#include "gcap/measures.hpp"
#include "gcap/train.hpp"
#include "helpers.hpp"

using namespace gcap;
using testing::random_matrix;
using testing::random_net;
using testing::rel_diff;

namespace {

// Sums f(path) over every input-to-output index path, one recursion level per layer.
double enumerate_paths(const Network& net, const std::function<double(double)>& f) {
    double total = 0.0;
    const std::size_t d = net.depth();
    std::function<void(std::size_t, Eigen::Index, double)> walk = [&](std::size_t layer, Eigen::Index from,
                                                                      double acc) {
        if (layer == d) {
            total += acc;
            return;
        }
        const Matrix& w = net.layer(layer);
        for (Eigen::Index to = 0; to < w.rows(); ++to) {
            walk(layer + 1, to, acc * f(w(to, from)));
        }
    };
    for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(net.input_dim()); ++start) {
        walk(0, start, 1.0);
    }
    return total;
}

double abs_f(double w) { return std::abs(w); }
double sq_f(double w) { return w * w; }

Matrix mat2(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m << a, b, c, d;
    return m;
}

Network example_net() {
    Matrix w2(1, 2);
    w2 << 1, 1;
    return Network({mat2(1, 2, 3, 4), w2});
}

// Scalar inputs 1..m, two classes, label 0: the margin of sample j is j.
LabeledDataset ramp(std::size_t m) {
    LabeledDataset d;
    d.num_classes = 2;
    d.inputs.resize(1, static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
        d.inputs(0, static_cast<Eigen::Index>(j)) = static_cast<double>(j + 1);
        d.labels.push_back(0);
        d.provenance.push_back(Provenance::true_label);
    }
    return d;
}

Network ramp_net() {
    Matrix w(2, 1);
    w << 1, 0;
    return Network({w});
}

}  // namespace

TEST_CASE("margin_single") {
    Vector z(3);
    z << 2.0, 0.5, -1.0;
    CHECK(margin_single(z, 0) == 1.5);
    Vector t(2);
    t << 1, 1;
    CHECK(margin_single(t, 0) == 0.0);
    t << 0, 3;
    CHECK(margin_single(t, 0) == -3.0);
    CHECK_THROWS_AS(margin_single(Vector::Ones(1), 0), ArgumentError);
    CHECK_THROWS_AS(margin_single(t, 2), ArgumentError);
}

TEST_CASE("margin_percentile") {
    CHECK(margin_percentile(ramp_net(), ramp(100), MarginSpec{0.05}) == 5.0);
    CHECK(margin_percentile(ramp_net(), ramp(100), MarginSpec{0.5}) == 50.0);
    CHECK(margin_percentile(ramp_net(), ramp(1), MarginSpec{0.3}) == 1.0);
    CHECK_THROWS_AS(margin_percentile(ramp_net(), ramp(3), MarginSpec{0.0}), ArgumentError);
    CHECK_THROWS_AS(margin_percentile(ramp_net(), ramp(3), MarginSpec{1.0}), ArgumentError);

    // Sort-then-index reference.
    rng::Stream s(61);
    for (int trial = 0; trial < 20; ++trial) {
        const Network net = random_net({6, 8, 4}, s);
        const std::size_t m = 1 + s.index(300);
        const LabeledDataset data = testing::random_dataset(m, 6, 4, s);
        const Matrix logits = forward_batch(net, data.inputs);
        std::vector<double> sorted;
        for (std::size_t j = 0; j < m; ++j) {
            sorted.push_back(margin_single(logits.col(static_cast<Eigen::Index>(j)), data.labels[j]));
        }
        std::sort(sorted.begin(), sorted.end());
        const double eps = 0.01 + 0.9 * s.uniform();
        const auto k = static_cast<std::size_t>(std::ceil(eps * static_cast<double>(m) - 1e-9));
        CHECK(margin_percentile(net, data, MarginSpec{eps}) == sorted[std::max<std::size_t>(k, 1) - 1]);
    }
}

TEST_CASE("norm products on the worked example") {
    const Network net = example_net();
    CHECK(l2_norm_product(net) == 60.0);
    CHECK(l1_path_norm(net) == 10.0);
    CHECK(l2_path_norm_sq(net) == 30.0);
    CHECK(enumerate_paths(net, abs_f) == 10.0);
    CHECK(enumerate_paths(net, sq_f) == 30.0);
    CHECK(l1inf_product(Network({mat2(1, 2, 3, 4)})) == 49.0);
    CHECK(l1_path_norm(Network({Matrix::Constant(1, 1, -2.0)})) == 2.0);
    CHECK(l2_path_norm_sq(Network({Matrix::Constant(1, 1, 3.0)})) == 9.0);
    CHECK(l2_norm_product(Network({mat2(1, 2, 3, 4), Matrix::Zero(1, 2)})) == 0.0);

    const Network identity({Matrix::Identity(3, 3), Matrix::Identity(3, 3)});
    CHECK(spectral_product(identity) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(l1inf_product(identity) == 1.0);
}

TEST_CASE("path norms equal brute-force enumeration") {
    rng::Stream s(62);
    for (int trial = 0; trial < 200; ++trial) {
        const Network net = random_net(testing::random_dims(s, 4, 5), s);
        CHECK(rel_diff(l1_path_norm(net), enumerate_paths(net, abs_f)) <= 1e-9);
        CHECK(rel_diff(l2_path_norm_sq(net), enumerate_paths(net, sq_f)) <= 1e-9);
    }
}

TEST_CASE("spectral norm") {
    CHECK(spectral_norm(mat2(3, 0, 0, 4)).value == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(spectral_norm(mat2(0, 1, 0, 0)).value == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(spectral_norm(Matrix::Zero(2, 3)).value == 0.0);
    CHECK_THROWS_AS(spectral_norm(Matrix(0, 0)), ArgumentError);

    rng::Stream s(63);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix a = random_matrix(1 + static_cast<Eigen::Index>(s.index(20)),
                                       1 + static_cast<Eigen::Index>(s.index(20)), s);
        const double want = Eigen::JacobiSVD<Matrix>(a).singularValues()(0);
        const SpectralNorm got = spectral_norm(a);
        CHECK(rel_diff(got.value, want) <= 1e-6);
    }

    // A two-iteration budget cannot certify convergence on a generic matrix.
    const SpectralNorm rough = spectral_norm(random_matrix(10, 10, s), 2, 1e-15);
    CHECK_FALSE(rough.converged);
    CHECK(rough.iterations == 2);
}

TEST_CASE("spectral product never exceeds the Frobenius product") {
    rng::Stream s(64);
    for (int trial = 0; trial < 50; ++trial) {
        const Network net = random_net(testing::random_dims(s, 4, 8), s);
        CHECK(spectral_product(net) <= l2_norm_product(net) * (1.0 + 1e-9));
    }
}

TEST_CASE("row norms") {
    const Matrix w = mat2(1, -2, 3, 4);
    CHECK(l1inf_norm(w) == 7.0);
    CHECK(l2inf_norm(w) == 5.0);
}

TEST_CASE("capacity report") {
    const LabeledDataset data = synthetic_blobs(3, 40, 5, 0.05, 65);
    const Network net = Network::he_init(std::vector<std::size_t>{5, 12, 3}, 66);
    rng::Stream s(67);

    SUBCASE("hand-chained composition") {
        const MarginSpec spec{0.1};
        TrainConfig cfg;
        cfg.max_epochs = 100;
        const Network fit = sgd_train(net, data, cfg).net;
        const MeasureReport r = capacity_report(fit, data, spec);
        const double g = margin_percentile(fit, data, spec);
        REQUIRE(g > 0.0);
        CHECK(r.margin == g);
        CHECK(r.m == 120);
        CHECK(r.raw_value("l2_product") == l2_norm_product(fit));
        CHECK(r.raw_value("l1_path") == l1_path_norm(fit));
        CHECK(r.raw_value("l2_path_sq") == l2_path_norm_sq(fit));
        CHECK(r.raw_value("spectral_product") == spectral_product(fit));
        CHECK(r.raw_value("l1inf_product") == l1inf_product(fit));
        CHECK(r.normalization_defined);
        CHECK(r.normalized_value("l2_product") == l2_norm_product(fit) / (g * g));
        CHECK(r.normalized_value("l1_path") == l1_path_norm(fit) * l1_path_norm(fit) / (g * g));
        CHECK(r.normalized_value("l2_path_sq") == l2_path_norm_sq(fit) / (g * g));
        CHECK(r.normalized_value("spectral_product") == spectral_product(fit) / (g * g));
        CHECK(r.normalized_value("l1inf_product") == l1inf_product(fit) / (g * g));
        CHECK_THROWS_AS(r.raw_value("l3"), ArgumentError);
    }

    SUBCASE("non-positive margin leaves normalization undefined") {
        const MeasureReport r = capacity_report(Network::zeros(std::vector<std::size_t>{5, 3}), data, MarginSpec{});
        CHECK_FALSE(r.normalization_defined);
        CHECK(r.margin == 0.0);
        for (double v : r.normalized) {
            CHECK(std::isnan(v));
        }
        CHECK(r.to_json()["normalized"]["l2_product"].is_null());
        CHECK(r.csv_row().find("nan") != std::string::npos);
    }

    SUBCASE("global scaling leaves normalized measures unchanged") {
        // Fit a net with a positive margin: ramp data, two layers.
        Matrix w1(2, 1);
        w1 << 1, 0.5;
        Matrix w2(2, 2);
        w2 << 1, 0.2, -0.3, 0.1;
        const Network pos({w1, w2});
        const LabeledDataset r = ramp(50);
        const MeasureReport base = capacity_report(pos, r, MarginSpec{});
        REQUIRE(base.normalization_defined);
        for (double c : {0.1, 3.0, 10.0}) {
            const MeasureReport scaled = capacity_report(pos.scaled(c), r, MarginSpec{});
            for (std::size_t i = 0; i < kMeasureNames.size(); ++i) {
                CHECK(rel_diff(scaled.normalized[i], base.normalized[i]) <= 1e-6);
            }
        }
        const Network random_scaled = net.scaled(3.0);
        CHECK(rel_diff(l2_norm_product(random_scaled), std::pow(3.0, 4) * l2_norm_product(net)) <= 1e-12);
    }

    SUBCASE("node rescaling preserves path norms") {
        for (int trial = 0; trial < 20; ++trial) {
            const Network base = random_net({4, 5, 5, 3}, s);
            const Network r = base.node_rescaled(1 + s.index(2), s.index(5), 0.1 + 10.0 * s.uniform());
            CHECK(rel_diff(l1_path_norm(r), l1_path_norm(base)) <= 1e-9);
            CHECK(rel_diff(l2_path_norm_sq(r), l2_path_norm_sq(base)) <= 1e-9);
        }
    }

    SUBCASE("margin is non-decreasing in epsilon") {
        double prev = -INFINITY;
        for (double eps : {0.01, 0.05, 0.1, 0.3, 0.6, 0.9}) {
            const double g = margin_percentile(net, data, MarginSpec{eps});
            CHECK(g >= prev);
            prev = g;
        }
    }
}

TEST_CASE("report serialization") {
    const MeasureReport r = capacity_report(ramp_net(), ramp(20), MarginSpec{});
    const std::string header = MeasureReport::csv_header();
    const std::string row = r.csv_row();
    CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
    CHECK(header.rfind("m,epsilon,margin", 0) == 0);
    const auto j = r.to_json();
    CHECK(j["margin"] == 1.0);
    CHECK(j["normalized"]["l2_product"] == 1.0);
}

TEST_CASE("format_double round-trips") {
    rng::Stream s(68);
    for (int i = 0; i < 1000; ++i) {
        const double v = s.normal() * std::pow(10.0, static_cast<double>(s.index(40)) - 20.0);
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(NAN) == "nan");
    CHECK(format_double(-INFINITY) == "-inf");
}
