#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcap/dataset.hpp"
#include "gcap/network.hpp"

namespace gcap {

// Layer-interaction (mu), activation-flip density (C2) and unit-spikiness
// (C3) estimators, the resulting expected-sharpness generalization bound, and
// Monte-Carlo checks of the supporting inequalities.

/// Largest mu such that for every 0 <= a < c < b <= d
///   ||P(a,b)||_F >= mu / sqrt(h_c) * ||P(c+1,b)||_F * ||P(a,c)||_F
/// where P(a,b) = partial_product(net, trace, a, b).
struct MuEstimate {
    double mu = 0.0;
    bool defined = false;
    std::size_t triples = 0;
    /// Triples skipped because a factor on the right vanished.
    std::size_t excluded = 0;
    std::array<std::size_t, 3> argmin{};
};

MuEstimate estimate_mu(const Network& net, const Vector& x);

struct C2Curve {
    std::vector<double> deltas;
    /// ratios[k][j]: fraction of units in hidden layer k + 1 whose
    /// |pre-activation| <= deltas[j].
    std::vector<std::vector<double>> ratios;
    /// max over layers and grid of ratio / delta.
    double c2 = 0.0;
};

C2Curve c2_curve(const Network& net, const Vector& x, const std::vector<double>& deltas);
C2Curve c2_curve(const ActivationTrace& trace, const std::vector<double>& deltas);

/// 25 logarithmically spaced thresholds from 1e-4 to 1.
std::vector<double> default_delta_grid();

struct C3Estimate {
    /// max over layers of sqrt(h_i) ||W_i||_{2,inf} / ||D_i W_i||_F (D_d = I).
    double c3 = 0.0;
    /// False when any layer has D_i W_i = 0; c3 is NaN then.
    bool defined = false;
    /// Per layer 1..d; empty when D_i W_i vanishes.
    std::vector<std::optional<double>> per_layer;
};

C3Estimate estimate_c3(const Network& net, const ActivationTrace& trace);

struct TheoremInputs {
    /// Per-layer perturbation standard deviations sigma_1..sigma_d.
    std::vector<double> sigmas;
    double delta = 0.1;
    std::size_t m = 0;
    double lipschitz = 1.0;
    /// Widths h_0..h_d.
    std::vector<std::size_t> dims;
    /// ||W_i||_F for i = 1..d.
    std::vector<double> frobenius;
    double mu = 0.0;
    double c2 = 0.0;
    double c3 = 0.0;
    /// (1/m) sum_x ||f_w(x)|| over unit-norm inputs.
    double mean_output_norm = 0.0;

    void validate() const;
};

/// The bound is stated up to a suppressed multiplicative constant, taken as 1.
struct TheoremBound {
    std::vector<double> gammas;
    double c_delta = 0.0;
    double sharpness_term = 0.0;
    /// +inf when some sigma_i is zero.
    double kl_term = 0.0;
    bool kl_finite = true;
    double total = 0.0;
};

TheoremBound theorem1_bound(const TheoremInputs& in);

struct McCheck {
    double mc_mean = 0.0;
    double std_error = 0.0;
    double bound = 0.0;
    bool pass = false;
};

/// E ||A nu B||_F with nu entrywise N(0, sigma^2) against sigma ||A||_F ||B||_F.
/// Passes when the estimate is within four standard errors below the bound.
McCheck gauss_product_check(const Matrix& a, const Matrix& b, double sigma, std::size_t replicates,
                            std::uint64_t seed);

/// Perturbs every layer with the activation masks of the clean input held
/// fixed and compares E ||f_{w+nu}^{masked}(x) - f_w(x)|| with
/// (prod_i (1 + sigma_i sqrt(h_i h_{i-1}) / (mu^2 ||D_i W_i||_F)) - 1) ||f_w(x)||.
McCheck lemma_linear_check(const Network& net, const Vector& x, const std::vector<double>& sigmas, double mu,
                           std::size_t replicates, std::uint64_t seed);

/// Mean number of hidden units whose activation flips under a full
/// perturbation, next to C2 h_k C_delta sigma_k ||f^{k-1}(x)||. Informational.
struct FlipReport {
    std::vector<double> mean_flips;
    std::vector<double> reference;
};

FlipReport activation_flip_report(const Network& net, const Vector& x, const std::vector<double>& sigmas, double c2,
                                  double delta, std::size_t replicates, std::uint64_t seed);

struct Distribution {
    std::size_t count = 0;
    double min = 0.0;
    double p5 = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
    double max = 0.0;

    static Distribution of(std::vector<double> values);
    nlohmann::json to_json() const;
};

struct ConditionStats {
    std::size_t inputs = 0;
    /// Inputs with mu, C2 and C3 all defined and finite.
    std::size_t finite_inputs = 0;
    std::size_t mu_undefined_inputs = 0;
    std::size_t excluded_triples = 0;
    std::size_t c3_undefined_inputs = 0;

    /// Minimum of the per-input mu values.
    double mu = 0.0;
    Distribution mu_dist;
    /// From the input-averaged curves.
    double c2 = 0.0;
    Distribution c2_dist;
    /// Maximum over layers and inputs.
    double c3 = 0.0;
    Distribution c3_dist;

    std::vector<double> deltas;
    /// Input-averaged ratio curve per hidden layer.
    std::vector<std::vector<double>> c2_curve;
    /// Input-averaged per-layer C3 values.
    std::vector<double> c3_per_layer;

    double finite_fraction() const;
    nlohmann::json to_json() const;
    /// Columns: layer,delta,ratio
    std::string c2_csv() const;
};

/// Evaluates every estimator on each input column after rescaling it to
/// unit Euclidean norm.
ConditionStats condition_histograms(const Network& net, const Matrix& inputs, const std::vector<double>& deltas);

/// Reference values observed on a trained 10-layer, 1000-unit MNIST network;
/// reported next to our own estimates for comparison only.
inline constexpr double kReferenceMuLower = 0.25;
inline constexpr double kReferenceC2Upper = 5.0;
inline constexpr double kReferenceC3Upper = 3.0;

/// Gathers theorem inputs for `net`: mu/C2/C3 from `stats`, norms and mean
/// output norm over the (unit-normalized) inputs.
TheoremInputs theorem_inputs(const Network& net, const Matrix& inputs, const ConditionStats& stats,
                             std::vector<double> sigmas, double delta, std::size_t m, double lipschitz = 1.0);

}  // namespace gcap
