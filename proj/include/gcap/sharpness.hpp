#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gcap/dataset.hpp"
#include "gcap/loss.hpp"
#include "gcap/network.hpp"

namespace gcap {

/// Per-parameter Gaussian standard deviations: a single sigma for every
/// weight, or sigma_i = alpha * (a * |w_i| + b).
struct PerturbationSpec {
    enum class Rule { spherical, magnitude_scaled };

    Rule rule = Rule::magnitude_scaled;
    double sigma = 0.0;
    double alpha = 0.0;
    double a = 10.0;
    double b = 1.0;

    static PerturbationSpec spherical(double sigma);
    static PerturbationSpec magnitude_scaled(double alpha, double a = 10.0, double b = 1.0);

    double sigma_for(double w) const;
    LayerTensors resolve(const Network& net) const;
};

/// Projected stochastic gradient ascent on the weight perturbation.
struct AscentConfig {
    double alpha = 5e-4;
    std::size_t steps = 2000;
    double step_size = 0.01;
    double momentum = 0.9;
    std::size_t minibatch = 64;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::cross_entropy;
    /// The ascent starts from a uniform point in this fraction of the box, so
    /// that an exactly stationary minimum does not pin it at zero.
    double start_jitter = 1e-3;

    void validate() const;
};

struct MaxSharpness {
    /// max(0, L(w + nu) - L(w)) on the full dataset.
    double value = 0.0;
    double base_loss = 0.0;
    double perturbed_loss = 0.0;
    LayerTensors perturbation;
};

/// Box radius alpha * (|w_i| + 1) for every weight.
LayerTensors sharpness_box(const Network& net, double alpha);

MaxSharpness max_sharpness(const Network& net, const LabeledDataset& data, const AscentConfig& cfg);

struct ExpectedSharpness {
    double mean = 0.0;
    double std_error = 0.0;
    /// Mean minibatch loss of the perturbed and unperturbed networks.
    double perturbed_loss = 0.0;
    double base_loss = 0.0;
    /// Mean minibatch zero-one error of the perturbed network.
    double perturbed_error = 0.0;
    std::size_t replicates = 0;
};

/// Monte-Carlo estimate of E_nu[L(w + nu)] - L(w). Replicate r draws nu and a
/// fresh minibatch from streams keyed by (seed, r) and scores both networks
/// on that same minibatch.
ExpectedSharpness expected_sharpness(const Network& net, const LabeledDataset& data, const PerturbationSpec& spec,
                                     std::size_t replicates, std::uint64_t seed,
                                     LossKind loss = LossKind::cross_entropy, std::size_t minibatch = 64);

struct KlTerms {
    /// sum_i w_i^2 / (2 sigma_i^2): the Gaussian KL to a zero-mean prior.
    double kl_half = 0.0;
    /// The same sum without the 1/2; for the magnitude rule this is
    /// (1/alpha^2) sum_i (w_i / (a|w_i| + b))^2.
    double kl_appendix = 0.0;
};

KlTerms kl_term(const Network& net, const PerturbationSpec& spec);

struct PacBayesPoint {
    double alpha = 0.0;
    double expected_sharpness = 0.0;
    double expected_sharpness_se = 0.0;
    double kl_half = 0.0;
    double kl_appendix = 0.0;
    double perturbed_loss = 0.0;
    double train_loss = 0.0;
    /// 2 (KL + ln(2m/delta)) / (m - 1)
    double k_term = 0.0;
    /// perturbed + sqrt(perturbed * K) + K
    double bound_eq4 = 0.0;
    /// perturbed + 4 sqrt((KL + ln(2m/delta)) / m)
    double bound_eq5 = 0.0;
    std::size_t m = 0;
    double delta = 0.1;
};

PacBayesPoint pac_bayes_bounds(double perturbed_loss, double train_loss, double kl, std::size_t m, double delta);

struct SweepOptions {
    double a = 10.0;
    double b = 1.0;
    std::size_t replicates = 1000;
    std::size_t minibatch = 64;
    std::uint64_t seed = 0;
    double delta = 0.1;
    LossKind loss = LossKind::cross_entropy;
};

/// One point per alpha (sorted ascending) with sigma_i = alpha (a|w_i| + b).
/// Expected sharpness uses `opts.loss`; the bounds use the zero-one error
/// of the perturbed network and the kl_half convention.
std::vector<PacBayesPoint> bicriteria_sweep(const Network& net, const LabeledDataset& data,
                                            std::span<const double> alphas, const SweepOptions& opts);

/// Logarithmic grid of `count` values from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, std::size_t count);

std::string sweep_csv_header();
std::string sweep_csv_row(const PacBayesPoint& p);

}  // namespace gcap
