#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gcap/dataset.hpp"
#include "gcap/network.hpp"

namespace gcap {

struct MarginSpec {
    double epsilon = 0.05;

    void validate() const;
};

/// logits[label] - max_{y != label} logits[y]; negative when misclassified.
double margin_single(const Vector& logits, std::size_t label);

/// Per-sample margins in dataset order.
std::vector<double> margins(const Network& net, const LabeledDataset& data);

/// The k-th smallest margin with k = ceil(epsilon * m), 1-based.
double margin_percentile(const Network& net, const LabeledDataset& data, const MarginSpec& spec);

/// prod_i ||W_i||_F^2
double l2_norm_product(const Network& net);

/// sum over input-output paths of |prod of weights| = 1^T |W_d| ... |W_1| 1
double l1_path_norm(const Network& net);

/// sum over paths of prod of squared weights = 1^T (W_d o W_d) ... (W_1 o W_1) 1
double l2_path_norm_sq(const Network& net);

struct SpectralNorm {
    double value = 0.0;
    bool converged = false;
    std::size_t iterations = 0;
};

/// Largest singular value by power iteration on A^T A from a seeded start.
/// Stops when successive estimates agree to `tol` relative.
SpectralNorm spectral_norm(const Matrix& a, std::size_t max_iters = 1000, double tol = 1e-10,
                           std::uint64_t seed = 0x5eed);

/// prod_i ||W_i||_2^2
double spectral_product(const Network& net);

/// max over rows of the row's l1 norm (rows are a unit's incoming weights).
double l1inf_norm(const Matrix& w);

/// max over rows of the row's l2 norm.
double l2inf_norm(const Matrix& w);

/// prod_i ||W_i||_{1,inf}^2
double l1inf_product(const Network& net);

/// Names of the reported measures, in CSV column order.
inline constexpr std::array<std::string_view, 5> kMeasureNames = {
    "l2_product", "l1_path", "l2_path_sq", "spectral_product", "l1inf_product",
};

struct MeasureReport {
    double margin = 0.0;
    std::size_t m = 0;
    double epsilon = 0.05;
    /// False when the margin is not positive; normalized entries are NaN then.
    bool normalization_defined = false;
    std::array<double, 5> raw{};
    std::array<double, 5> normalized{};
    std::uint64_t seed = 0;
    std::string config_digest;

    double raw_value(std::string_view name) const;
    double normalized_value(std::string_view name) const;

    static std::string csv_header();
    std::string csv_row() const;
    nlohmann::json to_json() const;
};

/// Every raw measure plus its margin-normalized form: raw / margin^2, except
/// l1_path which is squared first.
MeasureReport capacity_report(const Network& net, const LabeledDataset& data, const MarginSpec& spec);

/// Shortest round-trip text form of a double, used by every CSV writer.
std::string format_double(double v);

}  // namespace gcap
