#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gcap/network.hpp"

namespace gcap {

enum class Provenance : std::uint8_t { true_label, randomized };

/// ceil(fraction * m), immune to the product landing a hair above an integer.
std::size_t ceil_fraction_count(double fraction, std::size_t m);

/// Inputs are stored column-wise: inputs.col(j) is sample j.
struct LabeledDataset {
    Matrix inputs;
    std::vector<std::size_t> labels;
    std::vector<Provenance> provenance;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
    bool empty() const noexcept { return labels.empty(); }

    std::size_t randomized_count() const noexcept;

    /// Throws ArgumentError when the field lengths or labels are inconsistent.
    void validate() const;

    /// Samples at the given indices, in that order.
    LabeledDataset select(std::span<const std::size_t> indices) const;

    /// Only the samples whose provenance is true_label.
    LabeledDataset true_label_part() const;

    nlohmann::json summary() const;
};

/// Standard uncompressed IDX pair (magic 2051 images, 2049 labels). Pixels are
/// scaled to [0, 1]. Gzipped files must be decompressed first.
LabeledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                              std::size_t num_classes = 10);

/// Writes inputs (rounded to bytes after scaling by 255) as a square-image IDX
/// pair. The input dimension must be a perfect square.
void write_idx(const LabeledDataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

/// n samples drawn without replacement, in random order.
LabeledDataset subsample(const LabeledDataset& data, std::size_t n, std::uint64_t seed);

/// Random disjoint split: the first part has n samples, the second the rest.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, std::size_t n, std::uint64_t seed);

/// ceil(fraction * m) seed-chosen samples get labels drawn uniformly over the
/// classes and are flagged as randomized.
LabeledDataset randomize_labels(const LabeledDataset& data, double fraction, std::uint64_t seed);

/// Training set followed by `confusion_size` samples of `pool` with uniformly
/// random labels. The caller guarantees the pool is disjoint from the
/// training set (e.g. the remainder of a split).
LabeledDataset make_confusion_union(const LabeledDataset& train, const LabeledDataset& pool,
                                    std::size_t confusion_size, std::uint64_t seed);

/// Gaussian clusters around random unit-norm centers. Every sample is
/// projected into the unit ball, so ||x|| <= 1.
class BlobDistribution {
public:
    BlobDistribution(std::size_t num_classes, std::size_t dim, double spread, std::uint64_t seed);

    LabeledDataset sample(std::size_t per_class, std::uint64_t seed) const;

    const Matrix& centers() const noexcept { return centers_; }
    std::size_t num_classes() const noexcept { return static_cast<std::size_t>(centers_.cols()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(centers_.rows()); }

private:
    Matrix centers_;
    double spread_;
};

LabeledDataset synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                               std::uint64_t seed);

}  // namespace gcap
