#include "gcap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "gcap/errors.hpp"
#include "gcap/rng.hpp"

namespace gcap {

namespace {

constexpr std::uint32_t kImagesMagic = 2051;
constexpr std::uint32_t kLabelsMagic = 2049;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& file) {
    if (bytes.size() < offset + 4) {
        throw FormatError(file + ": truncated header", offset);
    }
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

}  // namespace

std::size_t ceil_fraction_count(double fraction, std::size_t m) {
    const double x = fraction * static_cast<double>(m);
    const double nearest = std::round(x);
    if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, x)) {
        return static_cast<std::size_t>(nearest);
    }
    return static_cast<std::size_t>(std::ceil(x));
}

std::size_t LabeledDataset::randomized_count() const noexcept {
    return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), Provenance::randomized));
}

void LabeledDataset::validate() const {
    if (static_cast<std::size_t>(inputs.cols()) != labels.size() || provenance.size() != labels.size()) {
        throw ArgumentError("dataset field lengths disagree: " + std::to_string(inputs.cols()) + " inputs, " +
                            std::to_string(labels.size()) + " labels, " + std::to_string(provenance.size()) +
                            " provenance flags");
    }
    for (std::size_t j = 0; j < labels.size(); ++j) {
        if (labels[j] >= num_classes) {
            throw ArgumentError("label " + std::to_string(labels[j]) + " of sample " + std::to_string(j) +
                                " is not below num_classes " + std::to_string(num_classes));
        }
    }
}

LabeledDataset LabeledDataset::select(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.num_classes = num_classes;
    out.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(indices.size()));
    out.labels.reserve(indices.size());
    out.provenance.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t j = indices[k];
        if (j >= size()) {
            throw ArgumentError("select: index " + std::to_string(j) + " out of range");
        }
        out.inputs.col(static_cast<Eigen::Index>(k)) = inputs.col(static_cast<Eigen::Index>(j));
        out.labels.push_back(labels[j]);
        out.provenance.push_back(provenance[j]);
    }
    return out;
}

LabeledDataset LabeledDataset::true_label_part() const {
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < size(); ++j) {
        if (provenance[j] == Provenance::true_label) {
            keep.push_back(j);
        }
    }
    return select(keep);
}

nlohmann::json LabeledDataset::summary() const {
    std::vector<std::size_t> histogram(num_classes, 0);
    for (std::size_t y : labels) {
        ++histogram[y];
    }
    return {
        {"size", size()},
        {"dim", dim()},
        {"num_classes", num_classes},
        {"randomized", randomized_count()},
        {"label_histogram", histogram},
    };
}

LabeledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                              std::size_t num_classes) {
    const std::string image_name = images.filename().string();
    const std::string label_name = labels.filename().string();
    const auto ib = read_file(images);
    const auto lb = read_file(labels);

    const std::uint32_t imagic = read_be32(ib, 0, image_name);
    if (imagic != kImagesMagic) {
        throw FormatError(image_name + ": bad images magic " + std::to_string(imagic) + " (expected 2051)", 0);
    }
    const std::uint32_t count = read_be32(ib, 4, image_name);
    const std::uint32_t rows = read_be32(ib, 8, image_name);
    const std::uint32_t cols = read_be32(ib, 12, image_name);
    const std::size_t dim = static_cast<std::size_t>(rows) * cols;
    const std::size_t expected = 16 + static_cast<std::size_t>(count) * dim;
    if (ib.size() < expected) {
        throw FormatError(image_name + ": truncated pixel data, expected " + std::to_string(expected) + " bytes",
                          ib.size());
    }

    const std::uint32_t lmagic = read_be32(lb, 0, label_name);
    if (lmagic != kLabelsMagic) {
        throw FormatError(label_name + ": bad labels magic " + std::to_string(lmagic) + " (expected 2049)", 0);
    }
    const std::uint32_t lcount = read_be32(lb, 4, label_name);
    if (lcount != count) {
        throw FormatError(label_name + ": label count " + std::to_string(lcount) + " != image count " +
                              std::to_string(count),
                          4);
    }
    if (lb.size() < 8 + static_cast<std::size_t>(lcount)) {
        throw FormatError(label_name + ": truncated label data", lb.size());
    }

    LabeledDataset out;
    out.num_classes = num_classes;
    out.inputs.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
    out.labels.resize(count);
    out.provenance.assign(count, Provenance::true_label);
    for (std::size_t j = 0; j < count; ++j) {
        const std::size_t base = 16 + j * dim;
        for (std::size_t p = 0; p < dim; ++p) {
            out.inputs(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) = ib[base + p] / 255.0;
        }
        const std::uint8_t y = lb[8 + j];
        if (y >= num_classes) {
            throw FormatError(label_name + ": label " + std::to_string(y) + " outside " +
                                  std::to_string(num_classes) + " classes",
                              8 + j);
        }
        out.labels[j] = y;
    }
    return out;
}

void write_idx(const LabeledDataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
    data.validate();
    const auto side = static_cast<std::uint32_t>(std::lround(std::sqrt(static_cast<double>(data.dim()))));
    if (static_cast<std::size_t>(side) * side != data.dim()) {
        throw ArgumentError("write_idx: input dimension " + std::to_string(data.dim()) + " is not a square");
    }
    std::ofstream io(images, std::ios::binary | std::ios::trunc);
    std::ofstream lo(labels, std::ios::binary | std::ios::trunc);
    if (!io || !lo) {
        throw std::runtime_error("write_idx: cannot open output files");
    }
    put_be32(io, kImagesMagic);
    put_be32(io, static_cast<std::uint32_t>(data.size()));
    put_be32(io, side);
    put_be32(io, side);
    for (std::size_t j = 0; j < data.size(); ++j) {
        for (std::size_t p = 0; p < data.dim(); ++p) {
            const double v = data.inputs(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j));
            const long byte = std::clamp(std::lround(v * 255.0), 0L, 255L);
            io.put(static_cast<char>(byte));
        }
    }
    put_be32(lo, kLabelsMagic);
    put_be32(lo, static_cast<std::uint32_t>(data.size()));
    for (std::size_t y : data.labels) {
        if (y > 255) {
            throw ArgumentError("write_idx: label does not fit in a byte");
        }
        lo.put(static_cast<char>(y));
    }
}

LabeledDataset subsample(const LabeledDataset& data, std::size_t n, std::uint64_t seed) {
    if (n > data.size()) {
        throw ArgumentError("subsample: requested " + std::to_string(n) + " of " + std::to_string(data.size()) +
                            " samples");
    }
    rng::Stream stream(seed, rng::Purpose::subsample);
    auto perm = rng::permutation(data.size(), stream);
    perm.resize(n);
    return data.select(perm);
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, std::size_t n, std::uint64_t seed) {
    if (n > data.size()) {
        throw ArgumentError("split: first part of " + std::to_string(n) + " exceeds " + std::to_string(data.size()) +
                            " samples");
    }
    rng::Stream stream(seed, rng::Purpose::split);
    const auto perm = rng::permutation(data.size(), stream);
    const std::span<const std::size_t> all(perm);
    return {data.select(all.first(n)), data.select(all.subspan(n))};
}

LabeledDataset randomize_labels(const LabeledDataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ArgumentError("randomize_labels: fraction must lie in [0, 1]");
    }
    if (data.num_classes == 0) {
        throw ArgumentError("randomize_labels: dataset has no classes");
    }
    LabeledDataset out = data;
    const std::size_t k = ceil_fraction_count(fraction, data.size());
    rng::Stream stream(seed, rng::Purpose::labels);
    const auto perm = rng::permutation(data.size(), stream);
    for (std::size_t t = 0; t < k; ++t) {
        const std::size_t j = perm[t];
        out.labels[j] = stream.index(data.num_classes);
        out.provenance[j] = Provenance::randomized;
    }
    return out;
}

LabeledDataset make_confusion_union(const LabeledDataset& train, const LabeledDataset& pool,
                                    std::size_t confusion_size, std::uint64_t seed) {
    if (confusion_size > pool.size()) {
        throw ArgumentError("make_confusion_union: confusion size " + std::to_string(confusion_size) +
                            " exceeds pool of " + std::to_string(pool.size()));
    }
    if (confusion_size > 0 && pool.dim() != train.dim()) {
        throw ShapeError("make_confusion_union: pool and training inputs differ in dimension");
    }
    LabeledDataset confusion = subsample(pool, confusion_size, rng::derive_seed(seed, rng::Purpose::confusion));
    rng::Stream stream(seed, rng::Purpose::confusion, 1);
    for (std::size_t j = 0; j < confusion.size(); ++j) {
        confusion.labels[j] = stream.index(train.num_classes);
        confusion.provenance[j] = Provenance::randomized;
    }

    LabeledDataset out;
    out.num_classes = train.num_classes;
    out.inputs.resize(static_cast<Eigen::Index>(train.dim()),
                      static_cast<Eigen::Index>(train.size() + confusion.size()));
    if (train.size() > 0) {
        out.inputs.leftCols(static_cast<Eigen::Index>(train.size())) = train.inputs;
    }
    if (confusion.size() > 0) {
        out.inputs.rightCols(static_cast<Eigen::Index>(confusion.size())) = confusion.inputs;
    }
    out.labels = train.labels;
    out.labels.insert(out.labels.end(), confusion.labels.begin(), confusion.labels.end());
    out.provenance.assign(train.size(), Provenance::true_label);
    out.provenance.insert(out.provenance.end(), confusion.provenance.begin(), confusion.provenance.end());
    return out;
}

BlobDistribution::BlobDistribution(std::size_t num_classes, std::size_t dim, double spread, std::uint64_t seed)
    : centers_(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(num_classes)), spread_(spread) {
    if (num_classes == 0 || dim == 0) {
        throw ArgumentError("BlobDistribution: classes and dimension must be positive");
    }
    if (!(spread >= 0.0)) {
        throw ArgumentError("BlobDistribution: spread must be non-negative");
    }
    rng::Stream stream(seed, rng::Purpose::blobs_centers);
    for (Eigen::Index c = 0; c < centers_.cols(); ++c) {
        double norm = 0.0;
        while (norm == 0.0) {
            for (Eigen::Index r = 0; r < centers_.rows(); ++r) {
                centers_(r, c) = stream.normal();
            }
            norm = centers_.col(c).norm();
        }
        centers_.col(c) /= norm;
    }
}

LabeledDataset BlobDistribution::sample(std::size_t per_class, std::uint64_t seed) const {
    rng::Stream stream(seed, rng::Purpose::blobs_samples);
    LabeledDataset out;
    out.num_classes = num_classes();
    const std::size_t m = per_class * num_classes();
    out.inputs.resize(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(m));
    out.labels.reserve(m);
    out.provenance.assign(m, Provenance::true_label);
    std::size_t j = 0;
    for (std::size_t c = 0; c < num_classes(); ++c) {
        for (std::size_t k = 0; k < per_class; ++k, ++j) {
            Vector x = centers_.col(static_cast<Eigen::Index>(c));
            for (Eigen::Index r = 0; r < x.size(); ++r) {
                x(r) += spread_ * stream.normal();
            }
            const double norm = x.norm();
            if (norm > 1.0) {
                x /= norm;
            }
            out.inputs.col(static_cast<Eigen::Index>(j)) = x;
            out.labels.push_back(c);
        }
    }
    return out;
}

LabeledDataset synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                               std::uint64_t seed) {
    if (per_class == 0) {
        throw ArgumentError("synthetic_blobs: per-class count must be positive");
    }
    return BlobDistribution(num_classes, dim, spread, seed).sample(per_class, rng::derive_seed(seed, rng::Purpose::blobs_samples));
}

}  // namespace gcap
