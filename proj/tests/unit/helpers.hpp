#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gcap/dataset.hpp"
#include "gcap/network.hpp"
#include "gcap/rng.hpp"

namespace testing {

using gcap::Matrix;
using gcap::Network;
using gcap::Vector;

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, gcap::rng::Stream& s, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = scale * s.normal();
        }
    }
    return m;
}

inline Vector random_vector(Eigen::Index n, gcap::rng::Stream& s, double scale = 1.0) {
    return random_matrix(n, 1, s, scale).col(0);
}

inline Network random_net(const std::vector<std::size_t>& dims, gcap::rng::Stream& s, double scale = 1.0) {
    std::vector<Matrix> layers;
    for (std::size_t i = 1; i < dims.size(); ++i) {
        layers.push_back(random_matrix(static_cast<Eigen::Index>(dims[i]), static_cast<Eigen::Index>(dims[i - 1]), s, scale));
    }
    return Network(layers);
}

/// Random widths: depth in [1, max_depth], every width in [1, max_width].
inline std::vector<std::size_t> random_dims(gcap::rng::Stream& s, std::size_t max_depth, std::size_t max_width,
                                            std::size_t min_width = 1) {
    const std::size_t d = 1 + s.index(max_depth);
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i <= d; ++i) {
        dims.push_back(min_width + s.index(max_width - min_width + 1));
    }
    return dims;
}

inline gcap::LabeledDataset random_dataset(std::size_t m, std::size_t dim, std::size_t classes,
                                           gcap::rng::Stream& s) {
    gcap::LabeledDataset d;
    d.inputs = random_matrix(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(m), s);
    d.num_classes = classes;
    for (std::size_t j = 0; j < m; ++j) {
        d.labels.push_back(s.index(classes));
        d.provenance.push_back(gcap::Provenance::true_label);
    }
    return d;
}

inline double rel_diff(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("gcap_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
