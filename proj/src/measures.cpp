#include "gcap/measures.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "gcap/errors.hpp"
#include "gcap/rng.hpp"

namespace gcap {

namespace {

constexpr Eigen::Index kChunk = 1024;

std::size_t measure_index(std::string_view name) {
    for (std::size_t i = 0; i < kMeasureNames.size(); ++i) {
        if (kMeasureNames[i] == name) {
            return i;
        }
    }
    throw ArgumentError("unknown measure '" + std::string(name) + "'");
}

double path_chain(const Network& net, bool squared) {
    Vector v = Vector::Ones(static_cast<Eigen::Index>(net.input_dim()));
    for (const Matrix& w : net.layers()) {
        v = squared ? Vector(w.array().square().matrix() * v) : Vector(w.cwiseAbs() * v);
    }
    return v.sum();
}

}  // namespace

void MarginSpec::validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw ArgumentError("margin epsilon must lie in (0, 1)");
    }
}

double margin_single(const Vector& logits, std::size_t label) {
    if (logits.size() < 2) {
        throw ArgumentError("margin needs at least two classes");
    }
    if (label >= static_cast<std::size_t>(logits.size())) {
        throw ArgumentError("margin: label out of range");
    }
    const auto y = static_cast<Eigen::Index>(label);
    double best_other = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
        if (k != y) {
            best_other = std::max(best_other, logits(k));
        }
    }
    return logits(y) - best_other;
}

std::vector<double> margins(const Network& net, const LabeledDataset& data) {
    std::vector<double> out;
    out.reserve(data.size());
    const auto m = static_cast<Eigen::Index>(data.size());
    for (Eigen::Index start = 0; start < m; start += kChunk) {
        const Eigen::Index len = std::min(kChunk, m - start);
        const Matrix logits = forward_batch(net, data.inputs.middleCols(start, len));
        for (Eigen::Index j = 0; j < len; ++j) {
            out.push_back(margin_single(logits.col(j), data.labels[static_cast<std::size_t>(start + j)]));
        }
    }
    return out;
}

double margin_percentile(const Network& net, const LabeledDataset& data, const MarginSpec& spec) {
    spec.validate();
    if (data.empty()) {
        throw ArgumentError("margin_percentile: empty dataset");
    }
    std::vector<double> all = margins(net, data);
    const std::size_t k = std::clamp<std::size_t>(ceil_fraction_count(spec.epsilon, all.size()), 1, all.size());
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k - 1), all.end());
    return all[k - 1];
}

double l2_norm_product(const Network& net) {
    double p = 1.0;
    for (const Matrix& w : net.layers()) {
        p *= w.squaredNorm();
    }
    return p;
}

double l1_path_norm(const Network& net) { return path_chain(net, false); }

double l2_path_norm_sq(const Network& net) { return path_chain(net, true); }

SpectralNorm spectral_norm(const Matrix& a, std::size_t max_iters, double tol, std::uint64_t seed) {
    if (a.size() == 0) {
        throw ArgumentError("spectral_norm: empty matrix");
    }
    SpectralNorm out;
    if (a.cwiseAbs().maxCoeff() == 0.0) {
        out.converged = true;
        return out;
    }
    rng::Stream stream(seed, rng::Purpose::power_iteration);
    Vector v(a.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = stream.normal();
    }
    v.normalize();

    double previous = 0.0;
    for (std::size_t it = 1; it <= max_iters; ++it) {
        const Vector u = a * v;
        const double estimate = u.norm();
        Vector next = a.transpose() * u;
        const double n = next.norm();
        out.iterations = it;
        out.value = std::max(out.value, estimate);
        if (n == 0.0) {
            // Start vector fell in the null space; nothing more to learn.
            break;
        }
        v = next / n;
        if (it > 1 && std::abs(estimate - previous) <= tol * estimate) {
            out.converged = true;
            out.value = estimate;
            break;
        }
        previous = estimate;
    }
    // ||A v|| for the final iterate is the tightest lower bound seen.
    out.value = std::max(out.value, (a * v).norm());
    return out;
}

double spectral_product(const Network& net) {
    double p = 1.0;
    for (const Matrix& w : net.layers()) {
        const double s = spectral_norm(w).value;
        p *= s * s;
    }
    return p;
}

double l1inf_norm(const Matrix& w) { return w.cwiseAbs().rowwise().sum().maxCoeff(); }

double l2inf_norm(const Matrix& w) { return w.rowwise().norm().maxCoeff(); }

double l1inf_product(const Network& net) {
    double p = 1.0;
    for (const Matrix& w : net.layers()) {
        const double n = l1inf_norm(w);
        p *= n * n;
    }
    return p;
}

double MeasureReport::raw_value(std::string_view name) const { return raw[measure_index(name)]; }

double MeasureReport::normalized_value(std::string_view name) const { return normalized[measure_index(name)]; }

std::string MeasureReport::csv_header() {
    std::string h = "m,epsilon,margin,normalization_defined";
    for (auto name : kMeasureNames) {
        h += ",raw_";
        h += name;
    }
    for (auto name : kMeasureNames) {
        h += ",norm_";
        h += name;
    }
    return h;
}

std::string MeasureReport::csv_row() const {
    std::string r = std::to_string(m) + "," + format_double(epsilon) + "," + format_double(margin) + "," +
                    (normalization_defined ? "1" : "0");
    for (double v : raw) {
        r += "," + format_double(v);
    }
    for (double v : normalized) {
        r += "," + format_double(v);
    }
    return r;
}

nlohmann::json MeasureReport::to_json() const {
    nlohmann::json raw_j = nlohmann::json::object();
    nlohmann::json norm_j = nlohmann::json::object();
    for (std::size_t i = 0; i < kMeasureNames.size(); ++i) {
        const std::string key(kMeasureNames[i]);
        raw_j[key] = raw[i];
        norm_j[key] = normalization_defined ? nlohmann::json(normalized[i]) : nlohmann::json(nullptr);
    }
    return {
        {"margin", margin},
        {"epsilon", epsilon},
        {"m", m},
        {"normalization_defined", normalization_defined},
        {"raw", raw_j},
        {"normalized", norm_j},
        {"seed", seed},
        {"config_digest", config_digest},
    };
}

MeasureReport capacity_report(const Network& net, const LabeledDataset& data, const MarginSpec& spec) {
    MeasureReport r;
    r.epsilon = spec.epsilon;
    r.m = data.size();
    r.margin = margin_percentile(net, data, spec);
    r.raw = {l2_norm_product(net), l1_path_norm(net), l2_path_norm_sq(net), spectral_product(net),
             l1inf_product(net)};
    r.normalization_defined = r.margin > 0.0;
    const double m2 = r.margin * r.margin;
    for (std::size_t i = 0; i < r.raw.size(); ++i) {
        const double numerator = kMeasureNames[i] == "l1_path" ? r.raw[i] * r.raw[i] : r.raw[i];
        r.normalized[i] = r.normalization_defined ? numerator / m2 : std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace gcap
