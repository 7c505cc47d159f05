#include "gcap/conditions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gcap/errors.hpp"
#include "gcap/measures.hpp"
#include "gcap/rng.hpp"

namespace gcap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

// D_i W_i applied to m, with D_d = I.
Matrix masked_step(const Network& net, const ActivationTrace& trace, std::size_t i, const Matrix& m) {
    Matrix out = net.layer(i - 1) * m;
    if (i < net.depth()) {
        out.array().colwise() *= trace.masks[i - 1].array();
    }
    return out;
}

// D_i W_i itself.
Matrix masked_layer(const Network& net, const ActivationTrace& trace, std::size_t i) {
    Matrix out = net.layer(i - 1);
    if (i < net.depth()) {
        out.array().colwise() *= trace.masks[i - 1].array();
    }
    return out;
}

MuEstimate mu_from_trace(const Network& net, const ActivationTrace& trace) {
    const std::size_t d = net.depth();
    MuEstimate est;
    if (d < 2) {
        return est;
    }
    // norms[a][b] = ||P(a, b)||_F for a <= b, built one chain per start a.
    std::vector<std::vector<double>> norms(d + 1, std::vector<double>(d + 1, 0.0));
    for (std::size_t a = 0; a <= d; ++a) {
        Matrix p = a == 0 ? Matrix(trace.input) : masked_layer(net, trace, a);
        norms[a][a] = p.norm();
        for (std::size_t b = a + 1; b <= d; ++b) {
            p = masked_step(net, trace, b, p);
            norms[a][b] = p.norm();
        }
    }

    double best = kInf;
    for (std::size_t a = 0; a <= d; ++a) {
        for (std::size_t b = a + 2; b <= d; ++b) {
            for (std::size_t c = a + 1; c < b; ++c) {
                ++est.triples;
                const double den = norms[c + 1][b] * norms[a][c];
                if (den == 0.0) {
                    ++est.excluded;
                    continue;
                }
                const double v = std::sqrt(static_cast<double>(net.width(c))) * norms[a][b] / den;
                if (v < best) {
                    best = v;
                    est.argmin = {a, c, b};
                }
            }
        }
    }
    est.defined = est.triples > est.excluded;
    est.mu = est.defined ? best : kNaN;
    return est;
}

void check_deltas(const std::vector<double>& deltas) {
    if (deltas.empty()) {
        throw ArgumentError("delta grid is empty");
    }
    for (double v : deltas) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw ArgumentError("delta grid entries must be positive and finite");
        }
    }
}

double c_delta(std::size_t depth, std::size_t max_width, double delta) {
    return 2.0 * std::sqrt(std::log(static_cast<double>(depth) * static_cast<double>(max_width) / delta));
}

std::size_t max_width(const std::vector<std::size_t>& dims) {
    // h is the largest of h_1..h_d.
    return *std::max_element(dims.begin() + 1, dims.end());
}

double percentile_sorted(const std::vector<double>& v, double p) {
    const std::size_t k = std::clamp<std::size_t>(ceil_fraction_count(p, v.size()), 1, v.size());
    return v[k - 1];
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

Matrix unit_columns(const Matrix& inputs) {
    Matrix out = inputs;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const double n = out.col(j).norm();
        if (n > 0.0) {
            out.col(j) /= n;
        }
    }
    return out;
}

McCheck summarize(const std::vector<double>& samples, double bound) {
    McCheck out;
    const auto n = static_cast<double>(samples.size());
    double sum = 0.0;
    for (double s : samples) {
        sum += s;
    }
    out.mc_mean = sum / n;
    double ss = 0.0;
    for (double s : samples) {
        ss += (s - out.mc_mean) * (s - out.mc_mean);
    }
    out.std_error = samples.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    out.bound = bound;
    out.pass = out.mc_mean <= bound + 4.0 * out.std_error;
    return out;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double sigma, rng::Stream& stream) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = sigma * stream.normal();
        }
    }
    return m;
}

void check_sigmas(const Network& net, const std::vector<double>& sigmas) {
    if (sigmas.size() != net.depth()) {
        throw ArgumentError("expected one sigma per layer");
    }
    for (double s : sigmas) {
        if (!(s >= 0.0) || !std::isfinite(s)) {
            throw ArgumentError("sigmas must be finite and non-negative");
        }
    }
}

}  // namespace

MuEstimate estimate_mu(const Network& net, const Vector& x) { return mu_from_trace(net, forward(net, x).trace); }

std::vector<double> default_delta_grid() {
    std::vector<double> g(25);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = std::pow(10.0, -4.0 + 4.0 * static_cast<double>(i) / 24.0);
    }
    g.front() = 1e-4;
    g.back() = 1.0;
    return g;
}

C2Curve c2_curve(const ActivationTrace& trace, const std::vector<double>& deltas) {
    check_deltas(deltas);
    C2Curve curve;
    curve.deltas = deltas;
    for (const Vector& pre : trace.pre_activations) {
        std::vector<double> mags(static_cast<std::size_t>(pre.size()));
        for (Eigen::Index i = 0; i < pre.size(); ++i) {
            mags[static_cast<std::size_t>(i)] = std::abs(pre(i));
        }
        std::sort(mags.begin(), mags.end());
        std::vector<double> ratios;
        ratios.reserve(deltas.size());
        for (double delta : deltas) {
            const auto count = std::upper_bound(mags.begin(), mags.end(), delta) - mags.begin();
            const double ratio = static_cast<double>(count) / static_cast<double>(mags.size());
            ratios.push_back(ratio);
            curve.c2 = std::max(curve.c2, ratio / delta);
        }
        curve.ratios.push_back(std::move(ratios));
    }
    return curve;
}

C2Curve c2_curve(const Network& net, const Vector& x, const std::vector<double>& deltas) {
    return c2_curve(forward(net, x).trace, deltas);
}

C3Estimate estimate_c3(const Network& net, const ActivationTrace& trace) {
    C3Estimate est;
    est.defined = true;
    double best = -kInf;
    for (std::size_t i = 1; i <= net.depth(); ++i) {
        const Matrix& w = net.layer(i - 1);
        const Vector row_sq = w.rowwise().squaredNorm();
        const double active_sq = i < net.depth() ? row_sq.dot(trace.masks[i - 1]) : row_sq.sum();
        if (active_sq == 0.0) {
            est.per_layer.emplace_back(std::nullopt);
            est.defined = false;
            continue;
        }
        const double v = std::sqrt(static_cast<double>(w.rows())) * std::sqrt(row_sq.maxCoeff()) / std::sqrt(active_sq);
        est.per_layer.emplace_back(v);
        best = std::max(best, v);
    }
    est.c3 = est.defined ? best : kNaN;
    return est;
}

void TheoremInputs::validate() const {
    const std::size_t d = sigmas.size();
    if (d == 0) {
        throw ArgumentError("theorem inputs: no layers");
    }
    if (dims.size() != d + 1 || frobenius.size() != d) {
        throw ArgumentError("theorem inputs: dims/frobenius do not match the number of sigmas");
    }
    for (double s : sigmas) {
        if (!(s >= 0.0) || !std::isfinite(s)) {
            throw ArgumentError("theorem inputs: sigmas must be finite and non-negative");
        }
    }
    for (std::size_t h : dims) {
        if (h == 0) {
            throw ArgumentError("theorem inputs: widths must be positive");
        }
    }
    for (double f : frobenius) {
        if (!(f > 0.0) || !std::isfinite(f)) {
            throw ArgumentError("theorem inputs: layer norms must be positive");
        }
    }
    if (!(delta > 0.0 && delta < 1.0)) {
        throw ArgumentError("theorem inputs: delta must lie in (0, 1)");
    }
    if (m == 0) {
        throw ArgumentError("theorem inputs: m must be positive");
    }
    if (!(mu > 0.0) || !std::isfinite(mu)) {
        throw ArgumentError("theorem inputs: mu must be positive");
    }
    if (!(c2 >= 0.0) || !(c3 >= 0.0) || !std::isfinite(c2) || !std::isfinite(c3)) {
        throw ArgumentError("theorem inputs: C2 and C3 must be finite and non-negative");
    }
    if (!(lipschitz > 0.0) || !std::isfinite(lipschitz)) {
        throw ArgumentError("theorem inputs: lipschitz constant must be positive");
    }
    if (!(mean_output_norm >= 0.0) || !std::isfinite(mean_output_norm)) {
        throw ArgumentError("theorem inputs: mean output norm must be finite and non-negative");
    }
}

TheoremBound theorem1_bound(const TheoremInputs& in) {
    in.validate();
    const std::size_t d = in.sigmas.size();
    TheoremBound out;
    out.c_delta = c_delta(d, max_width(in.dims), in.delta);

    double plain = 1.0;
    double spiky = 1.0;
    double flips = 1.0;
    double kl_sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double h_in = static_cast<double>(in.dims[i]);
        const double h_out = static_cast<double>(in.dims[i + 1]);
        const double g = in.sigmas[i] * std::sqrt(h_out) * std::sqrt(h_in) / (in.mu * in.mu * in.frobenius[i]);
        out.gammas.push_back(g);
        plain *= 1.0 + g;
        spiky *= 1.0 + g * in.c2 * in.c3;
        flips *= 1.0 + g * out.c_delta * in.c2;
        if (in.sigmas[i] == 0.0) {
            out.kl_finite = false;
        } else {
            kl_sum += in.frobenius[i] * in.frobenius[i] / (in.sigmas[i] * in.sigmas[i]);
        }
    }
    out.sharpness_term = (plain - 1.0 + spiky * (flips - 1.0)) * in.lipschitz * in.mean_output_norm;
    const double m = static_cast<double>(in.m);
    out.kl_term = out.kl_finite ? std::sqrt((kl_sum + std::log(2.0 * m / in.delta)) / m) : kInf;
    out.total = out.sharpness_term + out.kl_term;
    return out;
}

McCheck gauss_product_check(const Matrix& a, const Matrix& b, double sigma, std::size_t replicates,
                            std::uint64_t seed) {
    if (replicates < 100) {
        throw ArgumentError("gauss_product_check needs at least 100 replicates");
    }
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
        throw ArgumentError("gauss_product_check: sigma must be finite and non-negative");
    }
    if (a.size() == 0 || b.size() == 0) {
        throw ShapeError("gauss_product_check: empty matrix");
    }
    rng::Stream stream(seed, rng::Purpose::mc_check);
    std::vector<double> samples;
    samples.reserve(replicates);
    for (std::size_t r = 0; r < replicates; ++r) {
        const Matrix nu = gaussian(a.cols(), b.rows(), sigma, stream);
        samples.push_back((a * nu * b).norm());
    }
    return summarize(samples, sigma * a.norm() * b.norm());
}

McCheck lemma_linear_check(const Network& net, const Vector& x, const std::vector<double>& sigmas, double mu,
                           std::size_t replicates, std::uint64_t seed) {
    check_sigmas(net, sigmas);
    if (!(mu > 0.0) || !std::isfinite(mu)) {
        throw ArgumentError("lemma_linear_check: mu must be positive");
    }
    if (replicates < 2) {
        throw ArgumentError("lemma_linear_check needs at least two replicates");
    }
    const ForwardResult clean = forward(net, x);
    const ActivationTrace& trace = clean.trace;
    const std::size_t d = net.depth();

    double prod = 1.0;
    for (std::size_t i = 1; i <= d; ++i) {
        const double s = sigmas[i - 1];
        if (s == 0.0) {
            continue;
        }
        const double n = masked_layer(net, trace, i).norm();
        const double h = static_cast<double>(net.width(i)) * static_cast<double>(net.width(i - 1));
        prod *= n == 0.0 ? kInf : 1.0 + s * std::sqrt(h) / (mu * mu * n);
    }
    const double rhs = (prod - 1.0) * clean.logits.norm();

    rng::Stream stream(seed, rng::Purpose::mc_check);
    std::vector<double> samples;
    samples.reserve(replicates);
    for (std::size_t r = 0; r < replicates; ++r) {
        Vector y = x;
        for (std::size_t i = 1; i <= d; ++i) {
            const Matrix& w = net.layer(i - 1);
            y = (w + gaussian(w.rows(), w.cols(), sigmas[i - 1], stream)) * y;
            if (i < d) {
                y.array() *= trace.masks[i - 1].array();
            }
        }
        samples.push_back((y - clean.logits).norm());
    }
    return summarize(samples, rhs);
}

FlipReport activation_flip_report(const Network& net, const Vector& x, const std::vector<double>& sigmas, double c2,
                                  double delta, std::size_t replicates, std::uint64_t seed) {
    check_sigmas(net, sigmas);
    if (!(delta > 0.0 && delta < 1.0)) {
        throw ArgumentError("activation_flip_report: delta must lie in (0, 1)");
    }
    if (replicates == 0) {
        throw ArgumentError("activation_flip_report needs at least one replicate");
    }
    const ActivationTrace clean = forward(net, x).trace;
    const std::size_t hidden = clean.hidden_layers();
    const double cd = c_delta(net.depth(), max_width(net.dims()), delta);

    FlipReport report;
    report.mean_flips.assign(hidden, 0.0);
    Vector a = x;
    for (std::size_t k = 1; k <= hidden; ++k) {
        report.reference.push_back(c2 * static_cast<double>(net.width(k)) * cd * sigmas[k - 1] * a.norm());
        a = (net.layer(k - 1) * a).cwiseMax(0.0);
    }

    rng::Stream stream(seed, rng::Purpose::mc_check);
    for (std::size_t r = 0; r < replicates; ++r) {
        LayerTensors nu;
        for (std::size_t i = 0; i < net.depth(); ++i) {
            nu.push_back(gaussian(net.layer(i).rows(), net.layer(i).cols(), sigmas[i], stream));
        }
        const ActivationTrace noisy = forward(net.perturbed(nu), x).trace;
        for (std::size_t k = 0; k < hidden; ++k) {
            report.mean_flips[k] += (noisy.masks[k] - clean.masks[k]).cwiseAbs().sum();
        }
    }
    for (double& f : report.mean_flips) {
        f /= static_cast<double>(replicates);
    }
    return report;
}

Distribution Distribution::of(std::vector<double> values) {
    Distribution d;
    d.count = values.size();
    if (values.empty()) {
        d.min = d.p5 = d.p50 = d.p95 = d.max = kNaN;
        return d;
    }
    std::sort(values.begin(), values.end());
    d.min = values.front();
    d.max = values.back();
    d.p5 = percentile_sorted(values, 0.05);
    d.p50 = percentile_sorted(values, 0.50);
    d.p95 = percentile_sorted(values, 0.95);
    return d;
}

nlohmann::json Distribution::to_json() const {
    return {
        {"count", count},        {"min", number_or_null(min)}, {"p5", number_or_null(p5)},
        {"p50", number_or_null(p50)}, {"p95", number_or_null(p95)}, {"max", number_or_null(max)},
    };
}

double ConditionStats::finite_fraction() const {
    return inputs == 0 ? 0.0 : static_cast<double>(finite_inputs) / static_cast<double>(inputs);
}

nlohmann::json ConditionStats::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t k = 0; k < c2_curve.size(); ++k) {
        layers.push_back({{"layer", k + 1}, {"ratios", c2_curve[k]}});
    }
    nlohmann::json c3_layers = nlohmann::json::array();
    for (double v : c3_per_layer) {
        c3_layers.push_back(number_or_null(v));
    }
    return {
        {"inputs", inputs},
        {"finite_inputs", finite_inputs},
        {"finite_fraction", finite_fraction()},
        {"mu_undefined_inputs", mu_undefined_inputs},
        {"excluded_triples", excluded_triples},
        {"c3_undefined_inputs", c3_undefined_inputs},
        {"mu", number_or_null(mu)},
        {"mu_distribution", mu_dist.to_json()},
        {"c2", number_or_null(c2)},
        {"c2_distribution", c2_dist.to_json()},
        {"c3", number_or_null(c3)},
        {"c3_distribution", c3_dist.to_json()},
        {"c3_per_layer", c3_layers},
        {"deltas", deltas},
        {"c2_curve", layers},
        {"reference",
         {{"mu_lower", kReferenceMuLower}, {"c2_upper", kReferenceC2Upper}, {"c3_upper", kReferenceC3Upper}}},
    };
}

std::string ConditionStats::c2_csv() const {
    std::ostringstream out;
    out << "layer,delta,ratio\n";
    for (std::size_t k = 0; k < c2_curve.size(); ++k) {
        for (std::size_t j = 0; j < deltas.size(); ++j) {
            out << (k + 1) << ',' << format_double(deltas[j]) << ',' << format_double(c2_curve[k][j]) << '\n';
        }
    }
    return out.str();
}

ConditionStats condition_histograms(const Network& net, const Matrix& inputs, const std::vector<double>& deltas) {
    if (inputs.cols() == 0) {
        throw ArgumentError("condition_histograms: empty input sample");
    }
    if (static_cast<std::size_t>(inputs.rows()) != net.input_dim()) {
        throw ShapeError("condition_histograms: input dimension does not match the network");
    }
    check_deltas(deltas);
    const Matrix xs = unit_columns(inputs);
    const std::size_t d = net.depth();

    ConditionStats stats;
    stats.inputs = static_cast<std::size_t>(xs.cols());
    stats.deltas = deltas;
    stats.c2_curve.assign(d - 1, std::vector<double>(deltas.size(), 0.0));
    std::vector<double> c3_sums(d, 0.0);
    std::vector<std::size_t> c3_counts(d, 0);
    std::vector<double> mus;
    std::vector<double> c2s;
    std::vector<double> c3s;

    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
        const ActivationTrace trace = forward(net, xs.col(j)).trace;

        const MuEstimate mu = mu_from_trace(net, trace);
        stats.excluded_triples += mu.excluded;
        if (mu.defined) {
            mus.push_back(mu.mu);
        } else {
            ++stats.mu_undefined_inputs;
        }

        const C2Curve curve = c2_curve(trace, deltas);
        for (std::size_t k = 0; k < curve.ratios.size(); ++k) {
            for (std::size_t t = 0; t < deltas.size(); ++t) {
                stats.c2_curve[k][t] += curve.ratios[k][t];
            }
        }
        c2s.push_back(curve.c2);

        const C3Estimate c3 = estimate_c3(net, trace);
        for (std::size_t i = 0; i < d; ++i) {
            if (c3.per_layer[i]) {
                c3_sums[i] += *c3.per_layer[i];
                ++c3_counts[i];
            }
        }
        if (c3.defined) {
            c3s.push_back(c3.c3);
        } else {
            ++stats.c3_undefined_inputs;
        }

        if (mu.defined && std::isfinite(mu.mu) && c3.defined && std::isfinite(c3.c3) && std::isfinite(curve.c2)) {
            ++stats.finite_inputs;
        }
    }

    const auto n = static_cast<double>(stats.inputs);
    for (auto& layer : stats.c2_curve) {
        for (std::size_t t = 0; t < deltas.size(); ++t) {
            layer[t] /= n;
            stats.c2 = std::max(stats.c2, layer[t] / deltas[t]);
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        stats.c3_per_layer.push_back(c3_counts[i] ? c3_sums[i] / static_cast<double>(c3_counts[i]) : kNaN);
    }
    stats.mu = mus.empty() ? kNaN : *std::min_element(mus.begin(), mus.end());
    stats.c3 = c3s.empty() ? kNaN : *std::max_element(c3s.begin(), c3s.end());
    stats.mu_dist = Distribution::of(std::move(mus));
    stats.c2_dist = Distribution::of(std::move(c2s));
    stats.c3_dist = Distribution::of(std::move(c3s));
    return stats;
}

TheoremInputs theorem_inputs(const Network& net, const Matrix& inputs, const ConditionStats& stats,
                             std::vector<double> sigmas, double delta, std::size_t m, double lipschitz) {
    TheoremInputs in;
    in.sigmas = std::move(sigmas);
    in.delta = delta;
    in.m = m;
    in.lipschitz = lipschitz;
    in.dims = net.dims();
    for (const Matrix& w : net.layers()) {
        in.frobenius.push_back(w.norm());
    }
    in.mu = stats.mu;
    in.c2 = stats.c2;
    in.c3 = stats.c3;
    if (inputs.cols() > 0) {
        in.mean_output_norm = forward_batch(net, unit_columns(inputs)).colwise().norm().mean();
    }
    return in;
}

}  // namespace gcap
