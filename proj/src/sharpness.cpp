#include "gcap/sharpness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gcap/errors.hpp"
#include "gcap/measures.hpp"
#include "gcap/rng.hpp"

namespace gcap {

namespace {

// Without-replacement draw of n indices from [0, m) (partial Fisher-Yates).
std::vector<std::size_t> draw_minibatch(std::size_t m, std::size_t n, rng::Stream& stream) {
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    n = std::min(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + stream.index(m - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    return idx;
}

}  // namespace

PerturbationSpec PerturbationSpec::spherical(double sigma) {
    PerturbationSpec s;
    s.rule = Rule::spherical;
    s.sigma = sigma;
    return s;
}

PerturbationSpec PerturbationSpec::magnitude_scaled(double alpha, double a, double b) {
    PerturbationSpec s;
    s.rule = Rule::magnitude_scaled;
    s.alpha = alpha;
    s.a = a;
    s.b = b;
    return s;
}

double PerturbationSpec::sigma_for(double w) const {
    return rule == Rule::spherical ? sigma : alpha * (a * std::abs(w) + b);
}

LayerTensors PerturbationSpec::resolve(const Network& net) const {
    LayerTensors out;
    out.reserve(net.depth());
    for (const Matrix& w : net.layers()) {
        out.push_back(w.unaryExpr([this](double x) { return sigma_for(x); }));
    }
    return out;
}

void AscentConfig::validate() const {
    if (!(alpha >= 0.0)) {
        throw ArgumentError("ascent: alpha must be non-negative");
    }
    if (minibatch == 0) {
        throw ArgumentError("ascent: minibatch must be at least 1");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ArgumentError("ascent: momentum must lie in [0, 1)");
    }
    if (!(start_jitter >= 0.0 && start_jitter <= 1.0)) {
        throw ArgumentError("ascent: start jitter must lie in [0, 1]");
    }
    if (loss == LossKind::zero_one) {
        throw ArgumentError("ascent: needs a differentiable loss");
    }
}

LayerTensors sharpness_box(const Network& net, double alpha) {
    LayerTensors out;
    out.reserve(net.depth());
    for (const Matrix& w : net.layers()) {
        out.push_back(alpha * (w.cwiseAbs().array() + 1.0).matrix());
    }
    return out;
}

MaxSharpness max_sharpness(const Network& net, const LabeledDataset& data, const AscentConfig& cfg) {
    cfg.validate();
    if (data.empty()) {
        throw ArgumentError("max_sharpness: empty dataset");
    }
    MaxSharpness out;
    out.base_loss = mean_loss(net, data, cfg.loss);
    out.perturbed_loss = out.base_loss;
    out.perturbation = net.zeros_like();
    if (cfg.alpha == 0.0 || cfg.steps == 0) {
        return out;
    }

    const LayerTensors box = sharpness_box(net, cfg.alpha);
    const std::size_t d = net.depth();
    LayerTensors nu(d);
    LayerTensors velocity = net.zeros_like();
    {
        rng::Stream start(cfg.seed, rng::Purpose::ascent);
        for (std::size_t i = 0; i < d; ++i) {
            nu[i].resize(box[i].rows(), box[i].cols());
            for (Eigen::Index c = 0; c < nu[i].cols(); ++c) {
                for (Eigen::Index r = 0; r < nu[i].rows(); ++r) {
                    nu[i](r, c) = cfg.start_jitter * box[i](r, c) * (2.0 * start.uniform() - 1.0);
                }
            }
        }
    }

    std::vector<Matrix> weights(d);
    Matrix batch_inputs;
    std::vector<std::size_t> batch_labels;
    std::vector<std::size_t> order;
    std::size_t pass = 0;
    std::size_t cursor = data.size();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (cursor >= data.size()) {
            rng::Stream shuffle(cfg.seed, rng::Purpose::minibatch, pass++);
            order = rng::permutation(data.size(), shuffle);
            cursor = 0;
        }
        const std::size_t len = std::min(cfg.minibatch, data.size() - cursor);
        gather_batch(data, std::span(order).subspan(cursor, len), batch_inputs, batch_labels);
        cursor += len;

        for (std::size_t i = 0; i < d; ++i) {
            weights[i] = net.layer(i) + nu[i];
        }
        const LossGradient g = gradient(std::span<const Matrix>(weights), batch_inputs, batch_labels, cfg.loss);
        for (std::size_t i = 0; i < d; ++i) {
            velocity[i] = cfg.momentum * velocity[i] + g.grads[i];
            nu[i] += cfg.step_size * velocity[i];
            nu[i] = nu[i].cwiseMin(box[i]).cwiseMax(-box[i]);
        }
    }

    out.perturbed_loss = mean_loss(net.perturbed(nu), data, cfg.loss);
    out.value = std::max(0.0, out.perturbed_loss - out.base_loss);
    out.perturbation = std::move(nu);
    return out;
}

ExpectedSharpness expected_sharpness(const Network& net, const LabeledDataset& data, const PerturbationSpec& spec,
                                     std::size_t replicates, std::uint64_t seed, LossKind loss,
                                     std::size_t minibatch) {
    if (replicates == 0) {
        throw ArgumentError("expected_sharpness: needs at least one replicate");
    }
    if (data.empty()) {
        throw ArgumentError("expected_sharpness: empty dataset");
    }
    if (minibatch == 0) {
        throw ArgumentError("expected_sharpness: minibatch must be at least 1");
    }
    const LayerTensors sigma = spec.resolve(net);
    const std::size_t d = net.depth();

    double sum = 0.0;
    double sum_sq = 0.0;
    double perturbed_sum = 0.0;
    double base_sum = 0.0;
    double error_sum = 0.0;
    Matrix batch_inputs;
    std::vector<std::size_t> batch_labels;
    std::vector<Matrix> weights(d);
    for (std::size_t r = 0; r < replicates; ++r) {
        rng::Stream batch_stream(seed, rng::Purpose::minibatch, r);
        const auto idx = draw_minibatch(data.size(), minibatch, batch_stream);
        gather_batch(data, idx, batch_inputs, batch_labels);

        rng::Stream noise(seed, rng::Purpose::perturbation, r);
        for (std::size_t i = 0; i < d; ++i) {
            const Matrix& w = net.layer(i);
            weights[i].resize(w.rows(), w.cols());
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                for (Eigen::Index row = 0; row < w.rows(); ++row) {
                    weights[i](row, c) = w(row, c) + sigma[i](row, c) * noise.normal();
                }
            }
        }
        const Matrix perturbed_logits = forward_batch(Network(weights), batch_inputs);
        const Matrix base_logits = forward_batch(net, batch_inputs);
        const double lp = mean_loss(loss, perturbed_logits, batch_labels);
        const double lb = mean_loss(loss, base_logits, batch_labels);
        const double diff = lp - lb;
        sum += diff;
        sum_sq += diff * diff;
        perturbed_sum += lp;
        base_sum += lb;
        error_sum += mean_loss(LossKind::zero_one, perturbed_logits, batch_labels);
    }

    const auto n = static_cast<double>(replicates);
    ExpectedSharpness out;
    out.replicates = replicates;
    out.mean = sum / n;
    out.perturbed_loss = perturbed_sum / n;
    out.base_loss = base_sum / n;
    out.perturbed_error = error_sum / n;
    if (replicates > 1) {
        const double var = std::max(0.0, (sum_sq - n * out.mean * out.mean) / (n - 1.0));
        out.std_error = std::sqrt(var / n);
    }
    return out;
}

KlTerms kl_term(const Network& net, const PerturbationSpec& spec) {
    KlTerms out;
    for (const Matrix& w : net.layers()) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                const double x = w(r, c);
                const double s = spec.sigma_for(x);
                if (!(s > 0.0)) {
                    throw ArgumentError("kl_term: every sigma_i must be positive");
                }
                out.kl_half += x * x / (2.0 * s * s);
                if (spec.rule == PerturbationSpec::Rule::magnitude_scaled) {
                    const double q = x / (spec.a * std::abs(x) + spec.b);
                    out.kl_appendix += q * q;
                } else {
                    out.kl_appendix += x * x / (s * s);
                }
            }
        }
    }
    if (spec.rule == PerturbationSpec::Rule::magnitude_scaled) {
        out.kl_appendix /= spec.alpha * spec.alpha;
    }
    return out;
}

PacBayesPoint pac_bayes_bounds(double perturbed_loss, double train_loss, double kl, std::size_t m, double delta) {
    if (m < 2) {
        throw ArgumentError("pac_bayes_bounds: m must be at least 2");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
        throw ArgumentError("pac_bayes_bounds: delta must lie in (0, 1)");
    }
    if (!(kl >= 0.0) || !(perturbed_loss >= 0.0) || !(train_loss >= 0.0)) {
        throw ArgumentError("pac_bayes_bounds: losses and KL must be non-negative");
    }
    PacBayesPoint p;
    p.m = m;
    p.delta = delta;
    p.kl_half = kl;
    p.perturbed_loss = perturbed_loss;
    p.train_loss = train_loss;
    p.expected_sharpness = perturbed_loss - train_loss;
    const auto md = static_cast<double>(m);
    const double log_term = std::log(2.0 * md / delta);
    p.k_term = 2.0 * (kl + log_term) / (md - 1.0);
    p.bound_eq4 = perturbed_loss + std::sqrt(perturbed_loss * p.k_term) + p.k_term;
    p.bound_eq5 = perturbed_loss + 4.0 * std::sqrt((kl + log_term) / md);
    return p;
}

std::vector<PacBayesPoint> bicriteria_sweep(const Network& net, const LabeledDataset& data,
                                            std::span<const double> alphas, const SweepOptions& opts) {
    if (alphas.empty()) {
        throw ArgumentError("bicriteria_sweep: empty alpha list");
    }
    std::vector<double> sorted(alphas.begin(), alphas.end());
    for (double a : sorted) {
        if (!(a > 0.0)) {
            throw ArgumentError("bicriteria_sweep: alphas must be positive");
        }
    }
    std::sort(sorted.begin(), sorted.end());
    const double train_error = error_rate(net, data);

    std::vector<PacBayesPoint> points;
    points.reserve(sorted.size());
    for (double alpha : sorted) {
        const auto spec = PerturbationSpec::magnitude_scaled(alpha, opts.a, opts.b);
        const ExpectedSharpness es =
            expected_sharpness(net, data, spec, opts.replicates, opts.seed, opts.loss, opts.minibatch);
        const KlTerms kl = kl_term(net, spec);
        PacBayesPoint p = pac_bayes_bounds(es.perturbed_error, train_error, kl.kl_half, data.size(), opts.delta);
        p.alpha = alpha;
        p.expected_sharpness = es.mean;
        p.expected_sharpness_se = es.std_error;
        p.kl_appendix = kl.kl_appendix;
        points.push_back(p);
    }
    return points;
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
    if (!(lo > 0.0 && hi >= lo) || count == 0) {
        throw ArgumentError("log_grid: need 0 < lo <= hi and a positive count");
    }
    std::vector<double> g;
    g.reserve(count);
    if (count == 1) {
        g.push_back(lo);
        return g;
    }
    const double step = (std::log(hi) - std::log(lo)) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) {
        g.push_back(std::exp(std::log(lo) + step * static_cast<double>(i)));
    }
    g.front() = lo;
    g.back() = hi;
    return g;
}

std::string sweep_csv_header() {
    return "alpha,exp_sharpness,exp_sharpness_se,kl_half,kl_appendix,bound_eq4,bound_eq5,m,delta";
}

std::string sweep_csv_row(const PacBayesPoint& p) {
    return format_double(p.alpha) + "," + format_double(p.expected_sharpness) + "," +
           format_double(p.expected_sharpness_se) + "," + format_double(p.kl_half) + "," +
           format_double(p.kl_appendix) + "," + format_double(p.bound_eq4) + "," + format_double(p.bound_eq5) + "," +
           std::to_string(p.m) + "," + format_double(p.delta);
}

}  // namespace gcap
