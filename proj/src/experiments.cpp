#include "gcap/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Core>

#include "gcap/errors.hpp"
#include "gcap/loss.hpp"
#include "gcap/rng.hpp"

namespace gcap {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::size_t parse_size(std::string_view key, std::string_view v) {
    v = trim(v);
    std::size_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ArgumentError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                            std::string(v) + "'");
    }
    return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
    v = trim(v);
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ArgumentError("config key '" + std::string(key) + "': expected an unsigned integer, got '" +
                            std::string(v) + "'");
    }
    return out;
}

double parse_real(std::string_view key, std::string_view v) {
    v = trim(v);
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ArgumentError("config key '" + std::string(key) + "': expected a number, got '" + std::string(v) + "'");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    v = trim(v);
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    throw ArgumentError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::string_view> split_list(std::string_view v) {
    std::vector<std::string_view> out;
    v = trim(v);
    if (v.empty()) {
        return out;
    }
    std::size_t start = 0;
    while (true) {
        const auto comma = v.find(',', start);
        out.push_back(trim(v.substr(start, comma == std::string_view::npos ? comma : comma - start)));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::vector<std::size_t> parse_size_list(std::string_view key, std::string_view v) {
    std::vector<std::size_t> out;
    for (auto item : split_list(v)) {
        out.push_back(parse_size(key, item));
    }
    return out;
}

std::vector<double> parse_real_list(std::string_view key, std::string_view v) {
    std::vector<double> out;
    for (auto item : split_list(v)) {
        out.push_back(parse_real(key, item));
    }
    return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) {
            out += ',';
        }
        out += fmt(xs[i]);
    }
    return out;
}

std::string sizes_text(const std::vector<std::size_t>& xs) {
    return join(xs, [](std::size_t v) { return std::to_string(v); });
}

std::string reals_text(const std::vector<double>& xs) { return join(xs, format_double); }

struct Key {
    const char* name;
    const char* doc;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define GCAP_SIZE_KEY(name, field, doc)                                                               \
    Key {                                                                                             \
        name, doc, [](ExperimentConfig& c, std::string_view v) { c.field = parse_size(name, v); },    \
            [](const ExperimentConfig& c) { return std::to_string(c.field); }                         \
    }
#define GCAP_REAL_KEY(name, field, doc)                                                               \
    Key {                                                                                             \
        name, doc, [](ExperimentConfig& c, std::string_view v) { c.field = parse_real(name, v); },    \
            [](const ExperimentConfig& c) { return format_double(c.field); }                          \
    }
#define GCAP_BOOL_KEY(name, field, doc)                                                               \
    Key {                                                                                             \
        name, doc, [](ExperimentConfig& c, std::string_view v) { c.field = parse_bool(name, v); },    \
            [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); }         \
    }
#define GCAP_SIZES_KEY(name, field, doc)                                                                 \
    Key {                                                                                                \
        name, doc, [](ExperimentConfig& c, std::string_view v) { c.field = parse_size_list(name, v); }, \
            [](const ExperimentConfig& c) { return sizes_text(c.field); }                                \
    }

const std::vector<Key>& key_table() {
    static const std::vector<Key> table = {
        Key{"kind", "true_vs_random | confusion | hidden_sweep | conditions | pacbayes_sweep | measure",
            [](ExperimentConfig& c, std::string_view v) { c.kind = parse_experiment_kind(trim(v)); },
            [](const ExperimentConfig& c) { return to_string(c.kind); }},
        Key{"dataset", "mnist | blobs",
            [](ExperimentConfig& c, std::string_view v) { c.dataset = std::string(trim(v)); },
            [](const ExperimentConfig& c) { return c.dataset; }},
        GCAP_SIZE_KEY("blobs_classes", blobs_classes, "number of blob classes"),
        GCAP_SIZE_KEY("blobs_dim", blobs_dim, "blob input dimension"),
        GCAP_SIZE_KEY("blobs_per_class", blobs_per_class, "blob samples per class (before the test split)"),
        GCAP_REAL_KEY("blobs_spread", blobs_spread, "standard deviation around each blob center"),
        GCAP_SIZE_KEY("test_size", test_size, "held-out test samples, drawn first"),
        GCAP_SIZE_KEY("train_size", train_size, "training samples (confusion, hidden_sweep, conditions, pacbayes_sweep, measure)"),
        GCAP_SIZES_KEY("sizes", sizes, "training set sizes for true_vs_random"),
        GCAP_SIZES_KEY("confusion_sizes", confusion_sizes, "confusion set sizes"),
        GCAP_SIZES_KEY("hidden_units", hidden_units, "hidden widths for hidden_sweep"),
        GCAP_SIZES_KEY("hidden", hidden, "hidden layer widths of the trained network"),
        GCAP_REAL_KEY("random_fraction", random_fraction, "fraction of labels replaced in the random-label runs"),
        GCAP_REAL_KEY("lr", train.learning_rate, "SGD learning rate"),
        GCAP_REAL_KEY("momentum", train.momentum, "SGD momentum"),
        GCAP_SIZE_KEY("minibatch", train.minibatch, "SGD minibatch size"),
        GCAP_REAL_KEY("loss_threshold", train.loss_threshold, "stop once the training cross-entropy is below this"),
        GCAP_SIZE_KEY("max_epochs", train.max_epochs, "epoch cap"),
        GCAP_REAL_KEY("epsilon", margin.epsilon, "margin percentile"),
        GCAP_BOOL_KEY("sharpness", sharpness, "compute max sharpness per row"),
        GCAP_REAL_KEY("sharpness_alpha", ascent.alpha, "box scale for max sharpness"),
        GCAP_SIZE_KEY("sharpness_steps", ascent.steps, "ascent steps"),
        GCAP_REAL_KEY("sharpness_step_size", ascent.step_size, "ascent step size"),
        GCAP_REAL_KEY("sharpness_momentum", ascent.momentum, "ascent momentum"),
        GCAP_SIZE_KEY("sharpness_minibatch", ascent.minibatch, "ascent minibatch"),
        GCAP_REAL_KEY("sharpness_jitter", ascent.start_jitter, "fraction of the box used for the random start"),
        GCAP_BOOL_KEY("pacbayes", pacbayes, "run a bi-criteria PAC-Bayes sweep per row"),
        Key{"alphas", "perturbation scales for the PAC-Bayes sweep",
            [](ExperimentConfig& c, std::string_view v) { c.alphas = parse_real_list("alphas", v); },
            [](const ExperimentConfig& c) { return reals_text(c.alphas); }},
        GCAP_REAL_KEY("pacbayes_a", sweep.a, "sigma_i = alpha (a |w_i| + b)"),
        GCAP_REAL_KEY("pacbayes_b", sweep.b, "sigma_i = alpha (a |w_i| + b)"),
        GCAP_SIZE_KEY("pacbayes_replicates", sweep.replicates, "Monte-Carlo replicates per alpha"),
        GCAP_SIZE_KEY("pacbayes_minibatch", sweep.minibatch, "samples per replicate"),
        GCAP_REAL_KEY("delta", sweep.delta, "confidence parameter of the bounds"),
        Key{"pacbayes_loss", "loss for expected sharpness: cross_entropy | squared | zero_one",
            [](ExperimentConfig& c, std::string_view v) { c.sweep.loss = parse_loss_kind(trim(v)); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.sweep.loss)); }},
        GCAP_SIZE_KEY("condition_inputs", condition_inputs, "inputs sampled for the condition estimates"),
        GCAP_SIZES_KEY("condition_hidden", condition_hidden, "hidden widths of the conditions network"),
        Key{"seed", "master seed", [](ExperimentConfig& c, std::string_view v) { c.seed = parse_u64("seed", v); },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
    };
    return table;
}

#undef GCAP_SIZE_KEY
#undef GCAP_REAL_KEY
#undef GCAP_BOOL_KEY
#undef GCAP_SIZES_KEY

std::uint64_t row_seed(const ExperimentConfig& cfg, rng::Purpose purpose, std::string_view key) {
    return rng::derive_seed(cfg.seed, purpose, fnv1a(key));
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void append_line(const fs::path& path, const std::string& line) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << line << '\n';
    out.flush();
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

std::string key_of_line(std::string_view line) {
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
        pos = line.find(',', pos);
        if (pos == std::string_view::npos) {
            return std::string(line);
        }
        ++pos;
    }
    return std::string(line.substr(0, pos - 1));
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) {
            out.push_back(line);
        }
    }
    return out;
}

// Drops sidecar lines whose key never made it into the main log, which
// happens only when a run was interrupted between the two appends.
void prune_sidecar(const fs::path& path, const std::string& header, const RowLog& main) {
    if (!fs::exists(path)) {
        write_text(path, header + "\n");
        return;
    }
    const auto lines = lines_of(read_file(path));
    if (lines.empty() || lines.front() != header) {
        throw std::runtime_error(path.string() + " has an unexpected header; use a fresh output directory");
    }
    std::string kept = header + "\n";
    bool dropped = false;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (main.contains(key_of_line(lines[i]))) {
            kept += lines[i] + "\n";
        } else {
            dropped = true;
        }
    }
    if (dropped) {
        write_text(path, kept);
    }
}

std::string pacbayes_header() { return "kind,sweep,seed," + sweep_csv_header(); }

struct Logs {
    RowLog rows;
    fs::path pacbayes;
    fs::path timing;
};

Logs open_logs(const RunContext& ctx, const std::string& kind) {
    fs::create_directories(ctx.out_dir);
    Logs logs{RowLog(ctx.out_dir / (kind + ".csv"), ExperimentRow::csv_header()), ctx.out_dir / (kind + "_pacbayes.csv"),
              ctx.out_dir / (kind + "_timing.jsonl")};
    prune_sidecar(logs.pacbayes, pacbayes_header(), logs.rows);
    return logs;
}

struct RowPlan {
    std::string sweep;
    LabeledDataset train;
    /// Samples used for the reported training error and the measures.
    LabeledDataset scored;
    std::vector<std::size_t> dims;
};

std::optional<ExperimentRow> evaluate_row(const RunContext& ctx, Logs& logs, const std::string& kind,
                                          const RowPlan& plan, const LabeledDataset& test) {
    const ExperimentConfig& cfg = ctx.cfg;
    const std::string key = row_key(kind, plan.sweep, cfg.seed);
    if (logs.rows.contains(key)) {
        return std::nullopt;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::string dims_text = sizes_text(plan.dims);

    ExperimentRow row;
    row.kind = kind;
    row.sweep = plan.sweep;
    row.seed = cfg.seed;
    row.measures.m = plan.scored.size();
    row.measures.epsilon = cfg.margin.epsilon;
    row.measures.seed = cfg.seed;
    row.measures.config_digest = cfg.digest();

    const Network init = Network::he_init(plan.dims, rng::derive_seed(cfg.seed, rng::Purpose::init, fnv1a(dims_text)));
    TrainConfig tc = cfg.train;
    tc.seed = row_seed(cfg, rng::Purpose::shuffle, key);

    std::vector<std::string> sidecar;
    try {
        const TrainResult trained = sgd_train(init, plan.train, tc);
        const Network& net = trained.net;
        row.epochs = trained.epochs;
        row.train_loss = trained.final_loss;
        row.reached_threshold = trained.reached_threshold;
        row.train_error = error_rate(net, plan.scored);
        row.test_error = test.empty() ? kNaN : error_rate(net, test);

        MeasureReport report = capacity_report(net, plan.scored, cfg.margin);
        report.seed = cfg.seed;
        report.config_digest = row.measures.config_digest;
        row.measures = std::move(report);

        if (cfg.sharpness) {
            AscentConfig ac = cfg.ascent;
            ac.seed = row_seed(cfg, rng::Purpose::ascent, key);
            row.max_sharpness = max_sharpness(net, plan.train, ac).value;
        } else {
            row.max_sharpness = kNaN;
        }

        row.best_alpha = kNaN;
        row.best_bound = kNaN;
        if (cfg.pacbayes) {
            SweepOptions so = cfg.sweep;
            so.seed = row_seed(cfg, rng::Purpose::perturbation, key);
            const auto points = bicriteria_sweep(net, plan.train, cfg.alphas, so);
            std::string joined;
            for (const PacBayesPoint& p : points) {
                sidecar.push_back(kind + "," + plan.sweep + "," + std::to_string(cfg.seed) + "," + sweep_csv_row(p));
                joined += sidecar.back() + "\n";
                if (std::isnan(row.best_bound) || p.bound_eq5 < row.best_bound) {
                    row.best_bound = p.bound_eq5;
                    row.best_alpha = p.alpha;
                }
            }
            row.pacbayes_digest = hex64(fnv1a(joined));
        }
    } catch (const DivergenceError& e) {
        row.diverged = true;
        row.epochs = e.epoch() + 1;
        row.train_loss = row.train_error = row.test_error = kNaN;
        row.measures.margin = kNaN;
        row.measures.raw.fill(kNaN);
        row.measures.normalized.fill(kNaN);
        row.max_sharpness = row.best_alpha = row.best_bound = kNaN;
    }

    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const std::string& line : sidecar) {
        append_line(logs.pacbayes, line);
    }
    logs.rows.append(key, row.csv_row());
    append_line(logs.timing, nlohmann::json{{"key", key}, {"wall_seconds", row.wall_seconds}}.dump());
    if (ctx.on_row) {
        ctx.on_row(row);
    }
    return row;
}

std::vector<ExperimentRow> run_plans(const RunContext& ctx, const std::string& kind, const std::vector<RowPlan>& plans,
                                     const LabeledDataset& test) {
    Logs logs = open_logs(ctx, kind);
    std::vector<ExperimentRow> rows;
    for (const RowPlan& plan : plans) {
        if (auto row = evaluate_row(ctx, logs, kind, plan, test)) {
            rows.push_back(std::move(*row));
        }
    }
    return rows;
}

std::string conditions_header() {
    return "kind,sweep,seed,inputs,finite_fraction,mu,mu_p5,mu_p50,mu_p95,c2,c2_p50,c3,c3_p50,excluded_triples,"
           "mu_undefined_inputs,c3_undefined_inputs";
}

std::string conditions_row(const std::string& sweep, std::uint64_t seed, const ConditionStats& s) {
    std::string r = "conditions," + sweep + "," + std::to_string(seed) + "," + std::to_string(s.inputs);
    for (double v : {s.finite_fraction(), s.mu, s.mu_dist.p5, s.mu_dist.p50, s.mu_dist.p95, s.c2, s.c2_dist.p50, s.c3,
                     s.c3_dist.p50}) {
        r += "," + format_double(v);
    }
    r += "," + std::to_string(s.excluded_triples) + "," + std::to_string(s.mu_undefined_inputs) + "," +
         std::to_string(s.c3_undefined_inputs);
    return r;
}

// Theorem bound over the alpha grid with sigma_i = alpha * rms(W_i), so that
// gamma_i = alpha / mu^2 for every layer.
std::string theorem_table(const Network& net, const Matrix& inputs, const ConditionStats& stats,
                          const ExperimentConfig& cfg, std::size_t m) {
    std::string out = "alpha,sharpness_term,kl_term,total\n";
    if (!(stats.mu > 0.0) || !std::isfinite(stats.mu) || !std::isfinite(stats.c3)) {
        return out;
    }
    for (double alpha : cfg.alphas) {
        std::vector<double> sigmas;
        for (const Matrix& w : net.layers()) {
            sigmas.push_back(alpha * w.norm() / std::sqrt(static_cast<double>(w.size())));
        }
        const TheoremBound b = theorem1_bound(theorem_inputs(net, inputs, stats, sigmas, cfg.sweep.delta, m));
        out += format_double(alpha) + "," + format_double(b.sharpness_term) + "," + format_double(b.kl_term) + "," +
               format_double(b.total) + "\n";
    }
    return out;
}

}  // namespace

ExperimentKind parse_experiment_kind(std::string_view s) {
    if (s == "true_vs_random") return ExperimentKind::true_vs_random;
    if (s == "confusion") return ExperimentKind::confusion;
    if (s == "hidden_sweep") return ExperimentKind::hidden_sweep;
    if (s == "conditions") return ExperimentKind::conditions;
    if (s == "pacbayes_sweep") return ExperimentKind::pacbayes_sweep;
    if (s == "measure") return ExperimentKind::measure;
    throw ArgumentError("unknown experiment kind '" + std::string(s) + "'");
}

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::true_vs_random: return "true_vs_random";
        case ExperimentKind::confusion: return "confusion";
        case ExperimentKind::hidden_sweep: return "hidden_sweep";
        case ExperimentKind::conditions: return "conditions";
        case ExperimentKind::pacbayes_sweep: return "pacbayes_sweep";
        case ExperimentKind::measure: return "measure";
    }
    return "unknown";
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    for (int i = 15; i >= 0; --i) {
        buf[i] = "0123456789abcdef"[v & 0xf];
        v >>= 4;
    }
    buf[16] = '\0';
    return buf;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
    key = trim(key);
    if (key == "data_dir") {
        data_dir = std::string(trim(value));
        return;
    }
    for (const Key& k : key_table()) {
        if (key == k.name) {
            k.set(*this, value);
            return;
        }
    }
    throw ArgumentError("unknown config key '" + std::string(key) + "'");
}

void ExperimentConfig::apply_text(std::string_view text) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = text.find('\n', start);
        std::string_view line = text.substr(start, end == std::string_view::npos ? end : end - start);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (!line.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw ArgumentError("config line " + std::to_string(line_no) + ": expected key=value");
            }
            set(line.substr(0, eq), line.substr(eq + 1));
        }
        if (end == std::string_view::npos) {
            break;
        }
        start = end + 1;
    }
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    ExperimentConfig cfg;
    cfg.apply_text(read_file(path));
    return cfg;
}

void ExperimentConfig::validate() const {
    if (dataset != "mnist" && dataset != "blobs") {
        throw ArgumentError("dataset must be mnist or blobs");
    }
    if (dataset == "blobs" && (blobs_classes < 2 || blobs_dim == 0 || blobs_per_class == 0 || !(blobs_spread >= 0.0))) {
        throw ArgumentError("blob parameters must be positive (at least two classes)");
    }
    if (train_size == 0) {
        throw ArgumentError("train_size must be positive");
    }
    auto nonempty_positive = [](const std::vector<std::size_t>& xs, const char* name, bool allow_zero) {
        if (xs.empty()) {
            throw ArgumentError(std::string(name) + " must not be empty");
        }
        for (std::size_t v : xs) {
            if (v == 0 && !allow_zero) {
                throw ArgumentError(std::string(name) + " entries must be positive");
            }
        }
    };
    nonempty_positive(sizes, "sizes", false);
    nonempty_positive(confusion_sizes, "confusion_sizes", true);
    nonempty_positive(hidden_units, "hidden_units", false);
    nonempty_positive(condition_hidden, "condition_hidden", false);
    for (std::size_t h : hidden) {
        if (h == 0) {
            throw ArgumentError("hidden entries must be positive");
        }
    }
    if (!(random_fraction >= 0.0 && random_fraction <= 1.0)) {
        throw ArgumentError("random_fraction must lie in [0, 1]");
    }
    if (condition_inputs == 0) {
        throw ArgumentError("condition_inputs must be positive");
    }
    train.validate();
    margin.validate();
    if (sharpness) {
        ascent.validate();
    }
    if (pacbayes) {
        if (alphas.empty()) {
            throw ArgumentError("alphas must not be empty");
        }
        for (double a : alphas) {
            if (!(a > 0.0)) {
                throw ArgumentError("alphas must be positive");
            }
        }
        if (sweep.replicates == 0 || sweep.minibatch == 0) {
            throw ArgumentError("pacbayes_replicates and pacbayes_minibatch must be positive");
        }
        if (!(sweep.delta > 0.0 && sweep.delta < 1.0)) {
            throw ArgumentError("delta must lie in (0, 1)");
        }
    }
}

std::string ExperimentConfig::canonical() const {
    std::map<std::string, std::string> sorted;
    for (const Key& k : key_table()) {
        sorted[k.name] = k.get(*this);
    }
    std::string out;
    for (const auto& [k, v] : sorted) {
        out += k + "=" + v + "\n";
    }
    return out;
}

std::string ExperimentConfig::digest() const { return hex64(fnv1a(canonical())); }

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const Key& k : key_table()) {
        j[k.name] = k.get(*this);
    }
    return j;
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::keys() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const Key& k : key_table()) {
        out.emplace_back(k.name, k.doc);
    }
    out.emplace_back("data_dir", "directory holding the MNIST IDX pair (not part of the digest)");
    return out;
}

DataSplits prepare_data(const ExperimentConfig& cfg) {
    LabeledDataset all;
    if (cfg.dataset == "mnist") {
        if (cfg.data_dir.empty()) {
            throw ArgumentError("mnist needs a data directory");
        }
        all = load_mnist_idx(cfg.data_dir / "train-images-idx3-ubyte", cfg.data_dir / "train-labels-idx1-ubyte");
    } else if (cfg.dataset == "blobs") {
        const BlobDistribution dist(cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_spread,
                                    rng::derive_seed(cfg.seed, rng::Purpose::blobs_centers));
        all = dist.sample(cfg.blobs_per_class, rng::derive_seed(cfg.seed, rng::Purpose::blobs_samples));
    } else {
        throw ArgumentError("unknown dataset '" + cfg.dataset + "'");
    }
    if (cfg.test_size >= all.size()) {
        throw ArgumentError("test_size leaves no training samples");
    }
    auto [test, pool] = split(all, cfg.test_size, rng::derive_seed(cfg.seed, rng::Purpose::split));
    return {std::move(test), std::move(pool)};
}

std::pair<LabeledDataset, LabeledDataset> training_subset(const ExperimentConfig& cfg, const DataSplits& splits,
                                                          std::size_t n) {
    if (n > splits.pool.size()) {
        throw ArgumentError("requested " + std::to_string(n) + " training samples but only " +
                            std::to_string(splits.pool.size()) + " are available");
    }
    return split(splits.pool, n, rng::derive_seed(cfg.seed, rng::Purpose::subsample, n));
}

std::vector<std::size_t> architecture(const ExperimentConfig&, const LabeledDataset& data,
                                      const std::vector<std::size_t>& hidden) {
    std::vector<std::size_t> dims{data.dim()};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(data.num_classes);
    return dims;
}

std::string ExperimentRow::csv_header() {
    return "kind,sweep,seed,train_error,test_error,train_loss,epochs,reached_threshold,diverged," +
           MeasureReport::csv_header() + ",max_sharpness,pacbayes_best_alpha,pacbayes_best_eq5,pacbayes_digest";
}

std::string ExperimentRow::csv_row() const {
    return kind + "," + sweep + "," + std::to_string(seed) + "," + format_double(train_error) + "," +
           format_double(test_error) + "," + format_double(train_loss) + "," + std::to_string(epochs) + "," +
           (reached_threshold ? "1" : "0") + "," + (diverged ? "1" : "0") + "," + measures.csv_row() + "," +
           format_double(max_sharpness) + "," + format_double(best_alpha) + "," + format_double(best_bound) + "," +
           pacbayes_digest;
}

RowLog::RowLog(fs::path path, std::string header) : path_(std::move(path)) {
    if (!fs::exists(path_)) {
        write_text(path_, header + "\n");
        return;
    }
    const auto lines = lines_of(read_file(path_));
    if (lines.empty() || lines.front() != header) {
        throw std::runtime_error(path_.string() + " has an unexpected header; use a fresh output directory");
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        keys_.insert(key_of_line(lines[i]));
    }
}

void RowLog::append(const std::string& key, const std::string& line) {
    append_line(path_, line);
    keys_.insert(key);
}

std::string row_key(std::string_view kind, std::string_view sweep, std::uint64_t seed) {
    return std::string(kind) + "," + std::string(sweep) + "," + std::to_string(seed);
}

std::vector<ExperimentRow> run_true_vs_random(const RunContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const DataSplits splits = prepare_data(cfg);
    std::vector<RowPlan> plans;
    for (std::size_t m : cfg.sizes) {
        LabeledDataset train = training_subset(cfg, splits, m).first;
        LabeledDataset noisy = randomize_labels(train, cfg.random_fraction, rng::derive_seed(cfg.seed, rng::Purpose::labels, m));
        const auto dims = architecture(cfg, train, cfg.hidden);
        plans.push_back({std::to_string(m) + "/true", train, train, dims});
        plans.push_back({std::to_string(m) + "/random", noisy, noisy, dims});
    }
    return run_plans(ctx, "true_vs_random", plans, splits.test);
}

std::vector<ExperimentRow> run_confusion(const RunContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const DataSplits splits = prepare_data(cfg);
    auto [train, rest] = training_subset(cfg, splits, cfg.train_size);
    const auto dims = architecture(cfg, train, cfg.hidden);
    std::vector<RowPlan> plans;
    for (std::size_t c : cfg.confusion_sizes) {
        LabeledDataset joined =
            make_confusion_union(train, rest, c, rng::derive_seed(cfg.seed, rng::Purpose::confusion, c));
        plans.push_back({std::to_string(c), std::move(joined), train, dims});
    }
    return run_plans(ctx, "confusion", plans, splits.test);
}

std::vector<ExperimentRow> run_hidden_sweep(const RunContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const DataSplits splits = prepare_data(cfg);
    const LabeledDataset train = training_subset(cfg, splits, cfg.train_size).first;
    std::vector<RowPlan> plans;
    for (std::size_t h : cfg.hidden_units) {
        plans.push_back({std::to_string(h), train, train, architecture(cfg, train, {h})});
    }
    return run_plans(ctx, "hidden_sweep", plans, splits.test);
}

std::vector<ExperimentRow> run_pacbayes_sweep(const RunContext& ctx) {
    RunContext local = ctx;
    local.cfg.pacbayes = true;
    const ExperimentConfig& cfg = local.cfg;
    const DataSplits splits = prepare_data(cfg);
    const LabeledDataset train = training_subset(cfg, splits, cfg.train_size).first;
    return run_plans(local, "pacbayes_sweep",
                     {{std::to_string(cfg.train_size), train, train, architecture(cfg, train, cfg.hidden)}}, splits.test);
}

std::vector<ExperimentRow> run_measure(const RunContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const DataSplits splits = prepare_data(cfg);
    const LabeledDataset train = training_subset(cfg, splits, cfg.train_size).first;
    return run_plans(ctx, "measure",
                     {{std::to_string(cfg.train_size), train, train, architecture(cfg, train, cfg.hidden)}}, splits.test);
}

ConditionsResult run_conditions(const RunContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const DataSplits splits = prepare_data(cfg);
    const LabeledDataset train = training_subset(cfg, splits, cfg.train_size).first;
    const auto dims = architecture(cfg, train, cfg.condition_hidden);
    const Network init = Network::he_init(dims, rng::derive_seed(cfg.seed, rng::Purpose::init, fnv1a(sizes_text(dims))));
    TrainConfig tc = cfg.train;
    tc.seed = row_seed(cfg, rng::Purpose::shuffle, "conditions");
    const TrainResult trained = sgd_train(init, train, tc);

    const std::size_t n = std::min(cfg.condition_inputs, train.size());
    const LabeledDataset sample = subsample(train, n, rng::derive_seed(cfg.seed, rng::Purpose::experiment, n));
    const auto grid = default_delta_grid();

    ConditionsResult result;
    result.initial = condition_histograms(init, sample.inputs, grid);
    result.trained = condition_histograms(trained.net, sample.inputs, grid);
    result.train_error = error_rate(trained.net, train);
    result.test_error = error_rate(trained.net, splits.test);
    result.reached_threshold = trained.reached_threshold;

    fs::create_directories(ctx.out_dir);
    RowLog log(ctx.out_dir / "conditions.csv", conditions_header());
    for (const auto& [name, stats] : {std::pair{"initial", &result.initial}, std::pair{"trained", &result.trained}}) {
        const std::string key = row_key("conditions", name, cfg.seed);
        if (!log.contains(key)) {
            log.append(key, conditions_row(name, cfg.seed, *stats));
            ++result.new_rows;
        }
        write_text(ctx.out_dir / (std::string("conditions_") + name + "_c2.csv"), stats->c2_csv());
        write_text(ctx.out_dir / (std::string("conditions_") + name + "_theorem.csv"),
                   theorem_table(name == std::string("initial") ? init : trained.net, sample.inputs, *stats, cfg,
                                 train.size()));
    }
    const nlohmann::json report = {
        {"initial", result.initial.to_json()},
        {"trained", result.trained.to_json()},
        {"train_error", result.train_error},
        {"test_error", result.test_error},
        {"reached_threshold", result.reached_threshold},
        {"epochs", trained.epochs},
        {"dims", dims},
    };
    write_text(ctx.out_dir / "conditions.json", report.dump(2) + "\n");
    return result;
}

nlohmann::json manifest(const ExperimentConfig& cfg, std::string_view command) {
    return {
        {"schema_version", kManifestSchema},
        {"gcap_version", kVersion},
        {"command", command},
        {"seed", cfg.seed},
        {"config_digest", cfg.digest()},
        {"config", cfg.to_json()},
        {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
        {"compiler", __VERSION__},
    };
}

void write_manifest(const fs::path& dir, const nlohmann::json& m) {
    fs::create_directories(dir);
    const fs::path path = dir / "manifest.json";
    if (fs::exists(path)) {
        nlohmann::json old;
        try {
            old = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception&) {
            throw std::runtime_error(path.string() + " is not valid JSON");
        }
        if (old.value("config_digest", std::string()) != m.at("config_digest").get<std::string>() ||
            old.value("command", std::string()) != m.at("command").get<std::string>()) {
            throw std::runtime_error(dir.string() +
                                     " already holds results for a different configuration; use another --out");
        }
    }
    write_text(path, m.dump(2) + "\n");
}

std::size_t run_experiment(const RunContext& ctx) {
    ctx.cfg.validate();
    write_manifest(ctx.out_dir, manifest(ctx.cfg, "experiment " + to_string(ctx.cfg.kind)));
    switch (ctx.cfg.kind) {
        case ExperimentKind::true_vs_random: return run_true_vs_random(ctx).size();
        case ExperimentKind::confusion: return run_confusion(ctx).size();
        case ExperimentKind::hidden_sweep: return run_hidden_sweep(ctx).size();
        case ExperimentKind::pacbayes_sweep: return run_pacbayes_sweep(ctx).size();
        case ExperimentKind::measure: return run_measure(ctx).size();
        case ExperimentKind::conditions: return run_conditions(ctx).new_rows;
    }
    return 0;
}

}  // namespace gcap
