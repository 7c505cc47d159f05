#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gcap/conditions.hpp"
#include "gcap/dataset.hpp"
#include "gcap/measures.hpp"
#include "gcap/network.hpp"
#include "gcap/sharpness.hpp"
#include "gcap/train.hpp"

namespace gcap {

inline constexpr std::string_view kVersion = "1.0.0";
inline constexpr int kManifestSchema = 1;

enum class ExperimentKind { true_vs_random, confusion, hidden_sweep, conditions, pacbayes_sweep, measure };

ExperimentKind parse_experiment_kind(std::string_view s);
std::string to_string(ExperimentKind k);

/// Every knob that affects numerics. Loaded from a flat key=value file (one
/// pair per line, '#' starts a comment, lists are comma separated) and
/// overridden by individual key=value strings.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::measure;

    std::string dataset = "mnist";
    std::filesystem::path data_dir;
    std::size_t blobs_classes = 10;
    std::size_t blobs_dim = 64;
    std::size_t blobs_per_class = 300;
    double blobs_spread = 0.3;

    /// Held out before any other subsetting.
    std::size_t test_size = 1000;
    std::size_t train_size = 2000;
    std::vector<std::size_t> sizes{500, 1000, 2000, 4000};
    std::vector<std::size_t> confusion_sizes{0, 500, 1000, 2000};
    std::vector<std::size_t> hidden_units{32, 64, 128, 256, 512};
    /// Hidden widths of the trained architecture.
    std::vector<std::size_t> hidden{128};
    double random_fraction = 1.0;

    TrainConfig train;
    MarginSpec margin;

    bool sharpness = true;
    AscentConfig ascent;

    bool pacbayes = true;
    std::vector<double> alphas = log_grid(1e-4, 1e-1, 12);
    SweepOptions sweep;

    std::size_t condition_inputs = 200;
    std::vector<std::size_t> condition_hidden{128, 128, 128, 128, 128, 128};

    std::uint64_t seed = 0;

    void set(std::string_view key, std::string_view value);
    /// Applies "key=value" text; blank lines and '#' comments are skipped.
    void apply_text(std::string_view text);
    static ExperimentConfig load(const std::filesystem::path& path);

    void validate() const;

    /// Sorted key=value lines for every key.
    std::string canonical() const;
    /// FNV-1a 64 of canonical(), as 16 hex digits.
    std::string digest() const;
    nlohmann::json to_json() const;

    /// Documented keys in canonical order with a one-line description.
    static std::vector<std::pair<std::string, std::string>> keys();
};

/// FNV-1a 64-bit hash.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

struct DataSplits {
    LabeledDataset test;
    /// Everything not held out for testing.
    LabeledDataset pool;
};

/// Loads the configured source and draws the fixed test split.
DataSplits prepare_data(const ExperimentConfig& cfg);

/// The first `n` samples of a seeded permutation of the pool, and the rest.
std::pair<LabeledDataset, LabeledDataset> training_subset(const ExperimentConfig& cfg, const DataSplits& splits,
                                                          std::size_t n);

std::vector<std::size_t> architecture(const ExperimentConfig& cfg, const LabeledDataset& data,
                                      const std::vector<std::size_t>& hidden);

struct ExperimentRow {
    std::string kind;
    std::string sweep;
    std::uint64_t seed = 0;
    double train_error = 0.0;
    double test_error = 0.0;
    double train_loss = 0.0;
    std::size_t epochs = 0;
    bool reached_threshold = false;
    bool diverged = false;
    MeasureReport measures;
    double max_sharpness = 0.0;
    double best_alpha = 0.0;
    double best_bound = 0.0;
    std::string pacbayes_digest;
    /// Kept out of the CSV so reruns compare byte for byte.
    double wall_seconds = 0.0;

    static std::string csv_header();
    std::string csv_row() const;
};

/// Append-only CSV whose first three columns (kind, sweep, seed) key a row.
/// Reopening an existing file reads the completed keys so that a rerun can
/// skip them.
class RowLog {
public:
    RowLog(std::filesystem::path path, std::string header);

    bool contains(const std::string& key) const { return keys_.count(key) != 0; }
    void append(const std::string& key, const std::string& line);
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    std::set<std::string> keys_;
};

std::string row_key(std::string_view kind, std::string_view sweep, std::uint64_t seed);

struct RunContext {
    ExperimentConfig cfg;
    std::filesystem::path out_dir;
    /// Called after each completed row; may be empty.
    std::function<void(const ExperimentRow&)> on_row;
};

/// Rows computed in this run; completed keys from an earlier run are skipped.
std::vector<ExperimentRow> run_true_vs_random(const RunContext& ctx);
std::vector<ExperimentRow> run_confusion(const RunContext& ctx);
std::vector<ExperimentRow> run_hidden_sweep(const RunContext& ctx);
std::vector<ExperimentRow> run_pacbayes_sweep(const RunContext& ctx);
std::vector<ExperimentRow> run_measure(const RunContext& ctx);

struct ConditionsResult {
    ConditionStats initial;
    ConditionStats trained;
    double train_error = 0.0;
    double test_error = 0.0;
    bool reached_threshold = false;
    /// Rows appended to conditions.csv by this run.
    std::size_t new_rows = 0;
};

/// Trains the deep architecture and evaluates the conditions on both the
/// seeded initialization and the trained network.
ConditionsResult run_conditions(const RunContext& ctx);

/// Dispatches on ctx.cfg.kind, writes the manifest, returns the number of
/// rows computed in this run.
std::size_t run_experiment(const RunContext& ctx);

nlohmann::json manifest(const ExperimentConfig& cfg, std::string_view command);

/// Writes manifest.json; throws when an existing manifest has another digest.
void write_manifest(const std::filesystem::path& dir, const nlohmann::json& m);

}  // namespace gcap
