#include "gcap/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>

#include <CLI11.hpp>

#include "gcap/errors.hpp"
#include "gcap/experiments.hpp"
#include "gcap/loss.hpp"
#include "gcap/rng.hpp"

#ifndef GCAP_DEFAULT_DATA_DIR
#define GCAP_DEFAULT_DATA_DIR ""
#endif

namespace gcap {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::optional<std::string> config;
    std::vector<std::string> sets;
    std::optional<std::string> seed;
    std::string out = "gcap-out";
    std::optional<std::string> data_dir;

    std::optional<std::string> data;
    std::optional<std::string> hidden;
    std::optional<std::string> train_size;
    std::optional<std::string> max_epochs;
    std::optional<std::string> eps;
    std::optional<std::string> alpha;
    std::optional<std::string> steps;
    std::optional<std::string> alphas;
    std::optional<std::string> replicates;
    std::optional<std::string> inputs;
    std::string model;
    std::string split = "train";
    std::string kind;
};

// Config file first, then --set overrides, then dedicated flags.
ExperimentConfig build_config(const Options& o) {
    ExperimentConfig cfg;
    if (const char* env = std::getenv("GCAP_DATA_DIR"); env && *env) {
        cfg.data_dir = env;
    } else {
        cfg.data_dir = GCAP_DEFAULT_DATA_DIR;
    }
    if (o.config) {
        std::ifstream in(*o.config, std::ios::binary);
        if (!in) {
            throw ArgumentError("cannot read config file " + *o.config);
        }
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        cfg.apply_text(text);
    }
    for (const std::string& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ArgumentError("--set expects key=value, got '" + s + "'");
        }
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    const std::pair<const char*, const std::optional<std::string>*> flags[] = {
        {"seed", &o.seed},         {"data_dir", &o.data_dir},     {"dataset", &o.data},
        {"hidden", &o.hidden},     {"train_size", &o.train_size}, {"max_epochs", &o.max_epochs},
        {"epsilon", &o.eps},       {"sharpness_alpha", &o.alpha}, {"sharpness_steps", &o.steps},
        {"alphas", &o.alphas},     {"pacbayes_replicates", &o.replicates},
        {"condition_inputs", &o.inputs},
    };
    for (const auto& [key, value] : flags) {
        if (*value) {
            cfg.set(key, **value);
        }
    }
    if (!o.kind.empty()) {
        cfg.kind = parse_experiment_kind(o.kind);
    }
    cfg.validate();
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

void command_manifest(const fs::path& out, const ExperimentConfig& cfg, const std::string& command) {
    write_file(out / (command + "_manifest.json"), manifest(cfg, command).dump(2) + "\n");
}

struct Split {
    LabeledDataset train;
    LabeledDataset test;
};

Split load_split(const ExperimentConfig& cfg) {
    DataSplits splits = prepare_data(cfg);
    LabeledDataset train = training_subset(cfg, splits, cfg.train_size).first;
    return {std::move(train), std::move(splits.test)};
}

const LabeledDataset& chosen(const Split& s, const std::string& which) { return which == "test" ? s.test : s.train; }

Network load_model(const std::string& path) {
    if (!fs::exists(path)) {
        throw std::runtime_error("model file not found: " + path);
    }
    return load_network(path);
}

int cmd_train(const Options& o, const ExperimentConfig& cfg) {
    const Split data = load_split(cfg);
    const auto dims = architecture(cfg, data.train, cfg.hidden);
    const Network init = Network::he_init(dims, rng::derive_seed(cfg.seed, rng::Purpose::init));
    TrainConfig tc = cfg.train;
    tc.seed = rng::derive_seed(cfg.seed, rng::Purpose::shuffle);
    const TrainResult r = sgd_train(init, data.train, tc);
    const fs::path out(o.out);
    const fs::path model = o.model.empty() ? out / "model.gcap" : fs::path(o.model);
    fs::create_directories(model.parent_path().empty() ? fs::path(".") : model.parent_path());
    save_network(r.net, model);
    const nlohmann::json report = {
        {"model", model.string()},
        {"dims", dims},
        {"epochs", r.epochs},
        {"final_loss", r.final_loss},
        {"reached_threshold", r.reached_threshold},
        {"train_error", error_rate(r.net, data.train)},
        {"test_error", error_rate(r.net, data.test)},
        {"train", data.train.summary()},
    };
    write_file(out / "train.json", report.dump(2) + "\n");
    command_manifest(out, cfg, "train");
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_measure(const Options& o, const ExperimentConfig& cfg) {
    const Network net = load_model(o.model);
    const Split data = load_split(cfg);
    MeasureReport r = capacity_report(net, chosen(data, o.split), cfg.margin);
    r.seed = cfg.seed;
    r.config_digest = cfg.digest();
    const fs::path out(o.out);
    const std::string csv = MeasureReport::csv_header() + "\n" + r.csv_row() + "\n";
    write_file(out / "measure.csv", csv);
    write_file(out / "measure.json", r.to_json().dump(2) + "\n");
    command_manifest(out, cfg, "measure");
    std::cout << csv;
    return 0;
}

int cmd_sharpness(const Options& o, const ExperimentConfig& cfg) {
    const Network net = load_model(o.model);
    const Split data = load_split(cfg);
    AscentConfig ac = cfg.ascent;
    ac.seed = rng::derive_seed(cfg.seed, rng::Purpose::ascent);
    const MaxSharpness s = max_sharpness(net, chosen(data, o.split), ac);
    const nlohmann::json report = {
        {"alpha", ac.alpha},         {"steps", ac.steps},
        {"max_sharpness", s.value},  {"base_loss", s.base_loss},
        {"perturbed_loss", s.perturbed_loss}, {"seed", cfg.seed},
        {"config_digest", cfg.digest()},
    };
    const fs::path out(o.out);
    write_file(out / "sharpness.json", report.dump(2) + "\n");
    command_manifest(out, cfg, "sharpness");
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_pacbayes(const Options& o, const ExperimentConfig& cfg) {
    const Network net = load_model(o.model);
    const Split data = load_split(cfg);
    SweepOptions so = cfg.sweep;
    so.seed = rng::derive_seed(cfg.seed, rng::Purpose::perturbation);
    const auto points = bicriteria_sweep(net, chosen(data, o.split), cfg.alphas, so);
    std::string csv = sweep_csv_header() + "\n";
    for (const PacBayesPoint& p : points) {
        csv += sweep_csv_row(p) + "\n";
    }
    const fs::path out(o.out);
    write_file(out / "pacbayes.csv", csv);
    command_manifest(out, cfg, "pacbayes-sweep");
    std::cout << csv;
    return 0;
}

int cmd_conditions(const Options& o, const ExperimentConfig& cfg) {
    const Network net = load_model(o.model);
    const Split data = load_split(cfg);
    const LabeledDataset& pool = chosen(data, o.split);
    const std::size_t n = std::min(cfg.condition_inputs, pool.size());
    const LabeledDataset sample = subsample(pool, n, rng::derive_seed(cfg.seed, rng::Purpose::experiment, n));
    const ConditionStats stats = condition_histograms(net, sample.inputs, default_delta_grid());
    const fs::path out(o.out);
    write_file(out / "conditions.json", stats.to_json().dump(2) + "\n");
    write_file(out / "conditions_c2.csv", stats.c2_csv());
    command_manifest(out, cfg, "conditions");
    std::cout << "inputs " << stats.inputs << "  finite " << format_double(stats.finite_fraction()) << "\n"
              << "mu " << format_double(stats.mu) << "  (reference >= " << kReferenceMuLower << ")\n"
              << "c2 " << format_double(stats.c2) << "  (reference <= " << kReferenceC2Upper << ")\n"
              << "c3 " << format_double(stats.c3) << "  (reference <= " << kReferenceC3Upper << ")\n";
    return 0;
}

int cmd_experiment(const Options& o, const ExperimentConfig& cfg) {
    RunContext ctx{cfg, fs::path(o.out), [](const ExperimentRow& row) {
                       std::cerr << row.kind << " " << row.sweep << ": train_error " << format_double(row.train_error)
                                 << " test_error " << format_double(row.test_error) << " epochs " << row.epochs << " ("
                                 << format_double(std::round(row.wall_seconds * 10.0) / 10.0) << " s)\n";
                   }};
    const std::size_t rows = run_experiment(ctx);
    std::cerr << rows << " rows computed, results in " << o.out << "\n";
    return 0;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
    CLI::App app{"Capacity, sharpness and PAC-Bayes measures for ReLU networks", "gcap"};
    app.require_subcommand(1);
    app.fallthrough();

    Options o;
    app.add_option("--config", o.config, "key=value configuration file");
    app.add_option("--set", o.sets, "override one config key (key=value), repeatable");
    app.add_option("--seed", o.seed, "master seed");
    app.add_option("--out", o.out, "output directory")->capture_default_str();
    app.add_option("--data-dir", o.data_dir, "directory with the MNIST IDX pair");
    bool list_keys = false;
    app.add_flag("--list-keys", list_keys, "print the documented config keys and exit");

    auto add_data = [&](CLI::App* sub) {
        sub->add_option("--data", o.data, "mnist or blobs");
        sub->add_option("--train-size", o.train_size, "training samples");
        sub->add_option("--split", o.split, "evaluate on the train or test split")
            ->check(CLI::IsMember({"train", "test"}))
            ->capture_default_str();
    };
    auto add_model = [&](CLI::App* sub) { sub->add_option("--model", o.model, "model file")->required(); };

    auto* train = app.add_subcommand("train", "train a network and save it");
    add_data(train);
    train->add_option("--hidden", o.hidden, "hidden widths, comma separated");
    train->add_option("--max-epochs", o.max_epochs, "epoch cap");
    train->add_option("--model", o.model, "where to save the model (default <out>/model.gcap)");

    auto* measure = app.add_subcommand("measure", "norm-based capacity measures of a saved model");
    add_data(measure);
    add_model(measure);
    measure->add_option("--eps", o.eps, "margin percentile");

    auto* sharp = app.add_subcommand("sharpness", "max sharpness of a saved model");
    add_data(sharp);
    add_model(sharp);
    sharp->add_option("--alpha", o.alpha, "box scale");
    sharp->add_option("--steps", o.steps, "ascent steps");

    auto* pb = app.add_subcommand("pacbayes-sweep", "expected sharpness and PAC-Bayes bounds over an alpha grid");
    add_data(pb);
    add_model(pb);
    pb->add_option("--alphas", o.alphas, "comma separated alpha grid");
    pb->add_option("--replicates", o.replicates, "Monte-Carlo replicates per alpha");

    auto* cond = app.add_subcommand("conditions", "mu, C2 and C3 estimates for a saved model");
    add_data(cond);
    add_model(cond);
    cond->add_option("--inputs", o.inputs, "number of sampled inputs");

    auto* exp = app.add_subcommand("experiment", "run an experiment sweep");
    exp->add_option("kind", o.kind, "true_vs_random | confusion | hidden_sweep | conditions | pacbayes_sweep | measure")
        ->required();
    exp->add_option("--data", o.data, "mnist or blobs");

    auto* keys = app.add_subcommand("keys", "list the config keys");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (list_keys || keys->parsed()) {
        for (const auto& [k, doc] : ExperimentConfig::keys()) {
            std::cout << k << "\t" << doc << "\n";
        }
        return 0;
    }

    ExperimentConfig cfg;
    try {
        cfg = build_config(o);
    } catch (const std::invalid_argument& e) {
        std::cerr << "gcap: " << e.what() << "\n";
        return 1;
    }

    try {
        if (train->parsed()) return cmd_train(o, cfg);
        if (measure->parsed()) return cmd_measure(o, cfg);
        if (sharp->parsed()) return cmd_sharpness(o, cfg);
        if (pb->parsed()) return cmd_pacbayes(o, cfg);
        if (cond->parsed()) return cmd_conditions(o, cfg);
        if (exp->parsed()) return cmd_experiment(o, cfg);
    } catch (const std::exception& e) {
        std::cerr << "gcap: " << e.what() << "\n";
        return 2;
    }
    std::cerr << app.help();
    return 1;
}

int cli_dispatch(const std::vector<std::string>& args) {
    std::vector<std::string> copy = args;
    std::vector<char*> argv;
    for (std::string& s : copy) {
        argv.push_back(s.data());
    }
    argv.push_back(nullptr);
    return cli_dispatch(static_cast<int>(copy.size()), argv.data());
}

}  // namespace gcap
