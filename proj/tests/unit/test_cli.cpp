#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "gcap/cli.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

// Silences stdout and stderr for the duration of one call.
struct Quiet {
    std::ostringstream out, err;
    std::streambuf* old_out = std::cout.rdbuf(out.rdbuf());
    std::streambuf* old_err = std::cerr.rdbuf(err.rdbuf());
    ~Quiet() {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
    }
};

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "gcap");
    Quiet q;
    const int code = gcap::cli_dispatch(args);
    return {code, q.out.str(), q.err.str()};
}

std::vector<std::string> blobs(const fs::path& out, std::vector<std::string> rest) {
    std::vector<std::string> a = {"--out",       out.string(),
                                  "--set",       "dataset=blobs",
                                  "--set",       "blobs_classes=3",
                                  "--set",       "blobs_dim=6",
                                  "--set",       "blobs_per_class=40",
                                  "--set",       "test_size=30",
                                  "--set",       "train_size=60",
                                  "--set",       "hidden=8",
                                  "--set",       "max_epochs=30"};
    a.insert(a.end(), rest.begin(), rest.end());
    return a;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"measure"}).code == 1);
    CHECK(run({"--set", "bogus=1", "train"}).code == 1);
    CHECK(run({"--set", "noequals", "train"}).code == 1);
    CHECK(run({"experiment", "everything"}).code == 1);
    CHECK(run({"--config", "/nonexistent/x.cfg", "train"}).code == 1);
    const Run bad = run({"--set", "epsilon=0", "train"});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("epsilon") != std::string::npos);
}

TEST_CASE("help and key listing exit with 0") {
    CHECK(run({"--help"}).code == 0);
    const Run k = run({"keys"});
    CHECK(k.code == 0);
    CHECK(k.out.find("sharpness_alpha\t") != std::string::npos);
    CHECK(run({"--list-keys", "keys"}).code == 0);
}

TEST_CASE("missing model is a runtime failure") {
    const auto dir = testing::scratch_dir("cli_missing");
    const Run r = run(blobs(dir, {"measure", "--model", (dir / "absent.gcap").string()}));
    CHECK(r.code == 2);
    CHECK(r.err.find("model file not found") != std::string::npos);
}

TEST_CASE("train then inspect a saved model") {
    const auto dir = testing::scratch_dir("cli_flow");
    const std::string model = (dir / "m.gcap").string();
    REQUIRE(run(blobs(dir, {"train", "--model", model})).code == 0);
    CHECK(fs::exists(model));
    CHECK(fs::exists(dir / "train.json"));
    CHECK(fs::exists(dir / "train_manifest.json"));

    const Run m = run(blobs(dir, {"measure", "--model", model, "--eps", "0.05"}));
    CHECK(m.code == 0);
    CHECK(fs::exists(dir / "measure.csv"));
    CHECK(m.out.find("l2_product") != std::string::npos);

    CHECK(run(blobs(dir, {"measure", "--model", model, "--split", "test"})).code == 0);
    CHECK(run(blobs(dir, {"measure", "--model", model, "--split", "valid"})).code == 1);

    CHECK(run(blobs(dir, {"sharpness", "--model", model, "--alpha", "0.001", "--steps", "5"})).code == 0);
    CHECK(fs::exists(dir / "sharpness.json"));

    CHECK(run(blobs(dir, {"pacbayes-sweep", "--model", model, "--alphas", "0.01,0.1", "--replicates", "4"})).code == 0);
    std::ifstream pb(dir / "pacbayes.csv");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(pb, line)) {
        ++lines;
    }
    CHECK(lines == 3);

    const Run c = run(blobs(dir, {"conditions", "--model", model, "--inputs", "10"}));
    CHECK(c.code == 0);
    CHECK(c.out.find("mu ") != std::string::npos);
    CHECK(fs::exists(dir / "conditions_c2.csv"));

    // A model whose input width does not match the data fails at run time.
    const Run wrong = run(blobs(dir, {"--set", "blobs_dim=5", "measure", "--model", model}));
    CHECK(wrong.code == 2);
}

TEST_CASE("experiment subcommand") {
    const auto dir = testing::scratch_dir("cli_exp");
    const auto args = blobs(dir, {"--set", "sizes=30", "--set", "sharpness=false", "--set", "pacbayes=false",
                                  "experiment", "true_vs_random"});
    REQUIRE(run(args).code == 0);
    CHECK(fs::exists(dir / "true_vs_random.csv"));
    CHECK(fs::exists(dir / "manifest.json"));
    // Same output directory, different config: the manifest refuses.
    auto changed = args;
    changed.insert(changed.begin(), {"--seed", "99"});
    CHECK(run(changed).code == 2);
}
