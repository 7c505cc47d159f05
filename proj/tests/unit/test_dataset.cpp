#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "gcap/dataset.hpp"
#include "gcap/errors.hpp"
#include "helpers.hpp"

using namespace gcap;
namespace fs = std::filesystem;

namespace {

void be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) {
        out.push_back(static_cast<std::uint8_t>(v >> s));
    }
}

void dump(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct Fixture {
    std::vector<std::uint8_t> images;
    std::vector<std::uint8_t> labels;
};

// Two 28x28 images; image j has pixel p = (p * 7 + j) % 256, labels 3 and 7.
Fixture two_images() {
    Fixture f;
    be32(f.images, 2051);
    be32(f.images, 2);
    be32(f.images, 28);
    be32(f.images, 28);
    for (std::uint32_t j = 0; j < 2; ++j) {
        for (std::uint32_t p = 0; p < 784; ++p) {
            f.images.push_back(static_cast<std::uint8_t>((p * 7 + j) % 256));
        }
    }
    be32(f.labels, 2049);
    be32(f.labels, 2);
    f.labels.push_back(3);
    f.labels.push_back(7);
    return f;
}

LabeledDataset load_fixture(const Fixture& f, const fs::path& dir) {
    dump(dir / "img", f.images);
    dump(dir / "lbl", f.labels);
    return load_mnist_idx(dir / "img", dir / "lbl");
}

std::size_t format_offset(const Fixture& f, const fs::path& dir) {
    try {
        load_fixture(f, dir);
    } catch (const FormatError& e) {
        return static_cast<std::size_t>(e.offset());
    }
    FAIL("expected a format error");
    return 0;
}

}  // namespace

TEST_CASE("IDX loader") {
    const auto dir = testing::scratch_dir("idx");
    const Fixture f = two_images();

    SUBCASE("fixture decodes") {
        const LabeledDataset d = load_fixture(f, dir);
        REQUIRE(d.size() == 2);
        CHECK(d.dim() == 784);
        CHECK(d.labels == std::vector<std::size_t>{3, 7});
        CHECK(d.num_classes == 10);
        for (std::size_t j = 0; j < 2; ++j) {
            for (std::size_t p = 0; p < 784; ++p) {
                CHECK(d.inputs(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) ==
                      ((p * 7 + j) % 256) / 255.0);
            }
        }
        // Pixel 255 of image 0 sits where 7p = 255 mod 256, i.e. p = 329.
        CHECK(d.inputs(329, 0) == 1.0);
        CHECK(d.randomized_count() == 0);
    }

    SUBCASE("wrong image magic") {
        Fixture g = f;
        g.images[3] = 0x01;  // 2049
        CHECK(format_offset(g, dir) == 0);
    }

    SUBCASE("wrong label magic") {
        Fixture g = f;
        g.labels[3] = 0x03;
        CHECK_THROWS_AS(load_fixture(g, dir), FormatError);
    }

    SUBCASE("truncated pixels") {
        Fixture g = f;
        g.images.resize(g.images.size() - 10);
        CHECK(format_offset(g, dir) == g.images.size());
    }

    SUBCASE("truncated header") {
        Fixture g = f;
        g.images.resize(6);
        CHECK_THROWS_AS(load_fixture(g, dir), FormatError);
    }

    SUBCASE("count mismatch") {
        Fixture g = f;
        g.labels[7] = 3;
        CHECK(format_offset(g, dir) == 4);
    }

    SUBCASE("label out of range") {
        Fixture g = f;
        g.labels[9] = 12;
        CHECK(format_offset(g, dir) == 9);
    }

    SUBCASE("missing file") { CHECK_THROWS(load_mnist_idx(dir / "nope", dir / "nope2")); }
}

TEST_CASE("IDX round trip") {
    const auto dir = testing::scratch_dir("idx_rt");
    rng::Stream s(51);
    LabeledDataset d;
    d.num_classes = 10;
    d.inputs.resize(16, 20);
    for (Eigen::Index j = 0; j < 20; ++j) {
        for (Eigen::Index p = 0; p < 16; ++p) {
            d.inputs(p, j) = static_cast<double>(s.index(256)) / 255.0;
        }
        d.labels.push_back(s.index(10));
        d.provenance.push_back(Provenance::true_label);
    }
    write_idx(d, dir / "i", dir / "l");
    const LabeledDataset back = load_mnist_idx(dir / "i", dir / "l");
    CHECK(back.inputs == d.inputs);
    CHECK(back.labels == d.labels);

    LabeledDataset bad = d;
    bad.inputs.conservativeResize(15, 20);
    CHECK_THROWS_AS(write_idx(bad, dir / "i", dir / "l"), ArgumentError);
}

TEST_CASE("dataset validation and selection") {
    rng::Stream s(52);
    LabeledDataset d = testing::random_dataset(10, 3, 4, s);
    CHECK_NOTHROW(d.validate());
    const std::vector<std::size_t> idx{4, 1};
    const LabeledDataset sel = d.select(idx);
    CHECK(sel.size() == 2);
    CHECK(sel.inputs.col(0) == d.inputs.col(4));
    CHECK(sel.labels[1] == d.labels[1]);
    d.labels[0] = 9;
    CHECK_THROWS_AS(d.validate(), ArgumentError);
    d.labels.pop_back();
    CHECK_THROWS_AS(d.validate(), ArgumentError);
    const auto j = sel.summary();
    CHECK(j["size"] == 2);
}

TEST_CASE("subsample") {
    const LabeledDataset d = synthetic_blobs(4, 25, 3, 0.1, 53);
    const LabeledDataset all = subsample(d, d.size(), 1);
    CHECK(all.size() == d.size());
    // A permutation: every input column appears exactly once.
    std::multiset<double> a;
    std::multiset<double> b;
    for (Eigen::Index j = 0; j < 100; ++j) {
        a.insert(d.inputs(0, j));
        b.insert(all.inputs(0, j));
    }
    CHECK(a == b);
    CHECK(subsample(d, 0, 1).empty());
    CHECK(subsample(d, 30, 9).inputs == subsample(d, 30, 9).inputs);
    CHECK_FALSE(subsample(d, 30, 9).inputs == subsample(d, 30, 10).inputs);
    CHECK_THROWS_AS(subsample(d, 101, 1), ArgumentError);
}

TEST_CASE("split is a disjoint partition") {
    const LabeledDataset d = synthetic_blobs(2, 50, 2, 0.3, 54);
    const auto [first, second] = split(d, 30, 3);
    CHECK(first.size() == 30);
    CHECK(second.size() == 70);
    std::set<double> seen;
    for (Eigen::Index j = 0; j < 30; ++j) {
        seen.insert(first.inputs(0, j));
    }
    for (Eigen::Index j = 0; j < 70; ++j) {
        CHECK(seen.count(second.inputs(0, j)) == 0);
    }
}

TEST_CASE("ceil_fraction_count") {
    CHECK(ceil_fraction_count(0.05, 100) == 5);
    CHECK(ceil_fraction_count(0.05, 1) == 1);
    CHECK(ceil_fraction_count(0.05, 101) == 6);
    CHECK(ceil_fraction_count(0.0, 100) == 0);
    CHECK(ceil_fraction_count(1.0, 37) == 37);
    CHECK(ceil_fraction_count(0.07, 100) == 7);  // 0.07 * 100 = 7.000000000000001
}

TEST_CASE("randomize_labels") {
    rng::Stream s(55);
    const LabeledDataset d = testing::random_dataset(100, 2, 10, s);

    SUBCASE("fraction 0") {
        const LabeledDataset r = randomize_labels(d, 0.0, 1);
        CHECK(r.labels == d.labels);
        CHECK(r.randomized_count() == 0);
    }

    SUBCASE("fraction 0.5 flags exactly half") { CHECK(randomize_labels(d, 0.5, 1).randomized_count() == 50); }

    SUBCASE("fraction 1 gives uniform labels") {
        const LabeledDataset big = testing::random_dataset(10000, 1, 10, s);
        const LabeledDataset r = randomize_labels(big, 1.0, 2);
        CHECK(r.randomized_count() == 10000);
        std::vector<double> counts(10, 0.0);
        for (std::size_t y : r.labels) {
            counts[y] += 1.0;
        }
        // Each count is Binomial(10000, 0.1): sd = 30.
        for (double c : counts) {
            CHECK(std::abs(c - 1000.0) <= 3.0 * 30.0);
        }
        double chi2 = 0.0;
        for (double c : counts) {
            chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
        }
        CHECK(chi2 < 27.88);  // 0.999 quantile with 9 degrees of freedom
    }

    SUBCASE("deterministic and validated") {
        CHECK(randomize_labels(d, 0.3, 4).labels == randomize_labels(d, 0.3, 4).labels);
        CHECK_THROWS_AS(randomize_labels(d, 1.5, 1), ArgumentError);
    }
}

TEST_CASE("confusion union") {
    const LabeledDataset all = synthetic_blobs(5, 40, 4, 0.2, 56);
    const auto [train, pool] = split(all, 100, 5);

    CHECK(make_confusion_union(train, pool, 0, 1).inputs == train.inputs);
    const LabeledDataset u = make_confusion_union(train, pool, 50, 1);
    CHECK(u.size() == 150);
    CHECK(u.randomized_count() == 50);
    CHECK(u.true_label_part().inputs == train.inputs);
    CHECK(u.true_label_part().labels == train.labels);
    CHECK(make_confusion_union(train, pool, 50, 1).labels == u.labels);
    CHECK_THROWS_AS(make_confusion_union(train, pool, 101, 1), ArgumentError);
}

TEST_CASE("synthetic blobs") {
    SUBCASE("spread 0 puts every point on its center") {
        const BlobDistribution dist(2, 5, 0.0, 3);
        const LabeledDataset d = dist.sample(10, 4);
        for (Eigen::Index j = 0; j < 20; ++j) {
            CHECK((d.inputs.col(j) - dist.centers().col(static_cast<Eigen::Index>(d.labels[j]))).norm() == 0.0);
        }
        CHECK((dist.centers().col(0) - dist.centers().col(1)).norm() > 0.0);
    }

    SUBCASE("inputs lie in the unit ball") {
        const LabeledDataset d = synthetic_blobs(3, 100, 8, 2.0, 5);
        for (Eigen::Index j = 0; j < d.inputs.cols(); ++j) {
            CHECK(d.inputs.col(j).norm() <= 1.0 + 1e-12);
        }
    }

    SUBCASE("counts") {
        const LabeledDataset d = synthetic_blobs(10, 50, 3, 0.1, 6);
        CHECK(d.size() == 500);
        CHECK(d.num_classes == 10);
        CHECK_THROWS_AS(synthetic_blobs(0, 5, 3, 0.1, 6), ArgumentError);
        CHECK_THROWS_AS(synthetic_blobs(2, 5, 3, -1.0, 6), ArgumentError);
    }
}
