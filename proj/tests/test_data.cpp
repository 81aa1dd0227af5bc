#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "ktg/data.hpp"
#include "ktg/error.hpp"
#include "ktg/presets.hpp"
#include "ktg/training.hpp"

using namespace ktg;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::Io;  // sentinel: nothing thrown
}

Dataset labeled(const std::vector<int>& counts) {
    Dataset d;
    d.num_classes = static_cast<int>(counts.size());
    d.channels = 1;
    d.height = d.width = 1;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        for (int i = 0; i < counts[c]; ++i) {
            d.labels.push_back(static_cast<int>(c));
            d.pixels.push_back(static_cast<float>(d.labels.size()));
        }
    }
    return d;
}

void write_ppm(const fs::path& p, int w, int h, unsigned char value) {
    std::ofstream out(p, std::ios::binary);
    out << "P6\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < w * h * 3; ++i) out.put(static_cast<char>(value + i % 7));
}

}  // namespace

TEST_CASE("synthetic dataset basics") {
    const Dataset d = testing::tiny_dataset(2, 10, 16, 1);
    CHECK(d.size() == 20);
    CHECK(std::set<int>(d.labels.begin(), d.labels.end()) == std::set<int>{0, 1});
    CHECK(d.pixels.size() == 20 * 3 * 16 * 16);
    for (float v : d.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    const Dataset again = testing::tiny_dataset(2, 10, 16, 1);
    CHECK(again.pixels == d.pixels);
    CHECK(again.labels == d.labels);
    CHECK(testing::tiny_dataset(2, 10, 16, 2).pixels != d.pixels);

    for (bool hard : {false, true}) {
        SyntheticParams p;
        p.num_classes = 12;
        p.per_class = 3;
        p.hard = hard;
        const Dataset big = synthetic_dataset(p);
        CHECK(big.class_counts() == std::vector<std::size_t>(12, 3));
    }
    CHECK(kind_of([] { testing::tiny_dataset(1, 10, 16, 0); }) == ErrorKind::Config);
}

TEST_CASE("load_dataset") {
    DatasetSpec spec;
    spec.num_classes = 4;
    spec.train_per_class = 64;
    spec.test_per_class = 8;
    const auto a = load_dataset(spec);
    CHECK(a.train.size() == 256);
    CHECK(a.test.size() == 32);
    const auto b = load_dataset(spec);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.train.pixels == b.train.pixels);
    CHECK(a.test.pixels != a.train.subset(std::vector<std::size_t>{0}).pixels);

    spec.max_train_per_class = 10;
    CHECK(load_dataset(spec).train.size() == 40);

    DatasetSpec unknown;
    unknown.name = "imagenet";
    CHECK(kind_of([&] { load_dataset(unknown); }) == ErrorKind::Ingestion);

    DatasetSpec missing;
    missing.name = "folder";
    missing.source = "/nonexistent/ktg/data";
    CHECK(kind_of([&] { load_dataset(missing); }) == ErrorKind::Ingestion);
}

TEST_CASE("image folder ingestion") {
    const fs::path root = fs::temp_directory_path() / "ktg_test_folder";
    fs::remove_all(root);
    for (const char* cls : {"cat", "dog"}) {
        fs::create_directories(root / cls);
        for (int i = 0; i < 3; ++i) write_ppm(root / cls / (std::to_string(i) + ".ppm"), 8, 8, 40);
    }
    const Dataset d = load_image_folder(root, "pets");
    CHECK(d.size() == 6);
    CHECK(d.num_classes == 2);
    CHECK(d.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
    CHECK(d.height == 8);

    std::ofstream(root / "dog" / "bad.ppm") << "P6\n8 8\n255\nxx";
    try {
        load_image_folder(root, "pets");
        FAIL("expected an ingestion error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Ingestion);
        CHECK(std::string(e.what()).find("bad.ppm") != std::string::npos);
    }
    fs::remove_all(root);
}

TEST_CASE("balanced half split") {
    const Dataset even = labeled(std::vector<int>(10, 100));
    const auto s = balanced_half_split(even, 3);
    CHECK(even.subset(s.train).class_counts() == std::vector<std::size_t>(10, 50));
    CHECK(even.subset(s.val).class_counts() == std::vector<std::size_t>(10, 50));

    const Dataset odd = labeled({7, 2, 5});
    const auto o = balanced_half_split(odd, 1);
    CHECK(odd.subset(o.train).class_counts() == std::vector<std::size_t>{4, 1, 3});
    CHECK(odd.subset(o.val).class_counts() == std::vector<std::size_t>{3, 1, 2});

    // Disjoint and exhaustive.
    std::vector<std::size_t> all = o.train;
    all.insert(all.end(), o.val.begin(), o.val.end());
    std::sort(all.begin(), all.end());
    CHECK(all == all_indices(odd));

    CHECK(balanced_half_split(even, 3).train == s.train);
    int differ = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        if (balanced_half_split(even, seed).train != balanced_half_split(even, seed + 100).train) ++differ;
    }
    CHECK(differ == 20);

    try {
        balanced_half_split(labeled({5, 1}), 0);
        FAIL("expected a split error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Split);
        CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }
}

TEST_CASE("batch streams") {
    const Dataset d = testing::tiny_dataset(3, 10, 16, 4);
    const auto norm = Normalization::fit(d);
    REQUIRE(norm.mean.size() == 3);

    BatchStream::Options eval_opts;
    eval_opts.batch_size = 7;
    BatchStream eval(d, all_indices(d), norm, eval_opts);
    CHECK(eval.batches_per_epoch() == 5);
    eval.start_epoch(0);
    const Batch e0 = eval.batch(0);
    eval.start_epoch(3);
    const Batch e3 = eval.batch(0);
    CHECK(e0.images.data == e3.images.data);
    CHECK(e0.labels == std::vector<int>(d.labels.begin(), d.labels.begin() + 7));
    CHECK(eval.batch(4).labels.size() == 2);

    BatchStream::Options train_opts = eval_opts;
    train_opts.shuffle = true;
    train_opts.augment = true;
    train_opts.drop_last = true;
    train_opts.seed = 5;
    BatchStream train(d, all_indices(d), norm, train_opts);
    CHECK(train.batches_per_epoch() == 4);
    train.start_epoch(0);
    const Batch t0 = train.batch(0);
    train.start_epoch(1);
    const Batch t1 = train.batch(0);
    CHECK(t0.images.data != t1.images.data);
    BatchStream replay(d, all_indices(d), norm, train_opts);
    replay.start_epoch(0);
    CHECK(replay.batch(0).images.data == t0.images.data);
    CHECK(replay.batch(0).labels == t0.labels);
}

TEST_CASE("synthetic data is learnable in a few epochs") {
    DatasetSpec spec;
    spec.num_classes = 4;
    spec.train_per_class = 200;
    spec.test_per_class = 10;
    const auto splits = load_dataset(spec);
    const TrainData data = exploration_data(splits.train, 0);

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 32;
    cfg.eval_batch_size = 200;
    BackboneConfig bb;
    bb.num_classes = 4;
    const GraphSpec g = make_preset("independent-2", Arch::AtSmallResNet, 1);
    const TrialRecord r = train_graph(g, data, cfg, bb);
    REQUIRE(r.status == TrialStatus::Completed);
    for (double acc : r.checkpoints.back().node_accuracy) CHECK(acc > 0.9);
}
