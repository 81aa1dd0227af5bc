#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "dot_checker.hpp"
#include "ktg/config.hpp"
#include "ktg/error.hpp"
#include "ktg/plot.hpp"
#include "ktg/presets.hpp"

using namespace ktg;
using nlohmann::json;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::Io;
}

TrialRecord fake_trial(int id, const GraphSpec& g, double acc, TrialStatus status = TrialStatus::Completed) {
    TrialRecord r;
    r.trial_id = id;
    r.graph = g;
    r.status = status;
    r.parameter_count = static_cast<std::size_t>(g.num_nodes) * 1000;
    EvalResult e;
    e.epoch = 4;
    e.ensemble_accuracy = acc;
    e.node_accuracy = std::vector<double>(static_cast<std::size_t>(g.num_nodes), acc - 0.01);
    r.checkpoints.push_back(e);
    return r;
}

}  // namespace

TEST_CASE("run config json round trip") {
    RunConfig cfg = default_run_config();
    cfg.seed = 17;
    cfg.train.checkpoint_rule = CheckpointRule::EvenEpochs;
    cfg.train.ensemble_mode = EnsembleMode::Probabilities;
    cfg.model.widths = {8, 8, 16, 16};
    cfg.data.name = "synthetic-hard";
    cfg.protocol = Protocol::Final;
    const json j = to_json(cfg);
    const RunConfig back = run_config_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(back.train.checkpoint_rule == CheckpointRule::EvenEpochs);
    CHECK(back.protocol == Protocol::Final);
}

TEST_CASE("unknown keys and bad values are config errors") {
    try {
        run_config_from_json(json{{"train", {{"epochz", 3}}}});
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
        CHECK(std::string(e.what()).find("epochz") != std::string::npos);
    }
    CHECK(kind_of([] { run_config_from_json(json{{"bogus", 1}}); }) == ErrorKind::Config);
    CHECK(kind_of([] { run_config_from_json(json{{"train", {{"checkpoint_rule", "fibonacci"}}}}); }) ==
          ErrorKind::Config);
    CHECK(kind_of([] {
              RunConfig c = run_config_from_json(json{{"train", {{"epochs", 0}}}});
              c.resolve();
          }) == ErrorKind::Config);
    CHECK(kind_of([] {
              RunConfig c = run_config_from_json(json{{"search", {{"budget", 0}}}});
              c.resolve();
          }) == ErrorKind::Config);
}

TEST_CASE("overrides") {
    json doc = to_json(default_run_config());
    apply_override(doc, "train.epochs=3");
    apply_override(doc, "data.name=synthetic-hard");
    apply_override(doc, "model.widths=[4,4,8,8]");
    apply_override(doc, "search.pruning=false");
    const RunConfig c = run_config_from_json(doc);
    CHECK(c.train.epochs == 3);
    CHECK(c.data.name == "synthetic-hard");
    CHECK(c.model.widths == std::array<int, 4>{4, 4, 8, 8});
    CHECK_FALSE(c.search.pruning);
    CHECK(kind_of([&] { apply_override(doc, "no-equals-sign"); }) == ErrorKind::Config);

    const auto file = std::filesystem::temp_directory_path() / "ktg_test_config.json";
    std::ofstream(file) << R"({"train": {"epochs": 5, "batch_size": 8}, "seed": 3})";
    const RunConfig loaded = load_run_config(file, {"train.epochs=6"});
    CHECK(loaded.train.epochs == 6);
    CHECK(loaded.train.batch_size == 8);
    CHECK(loaded.seed == 3);
    std::ofstream(file) << "{ not json";
    CHECK(kind_of([&] { load_run_config(file, {}); }) == ErrorKind::Parse);
    std::filesystem::remove(file);
}

TEST_CASE("resolve pushes shared settings down") {
    RunConfig c = default_run_config();
    c.seed = 42;
    c.parallel = 3;
    c.data.num_classes = 7;
    c.resolve();
    CHECK(c.search.seed == 42);
    CHECK(c.search.parallelism == 3);
    CHECK(c.model.num_classes == 7);
    CHECK(c.model.arch == c.search.arch);
}

TEST_CASE("presets") {
    const auto all = list_presets();
    CHECK(all.size() == 32);
    for (const auto& p : all) {
        const GraphSpec g = make_preset(p.name, Arch::AtSmallResNet, 1);
        CHECK_MESSAGE(validate_graph(g).empty(), p.name);
        CHECK(dot::check(to_dot(g)).ok);
        CHECK(deserialize(serialize(g)) == g);
    }
    const GraphSpec ind = make_preset("independent-3", Arch::AtSmallResNet, 1);
    for (const auto& e : ind.edges) CHECK(e.gate == (e.is_label_edge() ? GateKind::Through : GateKind::Cutoff));
    const GraphSpec dml = make_preset("dml-2", Arch::AbnSmallResNet, 1);
    CHECK(dml.arch == Arch::AbnSmallResNet);
    for (const auto& e : dml.edges) {
        CHECK(e.gate == GateKind::Through);
        if (!e.is_label_edge()) CHECK(e.loss == LossDesign::ProbCloser);
    }
    CHECK(design_label(ind) == "Independent");
    CHECK(design_label(dml) == "Prob(KL-div)");
    CHECK(design_label(make_preset("separation-only-4", Arch::AtSmallResNet, 0)) ==
          "Prob(cosine sim)+Attention(cosine sim)");
    CHECK(kind_of([] { make_preset("dml-1", Arch::AtSmallResNet, 0); }) == ErrorKind::InvalidGraphSize);
    CHECK(kind_of([] { make_preset("teacher-2", Arch::AtSmallResNet, 0); }) == ErrorKind::Config);
}

TEST_CASE("plot series") {
    std::vector<TrialRecord> trials;
    int id = 0;
    for (int m = 2; m <= 5; ++m) {
        trials.push_back(fake_trial(id++, make_preset("prob-closer-" + std::to_string(m), Arch::AtSmallResNet, 0),
                                    0.5 + 0.01 * m));
        trials.push_back(fake_trial(id++, make_preset("prob-apart-" + std::to_string(m), Arch::AtSmallResNet, 0),
                                    0.5 + 0.02 * m));
    }
    trials.push_back(fake_trial(id++, make_preset("prob-apart-5", Arch::AtSmallResNet, 1), 0.2, TrialStatus::Pruned));
    const auto curve = accuracy_by_node_count(trials);
    std::map<std::string, int> per_series;
    for (const auto& p : curve) ++per_series[p.series];
    CHECK(per_series.size() == 2);
    CHECK(per_series["Prob(KL-div)"] == 4);
    CHECK(per_series["Prob(cosine sim)"] == 4);
    for (const auto& p : curve) {
        if (p.series == "Prob(cosine sim)" && p.x == 5) CHECK(p.y == doctest::Approx(0.6));
    }
    CHECK(accuracy_by_parameters(trials).size() == 8);

    const std::string svg = render_svg(curve, {"t", "x", "y", true});
    CHECK(svg == render_svg(curve, {"t", "x", "y", true}));
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(points_csv(curve, "nodes", "acc").find("series,nodes,acc\n") == 0);

    std::vector<TrialRecord> none{fake_trial(0, make_preset("dml-2", Arch::AtSmallResNet, 0), 0.3, TrialStatus::Pruned)};
    CHECK(kind_of([&] { accuracy_by_node_count(none); }) == ErrorKind::NoResult);
    CHECK(kind_of([&] { accuracy_by_node_count({}); }) == ErrorKind::NoResult);
}
