#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dot_checker.hpp"
#include "helpers.hpp"
#include "ktg/error.hpp"
#include "ktg/presets.hpp"
#include "ktg/search.hpp"
#include "oracle.hpp"
#include "scripted.hpp"

using namespace ktg;
namespace fs = std::filesystem;

namespace {

fs::path temp_log(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "ktg_test_search";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    fs::remove(p);
    return p;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

SearchConfig scripted_config(int budget, int guard) {
    SearchConfig cfg;
    cfg.num_nodes = 3;
    cfg.budget = budget;
    cfg.min_reports = guard;
    cfg.seed = 99;
    return cfg;
}

}  // namespace

TEST_CASE("prune decision examples") {
    PrunerState s(2);
    CHECK(prune_decision(s, 1, 0.6) == PruneAction::Continue);
    CHECK(prune_decision(s, 1, 0.7) == PruneAction::Continue);
    CHECK(prune_decision(s, 1, 0.3) == PruneAction::Stop);
    CHECK(s.count(1) == 3);
    CHECK(s.mean(1) == doctest::Approx((0.6 + 0.7 + 0.3) / 3));

    PrunerState eq(2);
    prune_decision(eq, 4, 0.25);
    prune_decision(eq, 4, 0.75);
    CHECK(prune_decision(eq, 4, 0.5) == PruneAction::Continue);  // strict inequality
    CHECK(prune_decision(eq, 4, 0.4999) == PruneAction::Stop);
    CHECK(prune_decision(eq, 8, 0.0) == PruneAction::Continue);  // other epochs have no history

    PrunerState guard5;
    for (int i = 0; i < 5; ++i) CHECK(prune_decision(guard5, 1, 0.9) == PruneAction::Continue);
    CHECK(prune_decision(guard5, 1, 0.1) == PruneAction::Stop);

    CHECK_THROWS_AS(prune_decision(eq, 1, 1.5), Error);
}

TEST_CASE("running mean equals a recompute from scratch") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    PrunerState s(3);
    std::map<int, std::vector<double>> all;
    for (int i = 0; i < 500; ++i) {
        const int epoch = 1 << (rng() % 5);
        const double a = u(rng);
        prune_decision(s, epoch, a);
        all[epoch].push_back(a);
    }
    for (const auto& [e, v] : all) {
        double sum = 0.0;
        for (double x : v) sum += x;
        CHECK(std::abs(s.mean(e) - sum / static_cast<double>(v.size())) <= 1e-12);
        CHECK(s.count(e) == v.size());
    }
}

TEST_CASE("trial graphs are a pure function of seed and id") {
    const auto space = hyperparameter_space(3);
    CHECK(trial_graph(space, 5, 3) == trial_graph(space, 5, 3));
    CHECK(trial_graph(space, 5, 3) != trial_graph(space, 5, 4));
    CHECK(trial_graph(space, 5, 3) != trial_graph(space, 6, 3));
    for (int id = 0; id < 30; ++id) CHECK(validate_graph(trial_graph(space, 1, id)).empty());
}

TEST_CASE("scripted search matches the hand simulation") {
    const auto curves = testing::random_curves(50, {1, 2, 4, 8, 16}, 1);
    const auto expected = testing::simulate(curves, 2);
    const fs::path log = temp_log("scripted.jsonl");
    const SearchResult r = run_search(scripted_config(50, 2), testing::scripted_runner(curves), log, false);
    REQUIRE(r.trials.size() == 50);
    int pruned = 0;
    for (int id = 0; id < 50; ++id) {
        const auto& t = r.trials[static_cast<std::size_t>(id)];
        CHECK(t.trial_id == id);
        CHECK(t.status == expected[static_cast<std::size_t>(id)].status);
        std::vector<int> epochs;
        for (const auto& c : t.checkpoints) epochs.push_back(c.epoch);
        CHECK(epochs == expected[static_cast<std::size_t>(id)].epochs);
        pruned += t.status == TrialStatus::Pruned;
    }
    CHECK(pruned > 0);

    // The log replays to the same records and pruner.
    const LogContents contents = read_trial_log(log);
    CHECK(contents.unfinished.empty());
    REQUIRE(contents.finished.size() == 50);
    for (const auto& t : contents.finished) {
        CHECK(t.status == r.trials[static_cast<std::size_t>(t.trial_id)].status);
        CHECK(t.checkpoints.size() == r.trials[static_cast<std::size_t>(t.trial_id)].checkpoints.size());
        CHECK(t.graph == r.trials[static_cast<std::size_t>(t.trial_id)].graph);
    }
    const PrunerState replayed = replay_pruner(contents.finished, 2);
    oracle::Pruner o(2);
    for (std::size_t id = 0; id < 50; ++id) {
        for (std::size_t k = 0; k < expected[id].epochs.size(); ++k) o.stop(curves.epochs[k], curves.acc[id][k]);
    }
    for (int e : curves.epochs) CHECK(std::abs(replayed.mean(e) - o.mean(e)) <= 1e-12);

    // Best: highest final accuracy among completed, earliest id on ties.
    double best = -1;
    int best_id = -1;
    for (int id = 0; id < 50; ++id) {
        if (expected[static_cast<std::size_t>(id)].status != TrialStatus::Completed) continue;
        const double a = curves.acc[static_cast<std::size_t>(id)].back();
        if (a > best) {
            best = a;
            best_id = id;
        }
    }
    CHECK(r.best.trial_id == best_id);
}

TEST_CASE("pruning disabled trains every trial") {
    const auto curves = testing::random_curves(20, {1, 2, 4}, 2);
    SearchConfig cfg = scripted_config(20, 1);
    cfg.pruning = false;
    const SearchResult r = run_search(cfg, testing::scripted_runner(curves), temp_log("nopruning.jsonl"), false);
    for (const auto& t : r.trials) CHECK(t.status == TrialStatus::Completed);
}

TEST_CASE("budget of one is never pruned") {
    const auto curves = testing::random_curves(1, {1, 2}, 3);
    const SearchResult r = run_search(scripted_config(1, 0), testing::scripted_runner(curves), temp_log("one.jsonl"),
                                      false);
    CHECK(r.best.trial_id == 0);
    CHECK(r.best.status == TrialStatus::Completed);
}

TEST_CASE("parallel workers conserve the budget") {
    const auto curves = testing::random_curves(24, {1, 2, 4, 8}, 4);
    SearchConfig cfg = scripted_config(24, 2);
    cfg.parallelism = 4;
    const fs::path log = temp_log("parallel.jsonl");
    const SearchResult r = run_search(cfg, testing::scripted_runner(curves), log, false);
    CHECK(r.trials.size() == 24);
    const auto contents = read_trial_log(log);
    CHECK(contents.finished.size() == 24);
    // Every reported checkpoint is in the log exactly once per trial run.
    std::size_t checkpoint_lines = 0;
    for (const auto& l : read_lines(log)) checkpoint_lines += l.find("\"event\":\"checkpoint\"") != std::string::npos;
    std::size_t reported = 0;
    for (const auto& t : r.trials) reported += t.checkpoints.size();
    CHECK(checkpoint_lines == reported);
}

TEST_CASE("all failed trials is a no-result error") {
    TrialRunner boom = [](int, const GraphSpec&, const PruneHook&) -> TrialRecord {
        throw std::runtime_error("exploded");
    };
    const fs::path log = temp_log("failed.jsonl");
    try {
        run_search(scripted_config(3, 1), boom, log, false);
        FAIL("expected no result");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NoResult);
    }
    const auto contents = read_trial_log(log);
    REQUIRE(contents.finished.size() == 3);
    CHECK(contents.finished[0].status == TrialStatus::Failed);
    CHECK(contents.finished[0].failure.find("exploded") != std::string::npos);
}

TEST_CASE("crash and resume") {
    const auto curves = testing::random_curves(30, {1, 2, 4, 8}, 5);
    const SearchConfig cfg = scripted_config(30, 2);
    const fs::path full_log = temp_log("full.jsonl");
    const SearchResult full = run_search(cfg, testing::scripted_runner(curves), full_log, false);

    // Keep 12 terminal events plus the next trial's first checkpoint, then a
    // torn half line, as if the process died mid-write.
    const auto lines = read_lines(full_log);
    const fs::path crash = temp_log("crash.jsonl");
    {
        std::ofstream out(crash);
        int terminals = 0;
        std::size_t i = 0;
        for (; i < lines.size() && terminals < 12; ++i) {
            out << lines[i] << "\n";
            terminals += lines[i].find("\"event\":\"checkpoint\"") == std::string::npos;
        }
        out << lines[i] << "\n";
        out << lines[i + 1].substr(0, lines[i + 1].size() / 2);
    }
    const LogContents partial = read_trial_log(crash);
    CHECK(partial.finished.size() == 12);
    CHECK(partial.unfinished.size() == 1);

    int calls = 0;
    const SearchResult resumed = run_search(cfg, testing::scripted_runner(curves, &calls), crash, true);
    CHECK(calls == 18);
    CHECK(resumed.best.trial_id == full.best.trial_id);
    REQUIRE(resumed.trials.size() == full.trials.size());
    for (std::size_t i = 0; i < full.trials.size(); ++i) {
        CHECK(resumed.trials[i].status == full.trials[i].status);
        CHECK(resumed.trials[i].checkpoints.size() == full.trials[i].checkpoints.size());
    }
    const auto after = read_trial_log(crash);
    CHECK(after.finished.size() == 30);
    CHECK(after.unfinished.empty());
    CHECK(report(after.finished).summary == report(full.trials).summary);

    // Resuming a finished search runs nothing.
    int again = 0;
    run_search(cfg, testing::scripted_runner(curves, &again), crash, true);
    CHECK(again == 0);
}

TEST_CASE("malformed log lines") {
    std::istringstream bad("{\"trial_id\":0,\"event\":\"checkpoint\"\nnot json\n");
    CHECK_THROWS_AS(parse_trial_log(bad), Error);
    std::istringstream torn_tail("{\"trial_id\":0,\"ev");
    CHECK(parse_trial_log(torn_tail).finished.empty());
    std::istringstream empty("");
    CHECK(parse_trial_log(empty).finished.empty());
}

TEST_CASE("trial record documents round trip") {
    const auto curves = testing::random_curves(1, {1, 2, 4}, 6);
    TrialRecord r = testing::scripted_runner(curves)(0, make_preset("dml-3", Arch::AtSmallResNet, 4),
                                                     [](const EvalResult&) { return PruneAction::Continue; });
    r.trial_id = 7;
    r.wall_time = 1.5;
    r.seed = 4;
    const TrialRecord back = parse_trial_record(trial_record_json(r));
    CHECK(back.trial_id == 7);
    CHECK(back.graph == r.graph);
    CHECK(back.status == r.status);
    REQUIRE(back.checkpoints.size() == 3);
    CHECK(back.checkpoints[2].ensemble_accuracy == r.checkpoints[2].ensemble_accuracy);
    CHECK(back.checkpoints[2].node_accuracy == r.checkpoints[2].node_accuracy);
    CHECK(back.parameter_count == r.parameter_count);
}

TEST_CASE("report") {
    const auto curves = testing::random_curves(3, {1, 2}, 7);
    const SearchResult r = run_search(scripted_config(3, 5), testing::scripted_runner(curves), temp_log("r.jsonl"),
                                      false);
    const SearchReport a = report(r.trials), b = report(r.trials);
    CHECK(a.summary == b.summary);
    CHECK(a.best_graph_dot == b.best_graph_dot);
    CHECK(dot::check(a.best_graph_dot).ok);
    CHECK(deserialize(a.best_graph_json) == r.best.graph);
    std::istringstream table(a.summary);
    std::string line;
    std::getline(table, line);  // header
    int rows = 0;
    while (std::getline(table, line) && !line.empty()) ++rows;
    CHECK(rows == 3);

    std::vector<TrialRecord> one_completed = r.trials;
    for (auto& t : one_completed) t.status = TrialStatus::Pruned;
    one_completed[1].status = TrialStatus::Completed;
    CHECK(report(one_completed).best_trial_id == 1);

    CHECK_THROWS_AS(report({}), Error);
}
