#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ktg/graph.hpp"
#include "ktg/training.hpp"

namespace ktg {

inline constexpr int kDefaultMinReports = 5;

/// Running mean of reported ensemble accuracies per checkpoint epoch.
class PrunerState {
public:
    explicit PrunerState(int min_reports_before_pruning = kDefaultMinReports);

    int min_reports() const { return min_reports_; }
    std::size_t count(int epoch) const;
    double mean(int epoch) const;  // 0 when nothing was reported at `epoch`
    void fold(int epoch, double acc);

private:
    struct Slot {
        double sum = 0.0;
        std::size_t count = 0;
    };
    int min_reports_;
    std::map<int, Slot> slots_;
};

/// STOP iff at least `min_reports` earlier reports exist at `epoch` and `acc` is
/// strictly below their mean. The report is folded into the state either way.
PruneAction prune_decision(PrunerState& state, int epoch, double acc);

struct SearchConfig {
    int num_nodes = 3;
    Arch arch = Arch::AtSmallResNet;
    int budget = 16;
    int min_reports = kDefaultMinReports;
    bool pruning = true;
    int parallelism = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Graph of trial `trial_id`; a pure function of (space, search seed, id) so a
/// resumed search samples the same graphs.
GraphSpec trial_graph(const SpaceDescriptor& space, std::uint64_t search_seed, int trial_id);

/// Trains one sampled graph, consulting `hook` at every checkpoint.
using TrialRunner = std::function<TrialRecord(int trial_id, const GraphSpec& graph, const PruneHook& hook)>;

TrialRunner make_training_runner(const TrainData& data, const TrainConfig& train, const BackboneConfig& backbone,
                                 std::function<void(const std::string&)> log = {});

// ---------------------------------------------------------------------------
// Trial log: one JSON object per line. Checkpoint events precede the single
// terminal event (done | pruned | failed) of each trial.

class TrialLog {
public:
    /// Opens for appending; `truncate` discards any previous content.
    TrialLog(std::filesystem::path path, bool truncate);

    void checkpoint(int trial_id, const GraphSpec& g, const EvalResult& eval);
    void terminal(const TrialRecord& record);

    const std::filesystem::path& path() const { return path_; }

private:
    void append(const std::string& line);
    std::filesystem::path path_;
};

struct LogContents {
    std::vector<TrialRecord> finished;  // in order of their terminal events
    std::vector<int> unfinished;        // trial ids with checkpoints but no terminal event
};

/// Tolerates a truncated final line; any other malformed line is a parse error.
LogContents read_trial_log(const std::filesystem::path& path);
LogContents parse_trial_log(std::istream& in);

/// Pruner state implied by the finished trials of a log.
PrunerState replay_pruner(const std::vector<TrialRecord>& finished, int min_reports);

/// Standalone JSON document for one trial (used for `train` results).
std::string trial_record_json(const TrialRecord& r);
TrialRecord parse_trial_record(std::string_view text);

struct SearchResult {
    TrialRecord best;
    std::vector<TrialRecord> trials;  // every finished trial, by id
};

/// Highest final ensemble accuracy among completed trials; ties go to the
/// lowest trial id. Throws NoResult when nothing completed.
const TrialRecord& best_trial(const std::vector<TrialRecord>& trials);

SearchResult run_search(const SearchConfig& cfg, const TrialRunner& runner, const std::filesystem::path& log_path,
                        bool resume, std::function<void(const std::string&)> log = {});

struct SearchReport {
    std::string summary;  // trial table, prune statistics, accuracy by node count
    std::string best_graph_json;
    std::string best_graph_dot;
    int best_trial_id = -1;
};

/// Pure function of the log contents.
SearchReport report(const std::vector<TrialRecord>& trials);

}  // namespace ktg
