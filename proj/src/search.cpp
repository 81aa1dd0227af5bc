#include "ktg/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "ktg/error.hpp"

namespace ktg {

using nlohmann::json;

PrunerState::PrunerState(int min_reports_before_pruning) : min_reports_(min_reports_before_pruning) {
    if (min_reports_ < 0) throw Error(ErrorKind::Config, "min_reports_before_pruning must be >= 0");
}

std::size_t PrunerState::count(int epoch) const {
    const auto it = slots_.find(epoch);
    return it == slots_.end() ? 0 : it->second.count;
}

double PrunerState::mean(int epoch) const {
    const auto it = slots_.find(epoch);
    if (it == slots_.end() || it->second.count == 0) return 0.0;
    return it->second.sum / static_cast<double>(it->second.count);
}

void PrunerState::fold(int epoch, double acc) {
    auto& s = slots_[epoch];
    s.sum += acc;
    ++s.count;
}

PruneAction prune_decision(PrunerState& state, int epoch, double acc) {
    if (!(acc >= 0.0 && acc <= 1.0)) throw Error(ErrorKind::Contract, "accuracy outside [0, 1]");
    const bool stop = state.count(epoch) >= static_cast<std::size_t>(state.min_reports()) && state.count(epoch) > 0 &&
                      acc < state.mean(epoch);
    state.fold(epoch, acc);
    return stop ? PruneAction::Stop : PruneAction::Continue;
}

void SearchConfig::validate() const {
    if (num_nodes < 2) throw Error(ErrorKind::InvalidGraphSize, "a graph needs at least 2 nodes");
    if (budget < 1) throw Error(ErrorKind::Config, "budget must be >= 1");
    if (min_reports < 0) throw Error(ErrorKind::Config, "min_reports must be >= 0");
    if (parallelism < 1) throw Error(ErrorKind::Config, "parallelism must be >= 1");
}

GraphSpec trial_graph(const SpaceDescriptor& space, std::uint64_t search_seed, int trial_id) {
    std::mt19937_64 rng(node_seed(search_seed ^ 0x5ea2c4ULL, trial_id));
    return sample_graph(space, rng);
}

TrialRunner make_training_runner(const TrainData& data, const TrainConfig& train, const BackboneConfig& backbone,
                                 std::function<void(const std::string&)> log) {
    return [&data, train, backbone, log](int trial_id, const GraphSpec& g, const PruneHook& hook) {
        TrainOptions opts;
        opts.prune_hook = hook;
        if (log) {
            opts.log = [log, trial_id](const std::string& msg) { log("trial " + std::to_string(trial_id) + ": " + msg); };
        }
        TrialRecord r = train_graph(g, data, train, backbone, opts);
        r.trial_id = trial_id;
        return r;
    };
}

// ---------------------------------------------------------------------------
// Trial log

namespace {

json eval_json(const EvalResult& e) {
    return json{{"epoch", e.epoch},
                {"ens_acc", e.ensemble_accuracy},
                {"node_accs", e.node_accuracy},
                {"node_entropy", e.node_entropy}};
}

EvalResult eval_from_json(const json& j) {
    EvalResult e;
    e.epoch = j.at("epoch").get<int>();
    e.ensemble_accuracy = j.at("ens_acc").get<double>();
    e.node_accuracy = j.at("node_accs").get<std::vector<double>>();
    if (j.contains("node_entropy")) e.node_entropy = j.at("node_entropy").get<std::vector<double>>();
    return e;
}

std::optional<TrialStatus> parse_status(const std::string& s) {
    if (s == "done") return TrialStatus::Completed;
    if (s == "pruned") return TrialStatus::Pruned;
    if (s == "failed") return TrialStatus::Failed;
    return std::nullopt;
}

std::string event_name(TrialStatus s) { return s == TrialStatus::Completed ? "done" : std::string(to_string(s)); }

}  // namespace

TrialLog::TrialLog(std::filesystem::path path, bool truncate) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (!truncate && std::filesystem::exists(path_)) {
        // Drop a torn final record so the next append starts on a fresh line.
        std::string text;
        {
            std::ifstream in(path_, std::ios::binary);
            text.assign(std::istreambuf_iterator<char>(in), {});
        }
        if (!text.empty() && text.back() != '\n') {
            const auto cut = text.find_last_of('\n');
            std::filesystem::resize_file(path_, cut == std::string::npos ? 0 : cut + 1);
        }
    }
    std::ofstream out(path_, truncate ? std::ios::trunc : std::ios::app);
    if (!out) throw Error(ErrorKind::Io, "cannot open trial log " + path_.string());
}

void TrialLog::append(const std::string& line) {
    std::ofstream out(path_, std::ios::app);
    out << line << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::Io, "cannot append to trial log " + path_.string());
}

void TrialLog::checkpoint(int trial_id, const GraphSpec& g, const EvalResult& eval) {
    json j = eval_json(eval);
    j["trial_id"] = trial_id;
    j["event"] = "checkpoint";
    j["graph_digest"] = graph_digest(g);
    append(j.dump());
}

void TrialLog::terminal(const TrialRecord& r) {
    json j;
    j["trial_id"] = r.trial_id;
    j["event"] = event_name(r.status);
    j["epoch"] = r.checkpoints.empty() ? 0 : r.checkpoints.back().epoch;
    j["ens_acc"] = r.final_ensemble_accuracy();
    j["node_accs"] = r.checkpoints.empty() ? std::vector<double>{} : r.checkpoints.back().node_accuracy;
    j["graph_digest"] = graph_digest(r.graph);
    j["graph"] = json::parse(serialize(r.graph));
    j["seed"] = r.seed;
    j["wall_time"] = r.wall_time;
    j["param_count"] = r.parameter_count;
    if (!r.failure.empty()) j["failure"] = r.failure;
    append(j.dump());
}

std::string trial_record_json(const TrialRecord& r) {
    json j;
    j["trial_id"] = r.trial_id;
    j["status"] = event_name(r.status);
    j["graph"] = json::parse(serialize(r.graph));
    j["graph_digest"] = graph_digest(r.graph);
    j["seed"] = r.seed;
    j["wall_time"] = r.wall_time;
    j["param_count"] = r.parameter_count;
    j["checkpoints"] = json::array();
    for (const auto& c : r.checkpoints) j["checkpoints"].push_back(eval_json(c));
    if (!r.failure.empty()) j["failure"] = r.failure;
    return j.dump(2);
}

TrialRecord parse_trial_record(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Parse, e.what());
    }
    try {
        TrialRecord r;
        r.trial_id = j.at("trial_id").get<int>();
        const auto status = parse_status(j.at("status").get<std::string>());
        if (!status) throw Error(ErrorKind::Schema, "status: unknown value");
        r.status = *status;
        r.graph = deserialize(j.at("graph").dump());
        r.seed = j.value("seed", std::uint64_t{0});
        r.wall_time = j.value("wall_time", 0.0);
        r.parameter_count = j.value("param_count", std::size_t{0});
        r.failure = j.value("failure", std::string{});
        for (const auto& c : j.at("checkpoints")) r.checkpoints.push_back(eval_from_json(c));
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Schema, e.what());
    }
}

LogContents parse_trial_log(std::istream& in) {
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);

    std::map<int, std::vector<EvalResult>> pending;
    std::set<int> finished_ids;
    LogContents out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::parse_error& e) {
            if (i + 1 == lines.size()) break;  // torn final write
            throw Error(ErrorKind::Parse, "trial log line " + std::to_string(i + 1) + ": " + e.what());
        }
        try {
            const int id = j.at("trial_id").get<int>();
            const auto event = j.at("event").get<std::string>();
            if (event == "checkpoint") {
                auto& cps = pending[id];
                EvalResult e = eval_from_json(j);
                if (!cps.empty() && e.epoch <= cps.back().epoch) cps.clear();  // trial restarted
                cps.push_back(std::move(e));
                continue;
            }
            const auto status = parse_status(event);
            if (!status) {
                throw Error(ErrorKind::Schema, "trial log line " + std::to_string(i + 1) + ": unknown event '" + event + "'");
            }
            TrialRecord r;
            r.trial_id = id;
            r.status = *status;
            r.graph = deserialize(j.at("graph").dump());
            r.seed = j.value("seed", std::uint64_t{0});
            r.wall_time = j.value("wall_time", 0.0);
            r.parameter_count = j.value("param_count", std::size_t{0});
            r.failure = j.value("failure", std::string{});
            r.checkpoints = std::move(pending[id]);
            pending.erase(id);
            if (finished_ids.insert(id).second) {
                out.finished.push_back(std::move(r));
            } else {
                throw Error(ErrorKind::Schema, "trial " + std::to_string(id) + " finished twice");
            }
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Schema, "trial log line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    for (const auto& [id, cps] : pending) {
        if (!cps.empty()) out.unfinished.push_back(id);
    }
    return out;
}

LogContents read_trial_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot read trial log " + path.string());
    return parse_trial_log(in);
}

PrunerState replay_pruner(const std::vector<TrialRecord>& finished, int min_reports) {
    PrunerState state(min_reports);
    for (const auto& r : finished) {
        for (const auto& c : r.checkpoints) state.fold(c.epoch, c.ensemble_accuracy);
    }
    return state;
}

const TrialRecord& best_trial(const std::vector<TrialRecord>& trials) {
    const TrialRecord* best = nullptr;
    for (const auto& r : trials) {
        if (r.status != TrialStatus::Completed) continue;
        if (best == nullptr || r.final_ensemble_accuracy() > best->final_ensemble_accuracy() ||
            (r.final_ensemble_accuracy() == best->final_ensemble_accuracy() && r.trial_id < best->trial_id)) {
            best = &r;
        }
    }
    if (best == nullptr) throw Error(ErrorKind::NoResult, "no trial completed");
    return *best;
}

SearchResult run_search(const SearchConfig& cfg, const TrialRunner& runner, const std::filesystem::path& log_path,
                        bool resume, std::function<void(const std::string&)> log) {
    cfg.validate();
    const SpaceDescriptor space = hyperparameter_space(cfg.num_nodes, cfg.arch);

    std::vector<TrialRecord> finished;
    if (resume && std::filesystem::exists(log_path)) finished = read_trial_log(log_path).finished;
    PrunerState state = replay_pruner(finished, cfg.min_reports);
    TrialLog trial_log(log_path, !resume);

    std::set<int> done;
    for (const auto& r : finished) done.insert(r.trial_id);
    std::vector<int> todo;
    for (int id = 0; id < cfg.budget; ++id) {
        if (!done.count(id)) todo.push_back(id);
    }
    if (log && !finished.empty()) {
        log("resuming: " + std::to_string(finished.size()) + " finished trials, " + std::to_string(todo.size()) +
            " to run");
    }

    std::mutex mu;  // guards state, trial_log and finished
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < todo.size(); k = next++) {
            const int id = todo[k];
            const GraphSpec g = trial_graph(space, cfg.seed, id);
            PruneHook hook = [&, id, g](const EvalResult& e) {
                std::lock_guard lock(mu);
                trial_log.checkpoint(id, g, e);
                if (!cfg.pruning) {
                    state.fold(e.epoch, e.ensemble_accuracy);
                    return PruneAction::Continue;
                }
                return prune_decision(state, e.epoch, e.ensemble_accuracy);
            };
            TrialRecord r;
            try {
                r = runner(id, g, hook);
            } catch (const std::exception& e) {
                r = TrialRecord{};
                r.status = TrialStatus::Failed;
                r.failure = e.what();
            }
            r.trial_id = id;
            r.graph = g;
            r.seed = g.seed;
            std::lock_guard lock(mu);
            trial_log.terminal(r);
            if (log) {
                std::ostringstream msg;
                msg << "trial " << id << " " << to_string(r.status) << " ens acc " << r.final_ensemble_accuracy();
                if (!r.failure.empty()) msg << " (" << r.failure << ")";
                log(msg.str());
            }
            finished.push_back(std::move(r));
        }
    };
    const int threads = std::min<int>(cfg.parallelism, static_cast<int>(todo.size()));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::sort(finished.begin(), finished.end(),
              [](const TrialRecord& a, const TrialRecord& b) { return a.trial_id < b.trial_id; });
    SearchResult result;
    result.best = best_trial(finished);
    result.trials = std::move(finished);
    return result;
}

// ---------------------------------------------------------------------------
// Report

SearchReport report(const std::vector<TrialRecord>& trials) {
    if (trials.empty()) throw Error(ErrorKind::NoResult, "empty trial log");
    std::vector<const TrialRecord*> sorted;
    for (const auto& r : trials) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->trial_id < b->trial_id; });

    std::ostringstream s;
    s << std::fixed << std::setprecision(4);
    s << "trial  status     nodes  last_epoch  ens_acc  mean_node_acc  digest\n";
    std::map<std::string, int> status_counts;
    std::map<int, int> pruned_at;
    struct NodeRow {
        int trials = 0, completed = 0;
        double best = 0.0, sum = 0.0;
    };
    std::map<int, NodeRow> by_nodes;
    for (const auto* r : sorted) {
        const int last = r->checkpoints.empty() ? 0 : r->checkpoints.back().epoch;
        const double mean_node = r->checkpoints.empty() ? 0.0 : r->checkpoints.back().mean_node_accuracy();
        s << std::setw(5) << r->trial_id << "  " << std::left << std::setw(9) << to_string(r->status) << std::right
          << "  " << std::setw(5) << r->graph.num_nodes << "  " << std::setw(10) << last << "  " << std::setw(7)
          << r->final_ensemble_accuracy() << "  " << std::setw(13) << mean_node << "  " << graph_digest(r->graph)
          << "\n";
        ++status_counts[std::string(to_string(r->status))];
        if (r->status == TrialStatus::Pruned) ++pruned_at[last];
        auto& row = by_nodes[r->graph.num_nodes];
        ++row.trials;
        if (r->status == TrialStatus::Completed) {
            ++row.completed;
            row.sum += r->final_ensemble_accuracy();
            row.best = std::max(row.best, r->final_ensemble_accuracy());
        }
    }
    s << "\nstatus counts:";
    for (const auto& [k, v] : status_counts) s << " " << k << "=" << v;
    s << "\npruned at epoch:";
    if (pruned_at.empty()) s << " none";
    for (const auto& [k, v] : pruned_at) s << " " << k << ":" << v;
    s << "\n\nnodes  trials  completed  best_ens_acc  mean_ens_acc\n";
    for (const auto& [m, row] : by_nodes) {
        s << std::setw(5) << m << "  " << std::setw(6) << row.trials << "  " << std::setw(9) << row.completed << "  "
          << std::setw(12) << row.best << "  " << std::setw(12)
          << (row.completed ? row.sum / row.completed : 0.0) << "\n";
    }

    SearchReport out;
    try {
        const TrialRecord& best = best_trial(trials);
        out.best_trial_id = best.trial_id;
        out.best_graph_json = serialize(best.graph);
        out.best_graph_dot = to_dot(best.graph);
        s << "\nbest trial: " << best.trial_id << " ens acc " << best.final_ensemble_accuracy() << " digest "
          << graph_digest(best.graph) << "\n";
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoResult) throw;
        s << "\nbest trial: none completed\n";
    }
    out.summary = s.str();
    return out;
}

}  // namespace ktg
