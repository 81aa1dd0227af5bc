// ktg: search, train and inspect knowledge-transfer graphs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ktg/config.hpp"
#include "ktg/error.hpp"
#include "ktg/graph.hpp"
#include "ktg/plot.hpp"
#include "ktg/presets.hpp"
#include "ktg/search.hpp"
#include "ktg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ktg;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kInvalidInput = 2, kNoResult = 3, kOutputExists = 4 };

struct OutputExists : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::string out;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<int> parallel;
    bool resume = false;
    bool quiet = false;
};

void add_config_flags(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "Override a config value, e.g. --set train.epochs=4");
    cmd->add_option("--seed", c.seed, "Seed for sampling, data order and initialization");
    cmd->add_flag("-q,--quiet", c.quiet, "Only print the final result");
}

RunConfig resolve_config(const Common& c) {
    std::vector<std::string> overrides = c.sets;
    if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
    if (c.parallel) overrides.push_back("parallel=" + std::to_string(*c.parallel));
    RunConfig cfg = load_run_config(c.config, overrides);
    cfg.resolve();
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Creates `dir`, refusing to reuse a non-empty one unless resuming.
void prepare_output(const fs::path& dir, bool resume) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !resume) {
        throw OutputExists("output directory " + dir.string() + " is not empty (pass --resume to continue)");
    }
    fs::create_directories(dir);
}

void snapshot(const fs::path& dir, const RunConfig& cfg) { write_file(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n"); }

std::function<void(const std::string&)> logger(bool quiet) {
    if (quiet) return {};
    return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

struct LoadedData {
    DatasetSplits splits;
    TrainData data;
};

std::unique_ptr<LoadedData> load_data(const RunConfig& cfg) {
    auto d = std::make_unique<LoadedData>();
    d->splits = load_dataset(cfg.data);
    d->data = cfg.protocol == Protocol::Explore ? exploration_data(d->splits.train, cfg.seed)
                                                : final_data(d->splits.train, d->splits.test);
    return d;
}

GraphSpec load_graph_arg(const std::string& graph_file, const std::string& preset, const RunConfig& cfg) {
    if (!graph_file.empty() && !preset.empty()) throw Error(ErrorKind::Config, "pass either --graph or --preset");
    GraphSpec g;
    if (!preset.empty()) {
        g = make_preset(preset, cfg.search.arch, cfg.seed);
    } else if (!graph_file.empty()) {
        g = deserialize(read_file(graph_file));
    } else {
        throw Error(ErrorKind::Config, "a graph is required (--graph FILE or --preset NAME)");
    }
    if (const auto v = validate_graph(g); !v.empty()) {
        std::string msg = "graph has " + std::to_string(v.size()) + " violation(s):";
        for (const auto& s : v) msg += "\n  - " + s;
        throw Error(ErrorKind::InvalidGraph, msg);
    }
    return g;
}

// ---------------------------------------------------------------------------

int cmd_search(const Common& c) {
    if (c.out.empty()) throw Error(ErrorKind::Config, "--out is required");
    const RunConfig cfg = resolve_config(c);
    const fs::path out = c.out;
    prepare_output(out, c.resume);
    snapshot(out, cfg);
    auto data = load_data(cfg);
    auto log = logger(c.quiet);
    const TrialRunner runner = make_training_runner(data->data, cfg.train, cfg.model, log);
    const SearchResult result = run_search(cfg.search, runner, out / "trials.jsonl", c.resume, log);

    const SearchReport rep = report(read_trial_log(out / "trials.jsonl").finished);
    write_file(out / "best_graph.json", rep.best_graph_json + "\n");
    write_file(out / "best_graph.dot", rep.best_graph_dot);
    write_file(out / "summary.txt", rep.summary);
    std::cout << rep.summary;
    std::cout << "best trial " << result.best.trial_id << " -> " << (out / "best_graph.json").string() << "\n";
    return kOk;
}

int cmd_train(const Common& c, const std::string& graph_file, const std::string& preset) {
    if (c.out.empty()) throw Error(ErrorKind::Config, "--out is required");
    RunConfig cfg = resolve_config(c);
    const GraphSpec g = load_graph_arg(graph_file, preset, cfg);
    cfg.search.arch = g.arch;
    cfg.model.arch = g.arch;
    const fs::path out = c.out;
    prepare_output(out, false);
    snapshot(out, cfg);
    write_file(out / "graph.json", serialize(g) + "\n");
    write_file(out / "graph.dot", to_dot(g));

    auto data = load_data(cfg);
    TrainOptions opts;
    opts.checkpoint_dir = out / "checkpoints";
    opts.log = logger(c.quiet);
    TrialRecord r = train_graph(g, data->data, cfg.train, cfg.model, opts);
    write_file(out / "result.json", trial_record_json(r) + "\n");
    if (r.status == TrialStatus::Failed) {
        std::cerr << "training failed: " << r.failure << "\n";
        return kNoResult;
    }
    const EvalResult& last = r.checkpoints.back();
    std::cout << "ensemble accuracy " << last.ensemble_accuracy << ", mean node accuracy "
              << last.mean_node_accuracy() << " (" << to_string(cfg.protocol) << " protocol, epoch " << last.epoch
              << ")\n";
    return kOk;
}

int cmd_eval(const Common& c, const std::string& run_dir) {
    const fs::path dir = run_dir;
    Common merged = c;
    if (merged.config.empty() && fs::exists(dir / "config.resolved.json")) merged.config = (dir / "config.resolved.json").string();
    const RunConfig cfg = resolve_config(merged);
    const GraphSpec g = deserialize(read_file(dir / "graph.json"));
    std::vector<Backbone> models;
    for (int m = 0; m < g.num_nodes; ++m) {
        models.push_back(Backbone::load(dir / "checkpoints" / ("node" + std::to_string(m) + ".ckpt")));
    }
    auto data = load_data(cfg);
    GraphTrainer trainer(g, std::move(models), cfg.train);
    const EvalResult e = trainer.evaluate(*data->data.val, data->data.val_indices, data->data.norm, cfg.train.epochs);
    json j{{"ens_acc", e.ensemble_accuracy},
           {"node_accs", e.node_accuracy},
           {"node_entropy", e.node_entropy},
           {"protocol", to_string(cfg.protocol)},
           {"samples", data->data.val_indices.size()}};
    if (!c.out.empty()) {
        fs::create_directories(c.out);
        snapshot(c.out, cfg);
        write_file(fs::path(c.out) / "eval.json", j.dump(2) + "\n");
    }
    std::cout << j.dump(2) << "\n";
    return kOk;
}

int cmd_export_dot(const std::string& input, const std::string& preset, const std::string& arch,
                   std::uint64_t seed, const std::string& out) {
    GraphSpec g;
    if (!preset.empty()) {
        const auto a = parse_arch(arch);
        if (!a) throw Error(ErrorKind::Config, "unknown architecture '" + arch + "'");
        g = make_preset(preset, *a, seed);
    } else if (!input.empty()) {
        g = deserialize(read_file(input));
    } else {
        throw Error(ErrorKind::Config, "pass a graph file or --preset");
    }
    const std::string dot = to_dot(g);
    if (out.empty()) {
        std::cout << dot;
    } else {
        write_file(out, dot);
    }
    return kOk;
}

std::vector<TrialRecord> collect_trials(const std::vector<std::string>& inputs) {
    std::vector<TrialRecord> trials;
    auto add_file = [&](const fs::path& p) {
        if (p.extension() == ".jsonl") {
            auto contents = read_trial_log(p);
            for (auto& r : contents.finished) trials.push_back(std::move(r));
        } else {
            trials.push_back(parse_trial_record(read_file(p)));
        }
    };
    for (const auto& in : inputs) {
        const fs::path p = in;
        if (!fs::exists(p)) throw Error(ErrorKind::Io, "missing input " + p.string());
        if (fs::is_directory(p)) {
            bool found = false;
            for (const char* name : {"trials.jsonl", "result.json"}) {
                if (fs::exists(p / name)) {
                    add_file(p / name);
                    found = true;
                }
            }
            if (!found) throw Error(ErrorKind::Io, p.string() + " holds neither trials.jsonl nor result.json");
        } else {
            add_file(p);
        }
    }
    return trials;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out) {
    const std::vector<TrialRecord> trials = collect_trials(inputs);
    if (trials.empty()) throw Error(ErrorKind::NoResult, "inputs contain no finished trials");
    const fs::path dir = out;
    fs::create_directories(dir);
    const auto by_nodes = accuracy_by_node_count(trials);
    const auto by_params = accuracy_by_parameters(trials);
    write_file(dir / "accuracy_vs_nodes.csv", points_csv(by_nodes, "nodes", "ensemble_accuracy"));
    write_file(dir / "accuracy_vs_nodes.svg",
               render_svg(by_nodes, {"Ensemble accuracy by loss design", "number of nodes", "ensemble accuracy", true}));
    write_file(dir / "accuracy_vs_params.csv", points_csv(by_params, "parameters", "ensemble_accuracy"));
    write_file(dir / "accuracy_vs_params.svg",
               render_svg(by_params, {"Ensemble accuracy by parameter count", "parameters", "ensemble accuracy", false}));
    std::cout << "wrote " << by_nodes.size() << " curve points and " << by_params.size() << " scatter points to "
              << dir.string() << "\n";
    return kOk;
}

int cmd_report(const std::string& log_file, const std::string& out) {
    const SearchReport rep = report(read_trial_log(log_file).finished);
    std::cout << rep.summary;
    if (!out.empty()) {
        fs::create_directories(out);
        write_file(fs::path(out) / "summary.txt", rep.summary);
        if (rep.best_trial_id >= 0) {
            write_file(fs::path(out) / "best_graph.json", rep.best_graph_json + "\n");
            write_file(fs::path(out) / "best_graph.dot", rep.best_graph_dot);
        }
    }
    return rep.best_trial_id >= 0 ? kOk : kNoResult;
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Parse:
        case ErrorKind::Schema:
        case ErrorKind::Config:
        case ErrorKind::InvalidGraph:
        case ErrorKind::InvalidGraphSize:
        case ErrorKind::CropSize:
        case ErrorKind::Split:
        case ErrorKind::Ingestion: return kInvalidInput;
        case ErrorKind::NoResult: return kNoResult;
        default: return kOther;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-transfer graph search and training"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "ktg 1.0");

    Common common;
    std::string graph_file, preset, run_dir, export_input, export_out, report_log, arch = "AT-small-resnet";
    std::uint64_t export_seed = 0;
    std::vector<std::string> plot_inputs;

    auto* search = app.add_subcommand("search", "Random search over graphs with pruning");
    add_config_flags(search, common);
    search->add_option("--out", common.out, "Output directory")->required();
    search->add_flag("--resume", common.resume, "Continue an interrupted search in --out");
    search->add_option("--parallel", common.parallel, "Concurrent trials")->check(CLI::PositiveNumber);

    auto* train = app.add_subcommand("train", "Train one fixed graph without pruning");
    add_config_flags(train, common);
    train->add_option("--out", common.out, "Output directory")->required();
    train->add_option("--graph", graph_file, "Graph document (JSON)")->check(CLI::ExistingFile);
    train->add_option("--preset", preset, "Preset graph name, see `presets list`");

    auto* eval = app.add_subcommand("eval", "Evaluate the checkpoints of a `train` output directory");
    add_config_flags(eval, common);
    eval->add_option("run", run_dir, "Directory written by `train`")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--out", common.out, "Directory for eval.json");

    auto* dot = app.add_subcommand("export-dot", "Write a graph as Graphviz DOT");
    dot->add_option("graph", export_input, "Graph document (JSON)");
    dot->add_option("--preset", preset, "Preset graph name instead of a file");
    dot->add_option("--arch", arch, "Architecture for --preset");
    dot->add_option("--seed", export_seed, "Seed for --preset");
    dot->add_option("-o,--out", export_out, "Output file (default: stdout)");

    auto* plot = app.add_subcommand("plot", "Accuracy plots (SVG + CSV) from trial logs or train results");
    plot->add_option("inputs", plot_inputs, "trials.jsonl, result.json or directories holding them")->required();
    plot->add_option("--out", common.out, "Output directory")->required();

    auto* rep = app.add_subcommand("report", "Summarize a trial log");
    rep->add_option("log", report_log, "trials.jsonl")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", common.out, "Directory for summary and best graph");

    auto* presets = app.add_subcommand("presets", "Built-in graphs");
    presets->require_subcommand(1);
    auto* plist = presets->add_subcommand("list", "List preset names");
    auto* pshow = presets->add_subcommand("show", "Print a preset graph document");
    pshow->add_option("name", preset, "Preset name")->required();
    pshow->add_option("--arch", arch, "Architecture");
    pshow->add_option("--seed", export_seed, "Graph seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInvalidInput;
    }

    try {
        if (*search) return cmd_search(common);
        if (*train) return cmd_train(common, graph_file, preset);
        if (*eval) return cmd_eval(common, run_dir);
        if (*dot) return cmd_export_dot(export_input, preset, arch, export_seed, export_out);
        if (*plot) return cmd_plot(plot_inputs, common.out);
        if (*rep) return cmd_report(report_log, common.out);
        if (*plist) {
            for (const auto& p : list_presets()) std::cout << p.name << "\t" << p.description << "\n";
            return kOk;
        }
        if (*pshow) {
            const auto a = parse_arch(arch);
            if (!a) throw Error(ErrorKind::Config, "unknown architecture '" + arch + "'");
            std::cout << serialize(make_preset(preset, *a, export_seed)) << "\n";
            return kOk;
        }
    } catch (const OutputExists& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOutputExists;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
    return kOther;
}
