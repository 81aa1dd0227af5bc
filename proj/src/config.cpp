#include "ktg/config.hpp"

#include <fstream>
#include <set>

#include "ktg/error.hpp"

namespace ktg {

using nlohmann::json;

namespace {

std::string_view rule_name(CheckpointRule r) { return r == CheckpointRule::PowersOfTwo ? "powers-of-two" : "even"; }

std::string_view ensemble_name(EnsembleMode m) { return m == EnsembleMode::Logits ? "logits" : "probabilities"; }

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw Error(ErrorKind::Config, section + ": expected an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw Error(ErrorKind::Config, "unknown key '" + section + (section.empty() ? "" : ".") + k + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorKind::Config, section + "." + key + ": wrong type (" + j.at(key).dump() + ")");
    }
}

}  // namespace

std::string_view to_string(Protocol p) { return p == Protocol::Explore ? "explore" : "final"; }

void RunConfig::resolve() {
    search.seed = seed;
    search.parallelism = parallel;
    train.seed = seed;
    model.num_classes = data.num_classes;
    model.image_size = data.image_size;
    model.arch = search.arch;
    search.validate();
    train.validate();
    if (data.num_classes < 2) throw Error(ErrorKind::Config, "data.num_classes must be >= 2");
    (void)model.effective_crop_sizes();  // throws on unusable crop sizes
}

RunConfig default_run_config() {
    RunConfig c;
    c.search.num_nodes = 3;
    c.search.budget = 16;
    c.train.epochs = 8;
    c.train.batch_size = 32;
    c.data.name = "synthetic";
    c.data.num_classes = 4;
    c.data.train_per_class = 64;
    c.data.test_per_class = 32;
    return c;
}

json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["parallel"] = c.parallel;
    j["protocol"] = to_string(c.protocol);
    j["search"] = {{"num_nodes", c.search.num_nodes},
                   {"arch", to_string(c.search.arch)},
                   {"budget", c.search.budget},
                   {"min_reports", c.search.min_reports},
                   {"pruning", c.search.pruning}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"lr_initial", c.train.lr_initial},
                  {"momentum", c.train.momentum},
                  {"weight_decay", c.train.weight_decay},
                  {"lr_decay_factor", c.train.lr_decay_factor},
                  {"lr_decay_milestones", c.train.lr_decay_milestones},
                  {"eval_checkpoints", c.train.eval_checkpoints},
                  {"checkpoint_rule", rule_name(c.train.checkpoint_rule)},
                  {"ensemble", ensemble_name(c.train.ensemble_mode)},
                  {"augment", c.train.augment},
                  {"eval_batch_size", c.train.eval_batch_size}};
    j["model"] = {{"widths", c.model.widths}, {"crop_sizes", c.model.crop_sizes}};
    j["data"] = {{"name", c.data.name},
                 {"num_classes", c.data.num_classes},
                 {"train_per_class", c.data.train_per_class},
                 {"test_per_class", c.data.test_per_class},
                 {"image_size", c.data.image_size},
                 {"seed", c.data.seed},
                 {"source", c.data.source.string()},
                 {"max_train_per_class", c.data.max_train_per_class},
                 {"max_test_per_class", c.data.max_test_per_class},
                 {"noise", c.data.noise},
                 {"distractors", c.data.distractors}};
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c = default_run_config();
    reject_unknown(j, "", {"seed", "parallel", "protocol", "search", "train", "model", "data"});
    read(j, "seed", c.seed, "");
    read(j, "parallel", c.parallel, "");
    if (j.contains("protocol")) {
        std::string p;
        read(j, "protocol", p, "");
        if (p == "explore") c.protocol = Protocol::Explore;
        else if (p == "final") c.protocol = Protocol::Final;
        else throw Error(ErrorKind::Config, "protocol: expected 'explore' or 'final', got '" + p + "'");
    }
    if (j.contains("search")) {
        const json& s = j["search"];
        reject_unknown(s, "search", {"num_nodes", "arch", "budget", "min_reports", "pruning"});
        read(s, "num_nodes", c.search.num_nodes, "search");
        read(s, "budget", c.search.budget, "search");
        read(s, "min_reports", c.search.min_reports, "search");
        read(s, "pruning", c.search.pruning, "search");
        if (s.contains("arch")) {
            std::string a;
            read(s, "arch", a, "search");
            const auto arch = parse_arch(a);
            if (!arch) throw Error(ErrorKind::Config, "search.arch: unknown architecture '" + a + "'");
            c.search.arch = *arch;
        }
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        reject_unknown(t, "train",
                       {"epochs", "batch_size", "lr_initial", "momentum", "weight_decay", "lr_decay_factor",
                        "lr_decay_milestones", "eval_checkpoints", "checkpoint_rule", "ensemble", "augment",
                        "eval_batch_size"});
        read(t, "epochs", c.train.epochs, "train");
        read(t, "batch_size", c.train.batch_size, "train");
        read(t, "lr_initial", c.train.lr_initial, "train");
        read(t, "momentum", c.train.momentum, "train");
        read(t, "weight_decay", c.train.weight_decay, "train");
        read(t, "lr_decay_factor", c.train.lr_decay_factor, "train");
        read(t, "lr_decay_milestones", c.train.lr_decay_milestones, "train");
        read(t, "eval_checkpoints", c.train.eval_checkpoints, "train");
        read(t, "augment", c.train.augment, "train");
        read(t, "eval_batch_size", c.train.eval_batch_size, "train");
        if (t.contains("checkpoint_rule")) {
            std::string r;
            read(t, "checkpoint_rule", r, "train");
            if (r == "powers-of-two") c.train.checkpoint_rule = CheckpointRule::PowersOfTwo;
            else if (r == "even") c.train.checkpoint_rule = CheckpointRule::EvenEpochs;
            else throw Error(ErrorKind::Config, "train.checkpoint_rule: expected 'powers-of-two' or 'even'");
        }
        if (t.contains("ensemble")) {
            std::string e;
            read(t, "ensemble", e, "train");
            if (e == "logits") c.train.ensemble_mode = EnsembleMode::Logits;
            else if (e == "probabilities") c.train.ensemble_mode = EnsembleMode::Probabilities;
            else throw Error(ErrorKind::Config, "train.ensemble: expected 'logits' or 'probabilities'");
        }
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        reject_unknown(m, "model", {"widths", "crop_sizes"});
        read(m, "widths", c.model.widths, "model");
        read(m, "crop_sizes", c.model.crop_sizes, "model");
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        reject_unknown(d, "data",
                       {"name", "num_classes", "train_per_class", "test_per_class", "image_size", "seed", "source",
                        "max_train_per_class", "max_test_per_class", "noise", "distractors"});
        read(d, "name", c.data.name, "data");
        read(d, "num_classes", c.data.num_classes, "data");
        read(d, "train_per_class", c.data.train_per_class, "data");
        read(d, "test_per_class", c.data.test_per_class, "data");
        read(d, "image_size", c.data.image_size, "data");
        read(d, "seed", c.data.seed, "data");
        read(d, "max_train_per_class", c.data.max_train_per_class, "data");
        read(d, "max_test_per_class", c.data.max_test_per_class, "data");
        read(d, "noise", c.data.noise, "data");
        read(d, "distractors", c.data.distractors, "data");
        std::string source;
        read(d, "source", source, "data");
        c.data.source = source;
    }
    return c;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw Error(ErrorKind::Config, "override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw Error(ErrorKind::Config, "override key '" + key + "' has an empty component");
        if (!node->is_object()) *node = json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json doc = to_json(default_run_config());
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw Error(ErrorKind::Io, "cannot read config " + file.string());
        json user;
        try {
            user = json::parse(in);
        } catch (const json::parse_error& e) {
            throw Error(ErrorKind::Parse, file.string() + ": " + e.what());
        }
        if (!user.is_object()) throw Error(ErrorKind::Config, file.string() + ": top level must be an object");
        doc.merge_patch(user);
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return run_config_from_json(doc);
}

}  // namespace ktg
