#include "ktg/graph.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ktg/error.hpp"

namespace ktg {

using nlohmann::json;

std::string_view to_string(LossDesign d) {
    switch (d) {
        case LossDesign::ProbCloser: return "ProbCloser";
        case LossDesign::ProbApart: return "ProbApart";
        case LossDesign::AttnCloser: return "AttnCloser";
        case LossDesign::AttnApart: return "AttnApart";
        case LossDesign::BothCloser: return "BothCloser";
        case LossDesign::BothApart: return "BothApart";
        case LossDesign::LabelHard: return "LabelHard";
    }
    return "?";
}

std::string_view to_string(GateKind g) {
    switch (g) {
        case GateKind::Through: return "Through";
        case GateKind::Cutoff: return "Cutoff";
        case GateKind::Linear: return "Linear";
        case GateKind::Correct: return "Correct";
    }
    return "?";
}

std::string_view to_string(Arch a) {
    switch (a) {
        case Arch::AtSmallResNet: return "AT-small-resnet";
        case Arch::AbnSmallResNet: return "ABN-small-resnet";
    }
    return "?";
}

std::optional<LossDesign> parse_loss_design(std::string_view s) {
    for (auto d : kNodeLossDesigns) {
        if (to_string(d) == s) return d;
    }
    if (s == to_string(LossDesign::LabelHard)) return LossDesign::LabelHard;
    return std::nullopt;
}

std::optional<GateKind> parse_gate(std::string_view s) {
    for (auto g : kGateKinds) {
        if (to_string(g) == s) return g;
    }
    return std::nullopt;
}

std::optional<Arch> parse_arch(std::string_view s) {
    for (auto a : {Arch::AtSmallResNet, Arch::AbnSmallResNet}) {
        if (to_string(a) == s) return a;
    }
    return std::nullopt;
}

std::string_view display_name(LossDesign d) {
    switch (d) {
        case LossDesign::ProbCloser: return "Prob(KL-div)";
        case LossDesign::ProbApart: return "Prob(cosine sim)";
        case LossDesign::AttnCloser: return "Attention(MSE)";
        case LossDesign::AttnApart: return "Attention(cosine sim)";
        case LossDesign::BothCloser: return "Prob(KL-div)+Attention(MSE)";
        case LossDesign::BothApart: return "Prob(cosine sim)+Attention(cosine sim)";
        case LossDesign::LabelHard: return "Label(CE)";
    }
    return "?";
}

bool uses_probabilities(LossDesign d) {
    return d == LossDesign::ProbCloser || d == LossDesign::ProbApart || d == LossDesign::BothCloser ||
           d == LossDesign::BothApart;
}

bool uses_attention(LossDesign d) {
    return d == LossDesign::AttnCloser || d == LossDesign::AttnApart || d == LossDesign::BothCloser ||
           d == LossDesign::BothApart;
}

// ---------------------------------------------------------------------------

const EdgeSpec* GraphSpec::find_edge(int source, int target) const {
    auto it = std::find_if(edges.begin(), edges.end(),
                           [&](const EdgeSpec& e) { return e.source == source && e.target == target; });
    return it == edges.end() ? nullptr : &*it;
}

GateKind GraphSpec::label_gate(int target) const {
    const EdgeSpec* e = find_edge(kLabelSource, target);
    if (e == nullptr) {
        throw Error(ErrorKind::InvalidGraph, "node " + std::to_string(target) + " has no label edge");
    }
    return e->gate;
}

std::vector<EdgeSpec> GraphSpec::incoming(int target) const {
    std::vector<EdgeSpec> out;
    for (const auto& e : edges) {
        if (e.target == target && !e.is_label_edge()) out.push_back(e);
    }
    std::sort(out.begin(), out.end(), [](const EdgeSpec& a, const EdgeSpec& b) { return a.source < b.source; });
    return out;
}

BigCount SpaceDescriptor::combination_count() const {
    BigCount total = 1;
    for (const auto& s : node_slots) total *= s.option_count();
    for (const auto& s : label_slots) total *= s.option_count();
    return total;
}

SpaceDescriptor hyperparameter_space(int num_nodes, Arch arch) {
    if (num_nodes < 2) {
        throw Error(ErrorKind::InvalidGraphSize,
                    "a knowledge-transfer graph needs at least 2 nodes, got " + std::to_string(num_nodes));
    }
    SpaceDescriptor space;
    space.num_nodes = num_nodes;
    space.arch = arch;
    const std::vector<LossDesign> designs(kNodeLossDesigns.begin(), kNodeLossDesigns.end());
    const std::vector<GateKind> gates(kGateKinds.begin(), kGateKinds.end());
    for (int s = 0; s < num_nodes; ++s) {
        for (int t = 0; t < num_nodes; ++t) {
            if (s != t) space.node_slots.push_back({s, t, designs, gates});
        }
    }
    for (int t = 0; t < num_nodes; ++t) {
        space.label_slots.push_back({kLabelSource, t, {LossDesign::LabelHard}, gates});
    }
    return space;
}

namespace {

EdgeSpec draw_slot(const SpaceSlot& slot, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick_design(0, slot.designs.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_gate(0, slot.gates.size() - 1);
    EdgeSpec e;
    e.source = slot.source;
    e.target = slot.target;
    e.loss = slot.designs[pick_design(rng)];
    e.gate = slot.gates[pick_gate(rng)];
    return e;
}

}  // namespace

GraphSpec sample_graph(const SpaceDescriptor& space, std::mt19937_64& rng, int max_retries) {
    if (space.num_nodes < 1 || space.node_slots.size() != static_cast<std::size_t>(space.num_nodes) *
                                                             static_cast<std::size_t>(space.num_nodes - 1)) {
        throw Error(ErrorKind::InvalidGraphSize, "malformed hyperparameter space");
    }
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        GraphSpec g;
        g.num_nodes = space.num_nodes;
        g.arch = space.arch;
        g.seed = rng();
        for (const auto& slot : space.node_slots) g.edges.push_back(draw_slot(slot, rng));
        for (const auto& slot : space.label_slots) g.edges.push_back(draw_slot(slot, rng));
        if (validate_graph(g).empty()) return g;
    }
    throw Error(ErrorKind::SamplingFailure,
                "no valid graph after " + std::to_string(max_retries + 1) + " draws");
}

std::vector<std::string> validate_graph(const GraphSpec& g) {
    std::vector<std::string> v;
    const int m = g.num_nodes;
    if (m < 1) {
        v.push_back("num_nodes must be positive, got " + std::to_string(m));
        return v;
    }
    auto in_range = [m](int id) { return id >= 0 && id < m; };

    std::map<std::pair<int, int>, int> seen;
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const auto& e = g.edges[i];
        const std::string where = "edges[" + std::to_string(i) + "]";
        if (e.source == kEnsembleNode || e.target == kEnsembleNode) {
            v.push_back(where + ": the ensemble node cannot take part in knowledge transfer");
            continue;
        }
        if (e.source == e.target) v.push_back(where + ": self-loop on node " + std::to_string(e.source));
        if (!in_range(e.target)) v.push_back(where + ": target " + std::to_string(e.target) + " out of range");
        if (e.is_label_edge()) {
            if (e.loss != LossDesign::LabelHard) {
                v.push_back(where + ": label edge must use LabelHard, got " + std::string(to_string(e.loss)));
            }
        } else {
            if (!in_range(e.source)) v.push_back(where + ": source " + std::to_string(e.source) + " out of range");
            if (e.loss == LossDesign::LabelHard) {
                v.push_back(where + ": LabelHard is only valid on label edges (" + std::to_string(e.source) +
                            "->" + std::to_string(e.target) + ")");
            }
        }
        if (++seen[{e.source, e.target}] == 2) {
            v.push_back(where + ": duplicate edge " + std::to_string(e.source) + "->" + std::to_string(e.target));
        }
    }

    for (int t = 0; t < m; ++t) {
        for (int s = 0; s < m; ++s) {
            if (s != t && !seen.contains({s, t})) {
                v.push_back("missing node edge " + std::to_string(s) + "->" + std::to_string(t));
            }
        }
        if (!seen.contains({kLabelSource, t})) v.push_back("missing label edge for node " + std::to_string(t));
    }

    for (int t = 0; t < m; ++t) {
        const EdgeSpec* label = g.find_edge(kLabelSource, t);
        if (label == nullptr || label->gate != GateKind::Cutoff) continue;
        bool any_open = false;
        for (const auto& e : g.edges) {
            if (e.target == t && !e.is_label_edge() && e.gate != GateKind::Cutoff) any_open = true;
        }
        if (!any_open) {
            v.push_back("untrained node " + std::to_string(t) + ": label gate and every incoming gate are Cutoff");
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// Graph documents

namespace {

std::vector<EdgeSpec> sorted_node_edges(const GraphSpec& g) {
    std::vector<EdgeSpec> out;
    for (const auto& e : g.edges) {
        if (!e.is_label_edge()) out.push_back(e);
    }
    std::sort(out.begin(), out.end(), [](const EdgeSpec& a, const EdgeSpec& b) {
        return std::pair(a.source, a.target) < std::pair(b.source, b.target);
    });
    return out;
}

std::string location_of(std::string_view text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

const json& require(const json& obj, const char* key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) throw Error(ErrorKind::Schema, path + key + ": missing field");
    return *it;
}

std::int64_t require_int(const json& obj, const char* key, const std::string& path) {
    const json& v = require(obj, key, path);
    if (!v.is_number_integer()) throw Error(ErrorKind::Schema, path + key + ": expected an integer");
    return v.get<std::int64_t>();
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
    const json& v = require(obj, key, path);
    if (!v.is_string()) throw Error(ErrorKind::Schema, path + key + ": expected a string");
    return v.get<std::string>();
}

GateKind gate_from(const json& v, const std::string& field) {
    if (!v.is_string()) throw Error(ErrorKind::Schema, field + ": expected a gate name");
    auto g = parse_gate(v.get<std::string>());
    if (!g) throw Error(ErrorKind::Schema, field + ": unknown gate '" + v.get<std::string>() + "'");
    return *g;
}

}  // namespace

std::string serialize(const GraphSpec& g) {
    json doc;
    doc["version"] = kGraphSchemaVersion;
    doc["num_nodes"] = g.num_nodes;
    doc["arch"] = std::string(to_string(g.arch));
    doc["seed"] = g.seed;
    json label_gates = json::array();
    for (int t = 0; t < g.num_nodes; ++t) label_gates.push_back(std::string(to_string(g.label_gate(t))));
    doc["label_gates"] = std::move(label_gates);
    json edges = json::array();
    for (const auto& e : sorted_node_edges(g)) {
        edges.push_back({{"src", e.source},
                         {"dst", e.target},
                         {"loss", std::string(to_string(e.loss))},
                         {"gate", std::string(to_string(e.gate))}});
    }
    doc["edges"] = std::move(edges);
    return doc.dump(2) + "\n";
}

GraphSpec deserialize(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Parse, "malformed graph document at " + location_of(text, e.byte > 0 ? e.byte - 1 : 0) +
                                          ": " + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorKind::Schema, "graph document must be an object");

    const auto version = require_int(doc, "version", "");
    if (version != kGraphSchemaVersion) {
        throw Error(ErrorKind::Schema, "version: unsupported schema version " + std::to_string(version));
    }
    GraphSpec g;
    g.num_nodes = static_cast<int>(require_int(doc, "num_nodes", ""));
    const auto arch_name = require_string(doc, "arch", "");
    auto arch = parse_arch(arch_name);
    if (!arch) throw Error(ErrorKind::Schema, "arch: unknown architecture '" + arch_name + "'");
    g.arch = *arch;
    const json& seed = require(doc, "seed", "");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
        throw Error(ErrorKind::Schema, "seed: expected a non-negative integer");
    }
    g.seed = seed.get<std::uint64_t>();

    const json& label_gates = require(doc, "label_gates", "");
    if (!label_gates.is_array()) throw Error(ErrorKind::Schema, "label_gates: expected a list");
    for (std::size_t t = 0; t < label_gates.size(); ++t) {
        g.edges.push_back({kLabelSource, static_cast<int>(t), LossDesign::LabelHard,
                           gate_from(label_gates[t], "label_gates[" + std::to_string(t) + "]")});
    }
    const json& edges = require(doc, "edges", "");
    if (!edges.is_array()) throw Error(ErrorKind::Schema, "edges: expected a list");
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const std::string path = "edges[" + std::to_string(i) + "].";
        const json& e = edges[i];
        if (!e.is_object()) throw Error(ErrorKind::Schema, path.substr(0, path.size() - 1) + ": expected an object");
        EdgeSpec edge;
        edge.source = static_cast<int>(require_int(e, "src", path));
        edge.target = static_cast<int>(require_int(e, "dst", path));
        const auto loss_name = require_string(e, "loss", path);
        auto loss = parse_loss_design(loss_name);
        if (!loss) throw Error(ErrorKind::Schema, path + "loss: unknown loss design '" + loss_name + "'");
        edge.loss = *loss;
        edge.gate = gate_from(require(e, "gate", path), path + "gate");
        g.edges.push_back(edge);
    }
    // Canonical order: node edges by (src, dst), then label edges.
    std::stable_sort(g.edges.begin(), g.edges.end(), [](const EdgeSpec& a, const EdgeSpec& b) {
        if (a.is_label_edge() != b.is_label_edge()) return !a.is_label_edge();
        return std::pair(a.source, a.target) < std::pair(b.source, b.target);
    });
    return g;
}

std::string graph_digest(const GraphSpec& g) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : serialize(g)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string to_dot(const GraphSpec& g) {
    std::ostringstream out;
    out << "digraph ktg {\n";
    out << "  rankdir=LR;\n";
    out << "  node [fontname=\"Helvetica\"];\n";
    out << "  label_src [label=\"Label\", shape=box];\n";
    for (int m = 0; m < g.num_nodes; ++m) {
        out << "  n" << m << " [label=\"" << (m + 1) << ": " << to_string(g.arch) << "\", shape=ellipse];\n";
    }
    out << "  ensemble [label=\"Ensemble\", shape=ellipse, style=filled, fillcolor=\"#e06666\"];\n";
    for (int t = 0; t < g.num_nodes; ++t) {
        const GateKind gate = g.label_gate(t);
        if (gate == GateKind::Cutoff) continue;
        out << "  label_src -> n" << t << " [label=\"" << to_string(gate) << "\"];\n";
    }
    for (const auto& e : sorted_node_edges(g)) {
        if (e.gate == GateKind::Cutoff) continue;
        out << "  n" << e.source << " -> n" << e.target << " [label=\"" << display_name(e.loss) << "/"
            << to_string(e.gate) << "\"];\n";
    }
    for (int m = 0; m < g.num_nodes; ++m) {
        out << "  n" << m << " -> ensemble [style=dashed, arrowhead=none];\n";
    }
    out << "}\n";
    return out.str();
}

}  // namespace ktg
