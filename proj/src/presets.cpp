#include "ktg/presets.hpp"

#include <array>
#include <charconv>

#include "ktg/error.hpp"

namespace ktg {

namespace {

struct Family {
    const char* name;
    LossDesign design;
    GateKind gate;
    const char* description;
};

constexpr std::array<Family, 8> kFamilies{{
    {"independent", LossDesign::ProbCloser, GateKind::Cutoff, "labels only, no transfer between nodes"},
    {"dml", LossDesign::ProbCloser, GateKind::Through, "mutual learning: KL toward every other node"},
    {"closeness-only", LossDesign::BothCloser, GateKind::Through,
     "probabilities and attention pulled toward every other node"},
    {"separation-only", LossDesign::BothApart, GateKind::Through,
     "probabilities and attention pushed away from every other node"},
    {"prob-closer", LossDesign::ProbCloser, GateKind::Through, "probabilities pulled together (KL)"},
    {"prob-apart", LossDesign::ProbApart, GateKind::Through, "probabilities pushed apart (cosine)"},
    {"attn-closer", LossDesign::AttnCloser, GateKind::Through, "attention maps pulled together (MSE)"},
    {"attn-apart", LossDesign::AttnApart, GateKind::Through, "attention maps pushed apart (cosine)"},
}};

}  // namespace

GraphSpec uniform_graph(int num_nodes, Arch arch, std::uint64_t seed, LossDesign design, GateKind node_gate,
                        GateKind label_gate) {
    if (num_nodes < 2) throw Error(ErrorKind::InvalidGraphSize, "a graph needs at least 2 nodes");
    GraphSpec g;
    g.num_nodes = num_nodes;
    g.arch = arch;
    g.seed = seed;
    for (int s = 0; s < num_nodes; ++s) {
        for (int t = 0; t < num_nodes; ++t) {
            if (s != t) g.edges.push_back({s, t, design, node_gate});
        }
    }
    for (int t = 0; t < num_nodes; ++t) g.edges.push_back({kLabelSource, t, LossDesign::LabelHard, label_gate});
    return g;
}

std::vector<PresetInfo> list_presets() {
    std::vector<PresetInfo> out;
    for (const auto& f : kFamilies) {
        for (int m = 2; m <= 5; ++m) out.push_back({std::string(f.name) + "-" + std::to_string(m), f.description});
    }
    return out;
}

GraphSpec make_preset(std::string_view name, Arch arch, std::uint64_t seed) {
    const auto dash = name.rfind('-');
    if (dash != std::string_view::npos) {
        const auto family = name.substr(0, dash);
        const auto count = name.substr(dash + 1);
        int m = 0;
        const auto [ptr, ec] = std::from_chars(count.data(), count.data() + count.size(), m);
        if (ec == std::errc() && ptr == count.data() + count.size()) {
            for (const auto& f : kFamilies) {
                if (family == f.name) return uniform_graph(m, arch, seed, f.design, f.gate);
            }
        }
    }
    throw Error(ErrorKind::Config, "unknown preset '" + std::string(name) + "' (see `presets list`)");
}

}  // namespace ktg
