#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ktg/graph.hpp"

namespace ktg {

/// Every node edge gets (design, node_gate); every label edge gets label_gate.
GraphSpec uniform_graph(int num_nodes, Arch arch, std::uint64_t seed, LossDesign design, GateKind node_gate,
                        GateKind label_gate = GateKind::Through);

struct PresetInfo {
    std::string name;
    std::string description;
};

/// Families: independent, dml, closeness-only, separation-only, prob-closer,
/// prob-apart, attn-closer, attn-apart; listed for 2 to 5 nodes.
std::vector<PresetInfo> list_presets();

/// Builds "<family>-<M>". Unknown names are config errors.
GraphSpec make_preset(std::string_view name, Arch arch, std::uint64_t seed);

}  // namespace ktg
