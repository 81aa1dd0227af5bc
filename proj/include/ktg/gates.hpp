#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ktg/graph.hpp"

namespace ktg {

/// Training-time state a gate may depend on. `iteration` counts optimizer
/// steps (mini-batches) already taken; `total_iterations` is steps-per-epoch
/// times the number of epochs.
struct GateContext {
    std::int64_t iteration = 0;
    std::int64_t total_iterations = 1;
    /// Per sample: did the source node's argmax match the label. Ignored for
    /// label-source edges, where Correct degenerates to Through.
    std::vector<bool> source_correct;
    bool label_source = false;
};

/// Per-sample multiplier a gate applies; apply_gate(a) == weights(a) * a.
std::vector<double> gate_weights(GateKind kind, std::size_t batch, const GateContext& ctx);

std::vector<double> apply_gate(GateKind kind, std::span<const double> losses, const GateContext& ctx);

}  // namespace ktg
