#pragma once

// Knowledge-transfer graph data model: nodes are networks, directed edges carry
// a loss design and a gate, and an implicit ensemble node averages all node
// logits.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace ktg {

enum class LossDesign {
    ProbCloser,  // KL divergence on probabilities
    ProbApart,   // cosine similarity on probabilities
    AttnCloser,  // squared distance of normalized attention crops
    AttnApart,   // cosine similarity of attention crops
    BothCloser,
    BothApart,
    LabelHard,   // cross-entropy; label edges only
};

enum class GateKind { Through, Cutoff, Linear, Correct };

enum class Arch { AtSmallResNet, AbnSmallResNet };

inline constexpr std::array<LossDesign, 6> kNodeLossDesigns{
    LossDesign::ProbCloser, LossDesign::ProbApart,  LossDesign::AttnCloser,
    LossDesign::AttnApart,  LossDesign::BothCloser, LossDesign::BothApart,
};

inline constexpr std::array<GateKind, 4> kGateKinds{
    GateKind::Through, GateKind::Cutoff, GateKind::Linear, GateKind::Correct,
};

std::string_view to_string(LossDesign d);
std::string_view to_string(GateKind g);
std::string_view to_string(Arch a);
std::optional<LossDesign> parse_loss_design(std::string_view s);
std::optional<GateKind> parse_gate(std::string_view s);
std::optional<Arch> parse_arch(std::string_view s);

/// Human-facing label used in DOT output and plots, e.g. "Prob(KL-div)".
std::string_view display_name(LossDesign d);

bool uses_probabilities(LossDesign d);
bool uses_attention(LossDesign d);

/// Node identifiers are 0-based indices; these sentinels name the two
/// non-network vertices.
inline constexpr int kLabelSource = -1;
inline constexpr int kEnsembleNode = -2;

struct EdgeSpec {
    int source = 0;
    int target = 0;
    LossDesign loss = LossDesign::ProbCloser;
    GateKind gate = GateKind::Through;

    bool is_label_edge() const { return source == kLabelSource; }
    friend bool operator==(const EdgeSpec&, const EdgeSpec&) = default;
};

/// A plain aggregate so that malformed graphs can be represented and reported
/// by validate_graph; everything downstream of validation assumes validity.
struct GraphSpec {
    int num_nodes = 0;
    Arch arch = Arch::AtSmallResNet;
    std::uint64_t seed = 0;
    std::vector<EdgeSpec> edges;  // node-to-node edges and label edges

    const EdgeSpec* find_edge(int source, int target) const;
    GateKind label_gate(int target) const;
    /// Node-to-node edges entering `target`, in source order.
    std::vector<EdgeSpec> incoming(int target) const;

    friend bool operator==(const GraphSpec&, const GraphSpec&) = default;
};

using BigCount = boost::multiprecision::cpp_int;

struct SpaceSlot {
    int source = 0;
    int target = 0;
    std::vector<LossDesign> designs;
    std::vector<GateKind> gates;

    std::size_t option_count() const { return designs.size() * gates.size(); }
};

struct SpaceDescriptor {
    int num_nodes = 0;
    Arch arch = Arch::AtSmallResNet;
    std::vector<SpaceSlot> node_slots;   // M(M-1) ordered pairs
    std::vector<SpaceSlot> label_slots;  // one per node

    BigCount combination_count() const;
};

SpaceDescriptor hyperparameter_space(int num_nodes, Arch arch = Arch::AtSmallResNet);

inline constexpr int kDefaultSampleRetries = 1000;

/// One uniform draw per slot; rejected draws (untrainable nodes) are redrawn up
/// to `max_retries` times.
GraphSpec sample_graph(const SpaceDescriptor& space, std::mt19937_64& rng,
                       int max_retries = kDefaultSampleRetries);

/// Returns every violated invariant; empty means valid.
std::vector<std::string> validate_graph(const GraphSpec& g);

inline constexpr int kGraphSchemaVersion = 1;

std::string serialize(const GraphSpec& g);
GraphSpec deserialize(std::string_view text);

/// Stable 64-bit FNV-1a digest of the serialized form, as 16 hex digits.
std::string graph_digest(const GraphSpec& g);

std::string to_dot(const GraphSpec& g);

}  // namespace ktg
