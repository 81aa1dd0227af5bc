#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ktg/data.hpp"
#include "ktg/gates.hpp"
#include "ktg/graph.hpp"
#include "ktg/models.hpp"
#include "ktg/tensor.hpp"

namespace ktg {

enum class EnsembleMode { Logits, Probabilities };
/// Evaluation epochs: 1, 2, 4, 8, ... (PowersOfTwo) or 1, 2, 4, 6, 8, ... (EvenEpochs);
/// the final epoch is always included.
enum class CheckpointRule { PowersOfTwo, EvenEpochs };

struct TrainConfig {
    int epochs = 300;
    int batch_size = 16;
    double lr_initial = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lr_decay_factor = 0.1;
    std::vector<double> lr_decay_milestones{0.5, 0.75};  // fractions of `epochs`
    std::vector<int> eval_checkpoints;                    // empty: derived from checkpoint_rule
    CheckpointRule checkpoint_rule = CheckpointRule::PowersOfTwo;
    std::uint64_t seed = 0;  // data order and augmentation
    EnsembleMode ensemble_mode = EnsembleMode::Logits;
    bool augment = true;
    int eval_batch_size = 250;

    void validate() const;
    /// Learning rate for a 0-based epoch index.
    double lr_at(int epoch) const;
    /// 1-based epochs at which validation runs, strictly increasing.
    std::vector<int> checkpoints() const;
};

struct EvalResult {
    int epoch = 0;
    std::vector<double> node_accuracy;
    double ensemble_accuracy = 0.0;
    std::vector<double> node_entropy;  // mean prediction entropy per node (nats)

    double mean_node_accuracy() const;
};

/// (1/M) sum_m logits_m, computed per element in sorted order.
Matrix ensemble_logits(std::span<const Matrix> node_logits);

/// Accuracy bookkeeping shared by evaluate(); ties in the ensemble argmax
/// resolve to the lowest class index.
EvalResult evaluate_outputs(std::span<const Matrix> node_logits, std::span<const int> labels,
                            EnsembleMode mode = EnsembleMode::Logits);

struct EdgeLoss {
    double value = 0.0;
    Matrix d_logits;     // gradient of `value` w.r.t. target logits
    Matrix d_attention;  // gradient of `value` w.r.t. target attention
};

/// (1/N) sum_n gate(L_p(x_n) + L_map(x_n)) for a node-to-node edge.
EdgeLoss edge_loss(const EdgeSpec& edge, const NodeOutput& source, const NodeOutput& target, const GateContext& ctx,
                   std::span<const int> crop_sizes);

/// Per-sample "source predicted the label" flags, for the Correct gate.
std::vector<bool> correct_mask(const Matrix& logits, std::span<const int> labels);

struct NodeLoss {
    double value = 0.0;
    double hard = 0.0;          // gated label term (includes the ABN auxiliary loss)
    std::vector<double> edges;  // indexed by source node; 0 for the target itself
    OutputGrad grad;            // w.r.t. the target node's outputs only
};

/// L_t = gated L_hard + sum_{s != t} L_{s,t}. Outputs of every other node are
/// treated as constants.
NodeLoss node_loss(int target, const GraphSpec& g, std::span<const NodeOutput> outputs, std::span<const int> labels,
                   std::int64_t iteration, std::int64_t total_iterations, std::span<const int> crop_sizes);

/// SGD with momentum and L2 weight decay, matching the common
/// buf = m * buf + (g + wd * w); w -= lr * buf update.
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(const std::vector<nn::Param*>& params, double lr);

private:
    double momentum_;
    double weight_decay_;
    std::vector<std::vector<float>> buffers_;
};

enum class TrialStatus { Completed, Pruned, Failed };
std::string_view to_string(TrialStatus s);

struct TrialRecord {
    int trial_id = 0;
    GraphSpec graph;
    std::vector<EvalResult> checkpoints;
    TrialStatus status = TrialStatus::Completed;
    double wall_time = 0.0;  // seconds
    std::uint64_t seed = 0;
    std::size_t parameter_count = 0;  // all nodes together
    std::string failure;

    double final_ensemble_accuracy() const { return checkpoints.empty() ? 0.0 : checkpoints.back().ensemble_accuracy; }
};

enum class PruneAction { Continue, Stop };
/// Called after every checkpoint evaluation.
using PruneHook = std::function<PruneAction(const EvalResult& checkpoint)>;

/// Training and validation streams for one run. The datasets must outlive it.
struct TrainData {
    const Dataset* train = nullptr;
    std::vector<std::size_t> train_indices;
    const Dataset* val = nullptr;
    std::vector<std::size_t> val_indices;
    Normalization norm;
};

/// Graph exploration data: class-balanced halves of the training set.
TrainData exploration_data(const Dataset& train, std::uint64_t split_seed);
/// Final comparison data: full training set, evaluated on the test set.
TrainData final_data(const Dataset& train, const Dataset& test);

struct TrainOptions {
    PruneHook prune_hook;
    std::filesystem::path checkpoint_dir;  // empty: do not write model files
    std::function<void(const std::string&)> log;
};

/// Derives node m's initialization seed from the graph seed.
std::uint64_t node_seed(std::uint64_t graph_seed, int node);

std::vector<Backbone> make_nodes(const GraphSpec& g, const BackboneConfig& base);

/// Owns the node models of one graph and advances them one mini-batch at a time.
class GraphTrainer {
public:
    GraphTrainer(GraphSpec graph, std::vector<Backbone> models, TrainConfig config);

    struct StepResult {
        std::vector<double> node_losses;
        bool finite = true;
        int failed_node = -1;
    };

    /// Forward every node once, then update each node from its own loss.
    StepResult step(const Batch& batch, std::int64_t iteration, std::int64_t total_iterations, double lr);

    EvalResult evaluate(const Dataset& data, std::span<const std::size_t> indices, const Normalization& norm,
                        int epoch);

    std::vector<Backbone>& models() { return models_; }
    const GraphSpec& graph() const { return graph_; }

private:
    GraphSpec graph_;
    std::vector<Backbone> models_;
    std::vector<Sgd> optimizers_;
    TrainConfig config_;
    std::vector<int> crop_sizes_;
};

TrialRecord train_graph(const GraphSpec& g, const TrainData& data, const TrainConfig& cfg,
                        const BackboneConfig& backbone, const TrainOptions& options = {});

}  // namespace ktg
