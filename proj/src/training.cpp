#include "ktg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "ktg/error.hpp"
#include "ktg/losses.hpp"

namespace ktg {

void TrainConfig::validate() const {
    if (epochs < 1) throw Error(ErrorKind::Config, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be >= 1");
    if (!(lr_initial > 0.0)) throw Error(ErrorKind::Config, "lr_initial must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw Error(ErrorKind::Config, "momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw Error(ErrorKind::Config, "weight_decay must be >= 0");
    double prev = 0.0;
    for (double m : lr_decay_milestones) {
        if (!(m > prev) || !(m < 1.0)) {
            throw Error(ErrorKind::Config, "lr_decay_milestones must be strictly increasing in (0, 1)");
        }
        prev = m;
    }
    int last = 0;
    for (int e : eval_checkpoints) {
        if (e <= last || e > epochs) {
            throw Error(ErrorKind::Config, "eval_checkpoints must be strictly increasing within [1, epochs]");
        }
        last = e;
    }
    if (eval_batch_size < 1) throw Error(ErrorKind::Config, "eval_batch_size must be >= 1");
}

double TrainConfig::lr_at(int epoch) const {
    double lr = lr_initial;
    for (double m : lr_decay_milestones) {
        const auto boundary = static_cast<int>(std::lround(m * epochs));
        if (epoch >= boundary) lr *= lr_decay_factor;
    }
    return lr;
}

std::vector<int> TrainConfig::checkpoints() const {
    std::vector<int> out = eval_checkpoints;
    if (out.empty()) {
        if (checkpoint_rule == CheckpointRule::PowersOfTwo) {
            for (int e = 1; e <= epochs; e *= 2) out.push_back(e);
        } else {
            out.push_back(1);
            for (int e = 2; e <= epochs; e += 2) out.push_back(e);
        }
    }
    if (out.empty() || out.back() != epochs) out.push_back(epochs);
    return out;
}

double EvalResult::mean_node_accuracy() const {
    if (node_accuracy.empty()) return 0.0;
    double s = 0.0;
    for (double a : node_accuracy) s += a;
    return s / static_cast<double>(node_accuracy.size());
}

Matrix ensemble_logits(std::span<const Matrix> node_logits) {
    if (node_logits.empty()) throw Error(ErrorKind::Shape, "ensemble of zero nodes");
    const Matrix& first = node_logits.front();
    for (std::size_t m = 1; m < node_logits.size(); ++m) {
        if (node_logits[m].rows() != first.rows() || node_logits[m].cols() != first.cols()) {
            throw Error(ErrorKind::Shape, "node " + std::to_string(m) + " logits differ in shape");
        }
    }
    // Per element: sort, then min + mean offset. Node order cannot change the
    // rounding, and identical inputs come back unchanged.
    const auto count = static_cast<double>(node_logits.size());
    Matrix out(first.rows(), first.cols());
    std::vector<double> v(node_logits.size());
    for (Eigen::Index i = 0; i < first.rows(); ++i) {
        for (Eigen::Index j = 0; j < first.cols(); ++j) {
            for (std::size_t m = 0; m < v.size(); ++m) v[m] = node_logits[m](i, j);
            std::sort(v.begin(), v.end());
            double offset = 0.0;
            for (std::size_t m = 1; m < v.size(); ++m) offset += v[m] - v[0];
            out(i, j) = v[0] + offset / count;
        }
    }
    return out;
}

EvalResult evaluate_outputs(std::span<const Matrix> node_logits, std::span<const int> labels, EnsembleMode mode) {
    if (labels.empty()) throw Error(ErrorKind::Config, "cannot evaluate on an empty dataset");
    EvalResult r;
    const auto n = static_cast<double>(labels.size());
    std::vector<Matrix> probs;
    for (const auto& logits : node_logits) {
        if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
            throw Error(ErrorKind::Shape, "logit rows do not match label count");
        }
        const auto pred = argmax_rows(logits);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
        r.node_accuracy.push_back(static_cast<double>(hits) / n);
        Matrix p = softmax_rows(logits);
        r.node_entropy.push_back(entropy(p).mean());
        if (mode == EnsembleMode::Probabilities) probs.push_back(std::move(p));
    }
    const Matrix ens = mode == EnsembleMode::Logits ? ensemble_logits(node_logits) : ensemble_logits(probs);
    const auto pred = argmax_rows(ens);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
    r.ensemble_accuracy = static_cast<double>(hits) / n;
    return r;
}

std::vector<bool> correct_mask(const Matrix& logits, std::span<const int> labels) {
    const auto pred = argmax_rows(logits);
    std::vector<bool> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = pred[i] == labels[i];
    return out;
}

EdgeLoss edge_loss(const EdgeSpec& edge, const NodeOutput& source, const NodeOutput& target, const GateContext& ctx,
                   std::span<const int> crop_sizes) {
    if (edge.is_label_edge() || edge.loss == LossDesign::LabelHard) {
        throw Error(ErrorKind::Contract, "edge_loss handles node-to-node edges only");
    }
    EdgeLoss out;
    const auto n = static_cast<Eigen::Index>(target.batch());
    if (edge.gate == GateKind::Cutoff) {
        out.d_logits = Matrix::Zero(n, target.logits.cols());
        out.d_attention = Matrix::Zero(n, target.attention.height * target.attention.width);
        return out;
    }
    DesignLoss d = design_loss_with_grad(edge.loss, source, target, crop_sizes);
    const auto w = gate_weights(edge.gate, target.batch(), ctx);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double wi = w[static_cast<std::size_t>(i)];
        if (wi != 0.0) out.value += wi * d.per_sample(i);
        d.d_logits.row(i) *= wi * inv_n;
        d.d_attention.row(i) *= wi * inv_n;
    }
    out.value *= inv_n;
    out.d_logits = std::move(d.d_logits);
    out.d_attention = std::move(d.d_attention);
    return out;
}

NodeLoss node_loss(int target, const GraphSpec& g, std::span<const NodeOutput> outputs, std::span<const int> labels,
                   std::int64_t iteration, std::int64_t total_iterations, std::span<const int> crop_sizes) {
    if (outputs.size() != static_cast<std::size_t>(g.num_nodes)) {
        throw Error(ErrorKind::Shape, "expected outputs for " + std::to_string(g.num_nodes) + " nodes, got " +
                                          std::to_string(outputs.size()));
    }
    if (target < 0 || target >= g.num_nodes) throw Error(ErrorKind::Contract, "target node out of range");
    const NodeOutput& out_t = outputs[static_cast<std::size_t>(target)];
    const auto n = static_cast<Eigen::Index>(out_t.batch());
    if (static_cast<std::size_t>(n) != labels.size()) throw Error(ErrorKind::Shape, "labels do not match batch");
    const double inv_n = 1.0 / static_cast<double>(n);

    NodeLoss r;
    r.edges.assign(static_cast<std::size_t>(g.num_nodes), 0.0);
    r.grad.d_logits = Matrix::Zero(n, out_t.logits.cols());
    r.grad.d_attention = Matrix::Zero(n, out_t.attention.height * out_t.attention.width);

    // Label edge: cross-entropy (plus the ABN auxiliary cross-entropy), gated.
    GateContext label_ctx;
    label_ctx.iteration = iteration;
    label_ctx.total_iterations = total_iterations;
    label_ctx.label_source = true;
    const GateKind label_gate = g.label_gate(target);
    if (label_gate != GateKind::Cutoff) {
        const auto w = gate_weights(label_gate, out_t.batch(), label_ctx);
        Vector hard = cross_entropy(out_t.logits, labels);
        Matrix d = cross_entropy_grad(out_t.logits, labels);
        std::optional<Matrix> d_aux;
        if (out_t.aux_logits) {
            hard += cross_entropy(*out_t.aux_logits, labels);
            d_aux = cross_entropy_grad(*out_t.aux_logits, labels);
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const double wi = w[static_cast<std::size_t>(i)];
            if (wi != 0.0) r.hard += wi * hard(i);
            d.row(i) *= wi * inv_n;
            if (d_aux) d_aux->row(i) *= wi * inv_n;
        }
        r.hard *= inv_n;
        r.grad.d_logits = std::move(d);
        r.grad.d_aux_logits = std::move(d_aux);
    }
    r.value = r.hard;

    for (const auto& e : g.incoming(target)) {
        if (e.gate == GateKind::Cutoff) continue;
        const NodeOutput& out_s = outputs[static_cast<std::size_t>(e.source)];
        GateContext ctx;
        ctx.iteration = iteration;
        ctx.total_iterations = total_iterations;
        if (e.gate == GateKind::Correct) ctx.source_correct = correct_mask(out_s.logits, labels);
        EdgeLoss el = edge_loss(e, out_s, out_t, ctx, crop_sizes);
        r.edges[static_cast<std::size_t>(e.source)] = el.value;
        r.value += el.value;
        r.grad.d_logits += el.d_logits;
        r.grad.d_attention += el.d_attention;
    }
    return r;
}

void Sgd::step(const std::vector<nn::Param*>& params, double lr) {
    if (buffers_.empty()) {
        for (auto* p : params) buffers_.emplace_back(p->value.size(), 0.0f);
    }
    if (buffers_.size() != params.size()) throw Error(ErrorKind::Contract, "optimizer bound to a different model");
    const auto m = static_cast<float>(momentum_);
    const auto wd = static_cast<float>(weight_decay_);
    const auto step = static_cast<float>(lr);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& value = params[k]->value;
        const auto& grad = params[k]->grad;
        auto& buf = buffers_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const float g = grad[i] + wd * value[i];
            buf[i] = m * buf[i] + g;
            value[i] -= step * buf[i];
        }
    }
}

std::string_view to_string(TrialStatus s) {
    switch (s) {
        case TrialStatus::Completed: return "completed";
        case TrialStatus::Pruned: return "pruned";
        case TrialStatus::Failed: return "failed";
    }
    return "?";
}

TrainData exploration_data(const Dataset& train, std::uint64_t split_seed) {
    const HalfSplit split = balanced_half_split(train, split_seed);
    TrainData d;
    d.train = &train;
    d.val = &train;
    d.train_indices = split.train;
    d.val_indices = split.val;
    d.norm = Normalization::fit(train.subset(split.train));
    return d;
}

TrainData final_data(const Dataset& train, const Dataset& test) {
    TrainData d;
    d.train = &train;
    d.val = &test;
    d.train_indices = all_indices(train);
    d.val_indices = all_indices(test);
    d.norm = Normalization::fit(train);
    return d;
}

std::uint64_t node_seed(std::uint64_t graph_seed, int node) {
    // splitmix64 of (seed, node)
    std::uint64_t z = graph_seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(node + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<Backbone> make_nodes(const GraphSpec& g, const BackboneConfig& base) {
    BackboneConfig cfg = base;
    cfg.arch = g.arch;
    std::vector<Backbone> models;
    models.reserve(static_cast<std::size_t>(g.num_nodes));
    for (int m = 0; m < g.num_nodes; ++m) models.emplace_back(cfg, node_seed(g.seed, m));
    return models;
}

// ---------------------------------------------------------------------------

GraphTrainer::GraphTrainer(GraphSpec graph, std::vector<Backbone> models, TrainConfig config)
    : graph_(std::move(graph)), models_(std::move(models)), config_(std::move(config)) {
    if (const auto v = validate_graph(graph_); !v.empty()) throw Error(ErrorKind::InvalidGraph, v.front());
    if (models_.size() != static_cast<std::size_t>(graph_.num_nodes)) {
        throw Error(ErrorKind::Contract, "one model per graph node is required");
    }
    crop_sizes_ = models_.front().config().effective_crop_sizes();
    for (std::size_t m = 0; m < models_.size(); ++m) optimizers_.emplace_back(config_.momentum, config_.weight_decay);
}

GraphTrainer::StepResult GraphTrainer::step(const Batch& batch, std::int64_t iteration, std::int64_t total_iterations,
                                            double lr) {
    std::vector<NodeOutput> outputs;
    outputs.reserve(models_.size());
    for (auto& m : models_) outputs.push_back(m.forward(batch.images, true));

    StepResult r;
    for (int t = 0; t < graph_.num_nodes; ++t) {
        NodeLoss loss = node_loss(t, graph_, outputs, batch.labels, iteration, total_iterations, crop_sizes_);
        r.node_losses.push_back(loss.value);
        if (!std::isfinite(loss.value)) {
            r.finite = false;
            r.failed_node = t;
            return r;
        }
        auto& model = models_[static_cast<std::size_t>(t)];
        model.zero_grad();
        model.backward(loss.grad);
        optimizers_[static_cast<std::size_t>(t)].step(model.params(), lr);
    }
    return r;
}

EvalResult GraphTrainer::evaluate(const Dataset& data, std::span<const std::size_t> indices, const Normalization& norm,
                                  int epoch) {
    if (indices.empty()) throw Error(ErrorKind::Config, "cannot evaluate on an empty dataset");
    BatchStream::Options opts;
    opts.batch_size = config_.eval_batch_size;
    BatchStream stream(data, {indices.begin(), indices.end()}, norm, opts);
    stream.start_epoch(0);
    std::vector<Matrix> logits(models_.size());
    std::vector<int> labels;
    for (std::size_t b = 0; b < stream.batches_per_epoch(); ++b) {
        const Batch batch = stream.batch(b);
        labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
        for (std::size_t m = 0; m < models_.size(); ++m) {
            const Matrix l = models_[m].forward(batch.images, false).logits;
            Matrix grown(logits[m].rows() + l.rows(), l.cols());
            if (logits[m].rows() > 0) grown.topRows(logits[m].rows()) = logits[m];
            grown.bottomRows(l.rows()) = l;
            logits[m] = std::move(grown);
        }
    }
    EvalResult r = evaluate_outputs(logits, labels, config_.ensemble_mode);
    r.epoch = epoch;
    return r;
}

TrialRecord train_graph(const GraphSpec& g, const TrainData& data, const TrainConfig& cfg,
                        const BackboneConfig& backbone, const TrainOptions& options) {
    cfg.validate();
    if (data.train == nullptr || data.val == nullptr) throw Error(ErrorKind::Config, "training data not set");
    const auto started = std::chrono::steady_clock::now();

    TrialRecord record;
    record.graph = g;
    record.seed = g.seed;

    GraphTrainer trainer(g, make_nodes(g, backbone), cfg);
    for (auto& m : trainer.models()) record.parameter_count += m.parameter_count();

    BatchStream::Options opts;
    opts.batch_size = cfg.batch_size;
    opts.shuffle = true;
    opts.augment = cfg.augment;
    opts.drop_last = true;
    opts.seed = cfg.seed;
    BatchStream stream(*data.train, data.train_indices, data.norm, opts);

    const auto steps_per_epoch = static_cast<std::int64_t>(stream.batches_per_epoch());
    const std::int64_t total = steps_per_epoch * cfg.epochs;
    const auto checkpoints = cfg.checkpoints();
    auto next_ckpt = checkpoints.begin();
    std::int64_t iteration = 0;

    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        stream.start_epoch(epoch);
        const double lr = cfg.lr_at(epoch);
        double loss_sum = 0.0;
        for (std::int64_t b = 0; b < steps_per_epoch; ++b, ++iteration) {
            const auto result = trainer.step(stream.batch(static_cast<std::size_t>(b)), iteration, total, lr);
            if (!result.finite) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch + 1 << ", step " << b << ", node " << result.failed_node;
                record.status = TrialStatus::Failed;
                record.failure = msg.str();
                record.wall_time = elapsed();
                if (options.log) options.log(msg.str());
                return record;
            }
            for (double l : result.node_losses) loss_sum += l;
        }
        if (options.log) {
            std::ostringstream msg;
            msg << "epoch " << epoch + 1 << "/" << cfg.epochs << " lr " << lr << " mean node loss "
                << loss_sum / static_cast<double>(steps_per_epoch * g.num_nodes);
            options.log(msg.str());
        }

        const int done = epoch + 1;
        if (next_ckpt != checkpoints.end() && *next_ckpt == done) {
            ++next_ckpt;
            EvalResult eval = trainer.evaluate(*data.val, data.val_indices, data.norm, done);
            record.checkpoints.push_back(eval);
            if (options.log) {
                std::ostringstream msg;
                msg << "checkpoint epoch " << done << " ensemble acc " << eval.ensemble_accuracy << " mean node acc "
                    << eval.mean_node_accuracy();
                options.log(msg.str());
            }
            if (options.prune_hook && options.prune_hook(eval) == PruneAction::Stop) {
                record.status = done == cfg.epochs ? TrialStatus::Completed : TrialStatus::Pruned;
                if (record.status == TrialStatus::Pruned) {
                    record.wall_time = elapsed();
                    return record;
                }
            }
        }
    }
    record.status = TrialStatus::Completed;
    if (!options.checkpoint_dir.empty()) {
        std::filesystem::create_directories(options.checkpoint_dir);
        for (std::size_t m = 0; m < trainer.models().size(); ++m) {
            trainer.models()[m].save(options.checkpoint_dir / ("node" + std::to_string(m) + ".ckpt"));
        }
    }
    record.wall_time = elapsed();
    return record;
}

}  // namespace ktg
