#pragma once

// Reduction checks shared by the unit tests and the acceptance binary.

#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "ktg/losses.hpp"
#include "ktg/presets.hpp"
#include "ktg/training.hpp"
#include "oracle.hpp"

namespace testing {

/// Largest |node_loss - (CE + (1/N) sum KL(p_other || p_self))| over both nodes
/// of a 2-node ProbCloser/Through graph on random fixed batches.
inline double dml_reduction_error(int batches, std::uint64_t seed) {
    using namespace ktg;
    const GraphSpec g = uniform_graph(2, Arch::AtSmallResNet, 0, LossDesign::ProbCloser, GateKind::Through);
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int b = 0; b < batches; ++b) {
        const int n = 3 + b % 5, c = 2 + b % 9;
        std::vector<NodeOutput> outs{random_output(rng, n, c, 4, 4), random_output(rng, n, c, 4, 4)};
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(c)));
        const std::vector<int> sizes{3};
        for (int t = 0; t < 2; ++t) {
            const int s = 1 - t;
            double ce = 0.0, kl = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto zt = oracle::row(outs[static_cast<std::size_t>(t)].logits, i);
                const auto zs = oracle::row(outs[static_cast<std::size_t>(s)].logits, i);
                ce += oracle::cross_entropy(zt, labels[static_cast<std::size_t>(i)]);
                kl += oracle::kl(oracle::softmax(zs), oracle::softmax(zt));
            }
            const double expect = ce / n + kl / n;
            const double got = node_loss(t, g, outs, labels, b, batches, sizes).value;
            worst = std::max(worst, std::abs(got - expect));
        }
    }
    return worst;
}

/// Trains an all-Cutoff graph for `steps` mini-batches and, in lock step, each
/// node alone with plain cross-entropy. Returns the number of steps after
/// which every node's parameters were bitwise equal to its solo twin.
inline int independent_reduction_steps(int num_nodes, int steps, std::uint64_t seed) {
    using namespace ktg;
    const GraphSpec g = uniform_graph(num_nodes, Arch::AtSmallResNet, seed, LossDesign::ProbCloser, GateKind::Cutoff);
    const BackboneConfig bb = tiny_backbone(Arch::AtSmallResNet, 3);
    TrainConfig cfg;
    cfg.epochs = 1;
    GraphTrainer trainer(g, make_nodes(g, bb), cfg);

    std::vector<Backbone> solo;
    std::vector<Sgd> solo_opt;
    for (int m = 0; m < num_nodes; ++m) {
        solo.emplace_back(bb, node_seed(g.seed, m));
        solo_opt.emplace_back(cfg.momentum, cfg.weight_decay);
    }

    const Dataset d = tiny_dataset(3, 12, 16, seed);
    BatchStream::Options opts;
    opts.batch_size = 8;
    opts.shuffle = true;
    opts.augment = true;
    opts.drop_last = true;
    opts.seed = seed;
    BatchStream stream(d, all_indices(d), Normalization::fit(d), opts);

    int matched = 0;
    std::int64_t it = 0;
    for (int epoch = 0; it < steps; ++epoch) {
        stream.start_epoch(epoch);
        for (std::size_t b = 0; b < stream.batches_per_epoch() && it < steps; ++b, ++it) {
            const Batch batch = stream.batch(b);
            const double lr = 0.05;
            trainer.step(batch, it, steps, lr);
            bool all_equal = true;
            for (int m = 0; m < num_nodes; ++m) {
                auto& model = solo[static_cast<std::size_t>(m)];
                const NodeOutput out = model.forward(batch.images, true);
                OutputGrad grad;
                grad.d_logits = cross_entropy_grad(out.logits, batch.labels);
                const double inv_n = 1.0 / static_cast<double>(batch.labels.size());
                for (Eigen::Index i = 0; i < grad.d_logits.rows(); ++i) grad.d_logits.row(i) *= 1.0 * inv_n;
                grad.d_attention = Matrix::Zero(out.attention.maps.rows(), out.attention.maps.cols());
                model.zero_grad();
                model.backward(grad);
                solo_opt[static_cast<std::size_t>(m)].step(model.params(), lr);
                if (flat_params(model) != flat_params(trainer.models()[static_cast<std::size_t>(m)])) {
                    all_equal = false;
                }
            }
            if (!all_equal) return matched;
            ++matched;
        }
    }
    return matched;
}

/// One GraphTrainer step with edge source->target active, and one with it
/// Cutoff. Returns {source params identical, target params differ}.
inline std::pair<bool, bool> isolation_step(ktg::LossDesign design, ktg::Arch arch, std::uint64_t seed) {
    using namespace ktg;
    GraphSpec active = uniform_graph(2, arch, seed, design, GateKind::Cutoff);
    for (auto& e : active.edges) {
        if (e.source == 0 && e.target == 1) e.gate = GateKind::Through;
    }
    GraphSpec cut = uniform_graph(2, arch, seed, design, GateKind::Cutoff);
    const BackboneConfig bb = tiny_backbone(arch, 3);
    TrainConfig cfg;
    GraphTrainer a(active, make_nodes(active, bb), cfg), b(cut, make_nodes(cut, bb), cfg);

    const Dataset d = tiny_dataset(3, 4, 16, seed);
    BatchStream::Options opts;
    opts.batch_size = 6;
    BatchStream stream(d, all_indices(d), Normalization::fit(d), opts);
    stream.start_epoch(0);
    const Batch batch = stream.batch(0);
    a.step(batch, 0, 10, 0.1);
    b.step(batch, 0, 10, 0.1);
    const bool source_same = flat_params(a.models()[0]) == flat_params(b.models()[0]);
    const bool target_differs = flat_params(a.models()[1]) != flat_params(b.models()[1]);
    return {source_same, target_differs};
}

}  // namespace testing
