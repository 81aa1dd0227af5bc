#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ktg/data.hpp"
#include "ktg/graph.hpp"
#include "ktg/models.hpp"
#include "ktg/tensor.hpp"

namespace testing {

inline ktg::Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    ktg::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

inline ktg::NodeOutput make_output(ktg::Matrix logits, ktg::AttentionBatch attention) {
    ktg::NodeOutput o;
    o.probs = ktg::softmax_rows(logits);
    o.logits = std::move(logits);
    o.attention = std::move(attention);
    return o;
}

/// Random logits in [-3, 3] and a strictly positive map in [0.01, 1].
inline ktg::NodeOutput random_output(std::mt19937_64& rng, int n, int c, int h, int w) {
    return make_output(random_matrix(rng, n, c, -3.0, 3.0),
                       ktg::AttentionBatch(h, w, random_matrix(rng, n, h * w, 0.01, 1.0)));
}

/// Small image config so model-level tests stay fast.
inline ktg::BackboneConfig tiny_backbone(ktg::Arch arch, int classes = 4) {
    ktg::BackboneConfig cfg;
    cfg.arch = arch;
    cfg.num_classes = classes;
    cfg.image_size = 16;
    cfg.widths = {4, 6, 8, 8};
    return cfg;
}

inline ktg::Dataset tiny_dataset(int classes, int per_class, int size, std::uint64_t seed) {
    ktg::SyntheticParams p;
    p.num_classes = classes;
    p.per_class = per_class;
    p.image_size = size;
    p.seed = seed;
    return ktg::synthetic_dataset(p);
}

inline std::vector<float> flat_params(ktg::Backbone& b) {
    std::vector<float> out;
    for (auto* p : b.params()) out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
}

}  // namespace testing
