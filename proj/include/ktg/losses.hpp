#pragma once

// Per-sample knowledge-transfer losses between a source node and a target
// node. The source side is always a constant: every gradient produced here is
// with respect to target quantities only. Batch averaging is left to the edge
// loss so each sample is averaged exactly once.

#include <span>
#include <utility>
#include <vector>

#include "ktg/graph.hpp"
#include "ktg/tensor.hpp"

namespace ktg {

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kNormEps = 1e-12;

/// KL(p_s || p_t) per row, natural log.
Vector prob_kl(const Matrix& p_s, const Matrix& p_t);
/// Cosine similarity of p_s and p_t per row.
Vector prob_cosine(const Matrix& p_s, const Matrix& p_t);

/// d prob_kl_n / d z_t, where p_t = softmax(z_t). Row n holds sample n.
Matrix prob_kl_grad_logits(const Matrix& p_s, const Matrix& p_t);
Matrix prob_cosine_grad_logits(const Matrix& p_s, const Matrix& p_t);

struct CropWindow {
    int row0 = 0;
    int col0 = 0;
    int size = 0;
    friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

struct CropPair {
    CropWindow window;
    Vector q_s;  // flattened source crop, row-major within the window
    Vector q_t;
};

/// Row-major argmax of one flattened map; first occurrence wins ties.
std::pair<int, int> attention_peak(const AttentionBatch& maps, std::size_t sample);

/// size x size window centred on `peak`, shifted inward to stay in bounds.
CropWindow centered_window(std::pair<int, int> peak, int size, int height, int width);

void check_crop_sizes(std::span<const int> sizes, int height, int width);

/// For every sample, one CropPair per size, positioned on the source peak.
std::vector<std::vector<CropPair>> crop_attention(const AttentionBatch& q_s, const AttentionBatch& q_t,
                                                  std::span<const int> sizes);

/// (1/K) sum_k || q_s^k/|q_s^k| - q_t^k/|q_t^k| ||^2 per sample.
Vector attn_mse(const std::vector<std::vector<CropPair>>& pairs);
/// (1/K) sum_k <q_s^k/|q_s^k|, q_t^k/|q_t^k|> per sample.
Vector attn_cosine(const std::vector<std::vector<CropPair>>& pairs);

/// d attn_*_n / d Q_t, scattered back onto the full target map (N x H*W).
Matrix attn_mse_grad(const std::vector<std::vector<CropPair>>& pairs, int height, int width);
Matrix attn_cosine_grad(const std::vector<std::vector<CropPair>>& pairs, int height, int width);

struct DesignLoss {
    Vector per_sample;
    Matrix d_logits;     // d per_sample_n / d target logits, row n
    Matrix d_attention;  // d per_sample_n / d target attention, row n
};

/// L_p + L_map for one design, per sample. Components the design does not use
/// contribute zero loss and zero gradient.
Vector design_loss(LossDesign design, const NodeOutput& source, const NodeOutput& target,
                   std::span<const int> crop_sizes);

DesignLoss design_loss_with_grad(LossDesign design, const NodeOutput& source, const NodeOutput& target,
                                 std::span<const int> crop_sizes);

/// Per-sample cross-entropy -log softmax(z)[y] and its gradient softmax - onehot.
Vector cross_entropy(const Matrix& logits, std::span<const int> labels);
Matrix cross_entropy_grad(const Matrix& logits, std::span<const int> labels);

/// Shannon entropy per row (nats), clamped log.
Vector entropy(const Matrix& probs);

}  // namespace ktg
