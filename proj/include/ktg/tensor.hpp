#pragma once

// Double-precision batch containers shared by the loss, model-output and
// training layers. Rows are samples.

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace ktg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// N spatial maps of size height x width, one flattened (row-major) map per row.
struct AttentionBatch {
    int height = 0;
    int width = 0;
    Matrix maps;

    AttentionBatch() = default;
    AttentionBatch(int h, int w, Matrix m) : height(h), width(w), maps(std::move(m)) {}
    AttentionBatch(std::size_t batch, int h, int w)
        : height(h), width(w), maps(Matrix::Zero(static_cast<Eigen::Index>(batch), h * w)) {}

    std::size_t batch() const { return static_cast<std::size_t>(maps.rows()); }
    double at(std::size_t n, int row, int col) const {
        return maps(static_cast<Eigen::Index>(n), row * width + col);
    }
};

/// One network's forward result for a batch.
struct NodeOutput {
    Matrix logits;             // N x C
    Matrix probs;              // softmax(logits)
    AttentionBatch attention;  // nonnegative
    std::optional<Matrix> aux_logits;  // ABN attention-branch class scores

    std::size_t batch() const { return static_cast<std::size_t>(logits.rows()); }
    int classes() const { return static_cast<int>(logits.cols()); }
};

/// Gradient of a scalar objective with respect to one node's outputs.
struct OutputGrad {
    Matrix d_logits;
    Matrix d_attention;  // N x (H*W), zero if unused
    std::optional<Matrix> d_aux_logits;
};

Matrix softmax_rows(const Matrix& logits);

/// Argmax per row; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace ktg
