#include "ktg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ktg/error.hpp"

namespace ktg {

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index n = 0; n < logits.rows(); ++n) {
        const double mx = logits.row(n).maxCoeff();
        p.row(n) = (logits.row(n).array() - mx).exp();
        p.row(n) /= p.row(n).sum();
    }
    return p;
}

std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index n = 0; n < m.rows(); ++n) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < m.cols(); ++c) {
            if (m(n, c) > m(n, best)) best = c;
        }
        out[static_cast<std::size_t>(n)] = static_cast<int>(best);
    }
    return out;
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorKind::Shape, std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                          std::to_string(b.cols()));
    }
}

/// Chain rule through softmax: given g = d loss / d p for one row, returns
/// d loss / d z = p * (g - <g, p>).
Eigen::RowVectorXd softmax_backward(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& g) {
    const double dot = g.dot(p);
    return (p.array() * (g.array() - dot)).matrix();
}

struct Normalized {
    Vector unit;
    double norm = 0.0;
    bool guarded = false;
};

Normalized normalize(const Vector& q) {
    Normalized r;
    r.norm = q.norm();
    r.guarded = r.norm < kNormEps;
    r.unit = q / (r.guarded ? kNormEps : r.norm);
    return r;
}

/// Pulls an upstream gradient on q/|q| back onto q.
Vector normalize_backward(const Normalized& n, const Vector& upstream) {
    if (n.guarded) return upstream / kNormEps;
    return (upstream - n.unit * n.unit.dot(upstream)) / n.norm;
}

}  // namespace

Vector prob_kl(const Matrix& p_s, const Matrix& p_t) {
    check_same_shape(p_s, p_t, "prob_kl");
    Vector out(p_s.rows());
    for (Eigen::Index n = 0; n < p_s.rows(); ++n) {
        const auto s = p_s.row(n).array().max(kProbClamp).min(1.0);
        const auto t = p_t.row(n).array().max(kProbClamp).min(1.0);
        // 0 * log 0 is taken as 0 for exact zeros in the source.
        out(n) = (p_s.row(n).array() > 0.0).select(p_s.row(n).array() * (s.log() - t.log()), 0.0).sum();
    }
    return out;
}

Vector prob_cosine(const Matrix& p_s, const Matrix& p_t) {
    check_same_shape(p_s, p_t, "prob_cosine");
    Vector out(p_s.rows());
    for (Eigen::Index n = 0; n < p_s.rows(); ++n) {
        const auto s = normalize(p_s.row(n).transpose());
        const auto t = normalize(p_t.row(n).transpose());
        out(n) = s.unit.dot(t.unit);
    }
    return out;
}

Matrix prob_kl_grad_logits(const Matrix& p_s, const Matrix& p_t) {
    check_same_shape(p_s, p_t, "prob_kl");
    Matrix d(p_s.rows(), p_s.cols());
    for (Eigen::Index n = 0; n < p_s.rows(); ++n) {
        // d/d log p_t = -p_s wherever the clamp is inactive.
        Eigen::RowVectorXd g = (p_t.row(n).array() > kProbClamp).select(-p_s.row(n).array(), 0.0).matrix();
        // Through log-softmax: dz_j = g_j - p_t,j * sum_c g_c.
        d.row(n) = g - p_t.row(n) * g.sum();
    }
    return d;
}

Matrix prob_cosine_grad_logits(const Matrix& p_s, const Matrix& p_t) {
    check_same_shape(p_s, p_t, "prob_cosine");
    Matrix d(p_s.rows(), p_s.cols());
    for (Eigen::Index n = 0; n < p_s.rows(); ++n) {
        const auto s = normalize(p_s.row(n).transpose());
        const auto t = normalize(p_t.row(n).transpose());
        const Vector d_pt = normalize_backward(t, s.unit);
        d.row(n) = softmax_backward(p_t.row(n), d_pt.transpose());
    }
    return d;
}

// ---------------------------------------------------------------------------
// Attention cropping

std::pair<int, int> attention_peak(const AttentionBatch& maps, std::size_t sample) {
    const auto row = maps.maps.row(static_cast<Eigen::Index>(sample));
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < row.size(); ++i) {
        if (row(i) > row(best)) best = i;
    }
    return {static_cast<int>(best) / maps.width, static_cast<int>(best) % maps.width};
}

CropWindow centered_window(std::pair<int, int> peak, int size, int height, int width) {
    const int half = size / 2;
    CropWindow w;
    w.size = size;
    w.row0 = std::clamp(peak.first - half, 0, height - size);
    w.col0 = std::clamp(peak.second - half, 0, width - size);
    return w;
}

void check_crop_sizes(std::span<const int> sizes, int height, int width) {
    if (sizes.empty()) throw Error(ErrorKind::CropSize, "at least one crop size is required");
    for (int k : sizes) {
        if (k <= 0 || k % 2 == 0) {
            throw Error(ErrorKind::CropSize, "crop size " + std::to_string(k) + " must be a positive odd integer");
        }
        if (k > std::min(height, width)) {
            throw Error(ErrorKind::CropSize, "crop size " + std::to_string(k) + " exceeds map " +
                                                 std::to_string(height) + "x" + std::to_string(width));
        }
    }
}

namespace {

Vector extract(const AttentionBatch& maps, std::size_t sample, const CropWindow& w) {
    Vector v(w.size * w.size);
    for (int r = 0; r < w.size; ++r) {
        for (int c = 0; c < w.size; ++c) v(r * w.size + c) = maps.at(sample, w.row0 + r, w.col0 + c);
    }
    return v;
}

void scatter(Matrix& dst, Eigen::Index row, int width, const CropWindow& w, const Vector& grad, double scale) {
    for (int r = 0; r < w.size; ++r) {
        for (int c = 0; c < w.size; ++c) dst(row, (w.row0 + r) * width + w.col0 + c) += scale * grad(r * w.size + c);
    }
}

}  // namespace

std::vector<std::vector<CropPair>> crop_attention(const AttentionBatch& q_s, const AttentionBatch& q_t,
                                                  std::span<const int> sizes) {
    if (q_s.height != q_t.height || q_s.width != q_t.width || q_s.batch() != q_t.batch()) {
        throw Error(ErrorKind::Shape, "source and target attention maps differ in shape");
    }
    check_crop_sizes(sizes, q_s.height, q_s.width);
    std::vector<std::vector<CropPair>> out(q_s.batch());
    for (std::size_t n = 0; n < q_s.batch(); ++n) {
        const auto peak = attention_peak(q_s, n);
        out[n].reserve(sizes.size());
        for (int k : sizes) {
            CropPair p;
            p.window = centered_window(peak, k, q_s.height, q_s.width);
            p.q_s = extract(q_s, n, p.window);
            p.q_t = extract(q_t, n, p.window);
            out[n].push_back(std::move(p));
        }
    }
    return out;
}

Vector attn_mse(const std::vector<std::vector<CropPair>>& pairs) {
    Vector out(static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t n = 0; n < pairs.size(); ++n) {
        double acc = 0.0;
        for (const auto& p : pairs[n]) acc += (normalize(p.q_s).unit - normalize(p.q_t).unit).squaredNorm();
        out(static_cast<Eigen::Index>(n)) = acc / static_cast<double>(pairs[n].size());
    }
    return out;
}

Vector attn_cosine(const std::vector<std::vector<CropPair>>& pairs) {
    Vector out(static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t n = 0; n < pairs.size(); ++n) {
        double acc = 0.0;
        for (const auto& p : pairs[n]) acc += normalize(p.q_s).unit.dot(normalize(p.q_t).unit);
        out(static_cast<Eigen::Index>(n)) = acc / static_cast<double>(pairs[n].size());
    }
    return out;
}

Matrix attn_mse_grad(const std::vector<std::vector<CropPair>>& pairs, int height, int width) {
    Matrix d = Matrix::Zero(static_cast<Eigen::Index>(pairs.size()), height * width);
    for (std::size_t n = 0; n < pairs.size(); ++n) {
        const double scale = 1.0 / static_cast<double>(pairs[n].size());
        for (const auto& p : pairs[n]) {
            const auto s = normalize(p.q_s);
            const auto t = normalize(p.q_t);
            const Vector g = normalize_backward(t, -2.0 * (s.unit - t.unit));
            scatter(d, static_cast<Eigen::Index>(n), width, p.window, g, scale);
        }
    }
    return d;
}

Matrix attn_cosine_grad(const std::vector<std::vector<CropPair>>& pairs, int height, int width) {
    Matrix d = Matrix::Zero(static_cast<Eigen::Index>(pairs.size()), height * width);
    for (std::size_t n = 0; n < pairs.size(); ++n) {
        const double scale = 1.0 / static_cast<double>(pairs[n].size());
        for (const auto& p : pairs[n]) {
            const auto s = normalize(p.q_s);
            const auto t = normalize(p.q_t);
            scatter(d, static_cast<Eigen::Index>(n), width, p.window, normalize_backward(t, s.unit), scale);
        }
    }
    return d;
}

// ---------------------------------------------------------------------------

namespace {

void check_design_inputs(LossDesign design, const NodeOutput& source, const NodeOutput& target) {
    if (design == LossDesign::LabelHard) {
        throw Error(ErrorKind::Contract, "LabelHard is a label-edge loss; it is not a node-to-node design");
    }
    if (source.batch() != target.batch()) {
        throw Error(ErrorKind::Shape, "source batch " + std::to_string(source.batch()) + " vs target batch " +
                                          std::to_string(target.batch()));
    }
}

}  // namespace

Vector design_loss(LossDesign design, const NodeOutput& source, const NodeOutput& target,
                   std::span<const int> crop_sizes) {
    return design_loss_with_grad(design, source, target, crop_sizes).per_sample;
}

DesignLoss design_loss_with_grad(LossDesign design, const NodeOutput& source, const NodeOutput& target,
                                 std::span<const int> crop_sizes) {
    check_design_inputs(design, source, target);
    const auto n = static_cast<Eigen::Index>(target.batch());
    DesignLoss r;
    r.per_sample = Vector::Zero(n);
    r.d_logits = Matrix::Zero(n, target.logits.cols());
    r.d_attention = Matrix::Zero(n, target.attention.height * target.attention.width);

    const bool closer =
        design == LossDesign::ProbCloser || design == LossDesign::AttnCloser || design == LossDesign::BothCloser;

    if (uses_probabilities(design)) {
        if (closer) {
            r.per_sample += prob_kl(source.probs, target.probs);
            r.d_logits += prob_kl_grad_logits(source.probs, target.probs);
        } else {
            r.per_sample += prob_cosine(source.probs, target.probs);
            r.d_logits += prob_cosine_grad_logits(source.probs, target.probs);
        }
    }
    if (uses_attention(design)) {
        const auto pairs = crop_attention(source.attention, target.attention, crop_sizes);
        const int h = target.attention.height;
        const int w = target.attention.width;
        if (closer) {
            r.per_sample += attn_mse(pairs);
            r.d_attention += attn_mse_grad(pairs, h, w);
        } else {
            r.per_sample += attn_cosine(pairs);
            r.d_attention += attn_cosine_grad(pairs, h, w);
        }
    }
    return r;
}

Vector cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw Error(ErrorKind::Shape, "cross_entropy: label count does not match batch");
    }
    Vector out(logits.rows());
    for (Eigen::Index n = 0; n < logits.rows(); ++n) {
        const double mx = logits.row(n).maxCoeff();
        const double lse = mx + std::log((logits.row(n).array() - mx).exp().sum());
        out(n) = lse - logits(n, labels[static_cast<std::size_t>(n)]);
    }
    return out;
}

Matrix cross_entropy_grad(const Matrix& logits, std::span<const int> labels) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw Error(ErrorKind::Shape, "cross_entropy: label count does not match batch");
    }
    Matrix d = softmax_rows(logits);
    for (Eigen::Index n = 0; n < logits.rows(); ++n) d(n, labels[static_cast<std::size_t>(n)]) -= 1.0;
    return d;
}

Vector entropy(const Matrix& probs) {
    Vector out(probs.rows());
    for (Eigen::Index n = 0; n < probs.rows(); ++n) {
        const auto p = probs.row(n).array();
        out(n) = -(p > 0.0).select(p * p.max(kProbClamp).log(), 0.0).sum();
    }
    return out;
}

}  // namespace ktg
