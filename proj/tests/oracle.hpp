#pragma once

// Scalar reference implementations used as test oracles. They are written
// with plain loops over std::vector and share no code with the library's
// vectorized paths.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "ktg/graph.hpp"
#include "ktg/tensor.hpp"

namespace oracle {

using Row = std::vector<double>;

inline constexpr double kClamp = 1e-12;
inline constexpr double kEps = 1e-12;

inline Row softmax(const Row& z) {
    double mx = z[0];
    for (double v : z) mx = v > mx ? v : mx;
    Row p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - mx);
        s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
}

inline double kl(const Row& ps, const Row& pt) {
    double s = 0.0;
    for (std::size_t c = 0; c < ps.size(); ++c) {
        if (ps[c] <= 0.0) continue;
        const double a = std::min(1.0, std::max(ps[c], kClamp));
        const double b = std::min(1.0, std::max(pt[c], kClamp));
        s += ps[c] * std::log(a / b);
    }
    return s;
}

inline double norm(const Row& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

inline double cosine(const Row& a, const Row& b) {
    const double na = std::max(norm(a), kEps), nb = std::max(norm(b), kEps);
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] / na) * (b[i] / nb);
    return d;
}

inline double sq_dist_normalized(const Row& a, const Row& b) {
    const double na = std::max(norm(a), kEps), nb = std::max(norm(b), kEps);
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = a[i] / na - b[i] / nb;
        d += e * e;
    }
    return d;
}

struct Window {
    int r0, c0, size;
};

/// First maximum in row-major order; window shifted inward at the borders.
inline Window crop_window(const Row& map, int h, int w, int size) {
    int best = 0;
    for (int i = 1; i < h * w; ++i) {
        if (map[static_cast<std::size_t>(i)] > map[static_cast<std::size_t>(best)]) best = i;
    }
    const int pr = best / w, pc = best % w;
    int r0 = pr - size / 2, c0 = pc - size / 2;
    if (r0 < 0) r0 = 0;
    if (c0 < 0) c0 = 0;
    if (r0 + size > h) r0 = h - size;
    if (c0 + size > w) c0 = w - size;
    return {r0, c0, size};
}

inline Row crop(const Row& map, int w, const Window& win) {
    Row out;
    for (int r = win.r0; r < win.r0 + win.size; ++r) {
        for (int c = win.c0; c < win.c0 + win.size; ++c) out.push_back(map[static_cast<std::size_t>(r * w + c)]);
    }
    return out;
}

inline double attn_mse(const Row& qs, const Row& qt, int h, int w, const std::vector<int>& sizes) {
    double s = 0.0;
    for (int k : sizes) {
        const Window win = crop_window(qs, h, w, k);
        s += sq_dist_normalized(crop(qs, w, win), crop(qt, w, win));
    }
    return s / static_cast<double>(sizes.size());
}

inline double attn_cosine(const Row& qs, const Row& qt, int h, int w, const std::vector<int>& sizes) {
    double s = 0.0;
    for (int k : sizes) {
        const Window win = crop_window(qs, h, w, k);
        s += cosine(crop(qs, w, win), crop(qt, w, win));
    }
    return s / static_cast<double>(sizes.size());
}

/// Per-sample design loss from logits and maps.
inline double design(ktg::LossDesign d, const Row& zs, const Row& zt, const Row& qs, const Row& qt, int h, int w,
                     const std::vector<int>& sizes) {
    using ktg::LossDesign;
    const Row ps = softmax(zs), pt = softmax(zt);
    switch (d) {
        case LossDesign::ProbCloser: return kl(ps, pt);
        case LossDesign::ProbApart: return cosine(ps, pt);
        case LossDesign::AttnCloser: return attn_mse(qs, qt, h, w, sizes);
        case LossDesign::AttnApart: return attn_cosine(qs, qt, h, w, sizes);
        case LossDesign::BothCloser: return kl(ps, pt) + attn_mse(qs, qt, h, w, sizes);
        case LossDesign::BothApart: return cosine(ps, pt) + attn_cosine(qs, qt, h, w, sizes);
        default: return 0.0;
    }
}

inline double cross_entropy(const Row& z, int y) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    return -(z[static_cast<std::size_t>(y)] - mx - std::log(s));
}

inline Row row(const ktg::Matrix& m, Eigen::Index n) {
    Row r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) r[static_cast<std::size_t>(c)] = m(n, c);
    return r;
}

/// Hand simulation of the mean-at-same-epoch rule over an ordered report list.
class Pruner {
public:
    explicit Pruner(int guard) : guard_(guard) {}
    bool stop(int epoch, double acc) {
        auto& past = history_[epoch];
        bool s = false;
        if (static_cast<int>(past.size()) >= guard_ && !past.empty()) {
            double sum = 0.0;
            for (double v : past) sum += v;
            s = acc < sum / static_cast<double>(past.size());
        }
        past.push_back(acc);
        return s;
    }
    double mean(int epoch) const {
        const auto& past = history_.at(epoch);
        double sum = 0.0;
        for (double v : past) sum += v;
        return sum / static_cast<double>(past.size());
    }

private:
    int guard_;
    std::map<int, std::vector<double>> history_;
};

}  // namespace oracle
