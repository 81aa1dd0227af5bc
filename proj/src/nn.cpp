#include "ktg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "ktg/error.hpp"

namespace ktg::nn {

namespace {

using MapF = Eigen::Map<MatrixF>;
using ConstMapF = Eigen::Map<const MatrixF>;

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(padding),
      weight_(std::move(name) + ".weight",
              static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel) {}

void Conv2d::init(std::mt19937_64& rng) {
    // He initialization, fan-out mode.
    const float stddev = std::sqrt(2.0f / static_cast<float>(out_ * kernel_ * kernel_));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (auto& w : weight_.value) w = dist(rng);
}

Conv2d::Span Conv2d::valid_span(int kx, int in_w, int out_w) const {
    // output columns ox with 0 <= ox * stride - pad + kx < in_w
    Span sp{0, out_w};
    while (sp.lo < out_w && sp.lo * stride_ - pad_ + kx < 0) ++sp.lo;
    while (sp.hi > sp.lo && (sp.hi - 1) * stride_ - pad_ + kx >= in_w) --sp.hi;
    return sp;
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.channels != in_) {
        throw Error(ErrorKind::Shape, weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                          std::to_string(x.channels));
    }
    batch_ = x.batch;
    in_h_ = x.height;
    in_w_ = x.width;
    out_h_ = (in_h_ + 2 * pad_ - kernel_) / stride_ + 1;
    out_w_ = (in_w_ + 2 * pad_ - kernel_) / stride_ + 1;
    if (out_h_ <= 0 || out_w_ <= 0) throw Error(ErrorKind::Shape, weight_.name + ": input too small");

    const Eigen::Index positions = static_cast<Eigen::Index>(batch_) * out_h_ * out_w_;
    const Eigen::Index rows = static_cast<Eigen::Index>(in_) * kernel_ * kernel_;
    Tensor y(out_, batch_, out_h_, out_w_);
    ConstMapF w(weight_.value.data(), out_, rows);
    MapF out(y.data.data(), out_, positions);

    if (kernel_ == 1 && stride_ == 1 && pad_ == 0) {
        input_ = x;
        out.noalias() = w * ConstMapF(input_.data.data(), in_, positions);
        return y;
    }

    cols_.resize(rows, positions);
    for (int ci = 0; ci < in_; ++ci) {
        for (int ky = 0; ky < kernel_; ++ky) {
            for (int kx = 0; kx < kernel_; ++kx) {
                float* dst = cols_.row((ci * kernel_ + ky) * kernel_ + kx).data();
                const Span span = valid_span(kx, in_w_, out_w_);
                for (int n = 0; n < batch_; ++n) {
                    for (int oy = 0; oy < out_h_; ++oy) {
                        float* d = dst + (static_cast<std::size_t>(n) * out_h_ + oy) * out_w_;
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= in_h_) {
                            std::fill(d, d + out_w_, 0.0f);
                            continue;
                        }
                        const float* src = &x.data[((static_cast<std::size_t>(ci) * batch_ + n) * in_h_ + iy) * in_w_];
                        std::fill(d, d + span.lo, 0.0f);
                        std::fill(d + span.hi, d + out_w_, 0.0f);
                        const float* s0 = src + span.lo * stride_ - pad_ + kx;
                        if (stride_ == 1) {
                            std::copy(s0, s0 + (span.hi - span.lo), d + span.lo);
                        } else {
                            for (int ox = span.lo; ox < span.hi; ++ox) d[ox] = s0[(ox - span.lo) * stride_];
                        }
                    }
                }
            }
        }
    }
    out.noalias() = w * cols_;
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const Eigen::Index positions = static_cast<Eigen::Index>(batch_) * out_h_ * out_w_;
    const Eigen::Index rows = static_cast<Eigen::Index>(in_) * kernel_ * kernel_;
    if (dy.channels != out_ || static_cast<Eigen::Index>(dy.channel_stride()) != positions) {
        throw Error(ErrorKind::Shape, weight_.name + ": gradient shape mismatch");
    }
    ConstMapF g(dy.data.data(), out_, positions);
    ConstMapF w(weight_.value.data(), out_, rows);
    MapF dw(weight_.grad.data(), out_, rows);
    Tensor dx(in_, batch_, in_h_, in_w_);

    if (kernel_ == 1 && stride_ == 1 && pad_ == 0) {
        ConstMapF x(input_.data.data(), in_, positions);
        dw.noalias() += g * x.transpose();
        MapF(dx.data.data(), in_, positions).noalias() = w.transpose() * g;
        return dx;
    }

    dw.noalias() += g * cols_.transpose();
    MatrixF dcols = w.transpose() * g;
    for (int ci = 0; ci < in_; ++ci) {
        for (int ky = 0; ky < kernel_; ++ky) {
            for (int kx = 0; kx < kernel_; ++kx) {
                const float* src_row = dcols.row((ci * kernel_ + ky) * kernel_ + kx).data();
                const Span span = valid_span(kx, in_w_, out_w_);
                for (int n = 0; n < batch_; ++n) {
                    for (int oy = 0; oy < out_h_; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= in_h_) continue;
                        const float* s = src_row + (static_cast<std::size_t>(n) * out_h_ + oy) * out_w_;
                        float* d = &dx.data[((static_cast<std::size_t>(ci) * batch_ + n) * in_h_ + iy) * in_w_];
                        d += span.lo * stride_ - pad_ + kx;
                        for (int ox = span.lo; ox < span.hi; ++ox) d[(ox - span.lo) * stride_] += s[ox];
                    }
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels)
    : channels_(channels),
      gamma_(name + ".gamma", static_cast<std::size_t>(channels)),
      beta_(name + ".beta", static_cast<std::size_t>(channels)),
      running_mean_(static_cast<std::size_t>(channels), 0.0f),
      running_var_(static_cast<std::size_t>(channels), 1.0f),
      name_(std::move(name)) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0f);
}

void BatchNorm2d::collect(std::vector<Buffer>& buffers) {
    buffers.push_back({name_ + ".running_mean", &running_mean_});
    buffers.push_back({name_ + ".running_var", &running_var_});
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
    if (x.channels != channels_) throw Error(ErrorKind::Shape, name_ + ": channel mismatch");
    const std::size_t len = x.channel_stride();
    Tensor y(x.channels, x.batch, x.height, x.width);
    if (train) {
        xhat_ = Tensor(x.channels, x.batch, x.height, x.width);
        inv_std_.assign(static_cast<std::size_t>(channels_), 0.0f);
    }
    for (int c = 0; c < channels_; ++c) {
        const float* src = &x.data[static_cast<std::size_t>(c) * len];
        float* dst = &y.data[static_cast<std::size_t>(c) * len];
        const auto cu = static_cast<std::size_t>(c);
        if (train) {
            Eigen::Map<const Eigen::ArrayXf> xs(src, static_cast<Eigen::Index>(len));
            const double mean = static_cast<double>(xs.cast<double>().sum()) / static_cast<double>(len);
            const auto m = static_cast<float>(mean);
            const double sq = (xs - m).square().cast<double>().sum();
            const double var = sq / static_cast<double>(len);
            const float inv = static_cast<float>(1.0 / std::sqrt(var + kEps));
            inv_std_[cu] = inv;
            Eigen::Map<Eigen::ArrayXf> xh(&xhat_.data[cu * len], static_cast<Eigen::Index>(len));
            xh = (xs - m) * inv;
            Eigen::Map<Eigen::ArrayXf>(dst, static_cast<Eigen::Index>(len)) = gamma_.value[cu] * xh + beta_.value[cu];
            const double unbiased = len > 1 ? sq / static_cast<double>(len - 1) : var;
            running_mean_[cu] = (1.0f - kMomentum) * running_mean_[cu] + kMomentum * m;
            running_var_[cu] = (1.0f - kMomentum) * running_var_[cu] + kMomentum * static_cast<float>(unbiased);
        } else {
            const float inv = 1.0f / std::sqrt(running_var_[cu] + kEps);
            const float scale = gamma_.value[cu] * inv;
            const float shift = beta_.value[cu] - running_mean_[cu] * scale;
            Eigen::Map<Eigen::ArrayXf>(dst, static_cast<Eigen::Index>(len)) =
                Eigen::Map<const Eigen::ArrayXf>(src, static_cast<Eigen::Index>(len)) * scale + shift;
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    if (!dy.same_shape(xhat_)) throw Error(ErrorKind::Shape, name_ + ": backward without matching forward");
    const std::size_t len = dy.channel_stride();
    Tensor dx(dy.channels, dy.batch, dy.height, dy.width);
    for (int c = 0; c < channels_; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        const float* g = &dy.data[cu * len];
        const float* xh = &xhat_.data[cu * len];
        float* d = &dx.data[cu * len];
        const auto n = static_cast<Eigen::Index>(len);
        Eigen::Map<const Eigen::ArrayXf> ga(g, n), xa(xh, n);
        const double sum_g = ga.cast<double>().sum();
        const double sum_gx = (ga * xa).cast<double>().sum();
        gamma_.grad[cu] += static_cast<float>(sum_gx);
        beta_.grad[cu] += static_cast<float>(sum_g);
        const float k = gamma_.value[cu] * inv_std_[cu] / static_cast<float>(len);
        const auto mg = static_cast<float>(sum_g);
        const auto mgx = static_cast<float>(sum_gx);
        const auto lf = static_cast<float>(len);
        Eigen::Map<Eigen::ArrayXf>(d, n) = k * (lf * ga - mg - xa * mgx);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Pointwise

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
        if (!(y.data[i] > 0.0f)) dx.data[i] = 0.0f;
    }
    return dx;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data) v = 1.0f / (1.0f + std::exp(-v));
    return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= y.data[i] * (1.0f - y.data[i]);
    return dx;
}

MatrixF global_avg_pool(const Tensor& x) {
    MatrixF out(x.channels, x.batch);
    const std::size_t plane = x.plane();
    for (int c = 0; c < x.channels; ++c) {
        for (int n = 0; n < x.batch; ++n) {
            const float* p = &x.data[(static_cast<std::size_t>(c) * x.batch + n) * plane];
            float s = 0.0f;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
            out(c, n) = s / static_cast<float>(plane);
        }
    }
    return out;
}

Tensor global_avg_pool_backward(const MatrixF& d, int height, int width) {
    Tensor dx(static_cast<int>(d.rows()), static_cast<int>(d.cols()), height, width);
    const std::size_t plane = dx.plane();
    for (int c = 0; c < dx.channels; ++c) {
        for (int n = 0; n < dx.batch; ++n) {
            const float v = d(c, n) / static_cast<float>(plane);
            float* p = &dx.data[(static_cast<std::size_t>(c) * dx.batch + n) * plane];
            std::fill(p, p + plane, v);
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(name + ".weight", static_cast<std::size_t>(in_features) * out_features),
      bias_(name + ".bias", static_cast<std::size_t>(out_features)) {}

void Linear::init(std::mt19937_64& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& w : weight_.value) w = dist(rng);
    for (auto& b : bias_.value) b = dist(rng);
}

MatrixF Linear::forward(const MatrixF& x) {
    if (x.rows() != in_) throw Error(ErrorKind::Shape, weight_.name + ": feature mismatch");
    input_ = x;
    ConstMapF w(weight_.value.data(), out_, in_);
    Eigen::Map<const Eigen::VectorXf> b(bias_.value.data(), out_);
    MatrixF y = w * x;
    y.colwise() += b;
    return y;
}

MatrixF Linear::backward(const MatrixF& dy) {
    ConstMapF w(weight_.value.data(), out_, in_);
    MapF(weight_.grad.data(), out_, in_).noalias() += dy * input_.transpose();
    Eigen::Map<Eigen::VectorXf>(bias_.grad.data(), out_) += dy.rowwise().sum();
    return w.transpose() * dy;
}

// ---------------------------------------------------------------------------
// BasicBlock

BasicBlock::BasicBlock(const std::string& name, int in_channels, int out_channels, int stride)
    : conv1_(name + ".conv1", in_channels, out_channels, 3, stride, 1),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1),
      bn1_(name + ".bn1", out_channels),
      bn2_(name + ".bn2", out_channels),
      has_proj_(stride != 1 || in_channels != out_channels) {
    if (has_proj_) {
        proj_ = Conv2d(name + ".proj", in_channels, out_channels, 1, stride, 0);
        proj_bn_ = BatchNorm2d(name + ".proj_bn", out_channels);
    }
}

void BasicBlock::init(std::mt19937_64& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (has_proj_) proj_.init(rng);
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
    mid_ = relu(bn1_.forward(conv1_.forward(x), train));
    Tensor y = bn2_.forward(conv2_.forward(mid_), train);
    const Tensor shortcut = has_proj_ ? proj_bn_.forward(proj_.forward(x), train) : x;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += shortcut.data[i];
    out_ = relu(y);
    return out_;
}

Tensor BasicBlock::backward(const Tensor& dy) {
    const Tensor g = relu_backward(out_, dy);
    Tensor dx = conv1_.backward(bn1_.backward(relu_backward(mid_, conv2_.backward(bn2_.backward(g)))));
    const Tensor ds = has_proj_ ? proj_.backward(proj_bn_.backward(g)) : g;
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
    return dx;
}

void BasicBlock::collect(std::vector<Param*>& params) {
    conv1_.collect(params);
    bn1_.collect(params);
    conv2_.collect(params);
    bn2_.collect(params);
    if (has_proj_) {
        proj_.collect(params);
        proj_bn_.collect(params);
    }
}

void BasicBlock::collect(std::vector<Buffer>& buffers) {
    bn1_.collect(buffers);
    bn2_.collect(buffers);
    if (has_proj_) proj_bn_.collect(buffers);
}

}  // namespace ktg::nn
