#pragma once

// Minimal CPU layers with explicit forward/backward passes. Activations use a
// channel-major CNHW layout so that a convolution over the whole batch is a
// single GEMM whose output rows are channels.

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ktg::nn {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel-major activation tensor: element (c, n, y, x) lives at
/// ((c * batch + n) * height + y) * width + x.
struct Tensor {
    int channels = 0;
    int batch = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c, int n, int h, int w) : channels(c), batch(n), height(h), width(w), data(size_of(c, n, h, w), 0.0f) {}

    static std::size_t size_of(int c, int n, int h, int w) {
        return static_cast<std::size_t>(c) * static_cast<std::size_t>(n) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t size() const { return data.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    /// Elements per channel across the batch.
    std::size_t channel_stride() const { return static_cast<std::size_t>(batch) * plane(); }
    float& at(int c, int n, int y, int x) {
        return data[((static_cast<std::size_t>(c) * batch + n) * height + y) * width + x];
    }
    float at(int c, int n, int y, int x) const {
        return data[((static_cast<std::size_t>(c) * batch + n) * height + y) * width + x];
    }
    bool same_shape(const Tensor& o) const {
        return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
    }
};

struct Param {
    std::string name;
    std::vector<float> value;
    std::vector<float> grad;

    explicit Param(std::string n = {}, std::size_t size = 0) : name(std::move(n)), value(size, 0.0f), grad(size, 0.0f) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

/// Non-trainable state that must still be checkpointed (BN running stats).
struct Buffer {
    std::string name;
    std::vector<float>* values = nullptr;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding);

    void init(std::mt19937_64& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    void collect(std::vector<Param*>& params) { params.push_back(&weight_); }
    int out_channels() const { return out_; }

private:
    struct Span {
        int lo, hi;
    };
    Span valid_span(int kx, int in_w, int out_w) const;

    int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
    Param weight_;
    // forward cache
    int batch_ = 0, in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
    MatrixF cols_;
    Tensor input_;  // kept only for the 1x1/stride-1 fast path
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(std::string name, int channels);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);

    void collect(std::vector<Param*>& params) { params.push_back(&gamma_); params.push_back(&beta_); }
    void collect(std::vector<Buffer>& buffers);

    static constexpr float kEps = 1e-5f;
    static constexpr float kMomentum = 0.1f;

private:
    int channels_ = 0;
    Param gamma_, beta_;
    std::vector<float> running_mean_, running_var_;
    std::string name_;
    // forward cache
    Tensor xhat_;
    std::vector<float> inv_std_;
};

Tensor relu(const Tensor& x);
/// dy masked by (y > 0), where y is the ReLU output.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

/// Mean over each (channel, sample) plane: returns channels x batch.
MatrixF global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const MatrixF& d, int height, int width);

class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in_features, int out_features);

    void init(std::mt19937_64& rng);
    /// x is in_features x batch; returns out_features x batch.
    MatrixF forward(const MatrixF& x);
    MatrixF backward(const MatrixF& dy);

    void collect(std::vector<Param*>& params) { params.push_back(&weight_); params.push_back(&bias_); }
    Param& weight() { return weight_; }
    Param& bias() { return bias_; }

private:
    int in_ = 0, out_ = 0;
    Param weight_, bias_;
    MatrixF input_;
};

/// conv-bn-relu-conv-bn plus identity or projection shortcut, then relu.
class BasicBlock {
public:
    BasicBlock() = default;
    BasicBlock(const std::string& name, int in_channels, int out_channels, int stride);

    void init(std::mt19937_64& rng);
    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);

    void collect(std::vector<Param*>& params);
    void collect(std::vector<Buffer>& buffers);

private:
    Conv2d conv1_, conv2_, proj_;
    BatchNorm2d bn1_, bn2_, proj_bn_;
    bool has_proj_ = false;
    Tensor mid_, out_;
};

}  // namespace ktg::nn
