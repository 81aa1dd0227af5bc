#pragma once

// Desk-scale residual backbones that expose logits plus a spatial attention map.
//
//   AT-small-resnet : attention = channel mean of squared stage-4 activations.
//   ABN-small-resnet: an attention branch on the stage-3 features produces a
//                     sigmoid map a and auxiliary class scores; the perception
//                     branch sees f * a (no residual) before stage 4.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ktg/graph.hpp"
#include "ktg/nn.hpp"
#include "ktg/tensor.hpp"

namespace ktg {

struct BackboneConfig {
    Arch arch = Arch::AtSmallResNet;
    int num_classes = 10;
    int in_channels = 3;
    int image_size = 32;
    std::array<int, 4> widths{16, 32, 64, 64};
    /// Empty means default_crop_sizes(arch, attention_side()).
    std::vector<int> crop_sizes;

    /// The stem and stage 2 each halve the resolution.
    int attention_side() const { return (((image_size - 1) / 2 + 1) - 1) / 2 + 1; }
    std::vector<int> effective_crop_sizes() const;
};

/// AT: {3, 5}; ABN: {3, 7, 11}. When the largest size exceeds `side`, every
/// size is scaled by side/largest and rounded to the nearest odd value that
/// fits, dropping duplicates.
std::vector<int> default_crop_sizes(Arch arch, int side);

/// Channel mean of squared activations: returns 1 x N x H x W.
nn::Tensor at_attention(const nn::Tensor& features);

/// f * a broadcast over channels; `attention` is 1 x N x H x W.
nn::Tensor reweight_features(const nn::Tensor& features, const nn::Tensor& attention);

/// Entropy of each predicted distribution, in nats.
Vector prediction_entropy(const Matrix& probs);

class Backbone {
public:
    Backbone(BackboneConfig config, std::uint64_t seed);

    /// `images` is in_channels x N x image_size x image_size.
    NodeOutput forward(const nn::Tensor& images, bool train);
    /// Accumulates parameter gradients for the most recent forward pass.
    void backward(const OutputGrad& grad);
    void zero_grad();

    std::vector<nn::Param*> params();
    std::vector<nn::Buffer> buffers();
    std::size_t parameter_count();
    const BackboneConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    void save(const std::filesystem::path& path);
    static Backbone load(const std::filesystem::path& path);

private:
    BackboneConfig config_;
    std::uint64_t seed_;

    nn::Conv2d stem_;
    nn::BatchNorm2d stem_bn_;
    std::array<nn::BasicBlock, 4> stages_;
    nn::Linear fc_;

    // ABN attention branch
    nn::BasicBlock att_block_;
    nn::Conv2d att_conv_;
    nn::BatchNorm2d att_bn_;
    nn::Linear aux_fc_;
    nn::Conv2d map_conv_;
    nn::BatchNorm2d map_bn_;

    // forward cache
    nn::Tensor stem_out_, features3_, features4_, att_k_, att_map_;
    int head_h_ = 0, head_w_ = 0;
};

}  // namespace ktg
