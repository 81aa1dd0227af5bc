#include "ktg/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"
#include "ktg/error.hpp"
#include "ktg/losses.hpp"

namespace ktg {

std::vector<int> default_crop_sizes(Arch arch, int side) {
    const std::vector<int> base = arch == Arch::AtSmallResNet ? std::vector<int>{3, 5} : std::vector<int>{3, 7, 11};
    const int largest = *std::max_element(base.begin(), base.end());
    if (largest <= side) return base;
    const int max_odd = side % 2 == 1 ? side : side - 1;
    std::vector<int> out;
    for (int k : base) {
        const double scaled = static_cast<double>(k) * side / largest;
        int odd = 2 * static_cast<int>(std::lround((scaled - 1.0) / 2.0)) + 1;
        odd = std::clamp(odd, 1, std::max(1, max_odd));
        if (std::find(out.begin(), out.end(), odd) == out.end()) out.push_back(odd);
    }
    return out;
}

std::vector<int> BackboneConfig::effective_crop_sizes() const {
    return crop_sizes.empty() ? default_crop_sizes(arch, attention_side()) : crop_sizes;
}

nn::Tensor at_attention(const nn::Tensor& features) {
    nn::Tensor a(1, features.batch, features.height, features.width);
    const std::size_t len = features.channel_stride();
    const float inv_c = 1.0f / static_cast<float>(features.channels);
    for (int c = 0; c < features.channels; ++c) {
        const float* f = &features.data[static_cast<std::size_t>(c) * len];
        for (std::size_t i = 0; i < len; ++i) a.data[i] += f[i] * f[i];
    }
    for (auto& v : a.data) v *= inv_c;
    return a;
}

nn::Tensor reweight_features(const nn::Tensor& features, const nn::Tensor& attention) {
    if (attention.channels != 1 || attention.channel_stride() != features.channel_stride()) {
        throw Error(ErrorKind::Shape, "attention map does not match feature map");
    }
    nn::Tensor out = features;
    const std::size_t len = features.channel_stride();
    for (int c = 0; c < features.channels; ++c) {
        float* f = &out.data[static_cast<std::size_t>(c) * len];
        for (std::size_t i = 0; i < len; ++i) f[i] *= attention.data[i];
    }
    return out;
}

Vector prediction_entropy(const Matrix& probs) { return entropy(probs); }

// ---------------------------------------------------------------------------

Backbone::Backbone(BackboneConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    const auto& w = config_.widths;
    const int classes = config_.num_classes;
    if (classes < 2) throw Error(ErrorKind::Config, "a backbone needs at least 2 classes");
    check_crop_sizes(config_.effective_crop_sizes(), config_.attention_side(), config_.attention_side());

    stem_ = nn::Conv2d("stem", config_.in_channels, w[0], 3, 2, 1);
    stem_bn_ = nn::BatchNorm2d("stem_bn", w[0]);
    stages_[0] = nn::BasicBlock("stage1", w[0], w[0], 1);
    stages_[1] = nn::BasicBlock("stage2", w[0], w[1], 2);
    stages_[2] = nn::BasicBlock("stage3", w[1], w[2], 1);
    stages_[3] = nn::BasicBlock("stage4", w[2], w[3], 1);
    fc_ = nn::Linear("fc", w[3], classes);
    if (config_.arch == Arch::AbnSmallResNet) {
        att_block_ = nn::BasicBlock("att_block", w[2], w[3], 1);
        att_conv_ = nn::Conv2d("att_conv", w[3], classes, 1, 1, 0);
        att_bn_ = nn::BatchNorm2d("att_bn", classes);
        aux_fc_ = nn::Linear("aux_fc", classes, classes);
        map_conv_ = nn::Conv2d("map_conv", classes, 1, 1, 1, 0);
        map_bn_ = nn::BatchNorm2d("map_bn", 1);
    }

    std::mt19937_64 rng(seed_);
    stem_.init(rng);
    for (auto& s : stages_) s.init(rng);
    fc_.init(rng);
    if (config_.arch == Arch::AbnSmallResNet) {
        att_block_.init(rng);
        att_conv_.init(rng);
        aux_fc_.init(rng);
        map_conv_.init(rng);
    }
}

std::vector<nn::Param*> Backbone::params() {
    std::vector<nn::Param*> p;
    stem_.collect(p);
    stem_bn_.collect(p);
    for (auto& s : stages_) s.collect(p);
    fc_.collect(p);
    if (config_.arch == Arch::AbnSmallResNet) {
        att_block_.collect(p);
        att_conv_.collect(p);
        att_bn_.collect(p);
        aux_fc_.collect(p);
        map_conv_.collect(p);
        map_bn_.collect(p);
    }
    return p;
}

std::vector<nn::Buffer> Backbone::buffers() {
    std::vector<nn::Buffer> b;
    stem_bn_.collect(b);
    for (auto& s : stages_) s.collect(b);
    if (config_.arch == Arch::AbnSmallResNet) {
        att_block_.collect(b);
        att_bn_.collect(b);
        map_bn_.collect(b);
    }
    return b;
}

std::size_t Backbone::parameter_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
}

void Backbone::zero_grad() {
    for (auto* p : params()) p->zero_grad();
}

namespace {

Matrix logits_to_double(const nn::MatrixF& m) {
    // m is classes x batch; results are batch x classes.
    return m.transpose().cast<double>();
}

AttentionBatch attention_to_double(const nn::Tensor& a) {
    AttentionBatch out(static_cast<std::size_t>(a.batch), a.height, a.width);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.maps.data()[i] = a.data[i];
    return out;
}

nn::Tensor attention_grad_to_float(const Matrix& d, int batch, int h, int w) {
    nn::Tensor g(1, batch, h, w);
    if (d.size() == 0) return g;
    if (d.rows() != batch || d.cols() != h * w) throw Error(ErrorKind::Shape, "attention gradient shape mismatch");
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = static_cast<float>(d.data()[i]);
    return g;
}

nn::MatrixF logits_grad_to_float(const Matrix& d, int batch, int classes) {
    if (d.rows() != batch || d.cols() != classes) throw Error(ErrorKind::Shape, "logit gradient shape mismatch");
    return d.transpose().cast<float>();
}

}  // namespace

NodeOutput Backbone::forward(const nn::Tensor& images, bool train) {
    if (images.channels != config_.in_channels || images.height != config_.image_size ||
        images.width != config_.image_size) {
        throw Error(ErrorKind::Shape, "expected " + std::to_string(config_.in_channels) + "x" +
                                          std::to_string(config_.image_size) + "x" +
                                          std::to_string(config_.image_size) + " images, got " +
                                          std::to_string(images.channels) + "x" + std::to_string(images.height) +
                                          "x" + std::to_string(images.width));
    }
    stem_out_ = nn::relu(stem_bn_.forward(stem_.forward(images), train));
    nn::Tensor x = stages_[0].forward(stem_out_, train);
    x = stages_[1].forward(x, train);
    features3_ = stages_[2].forward(x, train);

    NodeOutput out;
    if (config_.arch == Arch::AtSmallResNet) {
        features4_ = stages_[3].forward(features3_, train);
        out.attention = attention_to_double(at_attention(features4_));
    } else {
        const nn::Tensor g = att_block_.forward(features3_, train);
        att_k_ = nn::relu(att_bn_.forward(att_conv_.forward(g), train));
        out.aux_logits = logits_to_double(aux_fc_.forward(nn::global_avg_pool(att_k_)));
        att_map_ = nn::sigmoid(map_bn_.forward(map_conv_.forward(att_k_), train));
        features4_ = stages_[3].forward(reweight_features(features3_, att_map_), train);
        out.attention = attention_to_double(att_map_);
    }
    head_h_ = features4_.height;
    head_w_ = features4_.width;
    out.logits = logits_to_double(fc_.forward(nn::global_avg_pool(features4_)));
    out.probs = softmax_rows(out.logits);
    return out;
}

void Backbone::backward(const OutputGrad& grad) {
    const int batch = features4_.batch;
    const int classes = config_.num_classes;
    nn::Tensor d4 =
        nn::global_avg_pool_backward(fc_.backward(logits_grad_to_float(grad.d_logits, batch, classes)), head_h_, head_w_);
    const nn::Tensor d_att = attention_grad_to_float(grad.d_attention, batch, head_h_, head_w_);

    nn::Tensor d3;
    if (config_.arch == Arch::AtSmallResNet) {
        if (grad.d_attention.size() != 0) {
            // A = mean_c f^2  =>  dF_c = (2 / C) f_c dA
            const std::size_t len = features4_.channel_stride();
            const float k = 2.0f / static_cast<float>(features4_.channels);
            for (int c = 0; c < features4_.channels; ++c) {
                const float* f = &features4_.data[static_cast<std::size_t>(c) * len];
                float* d = &d4.data[static_cast<std::size_t>(c) * len];
                for (std::size_t i = 0; i < len; ++i) d[i] += k * f[i] * d_att.data[i];
            }
        }
        d3 = stages_[3].backward(d4);
    } else {
        const nn::Tensor d_reweighted = stages_[3].backward(d4);
        // f' = f * a
        d3 = reweight_features(d_reweighted, att_map_);
        nn::Tensor d_map = d_att;
        const std::size_t len = features3_.channel_stride();
        for (int c = 0; c < features3_.channels; ++c) {
            const float* f = &features3_.data[static_cast<std::size_t>(c) * len];
            const float* g = &d_reweighted.data[static_cast<std::size_t>(c) * len];
            for (std::size_t i = 0; i < len; ++i) d_map.data[i] += f[i] * g[i];
        }
        nn::Tensor dk = map_conv_.backward(map_bn_.backward(nn::sigmoid_backward(att_map_, d_map)));
        if (grad.d_aux_logits) {
            const nn::Tensor dk_aux = nn::global_avg_pool_backward(
                aux_fc_.backward(logits_grad_to_float(*grad.d_aux_logits, batch, classes)), att_k_.height,
                att_k_.width);
            for (std::size_t i = 0; i < dk.data.size(); ++i) dk.data[i] += dk_aux.data[i];
        }
        const nn::Tensor dg = att_conv_.backward(att_bn_.backward(nn::relu_backward(att_k_, dk)));
        const nn::Tensor d_branch = att_block_.backward(dg);
        for (std::size_t i = 0; i < d3.data.size(); ++i) d3.data[i] += d_branch.data[i];
    }
    nn::Tensor x = stages_[2].backward(d3);
    x = stages_[1].backward(x);
    x = stages_[0].backward(x);
    stem_.backward(stem_bn_.backward(nn::relu_backward(stem_out_, x)));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'K', 'T', 'G', 'C', 'K', 'P', 'T', '1'};

void write_block(std::ofstream& out, const std::string& name, const std::vector<float>& values) {
    const auto len = static_cast<std::uint32_t>(name.size());
    const auto count = static_cast<std::uint64_t>(values.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(name.data(), len);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
}

}  // namespace

void Backbone::save(const std::filesystem::path& path) {
    nlohmann::json header = {
        {"arch", std::string(to_string(config_.arch))},
        {"num_classes", config_.num_classes},
        {"in_channels", config_.in_channels},
        {"image_size", config_.image_size},
        {"widths", config_.widths},
        {"crop_sizes", config_.crop_sizes},
        {"seed", seed_},
    };
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const auto len = static_cast<std::uint32_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), len);
    for (auto* p : params()) write_block(out, p->name, p->value);
    for (const auto& b : buffers()) write_block(out, b.name, *b.values);
    if (!out) throw Error(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

Backbone Backbone::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw Error(ErrorKind::Parse, path.string() + ": not a model checkpoint");
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    in.read(text.data(), len);
    BackboneConfig cfg;
    std::uint64_t seed = 0;
    try {
        const auto header = nlohmann::json::parse(text);
        const auto arch = parse_arch(header.at("arch").get<std::string>());
        if (!arch) throw Error(ErrorKind::Schema, path.string() + ": unknown arch");
        cfg.arch = *arch;
        cfg.num_classes = header.at("num_classes").get<int>();
        cfg.in_channels = header.at("in_channels").get<int>();
        cfg.image_size = header.at("image_size").get<int>();
        cfg.widths = header.at("widths").get<std::array<int, 4>>();
        cfg.crop_sizes = header.at("crop_sizes").get<std::vector<int>>();
        seed = header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, path.string() + ": bad checkpoint header: " + e.what());
    }

    Backbone model(cfg, seed);
    std::map<std::string, std::vector<float>*> slots;
    for (auto* p : model.params()) slots[p->name] = &p->value;
    for (const auto& b : model.buffers()) slots[b.name] = b.values;
    std::size_t filled = 0;
    while (in.peek() != std::char_traits<char>::eof()) {
        std::uint32_t name_len = 0;
        std::uint64_t count = 0;
        in.read(reinterpret_cast<char*>(&name_len), sizeof name_len);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        in.read(reinterpret_cast<char*>(&count), sizeof count);
        auto it = slots.find(name);
        if (!in || it == slots.end() || it->second->size() != count) {
            throw Error(ErrorKind::Parse, path.string() + ": unexpected tensor '" + name + "'");
        }
        in.read(reinterpret_cast<char*>(it->second->data()), static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) throw Error(ErrorKind::Parse, path.string() + ": truncated tensor '" + name + "'");
        ++filled;
    }
    if (filled != slots.size()) throw Error(ErrorKind::Parse, path.string() + ": checkpoint is missing tensors");
    return model;
}

}  // namespace ktg
