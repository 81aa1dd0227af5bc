#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ktg/nn.hpp"

namespace ktg {

/// Labeled images stored sample-major, each sample channels x height x width
/// with values in [0, 1].
struct Dataset {
    std::string name;
    int num_classes = 0;
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_size() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_size(), image_size()}; }
    std::vector<std::size_t> class_counts() const;
    Dataset subset(std::span<const std::size_t> indices) const;
};

struct SyntheticParams {
    int num_classes = 4;
    int per_class = 64;
    int image_size = 32;
    std::uint64_t seed = 0;
    /// Harder images: random foreground/background colours instead of a
    /// colour per class, textured clutter, distractor shapes, pixel noise.
    bool hard = false;
    double noise = 0.04;
    int distractors = 0;
};

/// Procedural shapes, one shape family per class (textures distinguish
/// classes beyond the ten base shapes). Deterministic in `params.seed`.
Dataset synthetic_dataset(const SyntheticParams& params);

struct DatasetSpec {
    /// "synthetic", "synthetic-hard", "folder" or "cifar10-bin".
    std::string name = "synthetic";
    int num_classes = 4;
    int train_per_class = 64;
    int test_per_class = 32;
    int image_size = 32;
    std::uint64_t seed = 0;
    std::filesystem::path source;
    /// Keep at most this many training images per class (0 = all).
    int max_train_per_class = 0;
    int max_test_per_class = 0;
    double noise = -1.0;   // < 0: generator default
    int distractors = -1;  // < 0: generator default
    bool augment = true;
};

struct DatasetSplits {
    Dataset train;
    Dataset test;
};

DatasetSplits load_dataset(const DatasetSpec& spec);

/// Directory layout: <root>/<class>/<image>.ppm|.pgm, classes in sorted order.
Dataset load_image_folder(const std::filesystem::path& root, const std::string& name);

struct HalfSplit {
    std::vector<std::size_t> train;  // explore-train (gets the extra sample of odd classes)
    std::vector<std::size_t> val;
};

/// Per-class 50/50 partition chosen by a seeded shuffle.
HalfSplit balanced_half_split(const Dataset& data, std::uint64_t seed);

struct Normalization {
    std::vector<float> mean;
    std::vector<float> stddev;

    static Normalization fit(const Dataset& data);
};

struct Batch {
    nn::Tensor images;  // channels x N x H x W, normalized
    std::vector<int> labels;
};

/// Deterministic mini-batch iterator. Training streams reshuffle every epoch
/// and apply random crop (zero padding) plus horizontal flip; evaluation
/// streams keep dataset order and never augment.
class BatchStream {
public:
    struct Options {
        int batch_size = 64;
        bool shuffle = false;
        bool augment = false;
        bool drop_last = false;
        int crop_padding = 4;
        std::uint64_t seed = 0;
    };

    BatchStream(const Dataset& data, std::vector<std::size_t> indices, Normalization norm, Options options);

    std::size_t batches_per_epoch() const;
    std::size_t samples() const { return indices_.size(); }
    void start_epoch(int epoch);
    Batch batch(std::size_t b) const;

private:
    const Dataset* data_;
    std::vector<std::size_t> indices_;
    std::vector<std::size_t> order_;
    Normalization norm_;
    Options options_;
    // per-position augmentation draws for the current epoch
    std::vector<int> shift_y_, shift_x_;
    std::vector<char> flip_;
};

std::vector<std::size_t> all_indices(const Dataset& data);

}  // namespace ktg
