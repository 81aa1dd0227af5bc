#include "ktg/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "ktg/error.hpp"

namespace ktg {

namespace fs = std::filesystem;

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
    return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.name = name;
    out.num_classes = num_classes;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.pixels.reserve(indices.size() * image_size());
    out.labels.reserve(indices.size());
    for (auto i : indices) {
        const auto img = image(i);
        out.pixels.insert(out.pixels.end(), img.begin(), img.end());
        out.labels.push_back(labels[i]);
    }
    return out;
}

std::vector<std::size_t> all_indices(const Dataset& data) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

using Rgb = std::array<float, 3>;

bool inside_shape(int shape, double dx, double dy) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (shape) {
        case 0: return dx * dx + dy * dy <= 1.0;                                  // disk
        case 1: return std::max(ax, ay) <= 0.8;                                  // square
        case 2: return dy >= -0.85 && dy <= 0.8 && ax <= 0.95 * (dy + 0.85) / 1.65;  // triangle, apex up
        case 3: { const double r = std::sqrt(dx * dx + dy * dy); return r >= 0.55 && r <= 1.0; }  // ring
        case 4: return (ax <= 0.25 && ay <= 0.9) || (ay <= 0.25 && ax <= 0.9);    // plus
        case 5: return std::abs(ax - ay) <= 0.22 && std::max(ax, ay) <= 0.85;      // X
        case 6: return ay <= 0.28 && ax <= 0.95;                                  // horizontal bar
        case 7: return ax <= 0.28 && ay <= 0.95;                                  // vertical bar
        case 8: return ax + ay <= 0.95;                                           // diamond
        default: return dy >= -0.8 && dy <= 0.85 && ax <= 0.95 * (0.85 - dy) / 1.65;  // triangle, apex down
    }
}

/// Texture variants separate classes that share a base shape.
bool textured_on(int variant, int x, int y) {
    switch (variant % 3) {
        case 0: return true;
        case 1: return (y / 2) % 2 == 0;
        default: return ((x / 2) + (y / 2)) % 2 == 0;
    }
}

Rgb hsv(double h, double s, double v) {
    h = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(h);
    const double f = h - i;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r = v, g = t, b = p;
    switch (i % 6) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

struct Pose {
    double cx, cy, radius;
    double angle = 0.0;   // radians
    double stretch = 1.0;  // x/y aspect
};

void draw_shape(std::vector<float>& img, int size, int shape, int variant, const Pose& pose, const Rgb& color) {
    const auto plane = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
    const double c = std::cos(pose.angle), s = std::sin(pose.angle);
    const double rx = pose.radius * std::sqrt(pose.stretch), ry = pose.radius / std::sqrt(pose.stretch);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double ux = x + 0.5 - pose.cx, uy = y + 0.5 - pose.cy;
            const double dx = (c * ux + s * uy) / rx;
            const double dy = (-s * ux + c * uy) / ry;
            if (!inside_shape(shape, dx, dy) || !textured_on(variant, x, y)) continue;
            const auto p = static_cast<std::size_t>(y) * size + x;
            for (int c = 0; c < 3; ++c) img[c * plane + p] = color[static_cast<std::size_t>(c)];
        }
    }
}

}  // namespace

Dataset synthetic_dataset(const SyntheticParams& params) {
    if (params.num_classes < 2) throw Error(ErrorKind::Config, "synthetic data needs at least 2 classes");
    if (params.per_class < 1 || params.image_size < 8) throw Error(ErrorKind::Config, "bad synthetic dataset size");

    Dataset d;
    d.name = params.hard ? "synthetic-hard" : "synthetic";
    d.num_classes = params.num_classes;
    d.channels = 3;
    d.height = d.width = params.image_size;
    const int size = params.image_size;
    const auto plane = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
    d.pixels.reserve(static_cast<std::size_t>(params.num_classes) * params.per_class * 3 * plane);

    std::mt19937_64 rng(params.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (int i = 0; i < params.per_class; ++i) {
        for (int cls = 0; cls < params.num_classes; ++cls) {
            std::vector<float> img(3 * plane);
            const int shape = cls % 10;
            const int variant = cls / 10;

            Rgb bg, fg;
            if (params.hard) {
                // Random colours with limited contrast: shape identity must come from form.
                const double hue = unit(rng);
                const double value = 0.3 + 0.4 * unit(rng);
                const double delta = (0.12 + 0.2 * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
                bg = hsv(hue, 0.2 + 0.5 * unit(rng), value);
                fg = hsv(hue + 0.5 * (unit(rng) - 0.5), 0.2 + 0.6 * unit(rng), value + delta);
            } else {
                bg = {0.1f, 0.1f, 0.1f};
                fg = hsv(static_cast<double>(shape) / 10.0, 0.8, 0.95);
            }
            // Background with a random linear gradient.
            const double gx = params.hard ? 0.3 * (unit(rng) - 0.5) : 0.0;
            const double gy = params.hard ? 0.3 * (unit(rng) - 0.5) : 0.0;
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const double shade = gx * (x - size / 2.0) / size + gy * (y - size / 2.0) / size;
                    for (int c = 0; c < 3; ++c) {
                        img[c * plane + static_cast<std::size_t>(y) * size + x] =
                            static_cast<float>(bg[static_cast<std::size_t>(c)] + shade);
                    }
                }
            }

            const int distractors = params.distractors >= 0 ? params.distractors : (params.hard ? 3 : 0);
            for (int k = 0; k < distractors; ++k) {
                const int other = static_cast<int>(unit(rng) * 10.0) % 10;
                Pose pose{size * unit(rng), size * unit(rng), size * (0.06 + 0.07 * unit(rng))};
                pose.angle = 6.283185307179586 * unit(rng);
                const Rgb col = hsv(unit(rng), 0.5 * unit(rng), 0.3 + 0.5 * unit(rng));
                draw_shape(img, size, other, 0, pose, col);
            }

            const double lo = params.hard ? 0.16 : 0.25, hi = params.hard ? 0.32 : 0.38;
            Pose pose{0.0, 0.0, size * (lo + (hi - lo) * unit(rng))};
            const double margin = pose.radius * 0.8;
            pose.cx = margin + (size - 2 * margin) * unit(rng);
            pose.cy = margin + (size - 2 * margin) * unit(rng);
            if (params.hard) {
                pose.angle = 0.4 * (unit(rng) - 0.5);
                pose.stretch = 0.75 + 0.5 * unit(rng);
            }
            draw_shape(img, size, shape, variant, pose, fg);

            const double noise = params.noise >= 0.0 ? params.noise : (params.hard ? 0.16 : 0.04);
            for (auto& v : img) v = static_cast<float>(std::clamp(v + noise * gauss(rng), 0.0, 1.0));

            d.pixels.insert(d.pixels.end(), img.begin(), img.end());
            d.labels.push_back(cls);
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::string read_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

/// Binary PPM (P6) or PGM (P5), 8-bit; grey images are replicated to RGB.
std::vector<float> read_netpbm(const fs::path& path, int& width, int& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Ingestion, "cannot open " + path.string());
    const std::string magic = read_token(in);
    if (magic != "P6" && magic != "P5") throw Error(ErrorKind::Ingestion, path.string() + ": not a binary PPM/PGM file");
    try {
        width = std::stoi(read_token(in));
        height = std::stoi(read_token(in));
        const int maxval = std::stoi(read_token(in));
        if (maxval != 255 || width <= 0 || height <= 0) throw std::invalid_argument("header");
    } catch (const std::exception&) {
        throw Error(ErrorKind::Ingestion, path.string() + ": corrupt header");
    }
    const int channels = magic == "P6" ? 3 : 1;
    const auto plane = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    std::vector<unsigned char> raw(plane * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw Error(ErrorKind::Ingestion, path.string() + ": truncated pixel data");
    std::vector<float> out(3 * plane);
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c) {
            const unsigned char v = raw[p * channels + (channels == 3 ? c : 0)];
            out[c * plane + p] = static_cast<float>(v) / 255.0f;
        }
    }
    return out;
}

void cap_per_class(Dataset& d, int cap) {
    if (cap <= 0) return;
    std::vector<int> taken(static_cast<std::size_t>(d.num_classes), 0);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (taken[static_cast<std::size_t>(d.labels[i])]++ < cap) keep.push_back(i);
    }
    d = d.subset(keep);
}

Dataset read_cifar_batches(const std::vector<fs::path>& files) {
    Dataset d;
    d.name = "cifar10";
    d.num_classes = 10;
    d.channels = 3;
    d.height = d.width = 32;
    constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw Error(ErrorKind::Ingestion, "cannot open " + f.string());
        std::vector<unsigned char> rec(kRecord);
        while (in.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
            if (rec[0] > 9) throw Error(ErrorKind::Ingestion, f.string() + ": label out of range");
            d.labels.push_back(rec[0]);
            for (std::size_t i = 1; i < kRecord; ++i) d.pixels.push_back(static_cast<float>(rec[i]) / 255.0f);
        }
        if (in.gcount() != 0) throw Error(ErrorKind::Ingestion, f.string() + ": truncated record");
    }
    if (d.labels.empty()) throw Error(ErrorKind::Ingestion, "no CIFAR records found");
    return d;
}

}  // namespace

Dataset load_image_folder(const fs::path& root, const std::string& name) {
    if (!fs::is_directory(root)) throw Error(ErrorKind::Ingestion, "missing dataset directory " + root.string());
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.size() < 2) throw Error(ErrorKind::Ingestion, root.string() + ": need at least 2 class directories");

    Dataset d;
    d.name = name;
    d.num_classes = static_cast<int>(class_dirs.size());
    d.channels = 3;
    for (std::size_t cls = 0; cls < class_dirs.size(); ++cls) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[cls])) {
            const auto ext = entry.path().extension().string();
            if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw Error(ErrorKind::Ingestion, class_dirs[cls].string() + ": class has no images");
        for (const auto& f : files) {
            int w = 0, h = 0;
            auto img = read_netpbm(f, w, h);
            if (d.width == 0) {
                d.width = w;
                d.height = h;
            } else if (w != d.width || h != d.height) {
                throw Error(ErrorKind::Ingestion, f.string() + ": image size differs from the rest of the dataset");
            }
            d.pixels.insert(d.pixels.end(), img.begin(), img.end());
            d.labels.push_back(static_cast<int>(cls));
        }
    }
    return d;
}

DatasetSplits load_dataset(const DatasetSpec& spec) {
    DatasetSplits out;
    if (spec.name == "synthetic" || spec.name == "synthetic-hard") {
        SyntheticParams p;
        p.num_classes = spec.num_classes;
        p.image_size = spec.image_size;
        p.hard = spec.name == "synthetic-hard";
        p.noise = spec.noise;
        p.distractors = spec.distractors;
        p.per_class = spec.train_per_class;
        p.seed = spec.seed;
        out.train = synthetic_dataset(p);
        p.per_class = spec.test_per_class;
        p.seed = spec.seed ^ 0x9e3779b97f4a7c15ULL;
        out.test = synthetic_dataset(p);
    } else if (spec.name == "folder") {
        out.train = load_image_folder(spec.source / "train", spec.name);
        out.test = load_image_folder(spec.source / "test", spec.name);
    } else if (spec.name == "cifar10-bin") {
        std::vector<fs::path> train_files;
        for (int i = 1; i <= 5; ++i) train_files.push_back(spec.source / ("data_batch_" + std::to_string(i) + ".bin"));
        out.train = read_cifar_batches(train_files);
        out.test = read_cifar_batches({spec.source / "test_batch.bin"});
    } else {
        throw Error(ErrorKind::Ingestion, "unknown dataset '" + spec.name + "'");
    }
    cap_per_class(out.train, spec.max_train_per_class);
    cap_per_class(out.test, spec.max_test_per_class);
    for (const auto* d : {&out.train, &out.test}) {
        const auto counts = d->class_counts();
        for (std::size_t c = 0; c < counts.size(); ++c) {
            if (counts[c] == 0) throw Error(ErrorKind::Ingestion, "class " + std::to_string(c) + " has no samples");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

HalfSplit balanced_half_split(const Dataset& data, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes));
    for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    HalfSplit split;
    std::mt19937_64 rng(seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.size() < 2) {
            throw Error(ErrorKind::Split, "class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                                              " sample(s); at least 2 are required");
        }
        std::shuffle(members.begin(), members.end(), rng);
        const std::size_t n_train = (members.size() + 1) / 2;
        split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
        split.val.insert(split.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

Normalization Normalization::fit(const Dataset& data) {
    Normalization n;
    const auto plane = static_cast<std::size_t>(data.height) * static_cast<std::size_t>(data.width);
    for (int c = 0; c < data.channels; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const float* p = data.image(i).data() + c * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                sum += p[k];
                sq += static_cast<double>(p[k]) * p[k];
            }
        }
        const double count = static_cast<double>(plane * data.size());
        const double mean = sum / count;
        const double var = std::max(sq / count - mean * mean, 1e-8);
        n.mean.push_back(static_cast<float>(mean));
        n.stddev.push_back(static_cast<float>(std::sqrt(var)));
    }
    return n;
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(const Dataset& data, std::vector<std::size_t> indices, Normalization norm, Options options)
    : data_(&data), indices_(std::move(indices)), order_(indices_), norm_(std::move(norm)), options_(options) {
    if (options_.batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be positive");
    if (indices_.empty()) throw Error(ErrorKind::Config, "empty data stream");
    if (norm_.mean.size() != static_cast<std::size_t>(data.channels)) {
        throw Error(ErrorKind::Config, "normalization does not match channel count");
    }
}

std::size_t BatchStream::batches_per_epoch() const {
    const auto bs = static_cast<std::size_t>(options_.batch_size);
    if (options_.drop_last && indices_.size() >= bs) return indices_.size() / bs;
    return (indices_.size() + bs - 1) / bs;
}

void BatchStream::start_epoch(int epoch) {
    order_ = indices_;
    std::mt19937_64 rng(options_.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
    if (options_.shuffle) std::shuffle(order_.begin(), order_.end(), rng);
    const std::size_t n = order_.size();
    shift_y_.assign(n, 0);
    shift_x_.assign(n, 0);
    flip_.assign(n, 0);
    if (options_.augment) {
        std::uniform_int_distribution<int> shift(-options_.crop_padding, options_.crop_padding);
        std::bernoulli_distribution coin(0.5);
        for (std::size_t i = 0; i < n; ++i) {
            shift_y_[i] = shift(rng);
            shift_x_[i] = shift(rng);
            flip_[i] = coin(rng) ? 1 : 0;
        }
    }
}

Batch BatchStream::batch(std::size_t b) const {
    const auto bs = static_cast<std::size_t>(options_.batch_size);
    const std::size_t begin = b * bs;
    if (begin >= order_.size()) throw Error(ErrorKind::Config, "batch index out of range");
    const std::size_t end = std::min(order_.size(), begin + bs);
    const int n = static_cast<int>(end - begin);
    const int h = data_->height, w = data_->width, channels = data_->channels;
    const auto plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);

    Batch out;
    out.images = nn::Tensor(channels, n, h, w);
    out.labels.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const std::size_t pos = begin + static_cast<std::size_t>(k);
        const std::size_t idx = order_[pos];
        out.labels[static_cast<std::size_t>(k)] = data_->labels[idx];
        const float* src = data_->image(idx).data();
        const int sy = shift_y_.empty() ? 0 : shift_y_[pos];
        const int sx = shift_x_.empty() ? 0 : shift_x_[pos];
        const bool flip = !flip_.empty() && flip_[pos] != 0;
        for (int c = 0; c < channels; ++c) {
            const float mean = norm_.mean[static_cast<std::size_t>(c)];
            const float inv = 1.0f / norm_.stddev[static_cast<std::size_t>(c)];
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    // Padding is zero after normalization.
                    const int iy = y + sy;
                    const int ix0 = x + sx;
                    const int ix = flip ? (w - 1 - ix0) : ix0;
                    float v = 0.0f;
                    if (iy >= 0 && iy < h && ix0 >= 0 && ix0 < w) v = (src[c * plane + iy * w + ix] - mean) * inv;
                    out.images.at(c, k, y, x) = v;
                }
            }
        }
    }
    return out;
}

}  // namespace ktg
