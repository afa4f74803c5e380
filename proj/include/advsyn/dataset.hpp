#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advsyn/errors.hpp"
#include "advsyn/image.hpp"
#include "advsyn/rng.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

enum class Provenance : uint8_t { real = 0, synthetic = 1, augmented = 2 };

inline const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::real: return "real";
        case Provenance::synthetic: return "synthetic";
        case Provenance::augmented: return "augmented";
    }
    return "real";
}

inline Provenance provenance_from(const std::string& s) {
    if (s == "real") return Provenance::real;
    if (s == "synthetic") return Provenance::synthetic;
    if (s == "augmented") return Provenance::augmented;
    throw DataError("dataset: unknown provenance '" + s + "'");
}

// Grayscale images in [-1,1] with binary labels (1 = tumor) and a
// provenance flag per image. All images share one H x W.
struct ImageDataset {
    std::string name;
    int height = 0;
    int width = 0;
    std::vector<Tensor> images;  // each [1,H,W]
    std::vector<int> labels;
    std::vector<Provenance> provenance;

    size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }

    size_t count_label(int label) const {
        size_t n = 0;
        for (int l : labels) n += l == label ? 1 : 0;
        return n;
    }
    size_t n_pos() const { return count_label(1); }
    size_t n_neg() const { return count_label(0); }

    void push(Tensor image, int label, Provenance prov) {
        if (image.rank() != 3 || image.dim(0) != 1) {
            throw ShapeError("dataset: images must be [1,H,W], got " + image.shape_string());
        }
        if (empty()) {
            height = image.dim(1);
            width = image.dim(2);
        } else if (image.dim(1) != height || image.dim(2) != width) {
            throw ShapeError("dataset '" + name + "': image size " + image.shape_string() +
                             " differs from " + std::to_string(height) + "x" +
                             std::to_string(width));
        }
        if (label != 0 && label != 1) {
            throw DataError("dataset: label must be 0 or 1, got " + std::to_string(label));
        }
        if (image.min() < -1.0 || image.max() > 1.0) {
            throw DataError("dataset '" + name + "': pixel outside [-1,1]");
        }
        images.push_back(std::move(image));
        labels.push_back(label);
        provenance.push_back(prov);
    }

    void append(const ImageDataset& other) {
        for (size_t i = 0; i < other.size(); ++i) {
            push(other.images[i], other.labels[i], other.provenance[i]);
        }
    }

    // Packs images [first, first+count) into an [N,1,H,W] batch tensor.
    Tensor batch(const std::vector<size_t>& indices, size_t first, size_t count) const {
        Tensor out({static_cast<int>(count), 1, height, width});
        const int64_t stride = static_cast<int64_t>(height) * width;
        for (size_t k = 0; k < count; ++k) {
            const Tensor& img = images[indices[first + k]];
            std::copy(img.data(), img.data() + stride,
                      out.data() + static_cast<int64_t>(k) * stride);
        }
        return out;
    }
};

// --- preprocessing ----------------------------------------------------------

// Bilinear resize to target_size x target_size, then p/127.5 - 1.
inline ImageDataset preprocess(const std::vector<RawImage>& raws, const std::vector<int>& labels,
                               int target_size, const std::string& name = "preprocessed") {
    if (raws.empty()) throw DataError("preprocess: no input images");
    if (raws.size() != labels.size()) {
        throw DataError("preprocess: " + std::to_string(raws.size()) + " images vs " +
                        std::to_string(labels.size()) + " labels");
    }
    if (target_size < 1) throw ConfigError("preprocess: target size must be positive");
    ImageDataset ds;
    ds.name = name;
    for (size_t i = 0; i < raws.size(); ++i) {
        const RawImage& r = raws[i];
        if (r.height < 1 || r.width < 1) throw DataError("preprocess: zero-dimension image");
        Tensor as_double({1, r.height, r.width});
        for (size_t j = 0; j < r.pixels.size(); ++j) {
            as_double[static_cast<int64_t>(j)] = static_cast<double>(r.pixels[j]);
        }
        Tensor resized = resize_bilinear(as_double, target_size, target_size);
        for (int64_t j = 0; j < resized.size(); ++j) resized[j] = resized[j] / 127.5 - 1.0;
        ds.push(std::move(resized), labels[i], Provenance::real);
    }
    return ds;
}

// --- augmentation -----------------------------------------------------------

struct AugmentPolicy {
    double flip_prob = 0.5;
    double max_rotate_deg = 15.0;
    double max_brightness = 0.1;
};

namespace detail {

inline Tensor flip_horizontal(const Tensor& img) {
    const int h = img.dim(1), w = img.dim(2);
    Tensor out({1, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out[static_cast<int64_t>(y) * w + x] = img[static_cast<int64_t>(y) * w + (w - 1 - x)];
        }
    }
    return out;
}

// Rotates content by `deg` counterclockwise around the image center,
// bilinear sampling; samples outside the source are the fill value.
inline Tensor rotate_bilinear(const Tensor& img, double deg, double fill) {
    const int h = img.dim(1), w = img.dim(2);
    const double rad = deg * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    Tensor out({1, h, w});
    auto sample = [&](int y, int x) {
        if (y < 0 || y >= h || x < 0 || x >= w) return fill;
        return img[static_cast<int64_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double sxf = cx + c * dx + s * dy;
            const double syf = cy - s * dx + c * dy;
            const int x0 = static_cast<int>(std::floor(sxf));
            const int y0 = static_cast<int>(std::floor(syf));
            const double fx = sxf - x0, fy = syf - y0;
            const double top = sample(y0, x0) * (1.0 - fx) + sample(y0, x0 + 1) * fx;
            const double bot = sample(y0 + 1, x0) * (1.0 - fx) + sample(y0 + 1, x0 + 1) * fx;
            out[static_cast<int64_t>(y) * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    return out;
}

}  // namespace detail

// n_new augmented copies drawn from uniformly chosen source images.
// Per image, in order: source index, flip draw, rotation angle in
// [-max_rotate_deg, +max_rotate_deg], brightness shift in
// [-max_brightness, +max_brightness]; then clamp to [-1,1]. Rotation border
// fill is -1 (background black). Labels are inherited.
inline ImageDataset augment(const ImageDataset& source, int n_new, Rng& rng,
                            const AugmentPolicy& policy = {}) {
    if (source.empty()) throw DataError("augment: source dataset is empty");
    if (n_new < 0) throw ConfigError("augment: n_new must be non-negative");
    ImageDataset out;
    out.name = source.name + "+aug";
    for (int k = 0; k < n_new; ++k) {
        const size_t idx = static_cast<size_t>(rng.below(source.size()));
        const bool flip = rng.uniform() < policy.flip_prob;
        const double angle = rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg);
        const double shift = rng.uniform(-policy.max_brightness, policy.max_brightness);

        Tensor img = source.images[idx];
        if (flip) img = detail::flip_horizontal(img);
        if (angle != 0.0) img = detail::rotate_bilinear(img, angle, -1.0);
        for (int64_t i = 0; i < img.size(); ++i) {
            img[i] = std::clamp(img[i] + shift, -1.0, 1.0);
        }
        out.push(std::move(img), source.labels[idx], Provenance::augmented);
    }
    return out;
}

// --- merge / balance / split -------------------------------------------------

// Positives = real positives + synthetic positives; the minority class is
// topped up with augmented copies of its own members until the classes are
// exactly equal (or balance_target per class, when given). Order is a
// seeded shuffle of the combined set.
inline ImageDataset merge_and_balance(const ImageDataset& real, const ImageDataset& synthetic_pos,
                                      Rng& rng, size_t balance_target = 0) {
    if (real.empty()) throw DataError("merge_and_balance: real dataset is empty");
    if (!synthetic_pos.empty() &&
        (synthetic_pos.height != real.height || synthetic_pos.width != real.width)) {
        throw ShapeError("merge_and_balance: real is " + std::to_string(real.height) + "x" +
                         std::to_string(real.width) + " but synthetic is " +
                         std::to_string(synthetic_pos.height) + "x" +
                         std::to_string(synthetic_pos.width));
    }
    for (int label : synthetic_pos.labels) {
        if (label != 1) throw DataError("merge_and_balance: synthetic set must be all-positive");
    }

    ImageDataset pos, neg;
    pos.name = "pos";
    neg.name = "neg";
    for (size_t i = 0; i < real.size(); ++i) {
        (real.labels[i] == 1 ? pos : neg).push(real.images[i], real.labels[i], real.provenance[i]);
    }
    pos.append(synthetic_pos);
    if (neg.empty() || pos.empty()) {
        throw DataError("merge_and_balance: both classes must be present");
    }

    size_t target = std::max(pos.size(), neg.size());
    if (balance_target > 0) {
        if (balance_target < target) {
            throw ConfigError("merge_and_balance: balance_target " +
                              std::to_string(balance_target) + " below class count " +
                              std::to_string(target));
        }
        target = balance_target;
    }
    if (pos.size() < target) pos.append(augment(pos, static_cast<int>(target - pos.size()), rng));
    if (neg.size() < target) neg.append(augment(neg, static_cast<int>(target - neg.size()), rng));

    ImageDataset merged;
    merged.name = "merged";
    merged.append(pos);
    merged.append(neg);
    std::vector<size_t> order(merged.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    ImageDataset out;
    out.name = "merged";
    for (size_t i : order) out.push(merged.images[i], merged.labels[i], merged.provenance[i]);
    return out;
}

// Stratified split; within each class the count going to train is
// ceil(count * train_fraction), i.e. rounding toward train.
inline std::pair<ImageDataset, ImageDataset> split(const ImageDataset& ds, double train_fraction,
                                                   Rng& rng) {
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
        throw ConfigError("split: train_fraction must be in [0,1]");
    }
    if (ds.n_pos() == 0 || ds.n_neg() == 0) {
        throw DataError("split: both classes must be present");
    }
    ImageDataset train, test;
    train.name = ds.name + "-train";
    test.name = ds.name + "-test";
    for (int label : {0, 1}) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < ds.size(); ++i) {
            if (ds.labels[i] == label) idx.push_back(i);
        }
        rng.shuffle(idx);
        const double exact = static_cast<double>(idx.size()) * train_fraction;
        size_t n_train = static_cast<size_t>(std::ceil(exact - 1e-9));
        n_train = std::min(n_train, idx.size());
        for (size_t k = 0; k < idx.size(); ++k) {
            (k < n_train ? train : test)
                .push(ds.images[idx[k]], ds.labels[idx[k]], ds.provenance[idx[k]]);
        }
    }
    return {std::move(train), std::move(test)};
}

// --- phantom data -------------------------------------------------------------

// Procedural stand-in scans: noisy dark background, a mid-intensity
// ellipse ("brain") with a radial falloff, and for positives one bright
// disc ("tumor") centered inside the ellipse.
struct PhantomSpec {
    int image_size = 32;
    double brain_min = 0.2, brain_max = 0.6;             // ellipse intensity range
    double tumor_radius_min = 0.06, tumor_radius_max = 0.15;  // fraction of image size
    double tumor_min = 0.85, tumor_max = 1.0;
    double noise_sigma = 0.02;
    uint64_t seed = 0;
};

namespace detail {

inline Tensor phantom_image(const PhantomSpec& spec, bool tumor, Rng& rng) {
    const int s = spec.image_size;
    const double cy = (s - 1) / 2.0, cx = (s - 1) / 2.0;
    // mild per-image jitter keeps negatives tight while still varied
    const double a = s * rng.uniform(0.37, 0.39);
    const double b = s * rng.uniform(0.29, 0.31);

    double tumor_r = 0.0, tumor_v = 0.0, tcx = 0.0, tcy = 0.0;
    if (tumor) {
        tumor_r = s * rng.uniform(spec.tumor_radius_min, spec.tumor_radius_max);
        tumor_v = rng.uniform(spec.tumor_min, spec.tumor_max);
        // rejection-sample the disc center inside the ellipse core
        do {
            tcx = cx + rng.uniform(-a, a);
            tcy = cy + rng.uniform(-b, b);
        } while (std::pow((tcx - cx) / a, 2) + std::pow((tcy - cy) / b, 2) > 0.6);
    }

    Tensor img({1, s, s});
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const double r2 =
                std::pow((x - cx) / a, 2) + std::pow((y - cy) / b, 2);
            double v = 0.0;
            if (r2 <= 1.0) {
                v = spec.brain_min + (spec.brain_max - spec.brain_min) * (1.0 - r2);
            }
            if (tumor) {
                const double d2 = std::pow(x - tcx, 2) + std::pow(y - tcy, 2);
                if (d2 <= tumor_r * tumor_r) v = tumor_v;
            }
            v += rng.normal(0.0, spec.noise_sigma);
            v = std::clamp(v, 0.0, 1.0);
            img[static_cast<int64_t>(y) * s + x] = v * 2.0 - 1.0;
        }
    }
    return img;
}

}  // namespace detail

// Positives first, then negatives; derive per-image draws from the spec
// seed's phantom stream so the dataset is a pure function of the spec.
inline ImageDataset make_phantom_dataset(const PhantomSpec& spec, int n_pos, int n_neg) {
    if (n_pos < 0 || n_neg < 0) throw ConfigError("phantom: counts must be non-negative");
    Rng rng = Rng(spec.seed).stream(RngStream::phantom);
    ImageDataset ds;
    ds.name = "phantom";
    for (int i = 0; i < n_pos; ++i) {
        ds.push(detail::phantom_image(spec, true, rng), 1, Provenance::real);
    }
    for (int i = 0; i < n_neg; ++i) {
        ds.push(detail::phantom_image(spec, false, rng), 0, Provenance::real);
    }
    return ds;
}

// --- directory layout ---------------------------------------------------------
//
// <root>/yes/*.pgm, <root>/no/*.pgm plus manifest.csv with columns
// filename,label,provenance. Loading without a manifest scans the two
// subdirectories (sorted by filename, provenance = real).

inline void save_dataset_dir(const ImageDataset& ds, const std::string& root) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(root) / "yes", ec);
    fs::create_directories(fs::path(root) / "no", ec);
    if (ec) throw DataError("dataset: cannot create directories under " + root);

    std::ofstream manifest(fs::path(root) / "manifest.csv", std::ios::binary);
    if (!manifest) throw DataError("dataset: cannot write manifest in " + root);
    manifest << "filename,label,provenance\n";
    size_t yes_i = 0, no_i = 0;
    char buf[64];
    for (size_t i = 0; i < ds.size(); ++i) {
        const bool pos = ds.labels[i] == 1;
        std::snprintf(buf, sizeof(buf), "%s_%06zu.pgm", pos ? "yes" : "no",
                      pos ? yes_i++ : no_i++);
        const std::string rel = std::string(pos ? "yes/" : "no/") + buf;
        save_pgm((fs::path(root) / rel).string(), unit_to_raw(ds.images[i]));
        manifest << rel << "," << ds.labels[i] << "," << provenance_name(ds.provenance[i]) << "\n";
    }
    if (!manifest) throw DataError("dataset: manifest write failed in " + root);
}

struct DatasetEntry {
    std::string relative_path;
    int label = 0;
    Provenance provenance = Provenance::real;
};

// Manifest order when manifest.csv exists; otherwise no/*.pgm then
// yes/*.pgm, each sorted by filename so directory iteration order never
// leaks into results.
inline std::vector<DatasetEntry> list_dataset_entries(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::exists(root)) throw DataError("dataset: no such directory " + root);
    std::vector<DatasetEntry> entries;

    const fs::path manifest_path = fs::path(root) / "manifest.csv";
    if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        if (!in) throw DataError("dataset: cannot read " + manifest_path.string());
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string fname, label_s, prov_s;
            if (!std::getline(row, fname, ',') || !std::getline(row, label_s, ',') ||
                !std::getline(row, prov_s)) {
                throw DataError("dataset: malformed manifest row '" + line + "' in " + root);
            }
            entries.push_back(DatasetEntry{fname, std::stoi(label_s), provenance_from(prov_s)});
        }
        return entries;
    }

    for (const auto& [sub, label] : {std::pair<const char*, int>{"no", 0}, {"yes", 1}}) {
        const fs::path dir = fs::path(root) / sub;
        if (!fs::exists(dir)) continue;
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
                files.push_back(entry.path().filename().string());
            }
        }
        std::sort(files.begin(), files.end());
        for (const std::string& f : files) {
            entries.push_back(DatasetEntry{std::string(sub) + "/" + f, label, Provenance::real});
        }
    }
    return entries;
}

inline ImageDataset load_dataset_dir(const std::string& root) {
    namespace fs = std::filesystem;
    ImageDataset ds;
    ds.name = fs::path(root).filename().string();
    for (const DatasetEntry& e : list_dataset_entries(root)) {
        ds.push(raw_to_unit(load_pgm((fs::path(root) / e.relative_path).string())), e.label,
                e.provenance);
    }
    if (ds.empty()) throw DataError("dataset: no images found under " + root);
    return ds;
}

}  // namespace advsyn
