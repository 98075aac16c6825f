#pragma once

// Image dataset ingestion and batching. Two on-disk formats are read:
//  - IDX (the MNIST distribution format): big-endian magic 0x00000803 for
//    images, 0x00000801 for labels; pixels land in [0,1].
//  - "AAE1" raw tensor container for converted datasets (SVHN and synthetic
//    data): magic "AAE1", u32 n, u32 d, u32 m, u8 normalization tag
//    (0 = unit_interval, 1 = standardized), then for standardized data d
//    f64 means and d f64 stds, then n*d row-major little-endian f32 values,
//    then n labels as unsigned bytes (absent entirely for unlabeled data).
// Datasets are immutable after load.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aae/errors.hpp"
#include "aae/rng.hpp"
#include "aae/tensor.hpp"

namespace aae {

enum class Normalization { unit_interval, standardized };

struct ImageDataset {
    Tensor images;            // n x d
    std::vector<int> labels;  // empty when unlabeled
    int num_classes = 0;
    Normalization norm = Normalization::unit_interval;
    std::vector<double> mean, stddev;  // per-dim, standardized only
    std::size_t image_h = 0, image_w = 0;  // 0 when unknown (raw container)

    std::size_t n() const { return images.rows; }
    std::size_t d() const { return images.cols; }
    bool labeled() const { return !labels.empty(); }
};

namespace detail {

inline std::uint32_t read_be32(std::ifstream& f, std::uint64_t offset, const char* what) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw IngestError(std::string("truncated reading ") + what, offset);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace detail

/// Loads an IDX image file and optionally its label file. Pixels are scaled
/// to [0,1]. Errors name the byte offset of the first inconsistency.
inline ImageDataset load_idx(const std::string& images_path,
                             const std::optional<std::string>& labels_path = std::nullopt) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IngestError("cannot open image file: " + images_path, 0);

    const std::uint32_t magic = detail::read_be32(img, 0, "image magic");
    if (magic != 0x00000803u)
        throw IngestError("bad image magic in " + images_path, 0);
    const std::uint32_t n = detail::read_be32(img, 4, "image count");
    const std::uint32_t rows = detail::read_be32(img, 8, "image rows");
    const std::uint32_t cols = detail::read_be32(img, 12, "image cols");
    const std::size_t d = std::size_t(rows) * cols;

    ImageDataset ds;
    ds.image_h = rows;
    ds.image_w = cols;
    ds.images = Tensor(n, d);
    std::vector<unsigned char> rowbuf(d);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(rowbuf.data()), static_cast<std::streamsize>(d));
        if (static_cast<std::size_t>(img.gcount()) != d)
            throw IngestError("image file shorter than header count in " + images_path,
                              16 + std::uint64_t(i) * d);
        double* out = ds.images.row(i);
        for (std::size_t j = 0; j < d; ++j) out[j] = rowbuf[j] / 255.0;
    }

    if (labels_path) {
        std::ifstream lab(*labels_path, std::ios::binary);
        if (!lab) throw IngestError("cannot open label file: " + *labels_path, 0);
        const std::uint32_t lmagic = detail::read_be32(lab, 0, "label magic");
        if (lmagic != 0x00000801u)
            throw IngestError("bad label magic in " + *labels_path, 0);
        const std::uint32_t ln = detail::read_be32(lab, 4, "label count");
        if (ln != n)
            throw IngestError("label count " + std::to_string(ln) + " != image count " +
                                  std::to_string(n) + " in " + *labels_path,
                              4);
        ds.labels.resize(n);
        int max_label = 0;
        for (std::uint32_t i = 0; i < n; ++i) {
            char c;
            lab.read(&c, 1);
            if (lab.gcount() != 1)
                throw IngestError("label file shorter than header count in " + *labels_path,
                                  8 + std::uint64_t(i));
            ds.labels[i] = static_cast<unsigned char>(c);
            max_label = std::max(max_label, ds.labels[i]);
        }
        ds.num_classes = max_label + 1;
    }
    return ds;
}

inline void save_aae1(const std::string& path, const ImageDataset& ds) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open for writing: " + path, 0);
    out.write("AAE1", 4);
    auto w32 = [&](std::uint32_t x) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
        out.write(b, 4);
    };
    auto wf64 = [&](double x) {
        std::uint64_t u;
        std::memcpy(&u, &x, 8);
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
        out.write(b, 8);
    };
    w32(static_cast<std::uint32_t>(ds.n()));
    w32(static_cast<std::uint32_t>(ds.d()));
    w32(static_cast<std::uint32_t>(ds.num_classes));
    out.put(ds.norm == Normalization::standardized ? 1 : 0);
    if (ds.norm == Normalization::standardized) {
        for (double m : ds.mean) wf64(m);
        for (double s : ds.stddev) wf64(s);
    }
    for (double x : ds.images.v) {
        float f = static_cast<float>(x);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
        out.write(b, 4);
    }
    for (int l : ds.labels) out.put(static_cast<char>(static_cast<unsigned char>(l)));
    if (!out) throw IngestError("write failed: " + path, 0);
}

inline ImageDataset load_aae1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open: " + path, 0);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "AAE1", 4) != 0)
        throw IngestError("bad raw-container magic in " + path, 0);
    auto r32 = [&](std::uint64_t off, const char* what) -> std::uint32_t {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (in.gcount() != 4) throw IngestError(std::string("truncated reading ") + what, off);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    };
    auto rf64 = [&](std::uint64_t off) -> double {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        if (in.gcount() != 8) throw IngestError("truncated in mean/std block", off);
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
        double x;
        std::memcpy(&x, &u, 8);
        return x;
    };
    ImageDataset ds;
    const std::uint32_t n = r32(4, "n");
    const std::uint32_t d = r32(8, "d");
    ds.num_classes = static_cast<int>(r32(12, "m"));
    int tag = in.get();
    if (tag == EOF) throw IngestError("truncated reading normalization tag", 16);
    if (tag != 0 && tag != 1) throw IngestError("unknown normalization tag", 16);
    ds.norm = tag == 1 ? Normalization::standardized : Normalization::unit_interval;
    std::uint64_t off = 17;
    if (ds.norm == Normalization::standardized) {
        ds.mean.resize(d);
        ds.stddev.resize(d);
        for (auto& m : ds.mean) m = rf64(off), off += 8;
        for (auto& s : ds.stddev) s = rf64(off), off += 8;
    }
    ds.images = Tensor(n, d);
    std::vector<unsigned char> buf(std::size_t(d) * 4);
    for (std::uint32_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(in.gcount()) != buf.size())
            throw IngestError("raw container shorter than header count in " + path, off);
        double* out = ds.images.row(i);
        for (std::uint32_t j = 0; j < d; ++j) {
            std::uint32_t u = std::uint32_t(buf[4 * j]) | (std::uint32_t(buf[4 * j + 1]) << 8) |
                              (std::uint32_t(buf[4 * j + 2]) << 16) |
                              (std::uint32_t(buf[4 * j + 3]) << 24);
            float f;
            std::memcpy(&f, &u, 4);
            out[j] = f;
        }
        off += buf.size();
    }
    // Labels section is optional: absent file tail means unlabeled.
    std::vector<unsigned char> lbuf(n);
    in.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got == n) {
        ds.labels.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = lbuf[i];
    } else if (got != 0) {
        throw IngestError("partial label section in " + path, off + got);
    }
    return ds;
}

/// Standardizes per dimension (mean 0, std 1 over the dataset); dimensions
/// with zero spread keep std 1. The (mean, std) pair is retained so samples
/// can be mapped back for likelihood comparison.
inline ImageDataset standardize(const ImageDataset& ds) {
    ImageDataset out = ds;
    const std::size_t n = ds.n(), d = ds.d();
    out.mean.assign(d, 0.0);
    out.stddev.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = ds.images.row(i);
        for (std::size_t j = 0; j < d; ++j) out.mean[j] += r[j];
    }
    for (auto& m : out.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = ds.images.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = r[j] - out.mean[j];
            out.stddev[j] += dev * dev;
        }
    }
    for (auto& s : out.stddev) {
        s = std::sqrt(s / static_cast<double>(n));
        if (s == 0.0) s = 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double* r = out.images.row(i);
        for (std::size_t j = 0; j < d; ++j) r[j] = (r[j] - out.mean[j]) / out.stddev[j];
    }
    out.norm = Normalization::standardized;
    return out;
}

/// Maps standardized rows back to the original pixel scale, clamped to [0,1].
inline Tensor unstandardize(const Tensor& rows, const std::vector<double>& mean,
                            const std::vector<double>& stddev) {
    Tensor out = rows;
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* r = out.row(i);
        for (std::size_t j = 0; j < out.cols; ++j) {
            r[j] = r[j] * stddev[j] + mean[j];
            r[j] = std::min(1.0, std::max(0.0, r[j]));
        }
    }
    return out;
}

struct SplitPlan {
    std::size_t labeled_count = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> per_class_counts;

    /// Spreads labeled_count over m classes as evenly as divisibility allows
    /// (first `labeled_count % m` classes get one extra).
    static SplitPlan even(std::size_t labeled_count, std::size_t m, std::uint64_t seed) {
        SplitPlan p;
        p.labeled_count = labeled_count;
        p.seed = seed;
        p.per_class_counts.assign(m, labeled_count / m);
        for (std::size_t c = 0; c < labeled_count % m; ++c) p.per_class_counts[c]++;
        return p;
    }
};

/// Balanced without-replacement pick: indices of the rows selected as the
/// labeled subset. Deterministic for a given plan seed.
inline std::vector<std::uint32_t> balanced_pick_indices(const ImageDataset& ds,
                                                        const SplitPlan& plan) {
    if (!ds.labeled()) throw ConfigError("balanced_label_subset: dataset is unlabeled");
    if (plan.labeled_count > ds.n())
        throw ConfigError("balanced_label_subset: labeled_count exceeds dataset size");
    std::size_t total = 0;
    for (auto c : plan.per_class_counts) total += c;
    if (total != plan.labeled_count)
        throw ConfigError("balanced_label_subset: per_class_counts do not sum to labeled_count");

    const std::size_t m = plan.per_class_counts.size();
    std::vector<std::vector<std::uint32_t>> by_class(m);
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const int l = ds.labels[i];
        if (l < 0 || static_cast<std::size_t>(l) >= m)
            throw ConfigError("balanced_label_subset: label " + std::to_string(l) +
                              " outside [0," + std::to_string(m) + ")");
        by_class[l].push_back(static_cast<std::uint32_t>(i));
    }

    Rng rng = stream_for(plan.seed, "balanced_label_subset");
    std::vector<std::uint32_t> labeled_idx;
    labeled_idx.reserve(plan.labeled_count);
    for (std::size_t c = 0; c < m; ++c) {
        auto& pool = by_class[c];
        if (plan.per_class_counts[c] > pool.size())
            throw ConfigError("balanced_label_subset: class " + std::to_string(c) + " has only " +
                              std::to_string(pool.size()) + " examples, need " +
                              std::to_string(plan.per_class_counts[c]));
        // partial Fisher-Yates
        for (std::size_t k = 0; k < plan.per_class_counts[c]; ++k) {
            const std::size_t j = k + rng.below(pool.size() - k);
            std::swap(pool[k], pool[j]);
            labeled_idx.push_back(pool[k]);
        }
    }
    std::sort(labeled_idx.begin(), labeled_idx.end());
    return labeled_idx;
}

/// Splits a labeled dataset into a balanced labeled subset and the unlabeled
/// remainder (labels stripped).
inline std::pair<ImageDataset, ImageDataset> balanced_label_subset(const ImageDataset& ds,
                                                                   const SplitPlan& plan) {
    const std::vector<std::uint32_t> labeled_idx = balanced_pick_indices(ds, plan);
    std::vector<char> picked(ds.n(), 0);
    for (auto i : labeled_idx) picked[i] = 1;

    auto take = [&](bool want_picked, bool keep_labels) {
        ImageDataset part;
        part.num_classes = ds.num_classes;
        part.norm = ds.norm;
        part.mean = ds.mean;
        part.stddev = ds.stddev;
        part.image_h = ds.image_h;
        part.image_w = ds.image_w;
        std::size_t count = 0;
        for (std::size_t i = 0; i < ds.n(); ++i)
            if (static_cast<bool>(picked[i]) == want_picked) count++;
        part.images = Tensor(count, ds.d());
        if (keep_labels) part.labels.reserve(count);
        std::size_t r = 0;
        for (std::size_t i = 0; i < ds.n(); ++i) {
            if (static_cast<bool>(picked[i]) != want_picked) continue;
            std::memcpy(part.images.row(r), ds.images.row(i), ds.d() * sizeof(double));
            if (keep_labels) part.labels.push_back(ds.labels[i]);
            ++r;
        }
        return part;
    };
    return {take(true, true), take(false, false)};
}

/// Epoch-wise permutation of [0,n) split into batches; the final short batch
/// is kept. Order depends only on (seed, epoch).
inline std::vector<std::vector<std::uint32_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                             std::uint64_t seed,
                                                             std::uint64_t epoch) {
    if (batch == 0 || batch > n) throw ConfigError("epoch_batches: batch size must be in [1, n]");
    std::vector<std::uint32_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
    Rng rng = stream_for(seed, "minibatches", epoch);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(perm[i - 1], perm[j]);
    }
    std::vector<std::vector<std::uint32_t>> batches;
    for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t end = std::min(n, start + batch);
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

inline Tensor gather_rows(const Tensor& src, const std::vector<std::uint32_t>& idx) {
    Tensor out(idx.size(), src.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.row(i), src.row(idx[i]), src.cols * sizeof(double));
    return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& labels,
                                      const std::vector<std::uint32_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

/// First `head` rows / remaining rows, preserving labels. Used to reserve a
/// validation tail from the training set.
inline std::pair<ImageDataset, ImageDataset> split_head(const ImageDataset& ds, std::size_t head) {
    if (head > ds.n()) throw ConfigError("split_head: head exceeds dataset size");
    auto copy_range = [&](std::size_t lo, std::size_t hi) {
        ImageDataset part;
        part.num_classes = ds.num_classes;
        part.norm = ds.norm;
        part.mean = ds.mean;
        part.stddev = ds.stddev;
        part.image_h = ds.image_h;
        part.image_w = ds.image_w;
        part.images = Tensor(hi - lo, ds.d());
        for (std::size_t i = lo; i < hi; ++i)
            std::memcpy(part.images.row(i - lo), ds.images.row(i), ds.d() * sizeof(double));
        if (ds.labeled())
            part.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(lo),
                               ds.labels.begin() + static_cast<std::ptrdiff_t>(hi));
        return part;
    };
    return {copy_range(0, head), copy_range(head, ds.n())};
}

}  // namespace aae
