#pragma once

// Shared helpers for the unit and acceptance suites: random architecture
// generation for finite-difference sweeps, IDX writers and small synthetic
// datasets.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "aae/dataset.hpp"
#include "aae/net.hpp"
#include "aae/rng.hpp"
#include "aae/tensor.hpp"

namespace aae::testutil {

/// Random 1-3 layer chain over the full activation/batch-norm menu.
inline std::vector<LayerSpec> random_layer_specs(Rng& rng, bool allow_bn) {
    const std::size_t depth = 1 + rng.below(3);
    std::vector<LayerSpec> specs;
    std::size_t in = 1 + rng.below(6);
    for (std::size_t i = 0; i < depth; ++i) {
        LayerSpec s;
        s.in_dim = in;
        s.out_dim = 1 + rng.below(6);
        const bool last = i + 1 == depth;
        switch (rng.below(last ? 4 : 3)) {
            case 0: s.activation = Act::linear; break;
            case 1: s.activation = Act::relu; break;
            case 2: s.activation = Act::sigmoid; break;
            case 3: s.activation = Act::softmax; break;
        }
        if (s.activation == Act::softmax && s.out_dim < 2) s.out_dim = 2;
        s.batch_norm = allow_bn && rng.below(2) == 0;
        s.init_std = 0.3;
        specs.push_back(s);
        in = s.out_dim;
    }
    return specs;
}

struct FdSweepResult {
    double worst = 0.0;
    double worst_bn = 0.0;  // worst error among nets that contained batch-norm
    std::size_t count = 0;
};

/// Smallest |relu pre-activation| in the trace; finite differences are only
/// meaningful away from the kink, so instances sitting within the FD step of
/// one get redrawn.
inline double min_relu_preact(const MlpModel& model, const ForwardTrace& tr) {
    double lo = 1e300;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].spec.activation != Act::relu) continue;
        for (double z : tr.layers[i].z_lin.v) lo = std::min(lo, std::abs(z));
    }
    return lo;
}

/// Finite-difference sweep over `count` random architectures and batches.
/// Biases and batch-norm scale/shift are randomized so pre-activations do
/// not land exactly on relu kinks (zero-init would pin dead paths there).
inline FdSweepResult fd_sweep(std::uint64_t seed, std::size_t count, bool allow_bn) {
    FdSweepResult res;
    Rng meta(seed);
    for (std::size_t c = 0; c < count; ++c) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            Rng arch = meta.fork(c * 1000 + attempt);
            auto specs = random_layer_specs(arch, allow_bn);
            bool has_bn = false;
            for (const auto& s : specs) has_bn |= s.batch_norm;
            MlpModel model = init_model(specs, arch.next_u64());
            for (auto& l : model.layers) {
                for (auto& v : l.b.v) v = arch.normal(0, 0.3);
                for (auto& v : l.gamma.v) v = 1.0 + arch.normal(0, 0.1);
                for (auto& v : l.beta.v) v = arch.normal(0, 0.3);
            }
            const std::size_t batch = 2 + arch.below(7);
            Tensor x = Tensor::randn(batch, specs.front().in_dim, 1.0, arch);
            Tensor target = Tensor::randn(batch, specs.back().out_dim, 1.0, arch);
            if (attempt < 50) {
                MlpModel probe = model;
                if (min_relu_preact(probe, forward(probe, x, Mode::train)) < 1e-3) continue;
            }
            const double err = gradient_check(model, x, sse_loss(target), 1e-4);
            res.count++;
            if (has_bn)
                res.worst_bn = std::max(res.worst_bn, err);
            else
                res.worst = std::max(res.worst, err);
            break;
        }
    }
    return res;
}

inline void write_be32(std::ofstream& f, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x >> 24), static_cast<unsigned char>(x >> 16),
                          static_cast<unsigned char>(x >> 8), static_cast<unsigned char>(x)};
    f.write(reinterpret_cast<char*>(b), 4);
}

inline void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels,
                             std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                             std::uint32_t magic = 0x00000803u) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    write_be32(f, magic);
    write_be32(f, n);
    write_be32(f, rows);
    write_be32(f, cols);
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels,
                             std::uint32_t magic = 0x00000801u) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    write_be32(f, magic);
    write_be32(f, static_cast<std::uint32_t>(labels.size()));
    f.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

/// Procedural multi-class image set: each class is an oriented Gaussian bar
/// with class-specific center/angle plus pixel noise and a small jitter.
/// Classes are well separated but not trivially so; useful for end-to-end
/// training checks when no real dataset is on disk.
inline ImageDataset synth_images(std::size_t n, std::size_t side, std::size_t m,
                                 std::uint64_t seed, bool labeled = true) {
    Rng rng = stream_for(seed, "synth_images");
    ImageDataset ds;
    ds.num_classes = static_cast<int>(m);
    ds.image_h = side;
    ds.image_w = side;
    ds.images = Tensor(n, side * side);
    if (labeled) ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % m);
        if (labeled) ds.labels[i] = cls;
        const double angle = 2.0 * M_PI * cls / static_cast<double>(m);
        const double cx = 0.5 + 0.22 * std::cos(angle) + rng.normal(0, 0.03);
        const double cy = 0.5 + 0.22 * std::sin(angle) + rng.normal(0, 0.03);
        const double bar = angle * 1.5 + rng.normal(0, 0.08);
        const double ca = std::cos(bar), sa = std::sin(bar);
        double* row = ds.images.row(i);
        for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
                const double fx = (static_cast<double>(x) + 0.5) / side - cx;
                const double fy = (static_cast<double>(y) + 0.5) / side - cy;
                const double u = ca * fx + sa * fy;
                const double w = -sa * fx + ca * fy;
                double val = std::exp(-(u * u / 0.045 + w * w / 0.004));
                val += rng.normal(0, 0.02);
                row[y * side + x] = std::min(1.0, std::max(0.0, val));
            }
        }
    }
    return ds;
}

}  // namespace aae::testutil
