// Generates a small synthetic image dataset (ten classes of oriented
// Gaussian bars with jitter and pixel noise) in IDX or AAE1 raw-container
// format. Useful for smoke runs and CLI exercises when no real dataset is
// on disk.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "aae/dataset.hpp"
#include "aae/rng.hpp"

namespace {

using aae::Rng;

struct SynthSet {
    std::vector<unsigned char> pixels;  // n * side * side
    std::vector<unsigned char> labels;
};

SynthSet make_set(std::size_t n, std::size_t side, std::size_t classes, std::uint64_t seed) {
    Rng rng = aae::stream_for(seed, "synthgen");
    SynthSet out;
    out.pixels.resize(n * side * side);
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto cls = static_cast<unsigned char>(i % classes);
        out.labels[i] = cls;
        const double angle = 2.0 * M_PI * cls / static_cast<double>(classes);
        const double cx = 0.5 + 0.22 * std::cos(angle) + rng.normal(0, 0.03);
        const double cy = 0.5 + 0.22 * std::sin(angle) + rng.normal(0, 0.03);
        const double bar = angle * 1.5 + rng.normal(0, 0.08);
        const double ca = std::cos(bar), sa = std::sin(bar);
        for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
                const double fx = (static_cast<double>(x) + 0.5) / side - cx;
                const double fy = (static_cast<double>(y) + 0.5) / side - cy;
                const double u = ca * fx + sa * fy;
                const double w = -sa * fx + ca * fy;
                double val = std::exp(-(u * u / 0.045 + w * w / 0.004));
                val += rng.normal(0, 0.02);
                val = std::min(1.0, std::max(0.0, val));
                out.pixels[i * side * side + y * side + x] =
                    static_cast<unsigned char>(std::floor(val * 255.0 + 0.5));
            }
        }
    }
    return out;
}

void write_be32(std::ofstream& f, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x >> 24), static_cast<unsigned char>(x >> 16),
                          static_cast<unsigned char>(x >> 8), static_cast<unsigned char>(x)};
    f.write(reinterpret_cast<char*>(b), 4);
}

void write_idx(const std::string& dir, const std::string& stem, const SynthSet& set,
               std::size_t side) {
    {
        std::ofstream f(dir + "/" + stem + "-images-idx3-ubyte", std::ios::binary);
        write_be32(f, 0x00000803u);
        write_be32(f, static_cast<std::uint32_t>(set.labels.size()));
        write_be32(f, static_cast<std::uint32_t>(side));
        write_be32(f, static_cast<std::uint32_t>(side));
        f.write(reinterpret_cast<const char*>(set.pixels.data()),
                static_cast<std::streamsize>(set.pixels.size()));
    }
    {
        std::ofstream f(dir + "/" + stem + "-labels-idx1-ubyte", std::ios::binary);
        write_be32(f, 0x00000801u);
        write_be32(f, static_cast<std::uint32_t>(set.labels.size()));
        f.write(reinterpret_cast<const char*>(set.labels.data()),
                static_cast<std::streamsize>(set.labels.size()));
    }
}

void write_aae1(const std::string& path, const SynthSet& set, std::size_t side,
                std::size_t classes) {
    aae::ImageDataset ds;
    const std::size_t n = set.labels.size(), d = side * side;
    ds.images = aae::Tensor(n, d);
    for (std::size_t i = 0; i < n * d; ++i) ds.images.v[i] = set.pixels[i] / 255.0;
    ds.labels.assign(set.labels.begin(), set.labels.end());
    ds.num_classes = static_cast<int>(classes);
    ds.image_h = ds.image_w = side;
    aae::save_aae1(path, ds);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic dataset generator (oriented-bar classes)"};
    std::string out_dir = "data/synth";
    std::string format = "idx";
    std::size_t n = 2000, n_test = 500, side = 12, classes = 10;
    std::uint64_t seed = 1;
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--format", format, "idx | aae1")->check(CLI::IsMember({"idx", "aae1"}));
    app.add_option("--n", n, "training examples");
    app.add_option("--test", n_test, "test examples");
    app.add_option("--side", side, "image side length");
    app.add_option("--classes", classes, "class count (<= 10)");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    if (classes < 2 || classes > 10) {
        std::cerr << "classes must be in [2,10]\n";
        return 2;
    }
    std::filesystem::create_directories(out_dir);
    const SynthSet train = make_set(n, side, classes, seed);
    const SynthSet test = make_set(n_test, side, classes, seed + 1);
    if (format == "idx") {
        write_idx(out_dir, "train", train, side);
        write_idx(out_dir, "t10k", test, side);
    } else {
        write_aae1(out_dir + "/train.aae1", train, side, classes);
        write_aae1(out_dir + "/test.aae1", test, side, classes);
    }
    std::cout << "wrote " << n << " train / " << n_test << " test examples (" << side << "x"
              << side << ", " << classes << " classes, " << format << ") to " << out_dir << "\n";
    return 0;
}
