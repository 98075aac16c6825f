#pragma once

// Figure rendering to PGM/PPM (binary P5/P6). Renderers are pure: identical
// inputs produce byte-identical files. Pixel intensities are clamped to
// [0,1] and quantized round-half-away-from-zero to 8 bits.
//
// The renderers take decode callbacks rather than models, so this header
// stays independent of the network machinery; the experiment runner binds
// the callbacks.

#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "aae/errors.hpp"
#include "aae/eval.hpp"
#include "aae/priors.hpp"
#include "aae/rng.hpp"
#include "aae/tensor.hpp"

namespace aae {

inline std::uint8_t quantize8(double v) {
    v = std::min(1.0, std::max(0.0, v));
    const double scaled = v * 255.0;
    return static_cast<std::uint8_t>(std::floor(scaled + 0.5));
}

/// Grid of grayscale cells; sheet dimensions are grid*cell exactly, plus
/// declared separator pixels between cells when sep > 0.
struct ImageSheet {
    std::size_t grid_rows = 0, grid_cols = 0;
    std::size_t cell_h = 0, cell_w = 0;
    std::size_t sep = 0;
    Tensor pixels;  // sheet_h x sheet_w in [0,1]

    std::size_t sheet_h() const { return grid_rows * cell_h + (grid_rows ? (grid_rows - 1) * sep : 0); }
    std::size_t sheet_w() const { return grid_cols * cell_w + (grid_cols ? (grid_cols - 1) * sep : 0); }

    static ImageSheet blank(std::size_t rows, std::size_t cols, std::size_t h, std::size_t w,
                            std::size_t sep = 0, double fill = 0.0) {
        ImageSheet s;
        s.grid_rows = rows;
        s.grid_cols = cols;
        s.cell_h = h;
        s.cell_w = w;
        s.sep = sep;
        s.pixels = Tensor(s.sheet_h(), s.sheet_w(), fill);
        return s;
    }

    /// Writes one d-vector (h*w row-major) into cell (r, c).
    void put_cell(std::size_t r, std::size_t c, const double* cell) {
        const std::size_t y0 = r * (cell_h + sep), x0 = c * (cell_w + sep);
        for (std::size_t y = 0; y < cell_h; ++y)
            for (std::size_t x = 0; x < cell_w; ++x)
                pixels.at(y0 + y, x0 + x) = cell[y * cell_w + x];
    }
};

inline void write_pgm(const std::string& path, const Tensor& gray) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open for writing: " + path, 0);
    out << "P5\n" << gray.cols << " " << gray.rows << "\n255\n";
    std::vector<std::uint8_t> row(gray.cols);
    for (std::size_t i = 0; i < gray.rows; ++i) {
        for (std::size_t j = 0; j < gray.cols; ++j) row[j] = quantize8(gray.at(i, j));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

inline void write_sheet_pgm(const std::string& path, const ImageSheet& sheet) {
    write_pgm(path, sheet.pixels);
}

struct Rgb {
    std::uint8_t r = 255, g = 255, b = 255;
    bool operator==(const Rgb&) const = default;
};

struct RgbImage {
    std::size_t w = 0, h = 0;
    std::vector<Rgb> px;

    RgbImage(std::size_t width, std::size_t height, Rgb fill = {255, 255, 255})
        : w(width), h(height), px(width * height, fill) {}
    Rgb& at(std::size_t x, std::size_t y) { return px[y * w + x]; }
    const Rgb& at(std::size_t x, std::size_t y) const { return px[y * w + x]; }
};

inline void write_ppm(const std::string& path, const RgbImage& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open for writing: " + path, 0);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    for (const Rgb& p : img.px) {
        const char buf[3] = {static_cast<char>(p.r), static_cast<char>(p.g),
                             static_cast<char>(p.b)};
        out.write(buf, 3);
    }
}

/// Fixed scatter palette: ten class colors plus gray for unlabeled (-1).
inline constexpr std::array<Rgb, 11> kScatterPalette{{
    {31, 119, 180},   // 0 blue
    {255, 127, 14},   // 1 orange
    {44, 160, 44},    // 2 green
    {214, 39, 40},    // 3 red
    {148, 103, 189},  // 4 purple
    {140, 86, 75},    // 5 brown
    {227, 119, 194},  // 6 pink
    {188, 189, 34},   // 7 olive
    {23, 190, 207},   // 8 cyan
    {64, 64, 160},    // 9 indigo
    {128, 128, 128},  // unlabeled gray
}};

/// Scatter plot of 2-D codes, one color per class, axes auto-fit with a 5%
/// margin. Codes of higher dimensionality are rejected; project them first
/// (dimred map) and plot the projection.
inline void latent_scatter(const Tensor& codes, const std::vector<int>& labels,
                           const std::string& out_path, std::size_t size = 600) {
    if (codes.cols != 2 && codes.rows > 0)
        throw ConfigError("latent_scatter: codes must be 2-D (got dim " +
                          std::to_string(codes.cols) +
                          "); project higher-dimensional codes first");
    if (!labels.empty() && labels.size() != codes.rows)
        throw ConfigError("latent_scatter: label count mismatch");

    RgbImage img(size, size);
    if (codes.rows > 0) {
        double xmin = codes.at(0, 0), xmax = xmin, ymin = codes.at(0, 1), ymax = ymin;
        for (std::size_t i = 0; i < codes.rows; ++i) {
            xmin = std::min(xmin, codes.at(i, 0));
            xmax = std::max(xmax, codes.at(i, 0));
            ymin = std::min(ymin, codes.at(i, 1));
            ymax = std::max(ymax, codes.at(i, 1));
        }
        double xr = xmax - xmin, yr = ymax - ymin;
        if (xr == 0) xr = 1;
        if (yr == 0) yr = 1;
        xmin -= 0.05 * xr;
        xmax += 0.05 * xr;
        ymin -= 0.05 * yr;
        ymax += 0.05 * yr;

        const double sx = static_cast<double>(size - 1) / (xmax - xmin);
        const double sy = static_cast<double>(size - 1) / (ymax - ymin);
        for (std::size_t i = 0; i < codes.rows; ++i) {
            const int cls = labels.empty() ? -1 : labels[i];
            const Rgb color = kScatterPalette[cls >= 0 && cls < 10 ? cls : 10];
            const auto cx = static_cast<long>(std::floor((codes.at(i, 0) - xmin) * sx + 0.5));
            // image y grows downward
            const auto cy = static_cast<long>(
                std::floor((ymax - codes.at(i, 1)) * sy + 0.5));
            for (long dy = -2; dy <= 2; ++dy) {
                for (long dx = -2; dx <= 2; ++dx) {
                    const long x = cx + dx, y = cy + dy;
                    if (x < 0 || y < 0 || x >= static_cast<long>(size) ||
                        y >= static_cast<long>(size))
                        continue;
                    img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = color;
                }
            }
        }
    }
    write_ppm(out_path, img);
}

using DecodeFn = std::function<Tensor(const Tensor& z)>;

/// k x k sheet walking the Gaussian percentile grid along both code
/// dimensions: cell (i, j) decodes z = (grid[i], grid[j]). k = 1 decodes the
/// distribution median (0, 0).
inline ImageSheet manifold_grid(const DecodeFn& decode_fn, double stddev, std::size_t k,
                                std::size_t cell_h, std::size_t cell_w) {
    if (k == 0) throw ConfigError("manifold_grid: k must be >= 1");
    const std::vector<double> grid =
        k == 1 ? std::vector<double>{0.0} : gaussian_percentile_grid(stddev, k);
    Tensor zs(k * k, 2);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            zs.at(i * k + j, 0) = grid[i];
            zs.at(i * k + j, 1) = grid[j];
        }
    Tensor cells = decode_fn(zs);
    require_shape(cells, k * k, cell_h * cell_w, "manifold_grid decoded cells");
    ImageSheet sheet = ImageSheet::blank(k, k, cell_h, cell_w);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) sheet.put_cell(i, j, cells.row(i * k + j));
    return sheet;
}

/// Like manifold_grid but walks a mixture component's own frame: grid axes
/// follow the component's covariance eigenvectors (radial and tangential).
inline ImageSheet manifold_grid_component(const DecodeFn& decode_fn, const Mog10Prior& mog,
                                          int component, std::size_t k, std::size_t cell_h,
                                          std::size_t cell_w) {
    if (component < 0 || component >= 10)
        throw ConfigError("manifold_grid_component: component outside [0,10)");
    const std::vector<double> ug =
        k == 1 ? std::vector<double>{0.0} : gaussian_percentile_grid(1.0, k);
    double mx, my, rx, ry, tx, ty;
    detail::mog10_frame(mog, component, mx, my, rx, ry, tx, ty);
    Tensor zs(k * k, 2);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double u = ug[i] * mog.radial_std;
            const double w = ug[j] * mog.tangential_std;
            zs.at(i * k + j, 0) = mx + u * rx + w * tx;
            zs.at(i * k + j, 1) = my + u * ry + w * ty;
        }
    Tensor cells = decode_fn(zs);
    require_shape(cells, k * k, cell_h * cell_w, "manifold_grid decoded cells");
    ImageSheet sheet = ImageSheet::blank(k, k, cell_h, cell_w);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) sheet.put_cell(i, j, cells.row(i * k + j));
    return sheet;
}

/// Rows of decoded prior samples; the last column holds the exact nearest
/// training image (verbatim row copy) to the sample in the second-to-last
/// column. n not divisible by the sample column count leaves blank padding.
inline ImageSheet sample_sheet(const DecodeFn& decode_fn, const PriorSpec& prior, std::size_t n,
                               std::uint64_t seed, const Tensor& train_images, std::size_t cell_h,
                               std::size_t cell_w, std::size_t sample_cols = 10) {
    if (sample_cols == 0) throw ConfigError("sample_sheet: need at least one sample column");
    PriorSample zs = sample_prior(prior, n, seed);
    Tensor decoded = decode_fn(zs.points);
    require_shape(decoded, n, cell_h * cell_w, "sample_sheet decoded samples");

    const std::size_t rows = (n + sample_cols - 1) / sample_cols;
    ImageSheet sheet = ImageSheet::blank(rows, sample_cols + 1, cell_h, cell_w);
    Tensor nn_queries(rows, cell_h * cell_w, 0.0);
    std::vector<bool> has_query(rows, false);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = i / sample_cols, c = i % sample_cols;
        sheet.put_cell(r, c, decoded.row(i));
        if (c == sample_cols - 1) {
            std::copy(decoded.row(i), decoded.row(i) + decoded.cols, nn_queries.row(r));
            has_query[r] = true;
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        if (!has_query[r]) continue;
        Tensor q(1, decoded.cols);
        std::copy(nn_queries.row(r), nn_queries.row(r) + decoded.cols, q.row(0));
        const auto nn = nearest_neighbor(q, train_images);
        sheet.put_cell(r, sample_cols, train_images.row(nn[0].index));
    }
    return sheet;
}

struct ClusterSheetResult {
    ImageSheet sheet;
    std::vector<std::size_t> empty_clusters;
};

/// Row per cluster: first cell decodes the cluster head (style fixed to
/// zero), the rest are randomly drawn test images whose argmax cluster is
/// that row. Empty clusters leave blank rows and are flagged.
inline ClusterSheetResult cluster_sheet(
    const std::function<Tensor(int cluster)>& decode_head, const Tensor& test_images,
    const Tensor& test_probs, std::size_t m, std::uint64_t seed, std::size_t cell_h,
    std::size_t cell_w, std::size_t members_per_row = 10) {
    if (test_probs.rows != test_images.rows || test_probs.cols != m)
        throw ShapeError("cluster_sheet: probability table shape mismatch");
    ClusterSheetResult res;
    res.sheet = ImageSheet::blank(m, members_per_row + 1, cell_h, cell_w);

    std::vector<std::vector<std::uint32_t>> members(m);
    for (std::size_t i = 0; i < test_probs.rows; ++i) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < m; ++j)
            if (test_probs.at(i, j) > test_probs.at(i, arg)) arg = j;
        members[arg].push_back(static_cast<std::uint32_t>(i));
    }

    Rng rng = stream_for(seed, "cluster_sheet");
    for (std::size_t c = 0; c < m; ++c) {
        Tensor head = decode_head(static_cast<int>(c));
        require_shape(head, 1, cell_h * cell_w, "cluster head cell");
        res.sheet.put_cell(c, 0, head.row(0));
        auto& pool = members[c];
        if (pool.empty()) {
            res.empty_clusters.push_back(c);
            continue;
        }
        const std::size_t take = std::min(members_per_row, pool.size());
        for (std::size_t k = 0; k < take; ++k) {
            const std::size_t j = k + rng.below(pool.size() - k);
            std::swap(pool[k], pool[j]);
            res.sheet.put_cell(c, 1 + k, test_images.row(pool[k]));
        }
    }
    return res;
}

/// Least-squares 2 x n linear map sending cluster-head rows to evenly spaced
/// points on a circle; used to view n-dimensional dimred embeddings in 2-D.
/// Returns the map A so that projected = reps * A^T.
inline Tensor fit_heads_to_circle(const Tensor& heads, double circle_radius = 10.0) {
    const std::size_t m = heads.rows, n = heads.cols;
    if (m < 2) throw ConfigError("fit_heads_to_circle: need at least 2 heads");
    Tensor targets(m, 2);
    for (std::size_t i = 0; i < m; ++i) {
        const double th = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(m);
        targets.at(i, 0) = circle_radius * std::cos(th);
        targets.at(i, 1) = circle_radius * std::sin(th);
    }
    // normal equations with a small ridge for rank safety
    Tensor hth = matmul_tn(heads, heads);  // n x n
    for (std::size_t i = 0; i < n; ++i) hth.at(i, i) += 1e-9;
    Tensor htt = matmul_tn(heads, targets);  // n x 2

    // gaussian elimination, partial pivoting
    std::vector<std::size_t> piv(n);
    for (std::size_t i = 0; i < n; ++i) piv[i] = i;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t best = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(hth.at(r, col)) > std::abs(hth.at(best, col))) best = r;
        if (best != col) {
            for (std::size_t c2 = 0; c2 < n; ++c2) std::swap(hth.at(col, c2), hth.at(best, c2));
            for (std::size_t c2 = 0; c2 < 2; ++c2) std::swap(htt.at(col, c2), htt.at(best, c2));
        }
        const double pivot = hth.at(col, col);
        if (pivot == 0.0) throw ConfigError("fit_heads_to_circle: singular system");
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = hth.at(r, col) / pivot;
            if (f == 0.0) continue;
            for (std::size_t c2 = col; c2 < n; ++c2) hth.at(r, c2) -= f * hth.at(col, c2);
            for (std::size_t c2 = 0; c2 < 2; ++c2) htt.at(r, c2) -= f * htt.at(col, c2);
        }
    }
    Tensor x(n, 2);
    for (std::size_t col = 2; col-- > 0;) {
        for (std::size_t r = n; r-- > 0;) {
            double s = htt.at(r, col);
            for (std::size_t c2 = r + 1; c2 < n; ++c2) s -= hth.at(r, c2) * x.at(c2, col);
            x.at(r, col) = s / hth.at(r, r);
        }
    }
    return transpose(x);  // 2 x n
}

inline void write_projection_map(const std::string& path, const Tensor& map) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IngestError("cannot open for writing: " + path, 0);
    out << "# linear map rows (2 x " << map.cols << "); projected = rep * A^T\n";
    char buf[64];
    for (std::size_t i = 0; i < map.rows; ++i) {
        for (std::size_t j = 0; j < map.cols; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", map.at(i, j));
            out << buf << (j + 1 == map.cols ? "\n" : "\t");
        }
    }
}

}  // namespace aae
