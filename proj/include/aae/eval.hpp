#pragma once

// Quantitative evaluation protocols: Gaussian Parzen-window log-likelihood
// with bandwidth cross-validation, exact nearest neighbors, the
// witness-based cluster labeling protocol, classification error, and a
// two-sample energy-distance diagnostic with a permutation null.
//
// Everything here is pure given its inputs plus a seed. Means over test
// points use compensated summation in a fixed order, so results do not
// depend on any partitioning.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "aae/errors.hpp"
#include "aae/rng.hpp"
#include "aae/priors.hpp"
#include "aae/tensor.hpp"

namespace aae {

struct ParzenEstimate {
    double sigma = 0.0;
    std::vector<double> per_point_ll;
    double mean_ll = 0.0;
    double std_err = 0.0;  // sample std of per_point_ll / sqrt(count)
};

namespace detail {

inline std::vector<double> row_sq_norms(const Tensor& t) {
    std::vector<double> n(t.rows);
    for (std::size_t i = 0; i < t.rows; ++i) {
        const double* r = t.row(i);
        double s = 0;
        for (std::size_t j = 0; j < t.cols; ++j) s += r[j] * r[j];
        n[i] = s;
    }
    return n;
}

// Squared distances from each chunk row to every sample, gemm-backed.
// Cancellation can leave tiny negatives; clamp at zero.
inline Tensor chunk_sq_dists(const Tensor& chunk, const Tensor& samples,
                             const std::vector<double>& chunk_norms, std::size_t chunk_off,
                             const std::vector<double>& sample_norms) {
    Tensor g = matmul_nt(chunk, samples);
    for (std::size_t i = 0; i < g.rows; ++i) {
        double* r = g.row(i);
        const double tn = chunk_norms[chunk_off + i];
        for (std::size_t j = 0; j < g.cols; ++j)
            r[j] = std::max(0.0, tn + sample_norms[j] - 2.0 * r[j]);
    }
    return g;
}

inline void finalize_estimate(ParzenEstimate& est) {
    est.mean_ll = compensated_mean(est.per_point_ll);
    double ss = 0;
    for (double x : est.per_point_ll) {
        const double d = x - est.mean_ll;
        ss += d * d;
    }
    const std::size_t n = est.per_point_ll.size();
    est.std_err = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) /
                              std::sqrt(static_cast<double>(n))
                        : 0.0;
}

}  // namespace detail

/// Parzen-window log-likelihood of every test point under a Gaussian KDE on
/// `samples`: log p(x) = logsumexp_i(-|x-s_i|^2/(2 sigma^2)) - log N
/// - (d/2) log(2 pi sigma^2), log-sum-exp stabilized.
inline ParzenEstimate parzen_log_likelihood(const Tensor& samples, const Tensor& test,
                                            double sigma) {
    if (!(sigma > 0)) throw ConfigError("parzen: sigma must be > 0");
    if (samples.rows == 0) throw ConfigError("parzen: empty sample set");
    if (samples.cols != test.cols)
        throw ShapeError("parzen: dim mismatch " + shape_str(samples) + " vs " + shape_str(test));

    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double log_const = -std::log(static_cast<double>(samples.rows)) -
                             0.5 * static_cast<double>(samples.cols) *
                                 std::log(2.0 * M_PI * sigma * sigma);
    const auto s_norms = detail::row_sq_norms(samples);
    const auto t_norms = detail::row_sq_norms(test);

    ParzenEstimate est;
    est.sigma = sigma;
    est.per_point_ll.resize(test.rows);
    const std::size_t chunk = 256;
    for (std::size_t lo = 0; lo < test.rows; lo += chunk) {
        const std::size_t hi = std::min(test.rows, lo + chunk);
        Tensor block(hi - lo, test.cols);
        for (std::size_t i = lo; i < hi; ++i)
            std::copy(test.row(i), test.row(i) + test.cols, block.row(i - lo));
        Tensor d2 = detail::chunk_sq_dists(block, samples, t_norms, lo, s_norms);
        for (std::size_t i = 0; i < d2.rows; ++i) {
            const double* r = d2.row(i);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < d2.cols; ++j) mx = std::max(mx, -r[j] * inv2s2);
            double s = 0;
            for (std::size_t j = 0; j < d2.cols; ++j) s += std::exp(-r[j] * inv2s2 - mx);
            est.per_point_ll[lo + i] = mx + std::log(s) + log_const;
        }
    }
    detail::finalize_estimate(est);
    return est;
}

/// Bandwidth maximizing mean validation log-likelihood over the grid;
/// ties go to the smaller sigma.
inline double parzen_sigma_cv(const Tensor& samples, const Tensor& validation,
                              const std::vector<double>& sigma_grid) {
    if (sigma_grid.empty()) throw ConfigError("parzen_sigma_cv: empty grid");
    double best_sigma = 0.0, best_ll = -std::numeric_limits<double>::infinity();
    bool first = true;
    for (double sigma : sigma_grid) {
        const double ll = parzen_log_likelihood(samples, validation, sigma).mean_ll;
        if (first || ll > best_ll || (ll == best_ll && sigma < best_sigma)) {
            best_ll = ll;
            best_sigma = sigma;
            first = false;
        }
    }
    return best_sigma;
}

/// Log-spaced grid in [lo, hi].
inline std::vector<double> log_spaced(double lo, double hi, std::size_t k) {
    if (!(lo > 0) || !(hi > lo) || k < 2) throw ConfigError("log_spaced: bad range");
    std::vector<double> g(k);
    for (std::size_t i = 0; i < k; ++i)
        g[i] = std::exp(std::log(lo) +
                        (std::log(hi) - std::log(lo)) * static_cast<double>(i) /
                            static_cast<double>(k - 1));
    return g;
}

struct NearestNeighbor {
    std::size_t index = 0;
    double distance = 0.0;
};

/// Exact brute-force nearest neighbor in Euclidean distance.
inline std::vector<NearestNeighbor> nearest_neighbor(const Tensor& queries, const Tensor& corpus) {
    if (corpus.rows == 0) throw ConfigError("nearest_neighbor: empty corpus");
    if (queries.cols != corpus.cols)
        throw ShapeError("nearest_neighbor: dim mismatch " + shape_str(queries) + " vs " +
                         shape_str(corpus));
    std::vector<NearestNeighbor> out(queries.rows);
    for (std::size_t q = 0; q < queries.rows; ++q) {
        const double* qr = queries.row(q);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < corpus.rows; ++i) {
            const double* cr = corpus.row(i);
            double d = 0;
            for (std::size_t j = 0; j < corpus.cols; ++j) {
                const double diff = qr[j] - cr[j];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_i = i;
            }
        }
        out[q] = {best_i, std::sqrt(best)};
    }
    return out;
}

struct ClusterAssignment {
    std::vector<int> cluster_to_label;
    std::vector<std::size_t> witness_index;  // validation row that maximizes q(y_i|x)
};

struct ClusterEvalResult {
    ClusterAssignment assignment;
    double test_error = 0.0;
};

/// Witness protocol on precomputed q(y|x) tables: per cluster i the
/// validation example maximizing q(y_i|x) donates its label; test error is
/// the fraction of test points whose cluster label disagrees with truth.
/// A validation example may witness several clusters.
inline ClusterEvalResult cluster_eval_probs(const Tensor& val_probs,
                                            const std::vector<int>& val_labels,
                                            const Tensor& test_probs,
                                            const std::vector<int>& test_labels) {
    if (val_probs.rows != val_labels.size() || test_probs.rows != test_labels.size())
        throw ShapeError("cluster_eval: probability/label count mismatch");
    if (val_probs.cols != test_probs.cols)
        throw ShapeError("cluster_eval: cluster count mismatch");
    const std::size_t m = val_probs.cols;

    ClusterEvalResult res;
    res.assignment.cluster_to_label.resize(m);
    res.assignment.witness_index.resize(m);
    for (std::size_t c = 0; c < m; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < val_probs.rows; ++i) {
            if (val_probs.at(i, c) > best) {
                best = val_probs.at(i, c);
                best_i = i;
            }
        }
        res.assignment.witness_index[c] = best_i;
        res.assignment.cluster_to_label[c] = val_labels[best_i];
    }

    std::size_t wrong = 0;
    for (std::size_t i = 0; i < test_probs.rows; ++i) {
        const double* r = test_probs.row(i);
        std::size_t arg = 0;
        for (std::size_t c = 1; c < m; ++c)
            if (r[c] > r[arg]) arg = c;
        if (res.assignment.cluster_to_label[arg] != test_labels[i]) wrong++;
    }
    res.test_error = test_probs.rows
                         ? static_cast<double>(wrong) / static_cast<double>(test_probs.rows)
                         : 0.0;
    return res;
}

/// Fraction of rows whose argmax disagrees with the label.
inline double classification_error_probs(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rows != labels.size())
        throw ShapeError("classification_error: probability/label count mismatch");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const double* r = probs.row(i);
        std::size_t arg = 0;
        for (std::size_t c = 1; c < probs.cols; ++c)
            if (r[c] > r[arg]) arg = c;
        if (static_cast<int>(arg) != labels[i]) wrong++;
    }
    return probs.rows ? static_cast<double>(wrong) / static_cast<double>(probs.rows) : 0.0;
}

struct LatentMatchReport {
    std::vector<double> mean_gap;   // mean(codes) - mean(reference) per dim
    std::vector<double> std_ratio;  // std(codes) / std(reference) per dim
    double energy_distance = 0.0;
    double null_mean = 0.0;
    double null_std = 0.0;
    double null_p99 = 0.0;
    std::size_t n_permutations = 0;
};

namespace detail {

// Energy statistic 2*between - within_x - within_y from a pooled distance
// matrix and a group-1 membership mask.
inline double energy_from_pooled(const std::vector<float>& dist, std::size_t total,
                                 const std::vector<std::uint32_t>& group1, double sum_all_pairs) {
    const std::size_t n = group1.size();
    const std::size_t m = total - n;
    std::vector<char> in1(total, 0);
    for (auto i : group1) in1[i] = 1;
    double sum_w1 = 0;
    for (std::size_t a = 0; a < n; ++a) {
        const std::size_t i = group1[a];
        const float* row = dist.data() + i * total;
        for (std::size_t b = a + 1; b < n; ++b) sum_w1 += row[group1[b]];
    }
    // within group 2 = all pairs - within 1 - between; between = all - w1 - w2
    double sum_w2 = 0;
    {
        std::vector<std::uint32_t> group2;
        group2.reserve(m);
        for (std::size_t i = 0; i < total; ++i)
            if (!in1[i]) group2.push_back(static_cast<std::uint32_t>(i));
        for (std::size_t a = 0; a < m; ++a) {
            const float* row = dist.data() + group2[a] * total;
            for (std::size_t b = a + 1; b < m; ++b) sum_w2 += row[group2[b]];
        }
    }
    const double sum_between = sum_all_pairs - sum_w1 - sum_w2;
    const double a_term = sum_between / (static_cast<double>(n) * static_cast<double>(m));
    const double b_term = n > 1 ? 2.0 * sum_w1 / (static_cast<double>(n) * (n - 1.0)) : 0.0;
    const double c_term = m > 1 ? 2.0 * sum_w2 / (static_cast<double>(m) * (m - 1.0)) : 0.0;
    return 2.0 * a_term - b_term - c_term;
}

}  // namespace detail

/// Compares codes against fresh prior samples: per-dim mean gap and std
/// ratio, plus the energy distance with a permutation null (statistic
/// recomputed under random relabelings of the pooled sample).
inline LatentMatchReport latent_match_diagnostic(const Tensor& codes, const PriorSpec& prior,
                                                 std::size_t n_ref, std::uint64_t seed,
                                                 std::size_t n_permutations = 200) {
    if (codes.rows == 0) throw ConfigError("latent_match_diagnostic: empty codes");
    PriorSample ref = sample_prior(prior, n_ref, hash_mix(seed, hash_str("latent_ref")));
    if (ref.points.cols != codes.cols)
        throw ShapeError("latent_match_diagnostic: prior dim " + std::to_string(ref.points.cols) +
                         " != code dim " + std::to_string(codes.cols));

    LatentMatchReport rep;
    const std::size_t d = codes.cols;
    rep.mean_gap.resize(d);
    rep.std_ratio.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        double mc = 0, mr = 0;
        for (std::size_t i = 0; i < codes.rows; ++i) mc += codes.at(i, j);
        for (std::size_t i = 0; i < ref.points.rows; ++i) mr += ref.points.at(i, j);
        mc /= static_cast<double>(codes.rows);
        mr /= static_cast<double>(ref.points.rows);
        double vc = 0, vr = 0;
        for (std::size_t i = 0; i < codes.rows; ++i) {
            const double dev = codes.at(i, j) - mc;
            vc += dev * dev;
        }
        for (std::size_t i = 0; i < ref.points.rows; ++i) {
            const double dev = ref.points.at(i, j) - mr;
            vr += dev * dev;
        }
        vc /= static_cast<double>(codes.rows);
        vr /= static_cast<double>(ref.points.rows);
        rep.mean_gap[j] = mc - mr;
        rep.std_ratio[j] = vr > 0 ? std::sqrt(vc / vr) : std::numeric_limits<double>::infinity();
    }

    // pooled pairwise distances (float storage keeps n=2000+2000 tractable)
    const std::size_t n = codes.rows, total = n + ref.points.rows;
    Tensor pooled(total, d);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(codes.row(i), codes.row(i) + d, pooled.row(i));
    for (std::size_t i = 0; i < ref.points.rows; ++i)
        std::copy(ref.points.row(i), ref.points.row(i) + d, pooled.row(n + i));
    std::vector<float> dist(total * total, 0.0f);
    const auto norms = detail::row_sq_norms(pooled);
    {
        Tensor g = matmul_nt(pooled, pooled);
        for (std::size_t i = 0; i < total; ++i)
            for (std::size_t j = 0; j < total; ++j)
                dist[i * total + j] = static_cast<float>(
                    std::sqrt(std::max(0.0, norms[i] + norms[j] - 2.0 * g.at(i, j))));
    }
    double sum_all = 0;
    for (std::size_t i = 0; i < total; ++i)
        for (std::size_t j = i + 1; j < total; ++j) sum_all += dist[i * total + j];

    std::vector<std::uint32_t> group1(n);
    for (std::size_t i = 0; i < n; ++i) group1[i] = static_cast<std::uint32_t>(i);
    rep.energy_distance = detail::energy_from_pooled(dist, total, group1, sum_all);

    Rng rng = stream_for(seed, "energy_permutation");
    std::vector<std::uint32_t> pool_idx(total);
    for (std::size_t i = 0; i < total; ++i) pool_idx[i] = static_cast<std::uint32_t>(i);
    std::vector<double> null_stats(n_permutations);
    for (std::size_t p = 0; p < n_permutations; ++p) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + rng.below(total - i);
            std::swap(pool_idx[i], pool_idx[j]);
        }
        std::vector<std::uint32_t> g1(pool_idx.begin(),
                                      pool_idx.begin() + static_cast<std::ptrdiff_t>(n));
        null_stats[p] = detail::energy_from_pooled(dist, total, g1, sum_all);
    }
    rep.n_permutations = n_permutations;
    if (n_permutations) {
        rep.null_mean = compensated_mean(null_stats);
        double ss = 0;
        for (double x : null_stats) {
            const double dev = x - rep.null_mean;
            ss += dev * dev;
        }
        rep.null_std = n_permutations > 1 ? std::sqrt(ss / static_cast<double>(n_permutations - 1))
                                          : 0.0;
        std::sort(null_stats.begin(), null_stats.end());
        const std::size_t idx99 = static_cast<std::size_t>(
            std::min<double>(static_cast<double>(n_permutations - 1),
                             std::ceil(0.99 * static_cast<double>(n_permutations)) - 1.0));
        rep.null_p99 = null_stats[idx99];
    }
    return rep;
}

/// Mean log-likelihood of eval rows under an isotropic Gaussian fit to
/// fit rows (per-dim mean, one pooled variance). Likelihood floor baseline.
inline double isotropic_gaussian_loglik(const Tensor& fit, const Tensor& eval_pts) {
    if (fit.rows == 0 || fit.cols != eval_pts.cols)
        throw ShapeError("isotropic_gaussian_loglik: bad shapes");
    const std::size_t d = fit.cols;
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < fit.rows; ++i) {
        const double* r = fit.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (auto& m : mean) m /= static_cast<double>(fit.rows);
    double var = 0;
    for (std::size_t i = 0; i < fit.rows; ++i) {
        const double* r = fit.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = r[j] - mean[j];
            var += dev * dev;
        }
    }
    var /= static_cast<double>(fit.rows) * static_cast<double>(d);
    var = std::max(var, 1e-12);
    std::vector<double> lls(eval_pts.rows);
    const double c = -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * var);
    for (std::size_t i = 0; i < eval_pts.rows; ++i) {
        const double* r = eval_pts.row(i);
        double q = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = r[j] - mean[j];
            q += dev * dev;
        }
        lls[i] = c - 0.5 * q / var;
    }
    return compensated_mean(lls);
}

}  // namespace aae
