#pragma once

// Latent priors: isotropic Gaussian, a ring of 10 2-D Gaussians, a swiss
// roll, and Categorical one-hots. All are samplable; densities exist only
// for the Gaussian and the mixture (the swiss roll is deliberately
// sampling-only). Conditional sampling draws from a named mixture component
// or swiss-roll decile.
//
// Mixture geometry: component i sits at radius*(cos th_i, sin th_i) with
// th_i = 2*pi*i/10, axis-aligned covariance in the rotated frame
// (radial_std along the radius, tangential_std along the tangent), equal
// weights. Swiss roll: arc parameter t uniform on [0, turns*2*pi], mean
// scale*(t*cos t, t*sin t)/(turns*2*pi), isotropic noise; deciles are
// measured in t. The constants are reproduction choices, not fitted values.

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "aae/errors.hpp"
#include "aae/rng.hpp"
#include "aae/tensor.hpp"

namespace aae {

struct GaussianPrior {
    std::size_t dim = 2;
    double stddev = 1.0;
};

struct Mog10Prior {
    double radius = 10.0;
    double radial_std = 1.0;
    double tangential_std = 0.1;
};

struct SwissRollPrior {
    double turns = 2.0;
    double scale = 20.0;
    double noise_std = 0.5;
};

struct CategoricalPrior {
    std::size_t m = 10;
};

struct PriorSpec {
    std::variant<GaussianPrior, Mog10Prior, SwissRollPrior, CategoricalPrior> kind;

    PriorSpec() : kind(GaussianPrior{}) {}
    PriorSpec(GaussianPrior g) : kind(g) { validate(); }
    PriorSpec(Mog10Prior m) : kind(m) { validate(); }
    PriorSpec(SwissRollPrior s) : kind(s) { validate(); }
    PriorSpec(CategoricalPrior c) : kind(c) { validate(); }

    void validate() const {
        if (auto* g = std::get_if<GaussianPrior>(&kind)) {
            if (g->dim < 1) throw ConfigError("gaussian prior: dim must be >= 1");
            if (!(g->stddev > 0)) throw ConfigError("gaussian prior: std must be > 0");
        } else if (auto* m = std::get_if<Mog10Prior>(&kind)) {
            if (!(m->radial_std > 0) || !(m->tangential_std > 0))
                throw ConfigError("mog10 prior: stds must be > 0");
        } else if (auto* s = std::get_if<SwissRollPrior>(&kind)) {
            if (!(s->noise_std >= 0)) throw ConfigError("swiss roll prior: noise_std must be >= 0");
            if (!(s->turns > 0) || !(s->scale > 0))
                throw ConfigError("swiss roll prior: turns and scale must be > 0");
        } else if (auto* c = std::get_if<CategoricalPrior>(&kind)) {
            if (c->m < 2) throw ConfigError("categorical prior: m must be >= 2");
        }
    }

    std::size_t dim() const {
        if (auto* g = std::get_if<GaussianPrior>(&kind)) return g->dim;
        if (std::holds_alternative<CategoricalPrior>(kind))
            return std::get<CategoricalPrior>(kind).m;
        return 2;
    }

    bool has_density() const {
        return std::holds_alternative<GaussianPrior>(kind) ||
               std::holds_alternative<Mog10Prior>(kind);
    }

    bool conditionable() const {
        return std::holds_alternative<Mog10Prior>(kind) ||
               std::holds_alternative<SwissRollPrior>(kind);
    }

    const char* name() const {
        if (std::holds_alternative<GaussianPrior>(kind)) return "gaussian";
        if (std::holds_alternative<Mog10Prior>(kind)) return "mog10_2d";
        if (std::holds_alternative<SwissRollPrior>(kind)) return "swiss_roll";
        return "categorical";
    }
};

struct PriorSample {
    Tensor points;               // n x dim
    std::vector<int> component;  // mixture/decile id, -1 when unconditioned
};

namespace detail {

inline void mog10_frame(const Mog10Prior& m, int comp, double& mx, double& my, double& rx,
                        double& ry, double& tx, double& ty) {
    const double th = 2.0 * M_PI * comp / 10.0;
    rx = std::cos(th);
    ry = std::sin(th);
    tx = -ry;
    ty = rx;
    mx = m.radius * rx;
    my = m.radius * ry;
}

inline void sample_mog10_point(const Mog10Prior& m, int comp, Rng& rng, double& x, double& y) {
    double mx, my, rx, ry, tx, ty;
    mog10_frame(m, comp, mx, my, rx, ry, tx, ty);
    const double u = rng.normal(0, m.radial_std);
    const double w = rng.normal(0, m.tangential_std);
    x = mx + u * rx + w * tx;
    y = my + u * ry + w * ty;
}

inline void sample_swiss_point(const SwissRollPrior& s, double t, Rng& rng, double& x, double& y) {
    const double tmax = s.turns * 2.0 * M_PI;
    x = s.scale * t * std::cos(t) / tmax + rng.normal(0, s.noise_std);
    y = s.scale * t * std::sin(t) / tmax + rng.normal(0, s.noise_std);
}

inline int swiss_decile(const SwissRollPrior& s, double t) {
    const double tmax = s.turns * 2.0 * M_PI;
    int dec = static_cast<int>(10.0 * t / tmax);
    return std::min(dec, 9);
}

}  // namespace detail

/// n i.i.d. samples; deterministic for a given seed. Mixture and swiss-roll
/// samples carry their component / decile id, plain Gaussians carry -1.
inline PriorSample sample_prior(const PriorSpec& spec, std::size_t n, std::uint64_t seed) {
    Rng rng = stream_for(seed, "sample_prior");
    PriorSample out;
    out.points = Tensor(n, spec.dim());
    out.component.assign(n, -1);
    if (auto* g = std::get_if<GaussianPrior>(&spec.kind)) {
        for (std::size_t i = 0; i < n; ++i) {
            double* r = out.points.row(i);
            for (std::size_t j = 0; j < g->dim; ++j) r[j] = rng.normal(0, g->stddev);
        }
    } else if (auto* m = std::get_if<Mog10Prior>(&spec.kind)) {
        for (std::size_t i = 0; i < n; ++i) {
            const int comp = static_cast<int>(rng.below(10));
            out.component[i] = comp;
            detail::sample_mog10_point(*m, comp, rng, out.points.at(i, 0), out.points.at(i, 1));
        }
    } else if (auto* s = std::get_if<SwissRollPrior>(&spec.kind)) {
        const double tmax = s->turns * 2.0 * M_PI;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = rng.uniform(0, tmax);
            out.component[i] = detail::swiss_decile(*s, t);
            detail::sample_swiss_point(*s, t, rng, out.points.at(i, 0), out.points.at(i, 1));
        }
    } else {
        const auto& c = std::get<CategoricalPrior>(spec.kind);
        for (std::size_t i = 0; i < n; ++i) {
            const int k = static_cast<int>(rng.below(c.m));
            out.component[i] = k;
            out.points.at(i, static_cast<std::size_t>(k)) = 1.0;
        }
    }
    return out;
}

/// Point i is drawn from mixture component labels[i] (swiss roll: from
/// decile labels[i] of the arc length, deciles in numeric order).
inline PriorSample sample_prior_conditional(const PriorSpec& spec, const std::vector<int>& labels,
                                            std::uint64_t seed) {
    if (!spec.conditionable())
        throw ConfigError(std::string("conditional sampling is undefined for prior '") +
                          spec.name() + "'");
    Rng rng = stream_for(seed, "sample_prior_conditional");
    PriorSample out;
    out.points = Tensor(labels.size(), 2);
    out.component.assign(labels.size(), -1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l < 0 || l >= 10)
            throw ConfigError("conditional label " + std::to_string(l) + " outside [0,10)");
        out.component[i] = l;
        if (auto* m = std::get_if<Mog10Prior>(&spec.kind)) {
            detail::sample_mog10_point(*m, l, rng, out.points.at(i, 0), out.points.at(i, 1));
        } else {
            const auto& s = std::get<SwissRollPrior>(spec.kind);
            const double tmax = s.turns * 2.0 * M_PI;
            const double t = (l + rng.uniform()) * tmax / 10.0;
            detail::sample_swiss_point(s, t, rng, out.points.at(i, 0), out.points.at(i, 1));
        }
    }
    return out;
}

/// Exact log density per point; defined for the Gaussian and the mixture
/// only. The swiss roll has no closed form here on purpose: it exists to
/// exercice the sampling-only training path.
inline std::vector<double> log_density(const PriorSpec& spec, const Tensor& points) {
    if (!spec.has_density())
        throw UnsupportedDensityError(std::string("prior '") + spec.name() +
                                      "' has no available density");
    std::vector<double> out(points.rows);
    if (auto* g = std::get_if<GaussianPrior>(&spec.kind)) {
        require_shape(points, points.rows, g->dim, "log_density points");
        const double var = g->stddev * g->stddev;
        const double c = -0.5 * static_cast<double>(g->dim) * std::log(2.0 * M_PI * var);
        for (std::size_t i = 0; i < points.rows; ++i) {
            double q = 0;
            const double* r = points.row(i);
            for (std::size_t j = 0; j < g->dim; ++j) q += r[j] * r[j];
            out[i] = c - 0.5 * q / var;
        }
        return out;
    }
    const auto& m = std::get<Mog10Prior>(spec.kind);
    require_shape(points, points.rows, 2, "log_density points");
    const double log_w = -std::log(10.0);
    const double log_norm = -std::log(2.0 * M_PI * m.radial_std * m.tangential_std);
    for (std::size_t i = 0; i < points.rows; ++i) {
        const double x = points.at(i, 0), y = points.at(i, 1);
        double mx_terms[10];
        for (int c = 0; c < 10; ++c) {
            double mx, my, rx, ry, tx, ty;
            detail::mog10_frame(m, c, mx, my, rx, ry, tx, ty);
            const double dx = x - mx, dy = y - my;
            const double dr = dx * rx + dy * ry;
            const double dt = dx * tx + dy * ty;
            mx_terms[c] = log_w + log_norm -
                          0.5 * (dr * dr / (m.radial_std * m.radial_std) +
                                 dt * dt / (m.tangential_std * m.tangential_std));
        }
        double mx = mx_terms[0];
        for (int c = 1; c < 10; ++c) mx = std::max(mx, mx_terms[c]);
        double s = 0;
        for (int c = 0; c < 10; ++c) s += std::exp(mx_terms[c] - mx);
        out[i] = mx + std::log(s);
    }
    return out;
}

/// Gradient of log density w.r.t. the point (needed by the VAE baseline).
inline Tensor log_density_grad(const PriorSpec& spec, const Tensor& points) {
    if (!spec.has_density())
        throw UnsupportedDensityError(std::string("prior '") + spec.name() +
                                      "' has no available density");
    Tensor grad(points.rows, points.cols);
    if (auto* g = std::get_if<GaussianPrior>(&spec.kind)) {
        const double inv_var = 1.0 / (g->stddev * g->stddev);
        for (std::size_t i = 0; i < points.size(); ++i) grad.v[i] = -points.v[i] * inv_var;
        return grad;
    }
    const auto& m = std::get<Mog10Prior>(spec.kind);
    for (std::size_t i = 0; i < points.rows; ++i) {
        const double x = points.at(i, 0), y = points.at(i, 1);
        double terms[10], gx[10], gy[10];
        for (int c = 0; c < 10; ++c) {
            double mx, my, rx, ry, tx, ty;
            detail::mog10_frame(m, c, mx, my, rx, ry, tx, ty);
            const double dx = x - mx, dy = y - my;
            const double dr = dx * rx + dy * ry;
            const double dt = dx * tx + dy * ty;
            const double ivr = 1.0 / (m.radial_std * m.radial_std);
            const double ivt = 1.0 / (m.tangential_std * m.tangential_std);
            terms[c] = -0.5 * (dr * dr * ivr + dt * dt * ivt);
            gx[c] = -(dr * ivr * rx + dt * ivt * tx);
            gy[c] = -(dr * ivr * ry + dt * ivt * ty);
        }
        double mx = terms[0];
        for (int c = 1; c < 10; ++c) mx = std::max(mx, terms[c]);
        double denom = 0, sx = 0, sy = 0;
        for (int c = 0; c < 10; ++c) {
            const double w = std::exp(terms[c] - mx);
            denom += w;
            sx += w * gx[c];
            sy += w * gy[c];
        }
        grad.at(i, 0) = sx / denom;
        grad.at(i, 1) = sy / denom;
    }
    return grad;
}

/// Inverse normal CDF at midpoints of k equal-probability bins, scaled by
/// std. Used for manifold walks along percentile grids.
inline std::vector<double> gaussian_percentile_grid(double stddev, std::size_t k) {
    if (k < 2) throw ConfigError("gaussian_percentile_grid: k must be >= 2");
    std::vector<double> grid(k);
    for (std::size_t i = 0; i < k; ++i)
        grid[i] = stddev * normal_inv_cdf((static_cast<double>(i) + 0.5) / static_cast<double>(k));
    return grid;
}

}  // namespace aae
