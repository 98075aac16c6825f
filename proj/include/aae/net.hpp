#pragma once

// Feed-forward network engine: affine layers with an optional batch-norm
// stage and a fixed activation menu, exact reverse-mode gradients, and
// classical-momentum SGD. Everything is double precision; this build does
// not ship a reduced-precision training path.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "aae/errors.hpp"
#include "aae/rng.hpp"
#include "aae/tensor.hpp"

namespace aae {

enum class Act { linear, relu, sigmoid, softmax };

inline const char* act_name(Act a) {
    switch (a) {
        case Act::linear: return "linear";
        case Act::relu: return "relu";
        case Act::sigmoid: return "sigmoid";
        case Act::softmax: return "softmax";
    }
    return "?";
}

struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Act activation = Act::linear;
    bool batch_norm = false;
    double init_std = 0.01;
};

// Batch-norm constants; the running estimate is an exponential average.
inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnDecay = 0.9;

struct Layer {
    LayerSpec spec;
    Tensor W;  // out x in
    Tensor b;  // 1 x out
    Tensor gamma, beta;        // 1 x out, batch-norm scale/shift
    Tensor run_mean, run_var;  // 1 x out, inference statistics
};

struct MlpModel {
    std::vector<Layer> layers;

    std::size_t in_dim() const { return layers.front().spec.in_dim; }
    std::size_t out_dim() const { return layers.back().spec.out_dim; }

    /// Parameters in canonical order: per layer W then b, or W/gamma/beta for
    /// batch-normed layers (mean subtraction cancels a bias there, so beta is
    /// the shift and b stays out of the parameter set). Optimizers and
    /// checkpoints rely on this order.
    std::vector<Tensor*> param_ptrs() {
        std::vector<Tensor*> ps;
        for (auto& l : layers) {
            ps.push_back(&l.W);
            if (l.spec.batch_norm) {
                ps.push_back(&l.gamma);
                ps.push_back(&l.beta);
            } else {
                ps.push_back(&l.b);
            }
        }
        return ps;
    }
};

/// Builds a model from chained layer specs. Weights are N(0, init_std^2),
/// biases zero, batch-norm at identity; bit-reproducible for a given seed.
inline MlpModel init_model(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    if (specs.empty()) throw ConfigError("init_model: empty layer list");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        if (s.in_dim == 0 || s.out_dim == 0)
            throw ConfigError("init_model: layer " + std::to_string(i) + " has zero dimension");
        if (!(s.init_std > 0.0))
            throw ConfigError("init_model: layer " + std::to_string(i) + " init_std must be > 0");
        if (i + 1 < specs.size()) {
            if (s.out_dim != specs[i + 1].in_dim)
                throw ConfigError("init_model: dimension chain broken between layer " +
                                  std::to_string(i) + " (out_dim " + std::to_string(s.out_dim) +
                                  ") and layer " + std::to_string(i + 1) + " (in_dim " +
                                  std::to_string(specs[i + 1].in_dim) + ")");
            if (s.activation == Act::softmax)
                throw ConfigError("init_model: softmax is only valid as the final layer");
        }
    }
    Rng rng(seed);
    MlpModel m;
    m.layers.reserve(specs.size());
    for (const auto& s : specs) {
        Layer l;
        l.spec = s;
        l.W = Tensor::randn(s.out_dim, s.in_dim, s.init_std, rng);
        l.b = Tensor(1, s.out_dim, 0.0);
        if (s.batch_norm) {
            l.gamma = Tensor(1, s.out_dim, 1.0);
            l.beta = Tensor(1, s.out_dim, 0.0);
            l.run_mean = Tensor(1, s.out_dim, 0.0);
            l.run_var = Tensor(1, s.out_dim, 1.0);
        }
        m.layers.push_back(std::move(l));
    }
    return m;
}

enum class Mode { train, infer };

struct LayerTrace {
    Tensor z_lin;      // affine output
    Tensor mean, var;  // statistics used for normalization (1 x out)
    Tensor xhat;       // normalized pre-activation
    Tensor a;          // activation output
};

struct ForwardTrace {
    Mode mode = Mode::infer;
    Tensor x0;
    std::vector<LayerTrace> layers;

    const Tensor& output() const { return layers.back().a; }
    const Tensor& input_of(std::size_t i) const { return i == 0 ? x0 : layers[i - 1].a; }

    std::vector<const Tensor*> activations() const {
        std::vector<const Tensor*> as;
        for (const auto& lt : layers) as.push_back(&lt.a);
        return as;
    }
};

namespace detail {

inline void apply_activation(Act act, const Tensor& z, Tensor& a) {
    a = z;
    switch (act) {
        case Act::linear:
            break;
        case Act::relu:
            for (auto& x : a.v) x = x > 0.0 ? x : 0.0;
            break;
        case Act::sigmoid:
            // Split by sign so exp never overflows.
            for (auto& x : a.v)
                x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            break;
        case Act::softmax:
            for (std::size_t i = 0; i < a.rows; ++i) {
                double* r = a.row(i);
                double mx = r[0];
                for (std::size_t j = 1; j < a.cols; ++j) mx = std::max(mx, r[j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < a.cols; ++j) {
                    r[j] = std::exp(r[j] - mx);
                    sum += r[j];
                }
                for (std::size_t j = 0; j < a.cols; ++j) r[j] /= sum;
            }
            break;
    }
}

}  // namespace detail

/// Forward pass through every layer, keeping the trace needed by backward().
/// Train mode normalizes with batch statistics and updates the running
/// estimates; infer mode reads the running estimates and has no side effects.
inline ForwardTrace forward(MlpModel& model, const Tensor& x, Mode mode) {
    if (x.cols != model.in_dim())
        throw ShapeError("forward: input width " + std::to_string(x.cols) + " != model in_dim " +
                         std::to_string(model.in_dim()));
    ForwardTrace tr;
    tr.mode = mode;
    tr.x0 = x;
    const Tensor* cur = &tr.x0;
    for (auto& l : model.layers) {
        LayerTrace lt;
        lt.z_lin = matmul_nt(*cur, l.W);
        if (!l.spec.batch_norm) add_row_broadcast(lt.z_lin, l.b);

        const Tensor* act_in = &lt.z_lin;
        if (l.spec.batch_norm) {
            const std::size_t n = lt.z_lin.rows;
            if (mode == Mode::train) {
                lt.mean = colmean(lt.z_lin);
                lt.var = Tensor(1, lt.z_lin.cols, 0.0);
                for (std::size_t i = 0; i < n; ++i) {
                    const double* r = lt.z_lin.row(i);
                    for (std::size_t j = 0; j < lt.z_lin.cols; ++j) {
                        const double d = r[j] - lt.mean.v[j];
                        lt.var.v[j] += d * d;
                    }
                }
                if (n) scale_inplace(lt.var, 1.0 / static_cast<double>(n));
                for (std::size_t j = 0; j < lt.z_lin.cols; ++j) {
                    l.run_mean.v[j] = kBnDecay * l.run_mean.v[j] + (1.0 - kBnDecay) * lt.mean.v[j];
                    l.run_var.v[j] = kBnDecay * l.run_var.v[j] + (1.0 - kBnDecay) * lt.var.v[j];
                }
            } else {
                lt.mean = l.run_mean;
                lt.var = l.run_var;
            }
            lt.xhat = lt.z_lin;
            for (std::size_t i = 0; i < lt.xhat.rows; ++i) {
                double* r = lt.xhat.row(i);
                for (std::size_t j = 0; j < lt.xhat.cols; ++j) {
                    r[j] = (r[j] - lt.mean.v[j]) / std::sqrt(lt.var.v[j] + kBnEps);
                }
            }
            Tensor z_bn = lt.xhat;
            for (std::size_t i = 0; i < z_bn.rows; ++i) {
                double* r = z_bn.row(i);
                for (std::size_t j = 0; j < z_bn.cols; ++j)
                    r[j] = r[j] * l.gamma.v[j] + l.beta.v[j];
            }
            lt.z_lin = std::move(z_bn);  // reuse the slot: z_lin now holds the activation input
            act_in = &lt.z_lin;
        }

        detail::apply_activation(l.spec.activation, *act_in, lt.a);
        tr.layers.push_back(std::move(lt));
        cur = &tr.layers.back().a;
    }
    return tr;
}

/// Read-only forward in infer mode.
inline ForwardTrace forward_infer(const MlpModel& model, const Tensor& x) {
    return forward(const_cast<MlpModel&>(model), x, Mode::infer);
}

struct LayerGrads {
    Tensor dW, db, dgamma, dbeta;
};

struct ParamGrads {
    std::vector<LayerGrads> layers;

    /// Same canonical order as MlpModel::param_ptrs().
    std::vector<const Tensor*> grad_ptrs(const MlpModel& model) const {
        std::vector<const Tensor*> gs;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            gs.push_back(&layers[i].dW);
            if (model.layers[i].spec.batch_norm) {
                gs.push_back(&layers[i].dgamma);
                gs.push_back(&layers[i].dbeta);
            } else {
                gs.push_back(&layers[i].db);
            }
        }
        return gs;
    }

    void accumulate(const ParamGrads& o) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            add_inplace(layers[i].dW, o.layers[i].dW);
            if (!layers[i].dgamma.empty()) {
                add_inplace(layers[i].dgamma, o.layers[i].dgamma);
                add_inplace(layers[i].dbeta, o.layers[i].dbeta);
            } else {
                add_inplace(layers[i].db, o.layers[i].db);
            }
        }
    }
};

struct BackwardResult {
    ParamGrads grads;
    Tensor input_grad;
};

namespace detail {

inline Tensor activation_backward(Act act, const LayerTrace& lt, const Tensor& da) {
    Tensor dz = da;
    switch (act) {
        case Act::linear:
            break;
        case Act::relu:
            for (std::size_t i = 0; i < dz.size(); ++i)
                if (!(lt.a.v[i] > 0.0)) dz.v[i] = 0.0;
            break;
        case Act::sigmoid:
            for (std::size_t i = 0; i < dz.size(); ++i) dz.v[i] *= lt.a.v[i] * (1.0 - lt.a.v[i]);
            break;
        case Act::softmax:
            for (std::size_t i = 0; i < dz.rows; ++i) {
                const double* arow = lt.a.row(i);
                double* drow = dz.row(i);
                double dot = 0.0;
                for (std::size_t j = 0; j < dz.cols; ++j) dot += drow[j] * arow[j];
                for (std::size_t j = 0; j < dz.cols; ++j) drow[j] = arow[j] * (drow[j] - dot);
            }
            break;
    }
    return dz;
}

// Gradient through y = gamma * xhat + beta with xhat = (z - mu) / sqrt(var + eps),
// where mu/var are batch statistics (train) or constants (infer).
inline Tensor batchnorm_backward(const Layer& l, const LayerTrace& lt, const Tensor& dy,
                                 Mode mode, Tensor& dgamma, Tensor& dbeta) {
    const std::size_t n = dy.rows, c = dy.cols;
    dgamma = Tensor(1, c, 0.0);
    dbeta = Tensor(1, c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* dr = dy.row(i);
        const double* xr = lt.xhat.row(i);
        for (std::size_t j = 0; j < c; ++j) {
            dgamma.v[j] += dr[j] * xr[j];
            dbeta.v[j] += dr[j];
        }
    }
    Tensor dz(n, c);
    if (mode == Mode::train) {
        // Vectorized form of the standard three-term expression.
        std::vector<double> sum_dxhat(c, 0.0), sum_dxhat_xhat(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* dr = dy.row(i);
            const double* xr = lt.xhat.row(i);
            for (std::size_t j = 0; j < c; ++j) {
                const double dxh = dr[j] * l.gamma.v[j];
                sum_dxhat[j] += dxh;
                sum_dxhat_xhat[j] += dxh * xr[j];
            }
        }
        const double dn = static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* dr = dy.row(i);
            const double* xr = lt.xhat.row(i);
            double* zr = dz.row(i);
            for (std::size_t j = 0; j < c; ++j) {
                const double inv_std = 1.0 / std::sqrt(lt.var.v[j] + kBnEps);
                const double dxh = dr[j] * l.gamma.v[j];
                zr[j] = inv_std / dn * (dn * dxh - sum_dxhat[j] - xr[j] * sum_dxhat_xhat[j]);
            }
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const double* dr = dy.row(i);
            double* zr = dz.row(i);
            for (std::size_t j = 0; j < c; ++j)
                zr[j] = dr[j] * l.gamma.v[j] / std::sqrt(lt.var.v[j] + kBnEps);
        }
    }
    return dz;
}

inline BackwardResult backward_impl(const MlpModel& model, const ForwardTrace& tr,
                                    const Tensor& top_grad, bool top_is_preact) {
    BackwardResult res;
    res.grads.layers.resize(model.layers.size());
    Tensor da = top_grad;
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const Layer& l = model.layers[li];
        const LayerTrace& lt = tr.layers[li];
        const bool last = li + 1 == model.layers.size();

        Tensor dz = (last && top_is_preact)
                        ? std::move(da)
                        : activation_backward(l.spec.activation, lt, da);

        LayerGrads& lg = res.grads.layers[li];
        if (l.spec.batch_norm)
            dz = batchnorm_backward(l, lt, dz, tr.mode, lg.dgamma, lg.dbeta);

        const Tensor& x_in = tr.input_of(li);
        lg.dW = matmul_tn(dz, x_in);
        if (!l.spec.batch_norm) lg.db = colsum(dz);
        da = matmul(dz, l.W);  // input grad -> previous layer's activation grad
    }
    res.input_grad = std::move(da);
    return res;
}

}  // namespace detail

/// Exact gradients of the scalar loss whose gradient at the network output is
/// out_grad. Returns per-parameter grads plus the gradient at the input.
inline BackwardResult backward(const MlpModel& model, const ForwardTrace& tr,
                               const Tensor& out_grad) {
    require_shape(out_grad, tr.output().rows, tr.output().cols, "backward out_grad");
    return detail::backward_impl(model, tr, out_grad, false);
}

/// Same, but the gradient is supplied at the final layer's pre-activation
/// (i.e. the nonlinearity's input). Lets fused losses (softmax cross-entropy,
/// logit BCE) skip the activation Jacobian.
inline BackwardResult backward_from_preact(const MlpModel& model, const ForwardTrace& tr,
                                           const Tensor& preact_grad) {
    require_shape(preact_grad, tr.output().rows, tr.output().cols, "backward preact_grad");
    return detail::backward_impl(model, tr, preact_grad, true);
}

struct SgdMomentum {
    double learning_rate = 0.01;
    double momentum = 0.0;  // in [0,1)
};

/// Classical momentum: v <- m*v - lr*g; theta <- theta + v.
/// One optimizer instance per training cost; each keeps its own velocities.
class SgdOptimizer {
public:
    SgdOptimizer() = default;
    explicit SgdOptimizer(std::vector<Tensor*> params) : params_(std::move(params)) {
        vel_.reserve(params_.size());
        for (const Tensor* p : params_) vel_.emplace_back(p->rows, p->cols, 0.0);
    }

    void step(const std::vector<const Tensor*>& grads, const SgdMomentum& opt) {
        if (grads.size() != params_.size())
            throw ShapeError("sgd step: " + std::to_string(grads.size()) + " grads for " +
                             std::to_string(params_.size()) + " params");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& th = *params_[i];
            Tensor& v = vel_[i];
            const Tensor& g = *grads[i];
            if (!th.same_shape(g))
                throw ShapeError("sgd step: grad shape " + shape_str(g) + " vs param " +
                                 shape_str(th));
            for (std::size_t k = 0; k < th.size(); ++k) {
                v.v[k] = opt.momentum * v.v[k] - opt.learning_rate * g.v[k];
                th.v[k] += v.v[k];
            }
        }
    }

    std::size_t size() const { return params_.size(); }
    std::vector<Tensor>& velocities() { return vel_; }
    const std::vector<Tensor>& velocities() const { return vel_; }

private:
    std::vector<Tensor*> params_;
    std::vector<Tensor> vel_;
};

/// A scalar loss on the network output, with its gradient.
struct ScalarLoss {
    std::function<double(const Tensor&)> value;
    std::function<Tensor(const Tensor&)> grad;
};

/// L = 1/2 * sum((out - target)^2)
inline ScalarLoss sse_loss(Tensor target) {
    auto t = std::make_shared<Tensor>(std::move(target));
    return {[t](const Tensor& out) { return 0.5 * squared_norm(out - *t); },
            [t](const Tensor& out) { return out - *t; }};
}

/// L = sum(out), handy for linear-exactness checks.
inline ScalarLoss sum_loss() {
    return {[](const Tensor& out) {
                double s = 0;
                for (double x : out.v) s += x;
                return s;
            },
            [](const Tensor& out) { return Tensor(out.rows, out.cols, 1.0); }};
}

/// Central-finite-difference check of backward() over every parameter.
/// Returns max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double gradient_check(const MlpModel& model, const Tensor& x, const ScalarLoss& loss,
                             double eps = 1e-4) {
    MlpModel m = model;  // perturbations stay local
    ForwardTrace tr = forward(m, x, Mode::train);
    Tensor og = loss.grad(tr.output());
    BackwardResult br = backward(m, tr, og);

    const auto params = m.param_ptrs();
    const auto grads = br.grads.grad_ptrs(m);
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double orig = p.v[k];
            p.v[k] = orig + eps;
            const double lp = loss.value(forward(m, x, Mode::train).output());
            p.v[k] = orig - eps;
            const double lm = loss.value(forward(m, x, Mode::train).output());
            p.v[k] = orig;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double analytic = grads[pi]->v[k];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace aae
