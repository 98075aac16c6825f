#pragma once

// The adversarial-autoencoder model family. One structure covers every
// training regime: a shared encoder trunk with a z head (and a softmax y
// head when the regime carries a discrete code), a decoder whose input
// assembly depends on the regime, and one or two discriminators. The
// dimensionality-reduction regime adds an m x n cluster-head matrix whose
// rows embed the discrete code; its final representation is
// rep = y * W_C + z.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aae/errors.hpp"
#include "aae/net.hpp"
#include "aae/priors.hpp"
#include "aae/rng.hpp"
#include "aae/tensor.hpp"

namespace aae {

enum class RegimeKind {
    unsupervised,
    label_conditioned_prior,
    supervised_style,
    semi_supervised,
    clustering,
    dimred
};

inline const char* regime_name(RegimeKind k) {
    switch (k) {
        case RegimeKind::unsupervised: return "unsupervised";
        case RegimeKind::label_conditioned_prior: return "label_conditioned_prior";
        case RegimeKind::supervised_style: return "supervised_style";
        case RegimeKind::semi_supervised: return "semi_supervised";
        case RegimeKind::clustering: return "clustering";
        case RegimeKind::dimred: return "dimred";
    }
    return "?";
}

struct Regime {
    RegimeKind kind = RegimeKind::unsupervised;
    std::size_t clusters = 0;  // y width for clustering/dimred
    std::size_t rep_dim = 0;   // n for dimred
    double eta = 1.0;          // cluster-head repulsion threshold
    bool fixed_heads = false;  // dimred variant with W_C frozen at 10*I

    bool has_y_head() const {
        return kind == RegimeKind::semi_supervised || kind == RegimeKind::clustering ||
               kind == RegimeKind::dimred;
    }
    bool decoder_takes_label() const {
        return kind == RegimeKind::supervised_style || kind == RegimeKind::semi_supervised ||
               kind == RegimeKind::clustering || kind == RegimeKind::dimred;
    }
    bool has_semi_phase() const {
        return kind == RegimeKind::semi_supervised || kind == RegimeKind::dimred;
    }
};

struct EncoderMode {
    enum class Kind { deterministic, gaussian_posterior, universal_approximator };
    Kind kind = Kind::deterministic;
    std::size_t noise_dim = 0;  // universal approximator input noise
    double noise_std = 1.0;
};

inline const char* encoder_mode_name(EncoderMode::Kind k) {
    switch (k) {
        case EncoderMode::Kind::deterministic: return "deterministic";
        case EncoderMode::Kind::gaussian_posterior: return "gaussian_posterior";
        case EncoderMode::Kind::universal_approximator: return "universal_approximator";
    }
    return "?";
}

struct AaeModel {
    Regime regime;
    EncoderMode encoder_mode;
    std::size_t x_dim = 0;
    std::size_t z_dim = 0;  // style code width (rep_dim for dimred)
    std::size_t y_dim = 0;  // discrete code width; 0 when absent

    MlpModel enc_trunk;
    MlpModel z_head;
    MlpModel y_head;   // empty when y_dim == 0
    MlpModel decoder;
    MlpModel disc_z;
    MlpModel disc_y;   // empty unless the regime regularizes y
    Tensor cluster_heads;  // y_dim x rep_dim, dimred only

    bool has_y() const { return !y_head.layers.empty(); }
    bool has_disc_y() const { return !disc_y.layers.empty(); }

    std::vector<Tensor*> encoder_params() {
        std::vector<Tensor*> ps;
        for (auto* p : enc_trunk.param_ptrs()) ps.push_back(p);
        for (auto* p : z_head.param_ptrs()) ps.push_back(p);
        if (has_y())
            for (auto* p : y_head.param_ptrs()) ps.push_back(p);
        return ps;
    }
};

/// One encoder evaluation with everything backward needs.
struct EncoderPass {
    Mode mode = Mode::infer;
    Tensor x_aug;  // trunk input (x, or x with universal noise appended)
    ForwardTrace trunk_tr, z_tr, y_tr;
    Tensor z;         // final style code (after reparametrization)
    Tensor mu, log_sigma, eps;  // gaussian_posterior internals
    bool has_y = false;

    const Tensor& y() const { return y_tr.output(); }
};

inline EncoderPass encoder_forward(AaeModel& m, const Tensor& x, Mode mode, Rng& rng) {
    EncoderPass p;
    p.mode = mode;
    if (m.encoder_mode.kind == EncoderMode::Kind::universal_approximator) {
        Tensor eta = Tensor::randn(x.rows, m.encoder_mode.noise_dim, m.encoder_mode.noise_std, rng);
        p.x_aug = hcat(x, eta);
    } else {
        p.x_aug = x;
    }
    p.trunk_tr = forward(m.enc_trunk, p.x_aug, mode);
    p.z_tr = forward(m.z_head, p.trunk_tr.output(), mode);
    if (m.encoder_mode.kind == EncoderMode::Kind::gaussian_posterior) {
        const Tensor& out = p.z_tr.output();
        p.mu = slice_cols(out, 0, m.z_dim);
        p.log_sigma = slice_cols(out, m.z_dim, 2 * m.z_dim);
        p.eps = Tensor::randn(out.rows, m.z_dim, 1.0, rng);
        p.z = p.mu;
        for (std::size_t i = 0; i < p.z.size(); ++i)
            p.z.v[i] += std::exp(p.log_sigma.v[i]) * p.eps.v[i];
    } else {
        p.z = p.z_tr.output();
    }
    if (m.has_y()) {
        p.y_tr = forward(m.y_head, p.trunk_tr.output(), mode);
        p.has_y = true;
    }
    return p;
}

struct EncoderGrads {
    ParamGrads trunk, z_head, y_head;
    bool has_y = false;

    /// Grad pointers matching AaeModel::encoder_params() order; heads with
    /// no contribution in this pass still appear (zero-filled by caller).
    std::vector<const Tensor*> all_ptrs(const AaeModel& m) const {
        std::vector<const Tensor*> gs;
        for (auto* g : trunk.grad_ptrs(m.enc_trunk)) gs.push_back(g);
        for (auto* g : z_head.grad_ptrs(m.z_head)) gs.push_back(g);
        if (has_y)
            for (auto* g : y_head.grad_ptrs(m.y_head)) gs.push_back(g);
        return gs;
    }
};

inline ParamGrads zero_grads_like(const MlpModel& m) {
    ParamGrads g;
    g.layers.resize(m.layers.size());
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const Layer& l = m.layers[i];
        g.layers[i].dW = Tensor(l.W.rows, l.W.cols, 0.0);
        if (l.spec.batch_norm) {
            g.layers[i].dgamma = Tensor(1, l.spec.out_dim, 0.0);
            g.layers[i].dbeta = Tensor(1, l.spec.out_dim, 0.0);
        } else {
            g.layers[i].db = Tensor(1, l.spec.out_dim, 0.0);
        }
    }
    return g;
}

/// Backward through the encoder given code gradients. dz and/or dy may be
/// null; dy_is_preact injects the y gradient at the softmax input (fused
/// cross-entropy). Heads without a contribution get zero grads so the result
/// always aligns with encoder_params().
inline EncoderGrads encoder_backward(AaeModel& m, const EncoderPass& p, const Tensor* dz,
                                     const Tensor* dy = nullptr, bool dy_is_preact = false) {
    EncoderGrads eg;
    eg.has_y = m.has_y();
    Tensor trunk_grad(p.trunk_tr.output().rows, p.trunk_tr.output().cols, 0.0);

    if (dz) {
        Tensor head_grad;
        if (m.encoder_mode.kind == EncoderMode::Kind::gaussian_posterior) {
            // z = mu + exp(log_sigma) * eps: d mu = dz, d log_sigma = dz * (z - mu)
            Tensor dls = *dz;
            for (std::size_t i = 0; i < dls.size(); ++i)
                dls.v[i] *= p.z.v[i] - p.mu.v[i];
            head_grad = hcat(*dz, dls);
        } else {
            head_grad = *dz;
        }
        BackwardResult zb = backward(m.z_head, p.z_tr, head_grad);
        eg.z_head = std::move(zb.grads);
        add_inplace(trunk_grad, zb.input_grad);
    } else {
        eg.z_head = zero_grads_like(m.z_head);
    }

    if (dy) {
        if (!m.has_y()) throw ConfigError("encoder_backward: dy given but model has no y head");
        BackwardResult yb = dy_is_preact ? backward_from_preact(m.y_head, p.y_tr, *dy)
                                         : backward(m.y_head, p.y_tr, *dy);
        eg.y_head = std::move(yb.grads);
        add_inplace(trunk_grad, yb.input_grad);
    } else if (m.has_y()) {
        eg.y_head = zero_grads_like(m.y_head);
    }

    BackwardResult tb = backward(m.enc_trunk, p.trunk_tr, trunk_grad);
    eg.trunk = std::move(tb.grads);
    return eg;
}

/// Convenience encode: returns z (and y probabilities when present).
struct EncodeResult {
    Tensor z;
    Tensor y;          // empty when no y head
    Tensor mu, log_sigma;  // gaussian_posterior only
};

inline EncodeResult encode(AaeModel& m, const Tensor& x, Mode mode, Rng& rng) {
    EncoderPass p = encoder_forward(m, x, mode, rng);
    EncodeResult r;
    r.z = std::move(p.z);
    if (p.has_y) r.y = p.y_tr.output();
    r.mu = std::move(p.mu);
    r.log_sigma = std::move(p.log_sigma);
    return r;
}

inline Tensor onehot_rows(const std::vector<int>& labels, std::size_t m) {
    Tensor t(labels.size(), m, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m)
            throw ConfigError("onehot_rows: label " + std::to_string(labels[i]) + " outside [0," +
                              std::to_string(m) + ")");
        t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return t;
}

/// Decoder input assembly per regime:
///   unsupervised / label_conditioned:     z
///   supervised_style / semi / clustering: [y | z]
///   dimred:                               y * W_C + z
inline Tensor decoder_input(const AaeModel& m, const Tensor& z, const Tensor* y) {
    const bool wants_y = m.regime.decoder_takes_label();
    if (wants_y && (!y || y->empty()))
        throw ConfigError(std::string("decode: regime '") + regime_name(m.regime.kind) +
                          "' conditions the decoder on a label input, none given");
    if (!wants_y && y && !y->empty())
        throw ConfigError(std::string("decode: regime '") + regime_name(m.regime.kind) +
                          "' takes no label input, but one was given");
    if (m.regime.kind == RegimeKind::dimred) {
        Tensor rep = matmul(*y, m.cluster_heads);
        add_inplace(rep, z);
        return rep;
    }
    return wants_y ? hcat(*y, z) : z;
}

inline Tensor decode(AaeModel& m, const Tensor& z, const Tensor* y = nullptr) {
    return forward_infer(m.decoder, decoder_input(m, z, y)).output();
}

/// n-dimensional embedding rep = y * W_C + z. Training uses the soft softmax
/// y; evaluation snaps y to the argmax one-hot.
inline Tensor dimred_rep_from(const Tensor& z, const Tensor& y, const Tensor& cluster_heads) {
    Tensor rep = matmul(y, cluster_heads);
    add_inplace(rep, z);
    return rep;
}

inline Tensor dimred_representation(AaeModel& m, const Tensor& x, Rng& rng, bool soft = false) {
    if (m.regime.kind != RegimeKind::dimred)
        throw ConfigError("dimred_representation: regime is not dimred");
    EncodeResult r = encode(m, x, Mode::infer, rng);
    if (soft) return dimred_rep_from(r.z, r.y, m.cluster_heads);
    Tensor hard(r.y.rows, r.y.cols, 0.0);
    for (std::size_t i = 0; i < r.y.rows; ++i) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < r.y.cols; ++j)
            if (r.y.at(i, j) > r.y.at(i, arg)) arg = j;
        hard.at(i, arg) = 1.0;
    }
    return dimred_rep_from(r.z, hard, m.cluster_heads);
}

struct RepulsionResult {
    double cost = 0.0;
    Tensor grad;  // same shape as the head matrix
};

/// Hinge repulsion between cluster-head rows:
/// cost = sum_{i<j} max(0, eta - |w_i - w_j|). Exact subgradient; pairs at
/// distance exactly 0 or eta contribute zero gradient.
inline RepulsionResult cluster_head_repulsion(const Tensor& heads, double eta) {
    if (!(eta > 0)) throw ConfigError("cluster_head_repulsion: eta must be > 0");
    RepulsionResult res;
    res.grad = Tensor(heads.rows, heads.cols, 0.0);
    for (std::size_t i = 0; i < heads.rows; ++i) {
        for (std::size_t j = i + 1; j < heads.rows; ++j) {
            double d2 = 0;
            for (std::size_t k = 0; k < heads.cols; ++k) {
                const double dd = heads.at(i, k) - heads.at(j, k);
                d2 += dd * dd;
            }
            const double d = std::sqrt(d2);
            if (d >= eta) continue;
            res.cost += eta - d;
            if (d > 0.0) {
                // d cost / d w_i = -(w_i - w_j)/d
                for (std::size_t k = 0; k < heads.cols; ++k) {
                    const double u = (heads.at(i, k) - heads.at(j, k)) / d;
                    res.grad.at(i, k) -= u;
                    res.grad.at(j, k) += u;
                }
            }
        }
    }
    return res;
}

}  // namespace aae
