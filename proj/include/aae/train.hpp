#pragma once

// Phase-based training for every regime. Per mini-batch the driver runs the
// reconstruction phase, then the z regularization (discriminator step, then
// generator step), then the y regularization when the regime carries a
// discrete code, then the classification phase on a labeled mini-batch when
// the regime has one. The dimred regime additionally steps the cluster-head
// repulsion cost with the reconstruction learning rate.
//
// Every cost owns an SGD-with-momentum optimizer over exactly the parameters
// it touches, so discriminator steps never move encoder parameters and
// generator steps never move discriminator parameters.
//
// All randomness inside an epoch derives from (seed, epoch), which makes a
// resumed run bit-identical to an uninterrupted one.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "aae/checkpoint.hpp"
#include "aae/dataset.hpp"
#include "aae/errors.hpp"
#include "aae/model.hpp"
#include "aae/net.hpp"
#include "aae/priors.hpp"
#include "aae/rng.hpp"
#include "aae/tensor.hpp"

namespace aae {

struct LrDrop {
    std::size_t epoch = 0;
    double lr = 0.0;
};

struct CostSchedule {
    double initial_lr = 0.01;
    std::vector<LrDrop> drops;
    double momentum = 0.9;

    double lr_at(std::size_t epoch) const {
        double lr = initial_lr;
        for (const auto& d : drops)
            if (epoch >= d.epoch) lr = d.lr;
        return lr;
    }

    void validate(const std::string& name) const {
        if (!(initial_lr > 0)) throw ConfigError(name + ": initial_lr must be > 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError(name + ": momentum must be in [0,1)");
        double prev_lr = initial_lr;
        std::size_t prev_epoch = 0;
        for (const auto& d : drops) {
            if (d.epoch <= prev_epoch && &d != &drops.front())
                throw ConfigError(name + ": drop epochs must be strictly increasing");
            if (!(d.lr < prev_lr) || !(d.lr > 0))
                throw ConfigError(name + ": drop learning rates must be strictly decreasing");
            prev_lr = d.lr;
            prev_epoch = d.epoch;
        }
    }
};

struct PhaseSchedule {
    std::size_t epochs = 0;
    std::size_t batch_size = 100;
    double input_noise_std = 0.0;
    double input_dropout = 0.0;
    CostSchedule recon{0.01, {}, 0.9};
    CostSchedule adv_disc{0.1, {}, 0.1};
    CostSchedule adv_gen{0.1, {}, 0.1};
    CostSchedule semi{0.1, {}, 0.9};

    void validate() const {
        if (batch_size == 0) throw ConfigError("schedule: batch_size must be > 0");
        if (input_noise_std < 0) throw ConfigError("schedule: input_noise_std must be >= 0");
        if (input_dropout < 0 || input_dropout >= 1)
            throw ConfigError("schedule: input_dropout must be in [0,1)");
        recon.validate("schedule.reconstruction");
        adv_disc.validate("schedule.adversarial (discriminator)");
        adv_gen.validate("schedule.adversarial (generator)");
        semi.validate("schedule.semi_supervised");
    }
};

enum class RegularizerKind { adversarial, vae, none };

inline const char* regularizer_name(RegularizerKind k) {
    switch (k) {
        case RegularizerKind::adversarial: return "adversarial";
        case RegularizerKind::vae: return "vae";
        case RegularizerKind::none: return "none";
    }
    return "?";
}

struct ArchitectureSpec {
    std::vector<std::size_t> enc_hidden{1000, 1000};
    std::vector<std::size_t> dec_hidden{1000, 1000};
    std::vector<std::size_t> disc_hidden{1000, 1000};
    std::size_t z_dim = 8;
    Act hidden_act = Act::relu;
    Act dec_out_act = Act::sigmoid;
    double init_std = 0.01;
    enum class BnPlacement { none, encoder, all };
    BnPlacement batch_norm = BnPlacement::none;
};

struct TrainConfig {
    std::string experiment = "experiment";
    Regime regime;
    EncoderMode encoder_mode;
    RegularizerKind regularizer = RegularizerKind::adversarial;
    ArchitectureSpec arch;
    PriorSpec z_prior;
    PhaseSchedule sched;
    std::uint64_t seed = 1;
};

/// Builds the full model for a config. num_classes is the dataset's label
/// count (used for the semi-supervised y head and conditioned decoders).
inline AaeModel build_model(const TrainConfig& cfg, std::size_t x_dim, std::size_t num_classes) {
    const Regime& rg = cfg.regime;
    const ArchitectureSpec& a = cfg.arch;
    const bool enc_bn = a.batch_norm != ArchitectureSpec::BnPlacement::none;
    const bool dec_bn = a.batch_norm == ArchitectureSpec::BnPlacement::all;

    AaeModel m;
    m.regime = rg;
    m.encoder_mode = cfg.encoder_mode;
    m.x_dim = x_dim;
    m.z_dim = a.z_dim;
    if (rg.kind == RegimeKind::semi_supervised)
        m.y_dim = num_classes;
    else if (rg.kind == RegimeKind::clustering || rg.kind == RegimeKind::dimred)
        m.y_dim = rg.clusters;

    Rng seeder = stream_for(cfg.seed, "model_init");
    auto chain = [&](std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                     Act hidden_act, Act out_act, bool bn_hidden, bool bn_out) {
        std::vector<LayerSpec> specs;
        std::size_t cur = in;
        for (std::size_t h : hidden) {
            specs.push_back({cur, h, hidden_act, bn_hidden, a.init_std});
            cur = h;
        }
        specs.push_back({cur, out, out_act, bn_out, a.init_std});
        return init_model(specs, seeder.next_u64());
    };

    const std::size_t trunk_in =
        x_dim + (cfg.encoder_mode.kind == EncoderMode::Kind::universal_approximator
                     ? cfg.encoder_mode.noise_dim
                     : 0);
    // trunk ends in its last hidden layer; heads hang off it
    {
        std::vector<LayerSpec> specs;
        std::size_t cur = trunk_in;
        for (std::size_t h : a.enc_hidden) {
            specs.push_back({cur, h, a.hidden_act, enc_bn, a.init_std});
            cur = h;
        }
        m.enc_trunk = init_model(specs, seeder.next_u64());
    }
    const std::size_t trunk_out = m.enc_trunk.out_dim();
    const std::size_t z_out =
        cfg.encoder_mode.kind == EncoderMode::Kind::gaussian_posterior ? 2 * a.z_dim : a.z_dim;
    m.z_head = init_model({{trunk_out, z_out, Act::linear, enc_bn, a.init_std}}, seeder.next_u64());
    if (m.y_dim)
        m.y_head =
            init_model({{trunk_out, m.y_dim, Act::softmax, enc_bn, a.init_std}}, seeder.next_u64());

    std::size_t dec_in = a.z_dim;
    if (rg.kind == RegimeKind::supervised_style) dec_in = num_classes + a.z_dim;
    if (rg.kind == RegimeKind::semi_supervised || rg.kind == RegimeKind::clustering)
        dec_in = m.y_dim + a.z_dim;
    if (rg.kind == RegimeKind::dimred) dec_in = rg.rep_dim;
    m.decoder = chain(dec_in, a.dec_hidden, x_dim, a.hidden_act, a.dec_out_act, dec_bn, dec_bn);

    std::size_t disc_z_in = a.z_dim;
    if (rg.kind == RegimeKind::label_conditioned_prior) disc_z_in += 11;  // 10 classes + unknown
    m.disc_z = chain(disc_z_in, a.disc_hidden, 1, a.hidden_act, Act::sigmoid, false, false);
    if (m.y_dim && rg.kind != RegimeKind::supervised_style)
        m.disc_y = chain(m.y_dim, a.disc_hidden, 1, a.hidden_act, Act::sigmoid, false, false);

    if (rg.kind == RegimeKind::dimred) {
        if (rg.fixed_heads) {
            m.cluster_heads = Tensor(m.y_dim, rg.rep_dim, 0.0);
            for (std::size_t i = 0; i < std::min(m.y_dim, rg.rep_dim); ++i)
                m.cluster_heads.at(i, i) = 10.0;
        } else {
            Rng hr = seeder.fork("cluster_heads");
            m.cluster_heads = Tensor::randn(m.y_dim, rg.rep_dim, 1.0, hr);
        }
    }
    return m;
}

/// Gaussian input noise then inverted dropout, training-time only.
inline Tensor corrupt_input(const Tensor& x, double noise_std, double dropout, Rng& rng) {
    if (noise_std == 0.0 && dropout == 0.0) return x;
    Tensor out = x;
    if (noise_std > 0)
        for (auto& v : out.v) v += rng.normal(0, noise_std);
    if (dropout > 0) {
        const double keep = 1.0 - dropout;
        for (auto& v : out.v) v = rng.uniform() < dropout ? 0.0 : v / keep;
    }
    return out;
}

inline double stable_softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// The VAE regularizer of the Gaussian-posterior encoder:
/// loss = mean_i [ -sum_d log sigma_id - log p(z_i) ] with one reparametrized
/// sample z = mu + sigma * eps per point; gradients flow through the sample.
struct VaeRegResult {
    double loss = 0.0;
    Tensor d_mu, d_log_sigma;
    Tensor z;
};

inline VaeRegResult vae_regularizer_at(const Tensor& mu, const Tensor& log_sigma,
                                       const PriorSpec& prior, const Tensor& eps) {
    if (!prior.has_density())
        throw UnsupportedDensityError(std::string("vae regularizer needs a prior density; '") +
                                      prior.name() + "' only supports sampling");
    if (!mu.same_shape(log_sigma) || !mu.same_shape(eps))
        throw ShapeError("vae_regularizer: mu/log_sigma/eps shapes differ");
    const double n = static_cast<double>(mu.rows);
    VaeRegResult res;
    res.z = mu;
    for (std::size_t i = 0; i < res.z.size(); ++i)
        res.z.v[i] += std::exp(log_sigma.v[i]) * eps.v[i];

    const auto logp = log_density(prior, res.z);
    double entropy_term = 0.0;
    for (double ls : log_sigma.v) entropy_term -= ls;
    double cross_term = 0.0;
    for (double lp : logp) cross_term -= lp;
    res.loss = (entropy_term + cross_term) / n;

    Tensor dz = log_density_grad(prior, res.z);
    scale_inplace(dz, -1.0 / n);
    res.d_mu = dz;
    res.d_log_sigma = dz;
    for (std::size_t i = 0; i < res.d_log_sigma.size(); ++i)
        res.d_log_sigma.v[i] = dz.v[i] * (res.z.v[i] - mu.v[i]) - 1.0 / n;
    return res;
}

inline VaeRegResult vae_regularizer(const Tensor& mu, const Tensor& log_sigma,
                                    const PriorSpec& prior, Rng& rng) {
    Tensor eps = Tensor::randn(mu.rows, mu.cols, 1.0, rng);
    return vae_regularizer_at(mu, log_sigma, prior, eps);
}

/// Discriminator SGD step on -[log D(pos) + log(1 - D(neg))] with
/// logit-stable losses. Touches only the discriminator's own parameters.
/// Returns the summed loss (chance-level discriminator gives 2 ln 2).
inline double discriminator_sgd_step(MlpModel& disc, SgdOptimizer& opt, const SgdMomentum& mom,
                                     const Tensor& pos, const Tensor& neg) {
    const double n = static_cast<double>(pos.rows);
    ForwardTrace tp = forward(disc, pos, Mode::train);
    double loss = 0;
    Tensor dpre_p(tp.output().rows, 1);
    {
        const Tensor& preact = tp.layers.back().z_lin;
        for (std::size_t i = 0; i < preact.rows; ++i) {
            loss += stable_softplus(-preact.at(i, 0));  // -log D
            dpre_p.at(i, 0) = (tp.output().at(i, 0) - 1.0) / n;
        }
    }
    BackwardResult bp = backward_from_preact(disc, tp, dpre_p);

    ForwardTrace tn = forward(disc, neg, Mode::train);
    Tensor dpre_n(tn.output().rows, 1);
    {
        const Tensor& preact = tn.layers.back().z_lin;
        for (std::size_t i = 0; i < preact.rows; ++i) {
            loss += stable_softplus(preact.at(i, 0));  // -log(1 - D)
            dpre_n.at(i, 0) = tn.output().at(i, 0) / n;
        }
    }
    BackwardResult bneg = backward_from_preact(disc, tn, dpre_n);
    bp.grads.accumulate(bneg.grads);
    opt.step(bp.grads.grad_ptrs(disc), mom);
    return loss / n;
}

/// Non-saturating generator loss -log D(fake): returns the loss and the
/// gradient at the discriminator input. Discriminator parameters are left
/// untouched.
inline std::pair<double, Tensor> generator_grad_through_disc(MlpModel& disc,
                                                             const Tensor& fake_in) {
    const double n = static_cast<double>(fake_in.rows);
    ForwardTrace tg = forward(disc, fake_in, Mode::train);
    double loss = 0;
    Tensor dpre(tg.output().rows, 1);
    const Tensor& preact = tg.layers.back().z_lin;
    for (std::size_t i = 0; i < preact.rows; ++i) {
        loss += stable_softplus(-preact.at(i, 0));
        dpre.at(i, 0) = (tg.output().at(i, 0) - 1.0) / n;
    }
    BackwardResult bg = backward_from_preact(disc, tg, dpre);
    return {loss / n, std::move(bg.input_grad)};
}

/// Per-epoch cost means; NaN marks phases the regime does not run.
struct EpochMetrics {
    std::size_t epoch = 0;
    double recon = std::numeric_limits<double>::quiet_NaN();
    double d_z = std::numeric_limits<double>::quiet_NaN();
    double g_z = std::numeric_limits<double>::quiet_NaN();
    double d_y = std::numeric_limits<double>::quiet_NaN();
    double g_y = std::numeric_limits<double>::quiet_NaN();
    double xent = std::numeric_limits<double>::quiet_NaN();
    double repulsion = std::numeric_limits<double>::quiet_NaN();
};

struct TrainData {
    ImageDataset train;
    // label_conditioned_prior: per-train-row switch label, -1 for unknown.
    std::vector<int> cond_labels;
    // classification-phase pool (semi_supervised / dimred with labels)
    ImageDataset labeled_pool;
};

class Trainer {
public:
    Trainer(TrainConfig cfg, TrainData data)
        : cfg_(std::move(cfg)), data_(std::move(data)) {
        cfg_.sched.validate();
        cfg_.z_prior.validate();
        validate_inputs();
        // the model lives on the heap so optimizer parameter pointers stay
        // valid when the Trainer itself moves
        model_ = std::make_unique<AaeModel>(build_model(
            cfg_, data_.train.d(),
            static_cast<std::size_t>(std::max(data_.train.num_classes,
                                              data_.labeled_pool.num_classes))));
        wire_optimizers();
    }

    AaeModel& model() { return *model_; }
    const AaeModel& model() const { return *model_; }
    const TrainConfig& config() const { return cfg_; }
    const TrainData& data() const { return data_; }
    std::size_t next_epoch() const { return next_epoch_; }

    bool model_has_batch_norm() const {
        auto any_bn = [](const MlpModel& m) {
            for (const auto& l : m.layers)
                if (l.spec.batch_norm) return true;
            return false;
        };
        return any_bn(model_->enc_trunk) || any_bn(model_->z_head) || any_bn(model_->y_head) ||
               any_bn(model_->decoder) || any_bn(model_->disc_z) || any_bn(model_->disc_y);
    }

    EpochMetrics run_epoch() {
        const std::size_t epoch = next_epoch_;
        Rng rng = stream_for(cfg_.seed, "train_epoch", epoch);
        auto batches = epoch_batches(data_.train.n(), cfg_.sched.batch_size, cfg_.seed, epoch);
        const bool skip_singletons = model_has_batch_norm();

        const SgdMomentum mom_recon{cfg_.sched.recon.lr_at(epoch), cfg_.sched.recon.momentum};
        const SgdMomentum mom_d{cfg_.sched.adv_disc.lr_at(epoch), cfg_.sched.adv_disc.momentum};
        const SgdMomentum mom_g{cfg_.sched.adv_gen.lr_at(epoch), cfg_.sched.adv_gen.momentum};
        const SgdMomentum mom_semi{cfg_.sched.semi.lr_at(epoch), cfg_.sched.semi.momentum};

        const bool adv = cfg_.regularizer == RegularizerKind::adversarial;
        const bool vae = cfg_.regularizer == RegularizerKind::vae;
        const bool semi = model_->regime.has_semi_phase() && data_.labeled_pool.n() > 0;
        const bool repulse =
            model_->regime.kind == RegimeKind::dimred && !model_->regime.fixed_heads;

        double recon_sum = 0, dz_sum = 0, gz_sum = 0, dy_sum = 0, gy_sum = 0, xent_sum = 0,
               rep_sum = 0;
        std::size_t used = 0;
        for (const auto& idx : batches) {
            if (skip_singletons && idx.size() < 2) {
                if (!warned_short_batch_) {
                    std::cerr << "warning: dropping a size-1 mini-batch (batch-norm needs n >= 2)\n";
                    warned_short_batch_ = true;
                }
                continue;
            }
            Tensor x = gather_rows(data_.train.images, idx);

            recon_sum += reconstruction_step(x, idx, mom_recon, rng);

            if (adv) {
                // one fresh encoder pass feeds both discriminators, another
                // both generator updates (grads for the y update are taken at
                // the pre-z-step parameters; phase granularity matches the
                // alternating scheme)
                auto [dzl, gzl, dyl, gyl] = adversarial_steps(x, idx, mom_d, mom_g, rng);
                dz_sum += dzl;
                gz_sum += gzl;
                dy_sum += dyl;
                gy_sum += gyl;
            } else if (vae) {
                gz_sum += vae_step(x, mom_g, rng);
            }

            if (semi) xent_sum += semi_step(mom_semi, rng);
            if (repulse) rep_sum += repulsion_step(mom_recon);
            ++used;
        }

        EpochMetrics em;
        em.epoch = epoch;
        const double n = used ? static_cast<double>(used) : 1.0;
        em.recon = recon_sum / n;
        if (adv) {
            em.d_z = dz_sum / n;
            em.g_z = gz_sum / n;
            if (model_->has_disc_y()) {
                em.d_y = dy_sum / n;
                em.g_y = gy_sum / n;
            }
        } else if (vae) {
            em.g_z = gz_sum / n;  // the vae regularizer plays the g role
        }
        if (semi) em.xent = xent_sum / n;
        if (repulse) em.repulsion = rep_sum / n;
        ++next_epoch_;
        return em;
    }

    /// Checkpoint chunks; config_hash guards against resuming under a
    /// different experiment description.
    ChunkMap checkpoint(std::uint64_t config_hash) const {
        ChunkMap c;
        ByteWriter meta;
        meta.u64(config_hash);
        meta.u64(next_epoch_);
        meta.u64(labeled_pass_);
        meta.u64(labeled_pos_);
        meta.u64(cfg_.seed);
        c["meta"] = meta.buf;
        auto put_net = [&](const char* name, const MlpModel& m) {
            if (m.layers.empty()) return;
            ByteWriter w;
            put_model(w, m);
            c[std::string("net:") + name] = w.buf;
        };
        put_net("trunk", model_->enc_trunk);
        put_net("z_head", model_->z_head);
        put_net("y_head", model_->y_head);
        put_net("decoder", model_->decoder);
        put_net("disc_z", model_->disc_z);
        put_net("disc_y", model_->disc_y);
        if (!model_->cluster_heads.empty()) {
            ByteWriter w;
            w.tensor(model_->cluster_heads);
            c["wc"] = w.buf;
        }
        auto put_opt = [&](const char* name, const SgdOptimizer& o) {
            if (o.size() == 0) return;
            ByteWriter w;
            put_velocities(w, o);
            c[std::string("opt:") + name] = w.buf;
        };
        put_opt("recon", opt_recon_);
        put_opt("disc_z", opt_disc_z_);
        put_opt("gen_z", opt_gen_z_);
        put_opt("disc_y", opt_disc_y_);
        put_opt("gen_y", opt_gen_y_);
        put_opt("semi", opt_semi_);
        put_opt("repulsion", opt_rep_);
        return c;
    }

    void restore(const ChunkMap& c, std::uint64_t config_hash) {
        auto need = [&](const std::string& name) -> const std::string& {
            auto it = c.find(name);
            if (it == c.end()) throw ConfigError("checkpoint missing chunk '" + name + "'");
            return it->second;
        };
        {
            ByteReader r(need("meta"));
            const std::uint64_t h = r.u64();
            if (h != config_hash)
                throw ConfigError("checkpoint was written under a different config (hash " +
                                  std::to_string(h) + " vs " + std::to_string(config_hash) + ")");
            next_epoch_ = r.u64();
            labeled_pass_ = r.u64();
            labeled_pos_ = r.u64();
            const std::uint64_t seed = r.u64();
            if (seed != cfg_.seed)
                throw ConfigError("checkpoint seed " + std::to_string(seed) +
                                  " != config seed " + std::to_string(cfg_.seed));
        }
        auto get_net = [&](const char* name, MlpModel& m) {
            if (m.layers.empty()) return;
            ByteReader r(need(std::string("net:") + name));
            MlpModel loaded = get_model(r);
            if (loaded.layers.size() != m.layers.size())
                throw ConfigError(std::string("checkpoint net '") + name +
                                  "' does not match the configured architecture");
            for (std::size_t i = 0; i < m.layers.size(); ++i)
                if (!loaded.layers[i].W.same_shape(m.layers[i].W))
                    throw ConfigError(std::string("checkpoint net '") + name + "' layer " +
                                      std::to_string(i) + " shape mismatch");
            m = std::move(loaded);
        };
        get_net("trunk", model_->enc_trunk);
        get_net("z_head", model_->z_head);
        get_net("y_head", model_->y_head);
        get_net("decoder", model_->decoder);
        get_net("disc_z", model_->disc_z);
        get_net("disc_y", model_->disc_y);
        if (!model_->cluster_heads.empty()) {
            ByteReader r(need("wc"));
            Tensor t = r.tensor();
            if (!t.same_shape(model_->cluster_heads))
                throw ConfigError("checkpoint cluster heads shape mismatch");
            model_->cluster_heads = std::move(t);
        }
        // optimizers hold raw pointers into the model; re-wire before loading
        wire_optimizers();
        auto get_opt = [&](const char* name, SgdOptimizer& o) {
            if (o.size() == 0) return;
            ByteReader r(need(std::string("opt:") + name));
            get_velocities(r, o);
        };
        get_opt("recon", opt_recon_);
        get_opt("disc_z", opt_disc_z_);
        get_opt("gen_z", opt_gen_z_);
        get_opt("disc_y", opt_disc_y_);
        get_opt("gen_y", opt_gen_y_);
        get_opt("semi", opt_semi_);
        get_opt("repulsion", opt_rep_);
    }

private:
    void validate_inputs() const {
        const Regime& rg = cfg_.regime;
        if (data_.train.n() == 0) throw ConfigError("train dataset is empty");
        if (rg.kind == RegimeKind::supervised_style && !data_.train.labeled())
            throw ConfigError("supervised_style requires a fully labeled train set");
        if (rg.kind == RegimeKind::label_conditioned_prior) {
            if (data_.cond_labels.size() != data_.train.n())
                throw ConfigError("label_conditioned_prior needs cond_labels per train row");
            if (!cfg_.z_prior.conditionable())
                throw ConfigError(std::string("label_conditioned_prior needs a conditionable "
                                              "prior, got '") +
                                  cfg_.z_prior.name() + "'");
        }
        if ((rg.kind == RegimeKind::clustering || rg.kind == RegimeKind::dimred) &&
            rg.clusters < 2)
            throw ConfigError("clustering/dimred regime needs clusters >= 2");
        if (rg.kind == RegimeKind::dimred && rg.rep_dim != cfg_.arch.z_dim)
            throw ConfigError("dimred: architecture.z_dim (" + std::to_string(cfg_.arch.z_dim) +
                              ") must equal regime.rep_dim (" + std::to_string(rg.rep_dim) + ")");
        if (cfg_.regularizer == RegularizerKind::vae) {
            if (cfg_.encoder_mode.kind != EncoderMode::Kind::gaussian_posterior)
                throw ConfigError("vae regularizer requires the gaussian_posterior encoder");
            if (!cfg_.z_prior.has_density())
                throw UnsupportedDensityError(
                    std::string("vae regularizer needs a prior with a density; '") +
                    cfg_.z_prior.name() + "' only supports sampling");
        }
        if (std::holds_alternative<CategoricalPrior>(cfg_.z_prior.kind))
            throw ConfigError("the z prior cannot be categorical");
        if (cfg_.z_prior.dim() != cfg_.arch.z_dim)
            throw ConfigError("prior.dim (" + std::to_string(cfg_.z_prior.dim()) +
                              ") != architecture.z_dim (" + std::to_string(cfg_.arch.z_dim) + ")");
        if (rg.kind == RegimeKind::semi_supervised &&
            std::max(data_.train.num_classes, data_.labeled_pool.num_classes) < 2)
            throw ConfigError("semi_supervised regime needs labeled classes");
    }

    void wire_optimizers() {
        std::vector<Tensor*> recon_params = model_->encoder_params();
        if (model_->regime.kind == RegimeKind::supervised_style) {
            // no y head; encoder_params already excludes it
        }
        for (auto* p : model_->decoder.param_ptrs()) recon_params.push_back(p);
        if (model_->regime.kind == RegimeKind::dimred && !model_->regime.fixed_heads)
            recon_params.push_back(&model_->cluster_heads);
        opt_recon_ = SgdOptimizer(recon_params);

        opt_disc_z_ = SgdOptimizer(model_->disc_z.param_ptrs());
        {
            std::vector<Tensor*> gz;
            for (auto* p : model_->enc_trunk.param_ptrs()) gz.push_back(p);
            for (auto* p : model_->z_head.param_ptrs()) gz.push_back(p);
            opt_gen_z_ = SgdOptimizer(gz);
        }
        if (model_->has_disc_y()) {
            opt_disc_y_ = SgdOptimizer(model_->disc_y.param_ptrs());
            std::vector<Tensor*> gy;
            for (auto* p : model_->enc_trunk.param_ptrs()) gy.push_back(p);
            for (auto* p : model_->y_head.param_ptrs()) gy.push_back(p);
            opt_gen_y_ = SgdOptimizer(gy);
        } else {
            opt_disc_y_ = SgdOptimizer();
            opt_gen_y_ = SgdOptimizer();
        }
        if (model_->has_y()) {
            std::vector<Tensor*> sp;
            for (auto* p : model_->enc_trunk.param_ptrs()) sp.push_back(p);
            for (auto* p : model_->y_head.param_ptrs()) sp.push_back(p);
            opt_semi_ = SgdOptimizer(sp);
        } else {
            opt_semi_ = SgdOptimizer();
        }
        if (model_->regime.kind == RegimeKind::dimred && !model_->regime.fixed_heads)
            opt_rep_ = SgdOptimizer({&model_->cluster_heads});
        else
            opt_rep_ = SgdOptimizer();
    }

    Tensor corrupt(const Tensor& x, Rng& rng) {
        return corrupt_input(x, cfg_.sched.input_noise_std, cfg_.sched.input_dropout, rng);
    }

public:
    // Phase entry points are public so each can be exercised in isolation.

    // ---- reconstruction phase -------------------------------------------

    double reconstruction_step(const Tensor& x_clean, const std::vector<std::uint32_t>& idx,
                               const SgdMomentum& mom, Rng& rng) {
        Tensor x_in = corrupt(x_clean, rng);
        EncoderPass pass = encoder_forward(*model_, x_in, Mode::train, rng);
        const double n = static_cast<double>(x_clean.rows);

        Tensor dec_in;
        Tensor y_onehot;  // supervised_style conditioning
        switch (model_->regime.kind) {
            case RegimeKind::unsupervised:
            case RegimeKind::label_conditioned_prior:
                dec_in = pass.z;
                break;
            case RegimeKind::supervised_style: {
                y_onehot = onehot_rows(gather_labels(data_.train.labels, idx),
                                       model_->decoder.in_dim() - model_->z_dim);
                dec_in = hcat(y_onehot, pass.z);
                break;
            }
            case RegimeKind::semi_supervised:
            case RegimeKind::clustering:
                dec_in = hcat(pass.y(), pass.z);
                break;
            case RegimeKind::dimred:
                dec_in = dimred_rep_from(pass.z, pass.y(), model_->cluster_heads);
                break;
        }

        ForwardTrace dec_tr = forward(model_->decoder, dec_in, Mode::train);
        const Tensor& xhat = dec_tr.output();
        // half the Euclidean error, averaged over the batch; targets are the
        // clean inputs
        double loss = 0;
        Tensor dxhat(xhat.rows, xhat.cols);
        for (std::size_t i = 0; i < xhat.size(); ++i) {
            const double r = xhat.v[i] - x_clean.v[i];
            loss += 0.5 * r * r;
            dxhat.v[i] = r / n;
        }
        loss /= n;

        BackwardResult dec_b = backward(model_->decoder, dec_tr, dxhat);
        Tensor dz, dy;
        const Tensor* dy_ptr = nullptr;
        Tensor dwc;
        switch (model_->regime.kind) {
            case RegimeKind::unsupervised:
            case RegimeKind::label_conditioned_prior:
                dz = std::move(dec_b.input_grad);
                break;
            case RegimeKind::supervised_style:
                dz = slice_cols(dec_b.input_grad, y_onehot.cols, dec_b.input_grad.cols);
                break;
            case RegimeKind::semi_supervised:
            case RegimeKind::clustering:
                dy = slice_cols(dec_b.input_grad, 0, model_->y_dim);
                dz = slice_cols(dec_b.input_grad, model_->y_dim, dec_b.input_grad.cols);
                dy_ptr = &dy;
                break;
            case RegimeKind::dimred:
                dz = dec_b.input_grad;
                dy = matmul_nt(dec_b.input_grad, model_->cluster_heads);
                dy_ptr = &dy;
                if (!model_->regime.fixed_heads) dwc = matmul_tn(pass.y(), dec_b.input_grad);
                break;
        }

        EncoderGrads eg = encoder_backward(*model_, pass, &dz, dy_ptr, /*dy_is_preact=*/false);
        std::vector<const Tensor*> grads = eg.all_ptrs(*model_);
        for (auto* g : dec_b.grads.grad_ptrs(model_->decoder)) grads.push_back(g);
        if (model_->regime.kind == RegimeKind::dimred && !model_->regime.fixed_heads)
            grads.push_back(&dwc);
        opt_recon_.step(grads, mom);
        return loss;
    }

    // ---- adversarial phases ---------------------------------------------

    // Builds the 11-class switch block for the label-conditioned regime.
    static Tensor switch_block(const std::vector<int>& cond, std::size_t classes_plus_unknown) {
        Tensor sw(cond.size(), classes_plus_unknown, 0.0);
        for (std::size_t i = 0; i < cond.size(); ++i) {
            const int l = cond[i];
            const std::size_t col =
                l < 0 ? classes_plus_unknown - 1 : static_cast<std::size_t>(l);
            sw.at(i, col) = 1.0;
        }
        return sw;
    }

    std::tuple<double, double, double, double> adversarial_steps(
        const Tensor& x, const std::vector<std::uint32_t>& idx, const SgdMomentum& mom_d,
        const SgdMomentum& mom_g, Rng& rng) {
        const bool conditioned = model_->regime.kind == RegimeKind::label_conditioned_prior;
        std::vector<int> cond;
        if (conditioned) {
            cond.resize(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) cond[i] = data_.cond_labels[idx[i]];
        }

        // ---- discriminator updates (negatives from the current encoder)
        Tensor x_d = corrupt(x, rng);
        EncoderPass pass_d = encoder_forward(*model_, x_d, Mode::train, rng);

        // positive z samples: conditional per labeled row, marginal otherwise
        const std::uint64_t prior_seed = rng.next_u64();
        Tensor z_pos(idx.size(), model_->z_dim);
        if (conditioned) {
            std::vector<int> labeled_rows, labeled_labels;
            std::vector<std::size_t> unlabeled_rows;
            for (std::size_t i = 0; i < cond.size(); ++i) {
                if (cond[i] >= 0) {
                    labeled_rows.push_back(static_cast<int>(i));
                    labeled_labels.push_back(cond[i]);
                } else {
                    unlabeled_rows.push_back(i);
                }
            }
            if (!labeled_labels.empty()) {
                auto cs = sample_prior_conditional(cfg_.z_prior, labeled_labels, prior_seed);
                for (std::size_t k = 0; k < labeled_rows.size(); ++k)
                    for (std::size_t j = 0; j < model_->z_dim; ++j)
                        z_pos.at(static_cast<std::size_t>(labeled_rows[k]), j) = cs.points.at(k, j);
            }
            if (!unlabeled_rows.empty()) {
                auto us = sample_prior(cfg_.z_prior, unlabeled_rows.size(),
                                       hash_mix(prior_seed, hash_str("marginal")));
                for (std::size_t k = 0; k < unlabeled_rows.size(); ++k)
                    for (std::size_t j = 0; j < model_->z_dim; ++j)
                        z_pos.at(unlabeled_rows[k], j) = us.points.at(k, j);
            }
        } else {
            z_pos = sample_prior(cfg_.z_prior, idx.size(), prior_seed).points;
        }

        Tensor disc_pos = z_pos, disc_neg = pass_d.z;
        if (conditioned) {
            Tensor sw = switch_block(cond, 11);
            disc_pos = hcat(z_pos, sw);
            disc_neg = hcat(pass_d.z, sw);
        }
        const double d_z_loss =
            discriminator_sgd_step(model_->disc_z, opt_disc_z_, mom_d, disc_pos, disc_neg);

        double d_y_loss = 0;
        if (model_->has_disc_y()) {
            Tensor y_pos = sample_prior(PriorSpec{CategoricalPrior{model_->y_dim}}, idx.size(),
                                        rng.next_u64())
                               .points;
            d_y_loss = discriminator_sgd_step(model_->disc_y, opt_disc_y_, mom_d, y_pos, pass_d.y());
        }

        // ---- generator updates (fresh pass; encoder fools both adversaries)
        Tensor x_g = corrupt(x, rng);
        EncoderPass pass_g = encoder_forward(*model_, x_g, Mode::train, rng);

        Tensor gen_in = pass_g.z;
        if (conditioned) gen_in = hcat(pass_g.z, switch_block(cond, 11));
        auto [g_z_loss, din_z] = generator_grad_through_disc(model_->disc_z, gen_in);
        Tensor dz = conditioned ? slice_cols(din_z, 0, model_->z_dim) : std::move(din_z);
        {
            EncoderGrads eg = encoder_backward(*model_, pass_g, &dz, nullptr, false);
            std::vector<const Tensor*> grads;
            for (auto* g : eg.trunk.grad_ptrs(model_->enc_trunk)) grads.push_back(g);
            for (auto* g : eg.z_head.grad_ptrs(model_->z_head)) grads.push_back(g);
            opt_gen_z_.step(grads, mom_g);
        }

        double g_y_loss = 0;
        if (model_->has_disc_y()) {
            auto [gy, din_y] = generator_grad_through_disc(model_->disc_y, pass_g.y());
            g_y_loss = gy;
            EncoderGrads eg = encoder_backward(*model_, pass_g, nullptr, &din_y, false);
            std::vector<const Tensor*> grads;
            for (auto* g : eg.trunk.grad_ptrs(model_->enc_trunk)) grads.push_back(g);
            for (auto* g : eg.y_head.grad_ptrs(model_->y_head)) grads.push_back(g);
            opt_gen_y_.step(grads, mom_g);
        }
        return {d_z_loss, g_z_loss, d_y_loss, g_y_loss};
    }

    double vae_step(const Tensor& x, const SgdMomentum& mom, Rng& rng) {
        Tensor x_in = corrupt(x, rng);
        EncoderPass pass = encoder_forward(*model_, x_in, Mode::train, rng);
        // reuse the pass's own reparametrized sample
        Tensor eps = pass.eps;
        VaeRegResult res = vae_regularizer_at(pass.mu, pass.log_sigma, cfg_.z_prior, eps);
        Tensor head_grad = hcat(res.d_mu, res.d_log_sigma);
        BackwardResult zb = backward(model_->z_head, pass.z_tr, head_grad);
        BackwardResult tb = backward(model_->enc_trunk, pass.trunk_tr, zb.input_grad);
        std::vector<const Tensor*> grads;
        for (auto* g : tb.grads.grad_ptrs(model_->enc_trunk)) grads.push_back(g);
        for (auto* g : zb.grads.grad_ptrs(model_->z_head)) grads.push_back(g);
        opt_gen_z_.step(grads, mom);
        return res.loss;
    }

    // ---- classification phase -------------------------------------------

private:
    std::vector<std::uint32_t> next_labeled_batch() {
        const std::size_t pool = data_.labeled_pool.n();
        const std::size_t want = std::min(cfg_.sched.batch_size, pool);
        std::vector<std::uint32_t> out;
        out.reserve(want);
        while (out.size() < want) {
            if (labeled_order_pass_ != labeled_pass_ || labeled_order_.empty()) {
                labeled_order_.resize(pool);
                for (std::size_t i = 0; i < pool; ++i)
                    labeled_order_[i] = static_cast<std::uint32_t>(i);
                Rng sh = stream_for(cfg_.seed, "labeled_pool", labeled_pass_);
                for (std::size_t i = pool; i > 1; --i) {
                    const std::size_t j = sh.below(i);
                    std::swap(labeled_order_[i - 1], labeled_order_[j]);
                }
                labeled_order_pass_ = labeled_pass_;
            }
            while (out.size() < want && labeled_pos_ < pool)
                out.push_back(labeled_order_[labeled_pos_++]);
            if (labeled_pos_ >= pool) {
                labeled_pos_ = 0;
                ++labeled_pass_;
            }
        }
        return out;
    }

public:
    double semi_step(const SgdMomentum& mom, Rng& rng) {
        if (!model_->has_y() || !model_->regime.has_semi_phase())
            throw ConfigError(std::string("semi_supervised phase is undefined for regime '") +
                              regime_name(model_->regime.kind) + "'");
        if (data_.labeled_pool.n() == 0)
            throw ConfigError("semi_supervised phase needs a labeled pool");
        auto idx = next_labeled_batch();
        Tensor x = gather_rows(data_.labeled_pool.images, idx);
        auto labels = gather_labels(data_.labeled_pool.labels, idx);
        Tensor x_in = corrupt(x, rng);
        EncoderPass pass = encoder_forward(*model_, x_in, Mode::train, rng);
        const Tensor& p = pass.y();
        const double n = static_cast<double>(p.rows);
        double xent = 0;
        Tensor dpre(p.rows, p.cols);
        for (std::size_t i = 0; i < p.rows; ++i) {
            const auto l = static_cast<std::size_t>(labels[i]);
            xent += -std::log(std::max(p.at(i, l), 1e-300));
            for (std::size_t j = 0; j < p.cols; ++j)
                dpre.at(i, j) = (p.at(i, j) - (j == l ? 1.0 : 0.0)) / n;
        }
        xent /= n;
        EncoderGrads eg = encoder_backward(*model_, pass, nullptr, &dpre, /*dy_is_preact=*/true);
        std::vector<const Tensor*> grads;
        for (auto* g : eg.trunk.grad_ptrs(model_->enc_trunk)) grads.push_back(g);
        for (auto* g : eg.y_head.grad_ptrs(model_->y_head)) grads.push_back(g);
        opt_semi_.step(grads, mom);
        return xent;
    }

    double repulsion_step(const SgdMomentum& mom) { 

        RepulsionResult res = cluster_head_repulsion(model_->cluster_heads, model_->regime.eta);
        opt_rep_.step({&res.grad}, mom);
        return res.cost;
    }

private:
    TrainConfig cfg_;
    TrainData data_;
    std::unique_ptr<AaeModel> model_;
    SgdOptimizer opt_recon_, opt_disc_z_, opt_gen_z_, opt_disc_y_, opt_gen_y_, opt_semi_, opt_rep_;
    std::size_t next_epoch_ = 0;
    std::uint64_t labeled_pass_ = 0;
    std::size_t labeled_pos_ = 0;
    std::vector<std::uint32_t> labeled_order_;
    std::uint64_t labeled_order_pass_ = ~std::uint64_t{0};
    bool warned_short_batch_ = false;
};

/// Full training run per the config; returns the trained model and the
/// per-epoch metrics. epoch_hook (when given) runs after every epoch with
/// the metrics row and may be used for evaluation and checkpoint cadence.
inline std::pair<Trainer, std::vector<EpochMetrics>> train(
    const TrainConfig& cfg, TrainData data,
    const std::function<void(Trainer&, const EpochMetrics&)>& epoch_hook = {}) {
    Trainer trainer(cfg, std::move(data));
    std::vector<EpochMetrics> log;
    log.reserve(cfg.sched.epochs);
    for (std::size_t e = 0; e < cfg.sched.epochs; ++e) {
        EpochMetrics em = trainer.run_epoch();
        if (epoch_hook) epoch_hook(trainer, em);
        log.push_back(em);
    }
    return {std::move(trainer), std::move(log)};
}

}  // namespace aae
