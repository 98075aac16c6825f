#pragma once

// Experiment config file: a single schema-versioned JSON document that fully
// determines a run. Parsing collects every validation problem before
// reporting, with field-precise messages, so a bad config fails before any
// side effect.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "aae/errors.hpp"
#include "aae/model.hpp"
#include "aae/priors.hpp"
#include "aae/train.hpp"

namespace aae {

using Json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

struct DatasetConfig {
    std::string format = "idx";  // idx | aae1
    std::string train_images, train_labels, test_images, test_labels;  // idx paths
    std::string train_file, test_file;                                 // aae1 paths
    std::string normalization = "unit_interval";  // unit_interval | standardized
    std::size_t validation_count = 10000;
    std::size_t labeled_count = 0;  // 0 = all labeled (when labels exist)
    bool use_labels = true;         // false drops labels from training entirely
    std::uint64_t split_seed = 1;
};

struct EvalConfig {
    std::size_t every = 10;
    std::vector<std::size_t> milestones{1, 50, 500, 1000, 5000};
    std::size_t checkpoint_every = 10;
    bool render_final = true;
    bool parzen_enabled = false;
    std::size_t parzen_samples = 10000;
    double parzen_sigma_lo = 0.05;
    double parzen_sigma_hi = 2.0;
    std::size_t parzen_sigma_count = 20;
    std::size_t parzen_cv_subsample = 1000;
    std::size_t diag_sample = 2000;  // held-out codes for the latent diagnostic
};

struct RunConfig {
    TrainConfig train;
    DatasetConfig dataset;
    EvalConfig eval;
    std::string output_dir = "runs/out";
};

namespace cfgdet {

struct Problems {
    std::vector<std::string> list;
    void add(const std::string& field, const std::string& what) {
        list.push_back(field + ": " + what);
    }
    void raise_if_any() const {
        if (list.empty()) return;
        std::string msg = "invalid config:";
        for (const auto& p : list) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
};

inline Act parse_act(const std::string& s, const std::string& field, Problems& pb) {
    if (s == "linear") return Act::linear;
    if (s == "relu") return Act::relu;
    if (s == "sigmoid") return Act::sigmoid;
    if (s == "softmax") return Act::softmax;
    pb.add(field, "unknown activation '" + s + "'");
    return Act::linear;
}

}  // namespace cfgdet

inline RunConfig parse_config(const Json& j) {
    cfgdet::Problems pb;
    RunConfig rc;

    if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
        pb.add("schema_version", "required integer");
    else if (j["schema_version"].get<int>() != kConfigSchemaVersion)
        pb.add("schema_version", "unsupported version " + j["schema_version"].dump());

    rc.train.experiment = j.value("experiment", std::string{"experiment"});
    rc.train.seed = j.value("seed", std::uint64_t{1});
    rc.output_dir = j.value("output_dir", std::string{"runs/"} + rc.train.experiment);

    // ---- regime
    {
        const Json rg = j.value("regime", Json::object());
        const std::string kind = rg.value("kind", "unsupervised");
        if (kind == "unsupervised")
            rc.train.regime.kind = RegimeKind::unsupervised;
        else if (kind == "label_conditioned_prior")
            rc.train.regime.kind = RegimeKind::label_conditioned_prior;
        else if (kind == "supervised_style")
            rc.train.regime.kind = RegimeKind::supervised_style;
        else if (kind == "semi_supervised")
            rc.train.regime.kind = RegimeKind::semi_supervised;
        else if (kind == "clustering")
            rc.train.regime.kind = RegimeKind::clustering;
        else if (kind == "dimred")
            rc.train.regime.kind = RegimeKind::dimred;
        else
            pb.add("regime.kind", "unknown regime '" + kind + "'");
        rc.train.regime.clusters = rg.value("clusters", std::size_t{0});
        rc.train.regime.rep_dim = rg.value("rep_dim", std::size_t{0});
        rc.train.regime.eta = rg.value("eta", 1.0);
        rc.train.regime.fixed_heads = rg.value("fixed_heads", false);
        if ((rc.train.regime.kind == RegimeKind::clustering ||
             rc.train.regime.kind == RegimeKind::dimred) &&
            rc.train.regime.clusters < 2)
            pb.add("regime.clusters", "clustering/dimred needs clusters >= 2");
    }

    // ---- encoder mode
    {
        const Json em = j.value("encoder_mode", Json::object());
        const std::string kind = em.value("kind", "deterministic");
        if (kind == "deterministic")
            rc.train.encoder_mode.kind = EncoderMode::Kind::deterministic;
        else if (kind == "gaussian_posterior")
            rc.train.encoder_mode.kind = EncoderMode::Kind::gaussian_posterior;
        else if (kind == "universal_approximator")
            rc.train.encoder_mode.kind = EncoderMode::Kind::universal_approximator;
        else
            pb.add("encoder_mode.kind", "unknown encoder mode '" + kind + "'");
        rc.train.encoder_mode.noise_dim = em.value("noise_dim", std::size_t{0});
        rc.train.encoder_mode.noise_std = em.value("noise_std", 1.0);
        if (rc.train.encoder_mode.kind == EncoderMode::Kind::universal_approximator &&
            rc.train.encoder_mode.noise_dim == 0)
            pb.add("encoder_mode.noise_dim", "universal approximator needs noise_dim >= 1");
    }

    // ---- regularizer
    {
        const std::string r = j.value("regularizer", "adversarial");
        if (r == "adversarial")
            rc.train.regularizer = RegularizerKind::adversarial;
        else if (r == "vae")
            rc.train.regularizer = RegularizerKind::vae;
        else if (r == "none")
            rc.train.regularizer = RegularizerKind::none;
        else
            pb.add("regularizer", "unknown regularizer '" + r + "'");
    }

    // ---- architecture
    {
        const Json a = j.value("architecture", Json::object());
        auto dims = [&](const char* field, const std::vector<std::size_t>& dflt) {
            if (!a.contains(field)) return dflt;
            std::vector<std::size_t> out;
            for (const auto& v : a[field]) {
                if (!v.is_number_integer() || v.get<long long>() <= 0) {
                    pb.add(std::string("architecture.") + field, "widths must be positive");
                    return dflt;
                }
                out.push_back(v.get<std::size_t>());
            }
            return out;
        };
        rc.train.arch.enc_hidden = dims("enc_hidden", rc.train.arch.enc_hidden);
        rc.train.arch.dec_hidden = dims("dec_hidden", rc.train.arch.enc_hidden);
        rc.train.arch.disc_hidden = dims("disc_hidden", rc.train.arch.enc_hidden);
        rc.train.arch.z_dim = a.value("z_dim", std::size_t{8});
        if (rc.train.arch.z_dim == 0) pb.add("architecture.z_dim", "must be >= 1");
        rc.train.arch.hidden_act =
            cfgdet::parse_act(a.value("hidden_activation", "relu"), "architecture.hidden_activation", pb);
        const std::string dec_out = a.value("decoder_output", "sigmoid");
        if (dec_out == "sigmoid")
            rc.train.arch.dec_out_act = Act::sigmoid;
        else if (dec_out == "linear")
            rc.train.arch.dec_out_act = Act::linear;
        else
            pb.add("architecture.decoder_output", "must be 'sigmoid' or 'linear'");
        rc.train.arch.init_std = a.value("init_std", 0.01);
        if (!(rc.train.arch.init_std > 0)) pb.add("architecture.init_std", "must be > 0");
        const std::string bn = a.value("batch_norm", "none");
        if (bn == "none")
            rc.train.arch.batch_norm = ArchitectureSpec::BnPlacement::none;
        else if (bn == "encoder")
            rc.train.arch.batch_norm = ArchitectureSpec::BnPlacement::encoder;
        else if (bn == "all")
            rc.train.arch.batch_norm = ArchitectureSpec::BnPlacement::all;
        else
            pb.add("architecture.batch_norm", "must be 'none', 'encoder' or 'all'");
    }

    // ---- prior
    {
        const Json p = j.value("prior", Json::object());
        const std::string kind = p.value("kind", "gaussian");
        try {
            if (kind == "gaussian") {
                rc.train.z_prior = PriorSpec{GaussianPrior{p.value("dim", rc.train.arch.z_dim),
                                                           p.value("std", 1.0)}};
            } else if (kind == "mog10_2d") {
                rc.train.z_prior = PriorSpec{Mog10Prior{p.value("radius", 10.0),
                                                        p.value("radial_std", 1.0),
                                                        p.value("tangential_std", 0.1)}};
            } else if (kind == "swiss_roll") {
                rc.train.z_prior = PriorSpec{SwissRollPrior{p.value("turns", 2.0),
                                                            p.value("scale", 20.0),
                                                            p.value("noise_std", 0.5)}};
            } else {
                pb.add("prior.kind", "unknown prior '" + kind + "'");
            }
        } catch (const ConfigError& e) {
            pb.add("prior", e.what());
        }
        if (rc.train.z_prior.dim() != rc.train.arch.z_dim)
            pb.add("prior.dim",
                   "prior dimension (" + std::to_string(rc.train.z_prior.dim()) +
                       ") does not match architecture.z_dim (" +
                       std::to_string(rc.train.arch.z_dim) + ")");
    }

    // ---- schedules
    {
        const Json s = j.value("schedules", Json::object());
        rc.train.sched.epochs = s.value("epochs", std::size_t{0});
        rc.train.sched.batch_size = s.value("batch_size", std::size_t{100});
        rc.train.sched.input_noise_std = s.value("input_noise_std", 0.0);
        rc.train.sched.input_dropout = s.value("input_dropout", 0.0);
        auto cost = [&](const char* field, CostSchedule dflt) {
            if (!s.contains(field)) return dflt;
            const Json c = s[field];
            CostSchedule cs;
            cs.initial_lr = c.value("lr", dflt.initial_lr);
            cs.momentum = c.value("momentum", dflt.momentum);
            if (c.contains("drops")) {
                for (const auto& d : c["drops"]) {
                    if (!d.is_array() || d.size() != 2) {
                        pb.add(std::string("schedules.") + field + ".drops",
                               "each drop is [epoch, lr]");
                        continue;
                    }
                    cs.drops.push_back({d[0].get<std::size_t>(), d[1].get<double>()});
                }
            }
            try {
                cs.validate(std::string("schedules.") + field);
            } catch (const ConfigError& e) {
                pb.add(std::string("schedules.") + field, e.what());
            }
            return cs;
        };
        rc.train.sched.recon = cost("reconstruction", CostSchedule{0.01, {}, 0.9});
        rc.train.sched.adv_disc = cost("adversarial", CostSchedule{0.1, {}, 0.1});
        rc.train.sched.adv_gen = cost("adversarial_generator", rc.train.sched.adv_disc);
        rc.train.sched.semi = cost("semi_supervised", CostSchedule{0.1, {}, 0.9});
        if (rc.train.sched.input_dropout < 0 || rc.train.sched.input_dropout >= 1)
            pb.add("schedules.input_dropout", "must be in [0,1)");
        if (rc.train.sched.input_noise_std < 0)
            pb.add("schedules.input_noise_std", "must be >= 0");
        if (rc.train.sched.batch_size == 0) pb.add("schedules.batch_size", "must be >= 1");
    }

    // ---- dataset
    {
        const Json d = j.value("dataset", Json::object());
        rc.dataset.format = d.value("format", "idx");
        if (rc.dataset.format != "idx" && rc.dataset.format != "aae1")
            pb.add("dataset.format", "must be 'idx' or 'aae1'");
        rc.dataset.train_images = d.value("train_images", "");
        rc.dataset.train_labels = d.value("train_labels", "");
        rc.dataset.test_images = d.value("test_images", "");
        rc.dataset.test_labels = d.value("test_labels", "");
        rc.dataset.train_file = d.value("train_file", "");
        rc.dataset.test_file = d.value("test_file", "");
        rc.dataset.normalization = d.value("normalization", "unit_interval");
        if (rc.dataset.normalization != "unit_interval" &&
            rc.dataset.normalization != "standardized")
            pb.add("dataset.normalization", "must be 'unit_interval' or 'standardized'");
        rc.dataset.validation_count = d.value("validation_count", std::size_t{10000});
        rc.dataset.labeled_count = d.value("labeled_count", std::size_t{0});
        rc.dataset.use_labels = d.value("use_labels", true);
        rc.dataset.split_seed = d.value("split_seed", std::uint64_t{1});
        if (rc.dataset.format == "idx" && rc.dataset.train_images.empty())
            pb.add("dataset.train_images", "required for idx format");
        if (rc.dataset.format == "aae1" && rc.dataset.train_file.empty())
            pb.add("dataset.train_file", "required for aae1 format");
    }

    // ---- eval
    {
        const Json e = j.value("eval", Json::object());
        rc.eval.every = e.value("every", std::size_t{10});
        if (e.contains("milestones")) {
            rc.eval.milestones.clear();
            for (const auto& m : e["milestones"]) rc.eval.milestones.push_back(m.get<std::size_t>());
        }
        rc.eval.checkpoint_every = e.value("checkpoint_every", std::size_t{10});
        rc.eval.render_final = e.value("render_final", true);
        const Json pz = e.value("parzen", Json::object());
        rc.eval.parzen_enabled = pz.value("enabled", false);
        rc.eval.parzen_samples = pz.value("samples", std::size_t{10000});
        rc.eval.parzen_sigma_lo = pz.value("sigma_lo", 0.05);
        rc.eval.parzen_sigma_hi = pz.value("sigma_hi", 2.0);
        rc.eval.parzen_sigma_count = pz.value("sigma_count", std::size_t{20});
        rc.eval.parzen_cv_subsample = pz.value("cv_subsample", std::size_t{1000});
        rc.eval.diag_sample = e.value("diag_sample", std::size_t{2000});
    }

    // cross-field checks mirroring the trainer's own validation
    if (rc.train.regime.kind == RegimeKind::dimred &&
        rc.train.regime.rep_dim != rc.train.arch.z_dim)
        pb.add("regime.rep_dim", "dimred requires regime.rep_dim (" +
                                     std::to_string(rc.train.regime.rep_dim) +
                                     ") == architecture.z_dim (" +
                                     std::to_string(rc.train.arch.z_dim) + ")");
    if (rc.train.regularizer == RegularizerKind::vae) {
        if (rc.train.encoder_mode.kind != EncoderMode::Kind::gaussian_posterior)
            pb.add("regularizer", "vae requires encoder_mode.kind = gaussian_posterior");
        if (!rc.train.z_prior.has_density())
            pb.add("regularizer", std::string("vae requires a prior with a density; '") +
                                      rc.train.z_prior.name() + "' only supports sampling");
    }
    if (rc.train.regime.kind == RegimeKind::label_conditioned_prior &&
        !rc.train.z_prior.conditionable())
        pb.add("prior.kind", "label_conditioned_prior needs mog10_2d or swiss_roll");

    pb.raise_if_any();
    return rc;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_config(j);
}

/// Run-identity document: everything that shapes the trained model and the
/// metrics rows. The epoch count is deliberately absent (a run may be
/// extended on resume) and so is the output directory.
inline Json identity_json(const RunConfig& rc) {
    Json j;
    j["experiment"] = rc.train.experiment;
    j["seed"] = rc.train.seed;
    j["regime"] = {{"kind", regime_name(rc.train.regime.kind)},
                   {"clusters", rc.train.regime.clusters},
                   {"rep_dim", rc.train.regime.rep_dim},
                   {"eta", rc.train.regime.eta},
                   {"fixed_heads", rc.train.regime.fixed_heads}};
    j["encoder_mode"] = {{"kind", encoder_mode_name(rc.train.encoder_mode.kind)},
                         {"noise_dim", rc.train.encoder_mode.noise_dim},
                         {"noise_std", rc.train.encoder_mode.noise_std}};
    j["regularizer"] = regularizer_name(rc.train.regularizer);
    j["architecture"] = {{"enc_hidden", rc.train.arch.enc_hidden},
                         {"dec_hidden", rc.train.arch.dec_hidden},
                         {"disc_hidden", rc.train.arch.disc_hidden},
                         {"z_dim", rc.train.arch.z_dim},
                         {"hidden_activation", act_name(rc.train.arch.hidden_act)},
                         {"decoder_output", act_name(rc.train.arch.dec_out_act)},
                         {"init_std", rc.train.arch.init_std},
                         {"batch_norm", static_cast<int>(rc.train.arch.batch_norm)}};
    if (auto* g = std::get_if<GaussianPrior>(&rc.train.z_prior.kind))
        j["prior"] = {{"kind", "gaussian"}, {"dim", g->dim}, {"std", g->stddev}};
    else if (auto* m = std::get_if<Mog10Prior>(&rc.train.z_prior.kind))
        j["prior"] = {{"kind", "mog10_2d"},
                      {"radius", m->radius},
                      {"radial_std", m->radial_std},
                      {"tangential_std", m->tangential_std}};
    else if (auto* s = std::get_if<SwissRollPrior>(&rc.train.z_prior.kind))
        j["prior"] = {{"kind", "swiss_roll"},
                      {"turns", s->turns},
                      {"scale", s->scale},
                      {"noise_std", s->noise_std}};
    auto cost = [](const CostSchedule& cs) {
        Json c{{"lr", cs.initial_lr}, {"momentum", cs.momentum}};
        Json drops = Json::array();
        for (const auto& d : cs.drops) drops.push_back({d.epoch, d.lr});
        c["drops"] = drops;
        return c;
    };
    j["schedules"] = {{"batch_size", rc.train.sched.batch_size},
                      {"input_noise_std", rc.train.sched.input_noise_std},
                      {"input_dropout", rc.train.sched.input_dropout},
                      {"reconstruction", cost(rc.train.sched.recon)},
                      {"adversarial", cost(rc.train.sched.adv_disc)},
                      {"adversarial_generator", cost(rc.train.sched.adv_gen)},
                      {"semi_supervised", cost(rc.train.sched.semi)}};
    j["dataset"] = {{"format", rc.dataset.format},
                    {"train_images", rc.dataset.train_images},
                    {"train_labels", rc.dataset.train_labels},
                    {"test_images", rc.dataset.test_images},
                    {"test_labels", rc.dataset.test_labels},
                    {"train_file", rc.dataset.train_file},
                    {"test_file", rc.dataset.test_file},
                    {"normalization", rc.dataset.normalization},
                    {"validation_count", rc.dataset.validation_count},
                    {"labeled_count", rc.dataset.labeled_count},
                    {"use_labels", rc.dataset.use_labels},
                    {"split_seed", rc.dataset.split_seed}};
    j["eval"] = {{"every", rc.eval.every},
                 {"milestones", rc.eval.milestones},
                 {"diag_sample", rc.eval.diag_sample},
                 {"parzen_enabled", rc.eval.parzen_enabled},
                 {"parzen_samples", rc.eval.parzen_samples}};
    return j;
}

/// Stable hash tying checkpoints to their run identity (nlohmann keeps keys
/// sorted, so the dump is canonical).
inline std::uint64_t config_hash(const RunConfig& rc) {
    return hash_str(identity_json(rc).dump());
}

}  // namespace aae
