#pragma once

// Experiment orchestration behind the CLI verbs: dataset loading and
// splitting, the epoch loop with its metrics log, checkpoint/resume,
// scheduled evaluation, figure rendering, and the cross-run results table.
//
// Filesystem layout of a run directory:
//   config.json    effective run-identity document
//   metrics.tsv    one row per epoch (append-only; resume truncates any rows
//                  past the checkpoint before continuing)
//   checkpoints/epoch_NNNNNN.aaec, checkpoints/latest.aaec
//   figures/{figure}_{epoch}.{pgm,ppm,tsv}
//   report.kv      final key=value metrics consumed by `report`

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "aae/config.hpp"
#include "aae/dataset.hpp"
#include "aae/eval.hpp"
#include "aae/train.hpp"
#include "aae/viz.hpp"

namespace aae {

inline std::string data_root() {
    const char* env = std::getenv("AAE_DATA_DIR");
    return env ? std::string(env) : std::string("data");
}

inline std::string resolve_data_path(const std::string& rel) {
    if (rel.empty()) return rel;
    std::filesystem::path p(rel);
    if (p.is_absolute()) return rel;
    return (std::filesystem::path(data_root()) / p).string();
}

struct LoadedData {
    TrainData train_data;     // what the Trainer consumes
    ImageDataset validation;  // reserved tail of the training set
    ImageDataset test;
};

/// Held-out datasets used by evaluation and rendering; training data is read
/// from the Trainer to avoid duplicating it.
struct EvalData {
    ImageDataset validation;
    ImageDataset test;
};

inline void apply_standardization(ImageDataset& ds, const std::vector<double>& mean,
                                  const std::vector<double>& stddev) {
    for (std::size_t i = 0; i < ds.n(); ++i) {
        double* r = ds.images.row(i);
        for (std::size_t j = 0; j < ds.d(); ++j) r[j] = (r[j] - mean[j]) / stddev[j];
    }
    ds.norm = Normalization::standardized;
    ds.mean = mean;
    ds.stddev = stddev;
}

inline LoadedData load_datasets(const RunConfig& rc) {
    ImageDataset train, test;
    if (rc.dataset.format == "idx") {
        train = load_idx(resolve_data_path(rc.dataset.train_images),
                         rc.dataset.train_labels.empty()
                             ? std::nullopt
                             : std::optional<std::string>(resolve_data_path(rc.dataset.train_labels)));
        if (!rc.dataset.test_images.empty())
            test = load_idx(resolve_data_path(rc.dataset.test_images),
                            rc.dataset.test_labels.empty()
                                ? std::nullopt
                                : std::optional<std::string>(
                                      resolve_data_path(rc.dataset.test_labels)));
    } else {
        train = load_aae1(resolve_data_path(rc.dataset.train_file));
        if (!rc.dataset.test_file.empty()) test = load_aae1(resolve_data_path(rc.dataset.test_file));
    }

    if (rc.dataset.normalization == "standardized" && train.norm == Normalization::unit_interval) {
        train = standardize(train);
        if (test.n()) apply_standardization(test, train.mean, train.stddev);
    }

    const std::size_t val_count = std::min(rc.dataset.validation_count, train.n() / 2);
    auto [train_part, validation] = split_head(train, train.n() - val_count);

    LoadedData out;
    out.validation = std::move(validation);
    out.test = std::move(test);

    const Regime& rg = rc.train.regime;
    TrainData td;
    if (!rc.dataset.use_labels) {
        train_part.labels.clear();  // fully unsupervised training path
    }
    if (rg.kind == RegimeKind::semi_supervised || rg.kind == RegimeKind::dimred) {
        if (rc.dataset.labeled_count > 0) {
            if (!train_part.labeled())
                throw ConfigError("dataset.labeled_count set but the train set has no labels");
            auto plan = SplitPlan::even(rc.dataset.labeled_count,
                                        static_cast<std::size_t>(train_part.num_classes),
                                        rc.dataset.split_seed);
            auto idx = balanced_pick_indices(train_part, plan);
            ImageDataset pool;
            pool.num_classes = train_part.num_classes;
            pool.norm = train_part.norm;
            pool.mean = train_part.mean;
            pool.stddev = train_part.stddev;
            pool.image_h = train_part.image_h;
            pool.image_w = train_part.image_w;
            pool.images = gather_rows(train_part.images, idx);
            pool.labels = gather_labels(train_part.labels, idx);
            td.labeled_pool = std::move(pool);
        } else if (rg.kind == RegimeKind::semi_supervised ||
                   (rg.kind == RegimeKind::dimred && train_part.labeled())) {
            td.labeled_pool = train_part;  // all available labels
        }
    }
    if (rg.kind == RegimeKind::label_conditioned_prior) {
        if (!train_part.labeled())
            throw ConfigError("label_conditioned_prior requires a labeled train set");
        td.cond_labels.assign(train_part.n(), -1);
        const std::size_t want =
            rc.dataset.labeled_count > 0 ? rc.dataset.labeled_count : train_part.n();
        auto plan = SplitPlan::even(want, static_cast<std::size_t>(train_part.num_classes),
                                    rc.dataset.split_seed);
        for (auto i : balanced_pick_indices(train_part, plan))
            td.cond_labels[i] = train_part.labels[i];
    }
    td.train = std::move(train_part);
    out.train_data = std::move(td);
    return out;
}

// ---- metrics log ----------------------------------------------------------

inline std::string fmt_g17(double v) {
    if (std::isnan(v)) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct MetricsColumns {
    std::vector<std::string> names;

    static MetricsColumns for_config(const RunConfig& rc, std::size_t labeled_pool_n) {
        MetricsColumns mc;
        mc.names = {"epoch", "recon", "d_z", "g_z", "d_y", "g_y", "xent", "repulsion"};
        mc.names.insert(mc.names.end(), {"diag_mean_gap_max", "diag_std_ratio_lo",
                                         "diag_std_ratio_hi", "diag_energy", "diag_energy_p99"});
        const Regime& rg = rc.train.regime;
        const bool classify = (rg.kind == RegimeKind::semi_supervised ||
                               (rg.kind == RegimeKind::dimred && labeled_pool_n > 0));
        if (classify) mc.names.push_back("test_error");
        if (rg.kind == RegimeKind::clustering ||
            (rg.kind == RegimeKind::dimred && labeled_pool_n == 0))
            mc.names.push_back("cluster_error");
        if (rc.eval.parzen_enabled)
            mc.names.insert(mc.names.end(), {"parzen_mean", "parzen_se", "parzen_sigma"});
        return mc;
    }

    std::string header() const {
        std::string h;
        for (std::size_t i = 0; i < names.size(); ++i)
            h += names[i] + (i + 1 == names.size() ? "\n" : "\t");
        return h;
    }

    std::string row(const std::map<std::string, double>& vals, std::size_t epoch1) const {
        std::string r = std::to_string(epoch1);
        for (std::size_t i = 1; i < names.size(); ++i) {
            auto it = vals.find(names[i]);
            r += "\t" + (it == vals.end() ? std::string("-") : fmt_g17(it->second));
        }
        return r + "\n";
    }
};

// ---- scheduled evaluation ---------------------------------------------------

inline Tensor encode_in_chunks(AaeModel& model, const Tensor& xs, bool want_y, Rng& rng,
                               std::size_t chunk = 1000) {
    Tensor out;
    for (std::size_t lo = 0; lo < xs.rows; lo += chunk) {
        const std::size_t hi = std::min(xs.rows, lo + chunk);
        Tensor block(hi - lo, xs.cols);
        for (std::size_t i = lo; i < hi; ++i)
            std::copy(xs.row(i), xs.row(i) + xs.cols, block.row(i - lo));
        EncodeResult r = encode(model, block, Mode::infer, rng);
        const Tensor& part = want_y ? r.y : r.z;
        if (out.rows == 0) out = Tensor(xs.rows, part.cols);
        for (std::size_t i = 0; i < part.rows; ++i)
            std::copy(part.row(i), part.row(i) + part.cols, out.row(lo + i));
    }
    return out;
}

/// Decoded prior samples mapped back to pixel space in [0,1].
inline Tensor generate_pixel_samples(AaeModel& model, const PriorSpec& prior,
                                     const ImageDataset& ref, std::size_t n, std::uint64_t seed) {
    PriorSample zs = sample_prior(prior, n, seed);
    Tensor out(n, model.decoder.out_dim());
    const std::size_t chunk = 1000;
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        Tensor zblock(hi - lo, zs.points.cols);
        for (std::size_t i = lo; i < hi; ++i)
            std::copy(zs.points.row(i), zs.points.row(i) + zs.points.cols, zblock.row(i - lo));
        Tensor xb = decode(model, zblock);
        for (std::size_t i = 0; i < xb.rows; ++i)
            std::copy(xb.row(i), xb.row(i) + xb.cols, out.row(lo + i));
    }
    if (ref.norm == Normalization::standardized) out = unstandardize(out, ref.mean, ref.stddev);
    return out;
}

inline std::map<std::string, double> run_scheduled_eval(Trainer& trainer, const RunConfig& rc,
                                                        const EvalData& data,
                                                        std::size_t epoch1, bool final_epoch) {
    std::map<std::string, double> vals;
    AaeModel& model = trainer.model();
    const Regime& rg = rc.train.regime;
    Rng eval_rng = stream_for(rc.train.seed, "eval", epoch1);

    const ImageDataset& held = data.test.n() ? data.test : data.validation;
    if (held.n() == 0) return vals;

    // latent diagnostic on held-out codes vs the prior
    {
        const std::size_t want = std::min(rc.eval.diag_sample, held.n());
        Tensor sub(want, held.d());
        for (std::size_t i = 0; i < want; ++i)
            std::copy(held.images.row(i), held.images.row(i) + held.d(), sub.row(i));
        Tensor codes = encode_in_chunks(model, sub, /*want_y=*/false, eval_rng);
        auto rep = latent_match_diagnostic(codes, rc.train.z_prior, want,
                                           hash_mix(rc.train.seed, epoch1), 200);
        double gap = 0, lo = rep.std_ratio.empty() ? 1 : rep.std_ratio[0], hi = lo;
        for (double g : rep.mean_gap) gap = std::max(gap, std::abs(g));
        for (double r : rep.std_ratio) {
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        vals["diag_mean_gap_max"] = gap;
        vals["diag_std_ratio_lo"] = lo;
        vals["diag_std_ratio_hi"] = hi;
        vals["diag_energy"] = rep.energy_distance;
        vals["diag_energy_p99"] = rep.null_p99;
    }

    if (model.has_y() && held.labeled()) {
        Tensor probs = encode_in_chunks(model, held.images, /*want_y=*/true, eval_rng);
        const bool classify = rg.kind == RegimeKind::semi_supervised ||
                              (rg.kind == RegimeKind::dimred &&
                               trainer.data().labeled_pool.n() > 0);
        if (classify) {
            vals["test_error"] = classification_error_probs(probs, held.labels);
        } else if (data.validation.n() && data.validation.labeled()) {
            Tensor val_probs =
                encode_in_chunks(model, data.validation.images, /*want_y=*/true, eval_rng);
            auto ce = cluster_eval_probs(val_probs, data.validation.labels, probs, held.labels);
            vals["cluster_error"] = ce.test_error;
        }
    }

    if (rc.eval.parzen_enabled && final_epoch && !rg.decoder_takes_label()) {
        const ImageDataset& train_ds = trainer.data().train;
        Tensor samples = generate_pixel_samples(model, rc.train.z_prior, train_ds,
                                                rc.eval.parzen_samples,
                                                hash_mix(rc.train.seed, hash_str("parzen")));
        Tensor val_px = data.validation.images;
        Tensor test_px = held.images;
        if (train_ds.norm == Normalization::standardized) {
            val_px = unstandardize(val_px, train_ds.mean, train_ds.stddev);
            test_px = unstandardize(test_px, train_ds.mean, train_ds.stddev);
        }
        const std::size_t cv_n = std::min(rc.eval.parzen_cv_subsample, val_px.rows);
        Tensor val_sub(cv_n, val_px.cols);
        for (std::size_t i = 0; i < cv_n; ++i)
            std::copy(val_px.row(i), val_px.row(i) + val_px.cols, val_sub.row(i));
        const auto grid =
            log_spaced(rc.eval.parzen_sigma_lo, rc.eval.parzen_sigma_hi, rc.eval.parzen_sigma_count);
        const double sigma = parzen_sigma_cv(samples, val_sub, grid);
        auto est = parzen_log_likelihood(samples, test_px, sigma);
        vals["parzen_mean"] = est.mean_ll;
        vals["parzen_se"] = est.std_err;
        vals["parzen_sigma"] = est.sigma;
    }
    return vals;
}

// ---- figures ----------------------------------------------------------------

inline std::pair<std::size_t, std::size_t> cell_shape(const ImageDataset& ds) {
    if (ds.image_h && ds.image_w) return {ds.image_h, ds.image_w};
    const auto side = static_cast<std::size_t>(std::sqrt(static_cast<double>(ds.d())));
    if (side * side == ds.d()) return {side, side};
    return {0, 0};
}

inline void render_figures(Trainer& trainer, const RunConfig& rc, const EvalData& data,
                           std::size_t epoch1, const std::string& fig_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fig_dir);
    AaeModel& model = trainer.model();
    const Regime& rg = rc.train.regime;
    const ImageDataset& train_ds = trainer.data().train;
    const ImageDataset& held = data.test.n() ? data.test : data.validation;
    Rng rng = stream_for(rc.train.seed, "render", epoch1);
    const auto [cell_h, cell_w] = cell_shape(train_ds);
    const std::string suffix = "_" + std::to_string(epoch1);

    auto pixel_decode = [&](const Tensor& z) {
        Tensor x = decode(model, z);
        if (train_ds.norm == Normalization::standardized)
            x = unstandardize(x, train_ds.mean, train_ds.stddev);
        return x;
    };

    // latent scatter for 2-D codes
    if (model.z_dim == 2 && held.n()) {
        const std::size_t want = std::min<std::size_t>(held.n(), 5000);
        Tensor sub(want, held.d());
        for (std::size_t i = 0; i < want; ++i)
            std::copy(held.images.row(i), held.images.row(i) + held.d(), sub.row(i));
        Tensor codes = encode_in_chunks(model, sub, false, rng);
        std::vector<int> labels;
        if (held.labeled())
            labels.assign(held.labels.begin(),
                          held.labels.begin() + static_cast<std::ptrdiff_t>(want));
        latent_scatter(codes, labels, fig_dir + "/latent" + suffix + ".ppm");
    }

    if (!rg.decoder_takes_label() && cell_h) {
        // prior samples with a nearest-training-image column
        Tensor train_px = train_ds.images;
        if (train_ds.norm == Normalization::standardized)
            train_px = unstandardize(train_px, train_ds.mean, train_ds.stddev);
        ImageSheet samples =
            sample_sheet(pixel_decode, rc.train.z_prior, 90, hash_mix(rc.train.seed, epoch1),
                         train_px, cell_h, cell_w, 9);
        write_sheet_pgm(fig_dir + "/samples" + suffix + ".pgm", samples);

        if (model.z_dim == 2) {
            if (auto* g = std::get_if<GaussianPrior>(&rc.train.z_prior.kind)) {
                ImageSheet grid = manifold_grid(pixel_decode, g->stddev, 15, cell_h, cell_w);
                write_sheet_pgm(fig_dir + "/manifold" + suffix + ".pgm", grid);
            } else if (auto* m = std::get_if<Mog10Prior>(&rc.train.z_prior.kind)) {
                for (int comp = 0; comp < 3; ++comp) {
                    ImageSheet grid =
                        manifold_grid_component(pixel_decode, *m, comp, 10, cell_h, cell_w);
                    write_sheet_pgm(fig_dir + "/manifold_c" + std::to_string(comp) + suffix +
                                        ".pgm",
                                    grid);
                }
            }
        }
    }

    // label-conditioned decoders: style sheet (fixed z per row, label per column)
    if ((rg.kind == RegimeKind::supervised_style || rg.kind == RegimeKind::semi_supervised) &&
        cell_h) {
        const std::size_t m = model.decoder.in_dim() - model.z_dim;
        const std::size_t rows = 10;
        PriorSample zs = sample_prior(rc.train.z_prior, rows, hash_mix(rc.train.seed, 777));
        ImageSheet sheet = ImageSheet::blank(rows, m, cell_h, cell_w);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < m; ++c) {
                Tensor z(1, model.z_dim);
                std::copy(zs.points.row(r), zs.points.row(r) + model.z_dim, z.row(0));
                Tensor y = onehot_rows({static_cast<int>(c)}, m);
                Tensor x = decode(model, z, &y);
                if (train_ds.norm == Normalization::standardized)
                    x = unstandardize(x, train_ds.mean, train_ds.stddev);
                sheet.put_cell(r, c, x.row(0));
            }
        }
        write_sheet_pgm(fig_dir + "/styles" + suffix + ".pgm", sheet);
    }

    if (rg.kind == RegimeKind::clustering && cell_h && held.n()) {
        Tensor probs = encode_in_chunks(model, held.images, true, rng);
        auto decode_head = [&](int cluster) {
            Tensor z(1, model.z_dim, 0.0);
            Tensor y = onehot_rows({cluster}, model.y_dim);
            Tensor x = decode(model, z, &y);
            if (train_ds.norm == Normalization::standardized)
                x = unstandardize(x, train_ds.mean, train_ds.stddev);
            return x;
        };
        Tensor held_px = held.images;
        if (held.norm == Normalization::standardized)
            held_px = unstandardize(held_px, held.mean, held.stddev);
        auto res = cluster_sheet(decode_head, held_px, probs, model.y_dim,
                                 hash_mix(rc.train.seed, epoch1), cell_h, cell_w);
        write_sheet_pgm(fig_dir + "/clusters" + suffix + ".pgm", res.sheet);
    }

    if (rg.kind == RegimeKind::dimred && held.n()) {
        const std::size_t want = std::min<std::size_t>(held.n(), 5000);
        Tensor sub(want, held.d());
        for (std::size_t i = 0; i < want; ++i)
            std::copy(held.images.row(i), held.images.row(i) + held.d(), sub.row(i));
        Tensor reps(want, model.z_dim);
        {
            const std::size_t chunk = 1000;
            for (std::size_t lo = 0; lo < want; lo += chunk) {
                const std::size_t hi = std::min(want, lo + chunk);
                Tensor block(hi - lo, sub.cols);
                for (std::size_t i = lo; i < hi; ++i)
                    std::copy(sub.row(i), sub.row(i) + sub.cols, block.row(i - lo));
                Tensor r = dimred_representation(model, block, rng);
                for (std::size_t i = 0; i < r.rows; ++i)
                    std::copy(r.row(i), r.row(i) + r.cols, reps.row(lo + i));
            }
        }
        std::vector<int> labels;
        if (held.labeled())
            labels.assign(held.labels.begin(),
                          held.labels.begin() + static_cast<std::ptrdiff_t>(want));
        if (model.z_dim == 2) {
            latent_scatter(reps, labels, fig_dir + "/embedding" + suffix + ".ppm");
        } else {
            Tensor map = fit_heads_to_circle(model.cluster_heads);
            write_projection_map(fig_dir + "/embedding_map" + suffix + ".tsv", map);
            Tensor projected = matmul_nt(reps, map);
            latent_scatter(projected, labels, fig_dir + "/embedding" + suffix + ".ppm");
        }
    }
}

// ---- run/resume loop ----------------------------------------------------------

struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::string> out;
};

inline RunConfig apply_overrides(RunConfig rc, const RunOverrides& ov) {
    if (ov.seed) rc.train.seed = *ov.seed;
    if (ov.epochs) rc.train.sched.epochs = *ov.epochs;
    if (ov.out) rc.output_dir = *ov.out;
    return rc;
}

/// Exclusive ownership of an output directory for the duration of a run.
class DirLock {
public:
    explicit DirLock(const std::string& dir) : path_(dir + "/.lock") {
        std::filesystem::create_directories(dir);
        if (std::filesystem::exists(path_))
            throw std::runtime_error("output directory is locked by another run: " + path_);
        std::ofstream out(path_);
        out << "lock\n";
    }
    ~DirLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
};

inline bool is_scheduled(std::size_t epoch1, std::size_t every,
                         const std::vector<std::size_t>& milestones, std::size_t total) {
    if (epoch1 == total) return true;
    if (every && epoch1 % every == 0) return true;
    for (auto m : milestones)
        if (m == epoch1) return true;
    return false;
}

inline void write_report_kv(const std::string& path, const RunConfig& rc,
                            const std::map<std::string, double>& finals, std::size_t epochs_run) {
    std::ofstream out(path, std::ios::trunc);
    out << "experiment=" << rc.train.experiment << "\n";
    out << "seed=" << rc.train.seed << "\n";
    out << "epochs=" << epochs_run << "\n";
    for (const auto& [k, v] : finals) out << k << "=" << fmt_g17(v) << "\n";
}

/// Epoch loop shared by run and resume. Appends metrics rows, evaluates and
/// checkpoints on schedule, renders final figures, writes report.kv.
inline void train_loop(Trainer& trainer, const RunConfig& rc, const EvalData& data,
                       const std::string& out_dir, std::ostream& log) {
    namespace fs = std::filesystem;
    const MetricsColumns cols = MetricsColumns::for_config(rc, trainer.data().labeled_pool.n());
    const std::string metrics_path = out_dir + "/metrics.tsv";
    const std::string ckpt_dir = out_dir + "/checkpoints";
    fs::create_directories(ckpt_dir);

    // fresh run: write header; resume: keep header + rows up to the
    // checkpoint epoch, drop anything newer
    const std::size_t start_epoch = trainer.next_epoch();
    if (start_epoch == 0) {
        std::ofstream m(metrics_path, std::ios::trunc);
        m << cols.header();
    } else {
        std::ifstream in(metrics_path);
        std::vector<std::string> keep;
        std::string line;
        while (std::getline(in, line) && keep.size() < 1 + start_epoch) keep.push_back(line);
        in.close();
        std::ofstream m(metrics_path, std::ios::trunc);
        for (const auto& l : keep) m << l << "\n";
    }

    const std::uint64_t hash = config_hash(rc);
    std::map<std::string, double> last_eval;
    for (std::size_t e = start_epoch; e < rc.train.sched.epochs; ++e) {
        EpochMetrics em = trainer.run_epoch();
        const std::size_t epoch1 = e + 1;
        std::map<std::string, double> vals;
        auto put = [&](const char* k, double v) {
            if (!std::isnan(v)) vals[k] = v;
        };
        put("recon", em.recon);
        put("d_z", em.d_z);
        put("g_z", em.g_z);
        put("d_y", em.d_y);
        put("g_y", em.g_y);
        put("xent", em.xent);
        put("repulsion", em.repulsion);

        const bool final_epoch = epoch1 == rc.train.sched.epochs;
        if (is_scheduled(epoch1, rc.eval.every, rc.eval.milestones, rc.train.sched.epochs)) {
            auto ev = run_scheduled_eval(trainer, rc, data, epoch1, final_epoch);
            vals.insert(ev.begin(), ev.end());
            last_eval = ev;
            std::string summary;
            for (const auto& [k, v] : ev) summary += " " + k + "=" + fmt_g17(v);
            log << "[epoch " << epoch1 << "]" << summary << "\n";
        }
        {
            std::ofstream m(metrics_path, std::ios::app);
            m << cols.row(vals, epoch1);
        }
        if (is_scheduled(epoch1, rc.eval.checkpoint_every, {}, rc.train.sched.epochs)) {
            const ChunkMap chunks = trainer.checkpoint(hash);
            save_chunks_file(ckpt_dir + "/latest.aaec", chunks);
            // epoch-tagged copies only at milestones and the final epoch, so
            // long runs do not fill the disk
            if (final_epoch || is_scheduled(epoch1, 0, rc.eval.milestones, rc.train.sched.epochs)) {
                char name[64];
                std::snprintf(name, sizeof name, "epoch_%06zu.aaec", epoch1);
                save_chunks_file(ckpt_dir + "/" + name, chunks);
            }
        }
    }

    if (rc.eval.render_final && rc.train.sched.epochs > 0)
        render_figures(trainer, rc, data, rc.train.sched.epochs, out_dir + "/figures");
    write_report_kv(out_dir + "/report.kv", rc, last_eval, rc.train.sched.epochs);
}

inline void write_effective_config(const RunConfig& rc, const std::string& out_dir) {
    Json j = identity_json(rc);
    j["schedules"]["epochs"] = rc.train.sched.epochs;
    j["output_dir"] = rc.output_dir;
    std::ofstream out(out_dir + "/config.json", std::ios::trunc);
    out << j.dump(2) << "\n";
}

inline int run_experiment(const RunConfig& rc0, const RunOverrides& ov, std::ostream& log) {
    const RunConfig rc = apply_overrides(rc0, ov);
    LoadedData data = load_datasets(rc);
    DirLock lock(rc.output_dir);
    write_effective_config(rc, rc.output_dir);
    Trainer trainer(rc.train, std::move(data.train_data));
    EvalData held{std::move(data.validation), std::move(data.test)};
    train_loop(trainer, rc, held, rc.output_dir, log);
    return 0;
}

inline int resume_experiment(const std::string& checkpoint_path, const RunConfig& rc0,
                             const RunOverrides& ov, std::ostream& log) {
    const RunConfig rc = apply_overrides(rc0, ov);
    if (!std::filesystem::exists(checkpoint_path))
        throw ConfigError("checkpoint not found: " + checkpoint_path);
    LoadedData data = load_datasets(rc);
    DirLock lock(rc.output_dir);
    Trainer trainer(rc.train, std::move(data.train_data));
    trainer.restore(load_chunks_file(checkpoint_path), config_hash(rc));
    if (trainer.next_epoch() >= rc.train.sched.epochs) {
        log << "checkpoint is already at epoch " << trainer.next_epoch()
            << " >= " << rc.train.sched.epochs << "; nothing to do\n";
        return 0;
    }
    EvalData held{std::move(data.validation), std::move(data.test)};
    train_loop(trainer, rc, held, rc.output_dir, log);
    return 0;
}

inline int render_from_checkpoint(const std::string& checkpoint_path, const RunConfig& rc0,
                                  const std::string& out_dir, std::ostream& log) {
    if (!std::filesystem::exists(checkpoint_path))
        throw ConfigError("checkpoint not found: " + checkpoint_path);
    LoadedData data = load_datasets(rc0);
    Trainer trainer(rc0.train, std::move(data.train_data));
    trainer.restore(load_chunks_file(checkpoint_path), config_hash(rc0));
    EvalData held{std::move(data.validation), std::move(data.test)};
    std::filesystem::create_directories(out_dir);
    render_figures(trainer, rc0, held, trainer.next_epoch(), out_dir);
    log << "figures written to " << out_dir << "\n";
    return 0;
}

// ---- results table -----------------------------------------------------------

/// Aggregates report.kv files across runs: one row per experiment, one
/// `mean +/- err` cell per metric (sample standard deviation across seeds;
/// empty error for a single run). All runs must share the same metric keys.
inline int report_runs(const std::vector<std::string>& run_dirs, const std::string& out_path) {
    struct RunKv {
        std::string experiment;
        std::map<std::string, double> vals;
    };
    std::vector<RunKv> runs;
    for (const auto& dir : run_dirs) {
        std::ifstream in(dir + "/report.kv");
        if (!in) throw ConfigError("no report.kv in " + dir);
        RunKv kv;
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
            if (k == "experiment")
                kv.experiment = v;
            else if (k != "seed" && v != "-")
                kv.vals[k] = std::strtod(v.c_str(), nullptr);
        }
        runs.push_back(std::move(kv));
    }
    if (runs.empty()) throw ConfigError("no runs to report");

    std::set<std::string> keys;
    for (const auto& [k, v] : runs.front().vals) keys.insert(k);
    for (const auto& r : runs) {
        std::set<std::string> rk;
        for (const auto& [k, v] : r.vals) rk.insert(k);
        if (rk != keys)
            throw ConfigError("inconsistent metric keys across runs (experiment '" +
                              r.experiment + "')");
    }

    std::map<std::string, std::vector<const RunKv*>> by_exp;
    for (const auto& r : runs) by_exp[r.experiment].push_back(&r);

    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open report output: " + out_path);
    out << "experiment\truns";
    for (const auto& k : keys) out << "\t" << k;
    out << "\n";
    char buf[128];
    for (const auto& [exp, group] : by_exp) {
        out << exp << "\t" << group.size();
        for (const auto& k : keys) {
            std::vector<double> xs;
            for (const auto* r : group) xs.push_back(r->vals.at(k));
            double mean = 0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            if (xs.size() > 1) {
                double ss = 0;
                for (double x : xs) ss += (x - mean) * (x - mean);
                const double err = std::sqrt(ss / static_cast<double>(xs.size() - 1));
                std::snprintf(buf, sizeof buf, "%.6g ± %.2g", mean, err);
            } else {
                std::snprintf(buf, sizeof buf, "%.6g", mean);
            }
            out << "\t" << buf;
        }
        out << "\n";
    }
    return 0;
}

}  // namespace aae
