#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "aae/runner.hpp"
#include "testutil.hpp"

using namespace aae;
namespace fs = std::filesystem;

namespace {

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string& tag) {
        root = fs::temp_directory_path() / (tag + "_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

void write_synth_idx(const fs::path& dir, std::size_t n_train, std::size_t n_test,
                     std::size_t side, std::size_t classes, std::uint64_t seed) {
    fs::create_directories(dir);
    auto quantize = [](const ImageDataset& ds) {
        std::vector<unsigned char> px(ds.images.size());
        for (std::size_t i = 0; i < px.size(); ++i)
            px[i] = static_cast<unsigned char>(std::floor(ds.images.v[i] * 255.0 + 0.5));
        return px;
    };
    auto train = testutil::synth_images(n_train, side, classes, seed);
    auto test = testutil::synth_images(n_test, side, classes, seed + 1);
    testutil::write_idx_images((dir / "train-images-idx3-ubyte").string(), quantize(train),
                               static_cast<std::uint32_t>(n_train),
                               static_cast<std::uint32_t>(side), static_cast<std::uint32_t>(side));
    std::vector<unsigned char> tl(train.labels.begin(), train.labels.end());
    testutil::write_idx_labels((dir / "train-labels-idx1-ubyte").string(), tl);
    testutil::write_idx_images((dir / "t10k-images-idx3-ubyte").string(), quantize(test),
                               static_cast<std::uint32_t>(n_test),
                               static_cast<std::uint32_t>(side), static_cast<std::uint32_t>(side));
    std::vector<unsigned char> sl(test.labels.begin(), test.labels.end());
    testutil::write_idx_labels((dir / "t10k-labels-idx1-ubyte").string(), sl);
}

RunConfig synth_config(const fs::path& out_dir, RegimeKind kind, std::size_t epochs,
                       std::size_t labeled = 0) {
    RunConfig rc;
    rc.train.experiment = "runner_test";
    rc.train.seed = 5;
    rc.train.regime.kind = kind;
    rc.train.arch.enc_hidden = {64};
    rc.train.arch.dec_hidden = {64};
    rc.train.arch.disc_hidden = {64};
    rc.train.arch.z_dim = 2;
    rc.train.arch.init_std = 0.05;
    rc.train.z_prior = PriorSpec{GaussianPrior{2, 5.0}};
    rc.train.sched.epochs = epochs;
    rc.train.sched.batch_size = 50;
    rc.train.sched.recon = {0.02, {}, 0.9};
    rc.train.sched.adv_disc = {0.1, {}, 0.1};
    rc.train.sched.adv_gen = {0.1, {}, 0.1};
    rc.train.sched.semi = {0.1, {}, 0.9};
    rc.dataset.format = "idx";
    rc.dataset.train_images = "train-images-idx3-ubyte";
    rc.dataset.train_labels = "train-labels-idx1-ubyte";
    rc.dataset.test_images = "t10k-images-idx3-ubyte";
    rc.dataset.test_labels = "t10k-labels-idx1-ubyte";
    rc.dataset.validation_count = 100;
    rc.dataset.labeled_count = labeled;
    rc.eval.every = 2;
    rc.eval.milestones = {1};
    rc.eval.checkpoint_every = 1;
    rc.eval.diag_sample = 200;
    rc.output_dir = out_dir.string();
    return rc;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

}  // namespace

TEST_SUITE_BEGIN("runner");

TEST_CASE("run produces metrics, checkpoints, figures and a report") {
    TempTree tt("aae_runner_basic");
    write_synth_idx(tt.root / "data", 400, 120, 8, 4, 7);
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);

    auto rc = synth_config(tt.root / "out", RegimeKind::unsupervised, 4);
    std::ostringstream log;
    CHECK(run_experiment(rc, {}, log) == 0);

    CHECK(fs::exists(tt.root / "out/config.json"));
    CHECK(line_count(tt.root / "out/metrics.tsv") == 1 + 4);
    CHECK(fs::exists(tt.root / "out/checkpoints/latest.aaec"));
    CHECK(fs::exists(tt.root / "out/checkpoints/epoch_000004.aaec"));
    CHECK(fs::exists(tt.root / "out/report.kv"));
    CHECK(fs::exists(tt.root / "out/figures/latent_4.ppm"));
    CHECK(fs::exists(tt.root / "out/figures/samples_4.pgm"));
    CHECK(fs::exists(tt.root / "out/figures/manifold_4.pgm"));
    CHECK_FALSE(fs::exists(tt.root / "out/.lock"));  // released

    // header names the diagnostic columns
    std::ifstream m(tt.root / "out/metrics.tsv");
    std::string header;
    std::getline(m, header);
    CHECK(header.find("diag_energy") != std::string::npos);
    CHECK(header.find("recon") != std::string::npos);
}

TEST_CASE("identical runs give byte-identical metrics logs") {
    TempTree tt("aae_runner_det");
    write_synth_idx(tt.root / "data", 300, 80, 8, 4, 11);
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);

    std::ostringstream log;
    auto rc1 = synth_config(tt.root / "a", RegimeKind::unsupervised, 3);
    auto rc2 = synth_config(tt.root / "b", RegimeKind::unsupervised, 3);
    run_experiment(rc1, {}, log);
    run_experiment(rc2, {}, log);
    CHECK(slurp(tt.root / "a/metrics.tsv") == slurp(tt.root / "b/metrics.tsv"));
}

TEST_CASE("resume reproduces the uninterrupted run bit for bit") {
    TempTree tt("aae_runner_resume");
    write_synth_idx(tt.root / "data", 300, 80, 8, 4, 13);
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);
    std::ostringstream log;

    auto straight = synth_config(tt.root / "straight", RegimeKind::unsupervised, 4);
    run_experiment(straight, {}, log);

    auto head = synth_config(tt.root / "resumed", RegimeKind::unsupervised, 4);
    RunOverrides cut;
    cut.epochs = 2;
    run_experiment(head, cut, log);
    CHECK(line_count(tt.root / "resumed/metrics.tsv") == 1 + 2);

    CHECK(resume_experiment((tt.root / "resumed/checkpoints/latest.aaec").string(), head, {},
                            log) == 0);
    CHECK(slurp(tt.root / "straight/metrics.tsv") == slurp(tt.root / "resumed/metrics.tsv"));

    // resuming past the final epoch is a no-op success
    CHECK(resume_experiment((tt.root / "resumed/checkpoints/latest.aaec").string(), head, {},
                            log) == 0);
}

TEST_CASE("locked output directory refuses a second run") {
    TempTree tt("aae_runner_lock");
    write_synth_idx(tt.root / "data", 200, 50, 8, 4, 17);
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);
    fs::create_directories(tt.root / "out");
    std::ofstream(tt.root / "out/.lock") << "held\n";
    auto rc = synth_config(tt.root / "out", RegimeKind::unsupervised, 1);
    std::ostringstream log;
    CHECK_THROWS_AS(run_experiment(rc, {}, log), std::runtime_error);
}

TEST_CASE("report aggregates runs of one experiment into mean and spread") {
    TempTree tt("aae_runner_report");
    write_synth_idx(tt.root / "data", 200, 60, 8, 4, 19);
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);
    std::ostringstream log;
    for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
        auto rc = synth_config(tt.root / ("s" + std::to_string(seed)), RegimeKind::unsupervised, 2);
        RunOverrides ov;
        ov.seed = seed;
        run_experiment(rc, ov, log);
    }
    const std::string out = (tt.root / "report.tsv").string();
    CHECK(report_runs({(tt.root / "s21").string(), (tt.root / "s22").string(),
                       (tt.root / "s23").string()},
                      out) == 0);
    std::ifstream in(out);
    std::string header, row, extra;
    std::getline(in, header);
    std::getline(in, row);
    CHECK_FALSE(std::getline(in, extra));  // 3 seeds, one experiment -> one row
    CHECK(row.find("runner_test") == 0);
    CHECK(row.find("±") != std::string::npos);

    // single run: error column empty
    const std::string single = (tt.root / "single.tsv").string();
    CHECK(report_runs({(tt.root / "s21").string()}, single) == 0);
    std::ifstream sin(single);
    std::getline(sin, header);
    std::getline(sin, row);
    CHECK(row.find("±") == std::string::npos);
}

TEST_CASE("semi-supervised training learns the synthetic classes end to end") {
    TempTree tt("aae_runner_semi");
    write_synth_idx(tt.root / "data", 1500, 300, 10, 5, 23);
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);

    auto rc = synth_config(tt.root / "out", RegimeKind::semi_supervised, 12, /*labeled=*/50);
    rc.train.arch.enc_hidden = {128};
    rc.train.arch.dec_hidden = {128};
    rc.train.arch.disc_hidden = {64};
    rc.train.arch.z_dim = 4;
    rc.train.z_prior = PriorSpec{GaussianPrior{4, 1.0}};
    rc.train.sched.input_noise_std = 0.1;
    std::ostringstream log;
    CHECK(run_experiment(rc, {}, log) == 0);

    // read the final test_error from report.kv: far better than chance (0.8)
    std::ifstream kv(tt.root / "out/report.kv");
    std::string line;
    double test_error = 1.0;
    while (std::getline(kv, line))
        if (line.rfind("test_error=", 0) == 0) test_error = std::stod(line.substr(11));
    CHECK(test_error < 0.35);
}

TEST_CASE("clustering regime end to end with cluster sheet output") {
    TempTree tt("aae_runner_cluster");
    write_synth_idx(tt.root / "data", 1200, 300, 10, 5, 29);
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);

    auto rc = synth_config(tt.root / "out", RegimeKind::clustering, 10);
    rc.train.regime.clusters = 8;
    rc.train.arch.enc_hidden = {128};
    rc.train.arch.dec_hidden = {128};
    rc.train.arch.disc_hidden = {64};
    rc.train.arch.z_dim = 3;
    rc.train.z_prior = PriorSpec{GaussianPrior{3, 1.0}};
    rc.train.arch.batch_norm = ArchitectureSpec::BnPlacement::encoder;
    rc.train.sched.input_dropout = 0.2;
    std::ostringstream log;
    CHECK(run_experiment(rc, {}, log) == 0);
    CHECK(fs::exists(tt.root / "out/figures/clusters_10.pgm"));

    std::ifstream kv(tt.root / "out/report.kv");
    std::string line;
    double cluster_error = 1.0;
    while (std::getline(kv, line))
        if (line.rfind("cluster_error=", 0) == 0) cluster_error = std::stod(line.substr(14));
    // 5 separable synthetic classes, 8 clusters: far better than majority-class
    CHECK(cluster_error < 0.5);
}

TEST_CASE("aae1 container with standardization and batch-norm everywhere trains end to end") {
    TempTree tt("aae_runner_aae1");
    fs::create_directories(tt.root / "data");
    {
        auto train = testutil::synth_images(500, 8, 4, 37);
        auto test = testutil::synth_images(120, 8, 4, 38);
        save_aae1((tt.root / "data/train.aae1").string(), train);
        save_aae1((tt.root / "data/test.aae1").string(), test);
    }
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);

    auto rc = synth_config(tt.root / "out", RegimeKind::semi_supervised, 4, /*labeled=*/40);
    rc.dataset.format = "aae1";
    rc.dataset.train_file = "train.aae1";
    rc.dataset.test_file = "test.aae1";
    rc.dataset.normalization = "standardized";
    rc.train.arch.batch_norm = ArchitectureSpec::BnPlacement::all;
    rc.train.arch.dec_out_act = Act::linear;
    rc.train.arch.z_dim = 3;
    rc.train.z_prior = PriorSpec{GaussianPrior{3, 1.0}};
    rc.train.sched.input_dropout = 0.2;
    std::ostringstream log;
    CHECK(run_experiment(rc, {}, log) == 0);

    // metrics stay finite through batch-normed training on standardized data
    std::ifstream m(tt.root / "out/metrics.tsv");
    std::string header, row;
    std::getline(m, header);
    std::size_t rows = 0;
    while (std::getline(m, row)) {
        CHECK(row.find("nan") == std::string::npos);
        CHECK(row.find("inf") == std::string::npos);
        ++rows;
    }
    CHECK(rows == 4);
    // figure pipeline maps samples back to pixel space
    CHECK(fs::exists(tt.root / "out/figures/styles_4.pgm"));
}

TEST_CASE("dimred regime end to end writes an embedding and projection map") {
    TempTree tt("aae_runner_dimred");
    write_synth_idx(tt.root / "data", 600, 150, 8, 4, 31);
    ::setenv("AAE_DATA_DIR", (tt.root / "data").c_str(), 1);

    auto rc = synth_config(tt.root / "out", RegimeKind::dimred, 4, /*labeled=*/40);
    rc.train.regime.clusters = 4;
    rc.train.regime.rep_dim = 6;
    rc.train.regime.eta = 5.0;
    rc.train.arch.z_dim = 6;
    rc.train.z_prior = PriorSpec{GaussianPrior{6, 1.0}};
    std::ostringstream log;
    CHECK(run_experiment(rc, {}, log) == 0);
    CHECK(fs::exists(tt.root / "out/figures/embedding_4.ppm"));
    CHECK(fs::exists(tt.root / "out/figures/embedding_map_4.tsv"));
}

TEST_SUITE_END();
