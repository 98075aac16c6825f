#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>
#include <unistd.h>

#include "aae/config.hpp"

using namespace aae;
namespace fs = std::filesystem;

namespace {

int run_cmd(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("full command-line round trip on a generated synthetic dataset") {
    fs::path root = fs::temp_directory_path() / ("aae_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string data = (root / "data").string();
    const std::string config = std::string(AAE_SOURCE_DIR) + "/configs/smoke_synth.json";

    REQUIRE(run_cmd(std::string(AAE_SYNTHGEN_BIN) + " --out " + data +
                    " --n 600 --test 150 --side 12 > /dev/null") == 0);
    ::setenv("AAE_DATA_DIR", data.c_str(), 1);

    const std::string out1 = (root / "run1").string();
    CHECK(run_cmd(std::string(AAE_CLI_BIN) + " run --config " + config + " --out " + out1 +
                  " > /dev/null") == 0);
    CHECK(fs::exists(out1 + "/metrics.tsv"));
    CHECK(fs::exists(out1 + "/report.kv"));
    CHECK(fs::exists(out1 + "/checkpoints/latest.aaec"));

    SUBCASE("second run with the same seed is byte-identical") {
        const std::string out2 = (root / "run2").string();
        CHECK(run_cmd(std::string(AAE_CLI_BIN) + " run --config " + config + " --out " + out2 +
                      " > /dev/null") == 0);
        CHECK(slurp(out1 + "/metrics.tsv") == slurp(out2 + "/metrics.tsv"));
    }

    SUBCASE("resume from a mid-run checkpoint matches the straight run") {
        const std::string cut = (root / "cut").string();
        CHECK(run_cmd(std::string(AAE_CLI_BIN) + " run --config " + config + " --out " + cut +
                      " --epochs-override 2 > /dev/null") == 0);
        CHECK(run_cmd(std::string(AAE_CLI_BIN) + " resume --checkpoint " + cut +
                      "/checkpoints/latest.aaec --config " + config + " --out " + cut +
                      " > /dev/null") == 0);
        CHECK(slurp(out1 + "/metrics.tsv") == slurp(cut + "/metrics.tsv"));
    }

    SUBCASE("report builds a table over run directories") {
        const std::string table = (root / "table.tsv").string();
        CHECK(run_cmd(std::string(AAE_CLI_BIN) + " report " + out1 + " --out " + table +
                      " > /dev/null") == 0);
        CHECK(fs::exists(table));
        CHECK(slurp(table).find("smoke_synth") != std::string::npos);
    }

    SUBCASE("render regenerates figures from a checkpoint") {
        const std::string figs = (root / "figs").string();
        CHECK(run_cmd(std::string(AAE_CLI_BIN) + " render --checkpoint " + out1 +
                      "/checkpoints/latest.aaec --config " + config + " --out " + figs +
                      " > /dev/null") == 0);
        CHECK(fs::exists(figs + "/latent_5.ppm"));
    }

    fs::remove_all(root);
}

TEST_CASE("validation failures exit with status 2 and name the fields") {
    fs::path root = fs::temp_directory_path() / ("aae_cli_bad_" + std::to_string(::getpid()));
    fs::create_directories(root);
    const fs::path bad = root / "bad.json";
    {
        Json j;
        j["schema_version"] = 1;
        j["experiment"] = "bad";
        j["regime"] = {{"kind", "unsupervised"}};
        j["architecture"] = {{"enc_hidden", {8}}, {"z_dim", 4}};
        j["prior"] = {{"kind", "gaussian"}, {"dim", 2}, {"std", 1.0}};  // mismatch
        j["schedules"] = {{"epochs", 1}};
        j["dataset"] = {{"format", "idx"}, {"train_images", "x"}};
        std::ofstream(bad) << j.dump(2);
    }
    const std::string err = (root / "err.txt").string();
    const int rc = run_cmd(std::string(AAE_CLI_BIN) + " run --config " + bad.string() + " 2> " +
                           err + " > /dev/null");
    CHECK(rc == 2);
    const std::string msg = slurp(err);
    CHECK(msg.find("prior.dim") != std::string::npos);
    CHECK(msg.find("architecture.z_dim") != std::string::npos);
    fs::remove_all(root);
}

TEST_CASE("resume with a missing checkpoint exits with status 2") {
    const std::string config = std::string(AAE_SOURCE_DIR) + "/configs/smoke_synth.json";
    const int rc = run_cmd(std::string(AAE_CLI_BIN) + " resume --checkpoint /nonexistent.aaec" +
                           " --config " + config + " 2> /dev/null > /dev/null");
    CHECK(rc == 2);
}

TEST_SUITE_END();
