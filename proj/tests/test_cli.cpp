#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "namac/workflow.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "namac_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int cli(const std::string& args) {
    const std::string cmd = "cd '" + workdir().string() + "' && '" NAMAC_CLI_PATH "' " + args + " >> cli.log 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t count_files(const fs::path& dir) {
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

// Small database and bundle shared by the run/assess cases.
void ensure_bundle() {
    static bool done = false;
    if (done) return;
    REQUIRE(cli("gen-data --grid 4 --out db4") == 0);
    REQUIRE(cli("train --twin diagnosis --db db4 --bundle b4 --max-epochs 30") == 0);
    REQUIRE(cli("train --twin prognosis --db db4 --bundle b4 --max-epochs 300") == 0);
    done = true;
}

}  // namespace

TEST_CASE("gen-data writes the requested grid") {
    REQUIRE(cli("gen-data --grid 2 --out g2") == 0);
    CHECK(fs::exists(workdir() / "g2" / "manifest.txt"));
    CHECK(count_files(workdir() / "g2" / "episodes") == 4);
}

TEST_CASE("gen-data is byte-for-byte deterministic") {
    REQUIRE(cli("gen-data --grid 2 --out d1 --rows 50") == 0);
    REQUIRE(cli("gen-data --grid 2 --out d2 --rows 50") == 0);
    CHECK(slurp(workdir() / "d1" / "manifest.txt") == slurp(workdir() / "d2" / "manifest.txt"));
    CHECK(slurp(workdir() / "d1" / "episodes" / "episode_0003.csv") ==
          slurp(workdir() / "d2" / "episodes" / "episode_0003.csv"));
}

TEST_CASE("invalid bounds fail without a manifest") {
    CHECK(cli("gen-data --grid 2 --w2-min 1.6 --out bad") != 0);
    CHECK_FALSE(fs::exists(workdir() / "bad" / "manifest.txt"));
    CHECK(cli("gen-data --grid 2 --trip-min 700 --trip-max 650 --out bad2") != 0);
    CHECK_FALSE(fs::exists(workdir() / "bad2" / "manifest.txt"));
}

TEST_CASE("train needs a database") {
    CHECK(cli("train --twin diagnosis --db no_such_db --bundle nb") != 0);
    CHECK_FALSE(fs::exists(workdir() / "nb" / "bundle.json"));
    CHECK(cli("train --twin sideways --db db4") != 0);
}

TEST_CASE("train writes a bundle with a report") {
    ensure_bundle();
    const json b = json::parse(slurp(workdir() / "b4" / "bundle.json"));
    CHECK(b.contains("diagnosis"));
    CHECK(b.contains("prognosis"));
    CHECK(b.at("diagnosis").at("target_mse") == 1e-2);
    CHECK(b.at("prognosis").at("target_mse") == 1e-3);
    const json report = json::parse(slurp(workdir() / "b4" / "train_report_diagnosis.json"));
    CHECK(report.contains("rmse_test"));
    CHECK(report.contains("history"));
}

TEST_CASE("run writes transcripts for both policies") {
    ensure_bundle();
    REQUIRE(cli("run --scenario table2 --policy auto --bundle b4 --out runs/auto.ndjson") == 0);
    REQUIRE(cli("run --scenario table2 --policy ignore --bundle b4 --out runs/ignore.ndjson") == 0);
    const auto a = namac::outcome_of(namac::TranscriptLog::from_ndjson(slurp(workdir() / "runs" / "auto.ndjson")));
    const auto i = namac::outcome_of(namac::TranscriptLog::from_ndjson(slurp(workdir() / "runs" / "ignore.ndjson")));
    CHECK(i.limit_exceeded);
    CHECK(i.max_true_t_pfcl > 685.0);
    CHECK(a.injected.has_value());

    REQUIRE(cli("run --scenario table2 --policy auto --bundle b4 --out runs/again.ndjson") == 0);
    CHECK(slurp(workdir() / "runs" / "auto.ndjson") == slurp(workdir() / "runs" / "again.ndjson"));

    CHECK(cli("run --scenario table2 --policy operator --bundle b4 --out runs/x.ndjson") != 0);
    CHECK(cli("run --scenario table2 --bundle no_bundle --out runs/y.ndjson") != 0);
}

TEST_CASE("bundles built for another plant are refused") {
    ensure_bundle();
    {
        std::ofstream cfg(workdir() / "other.cfg");
        cfg << "cap_up = 9.0\n";
    }
    CHECK(cli("--config other.cfg run --scenario table2 --bundle b4 --out runs/other.ndjson") != 0);
    CHECK(cli("--config other.cfg serve --bundle b4 --port 1") != 0);
}

TEST_CASE("assess confusion over generated family runs") {
    ensure_bundle();
    REQUIRE(cli("assess confusion --generate --family-runs 2 --bundle b4 --runs fam --out conf.csv") == 0);
    CHECK(count_files(workdir() / "fam") == 6);
    const std::string csv = slurp(workdir() / "conf.csv");
    CHECK(csv.rfind("family,TP,FP,FN,TN,TPR,FPR,FNR,TNR\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    REQUIRE(cli("assess confusion --runs fam --out conf2.csv") == 0);
    CHECK(slurp(workdir() / "conf2.csv") == csv);
    CHECK(cli("assess confusion --runs nowhere") != 0);
}

TEST_CASE("assess coverage and sweep") {
    ensure_bundle();
    REQUIRE(cli("gen-data --grid 2 --family far --w1-end 0.1 --ramp 20 --out far") == 0);
    REQUIRE(cli("assess coverage --train db4 --tests far,g2 --bundle b4 --grid 8 --out cov.csv") == 0);
    const std::string cov = slurp(workdir() / "cov.csv");
    CHECK(cov.find("far") != std::string::npos);
    CHECK(cov.find("g2") != std::string::npos);
    REQUIRE(cli("assess sweep --targets 10 --case interpolated:g2:far --out sweep.csv") == 0);
    const std::string sweep = slurp(workdir() / "sweep.csv");
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') >= 2);
    CHECK(cli("assess sweep --targets 100 --case interpolated:g2:far") != 0);
}

TEST_CASE("assess failures and surface") {
    ensure_bundle();
    REQUIRE(cli("assess failures --bundle b4 --db g2 --out fail.csv") == 0);
    CHECK(slurp(workdir() / "fail.csv").find("HPP+LPP+UP,1,") != std::string::npos);
    REQUIRE(cli("assess surface --bundle b4 --db g2 --out surf.csv") == 0);
    const std::string surface = slurp(workdir() / "surf.csv");
    CHECK(std::count(surface.begin(), surface.end(), '\n') == 5);
}
