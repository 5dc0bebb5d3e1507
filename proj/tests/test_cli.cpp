#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
    static const fs::path dir = [] {
        const fs::path p = fs::temp_directory_path() / "spaars_test_cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

// Runs the CLI with `args` inside the work directory; stdout and stderr go to `log`.
int cli(const std::string& args, const std::string& log = "last.log") {
    const std::string cmd = "cd '" + work_dir().string() + "' && env -u SPAARS_OUTPUT_ROOT '" SPAARS_CLI "' " + args +
                            " > '" + log + "' 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(cli("") == 2);
    CHECK(cli("no-such-command") == 2);
    CHECK(cli("gen-data --env nowhere --out x.bin") == 2);
    CHECK(cli("gen-data --behavior bogus --out x.bin") == 2);
    CHECK(cli("gen-data") == 2);  // --out is required
    CHECK(cli("verify --suite nope") == 2);
    CHECK(cli("export --kind pdf --input a --out b") == 2);
    CHECK(cli("--help") == 0);
    CHECK(cli("--version") == 0);
}

TEST_CASE("gen-data is byte-identical per seed and refuses to overwrite") {
    CHECK(cli("gen-data --env reach-1d --behavior medium --pairs 500 --seed 4 --out a.bin") == 0);
    CHECK(cli("gen-data --env reach-1d --behavior medium --pairs 500 --seed 4 --out b.bin") == 0);
    CHECK(slurp(work_dir() / "a.bin") == slurp(work_dir() / "b.bin"));
    CHECK(cli("gen-data --env reach-1d --behavior medium --pairs 500 --seed 5 --out c.bin") == 0);
    CHECK(slurp(work_dir() / "a.bin") != slurp(work_dir() / "c.bin"));
    CHECK(cli("gen-data --env reach-1d --pairs 500 --out a.bin") == 3);
    CHECK(cli("gen-data --env reach-1d --pairs 500 --seed 4 --out a.bin --force") == 0);
    CHECK(cli("gen-data --env reach-1d --pairs 0 --out z.bin") == 3);
}

TEST_CASE("config errors exit with 3") {
    write(work_dir() / "bad_key.json", R"({"dataset": "a.bin", "output_dir": "r", "bogus": 1})");
    CHECK(cli("train --config bad_key.json") == 3);
    write(work_dir() / "no_data.json", R"({"dataset": "missing.bin", "output_dir": "r"})");
    CHECK(cli("train --config no_data.json") == 3);
    CHECK(cli("train --config absent.json") == 3);
    write(work_dir() / "bad_train.json", R"({"dataset": "a.bin", "output_dir": "r", "train": {"total_steps": -5}})");
    CHECK(cli("train --config bad_train.json") == 3);
    // Dataset built for another environment.
    CHECK(cli("gen-data --env bandit-quadratic --pairs 100 --out bandit.bin") == 0);
    write(work_dir() / "mismatch.json", R"({"dataset": "bandit.bin", "output_dir": "r", "train": {"env": "reach-1d"}})");
    CHECK(cli("train --config mismatch.json") == 3);
}

TEST_CASE("train, resume, eval and export end to end") {
    REQUIRE(cli("gen-data --env reach-1d --behavior medium --pairs 1000 --seed 1 --out d.bin --force") == 0);
    const std::string train = R"({"total_steps": 600, "eval_interval": 200, "eval_episodes": 2, "batch_size": 32,
        "learning_starts": 64, "cvae": {"epochs": 3, "batch_size": 64},
        "curriculum": {"eps_bc": 1.0, "ramp_steps": 200, "plateau": {"window": 2, "tau": 1.0}}})";
    write(work_dir() / "run.json",
          R"({"dataset": "d.bin", "output_dir": "run1", "checkpoint_every": 300, "train": )" + train + "}");
    REQUIRE(cli("train --config run.json") == 0);
    const fs::path run1 = work_dir() / "run1";
    for (const char* f : {"config.json", "metrics.jsonl", "cvae.bin", "checkpoint.bin", "checkpoint_300.bin",
                          "final_report.json", "run_info.json"})
        CHECK(fs::exists(run1 / f));
    CHECK(cli("train --config run.json") == 3);  // existing run without --force

    // A second run with the same config and seed writes identical metrics.
    REQUIRE(cli("train --config run.json --out run2") == 0);
    const std::string metrics = slurp(run1 / "metrics.jsonl");
    CHECK(metrics == slurp(work_dir() / "run2" / "metrics.jsonl"));

    // Resuming from the midpoint checkpoint reproduces the tail of the stream.
    REQUIRE(cli("train --config run.json --out run2 --resume run2/checkpoint_300.bin --force") == 0);
    CHECK(metrics == slurp(work_dir() / "run2" / "metrics.jsonl"));

    CHECK(cli("eval --run-dir run1 --episodes 2", "eval.log") == 0);
    const auto ev = nlohmann::json::parse(slurp(work_dir() / "eval.log"));
    CHECK(ev.contains("eval_return"));

    CHECK(cli("export --kind csv --input run1/metrics.jsonl --out m.csv") == 0);
    std::istringstream csv(slurp(work_dir() / "m.csv"));
    std::string header;
    std::getline(csv, header);
    CHECK(header.rfind("kind,step,seed,", 0) == 0);
    long rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == std::count(metrics.begin(), metrics.end(), '\n'));
    CHECK(cli("export --kind svg-lines --input run1/metrics.jsonl --input run2/metrics.jsonl --out m.svg") == 0);
    CHECK(slurp(work_dir() / "m.svg").find("<polyline") != std::string::npos);
    CHECK(cli("export --kind heatmap-csv --input run1 --out h.csv") == 1);  // schedule runs have no heatmaps
}

TEST_CASE("train-cvae writes a model and its report") {
    REQUIRE(cli("gen-data --env bandit-quadratic --behavior expert_noisy --pairs 300 --out cv.bin --force") == 0);
    CHECK(cli("train-cvae --data cv.bin --out cv_model.bin --epochs 2") == 0);
    CHECK(fs::exists(work_dir() / "cv_model.bin"));
    const auto rep = nlohmann::json::parse(slurp(work_dir() / "cv_model.bin.json"));
    CHECK(rep["latent_dim"] == 2);
    CHECK(rep["epochs"].size() == 2);
    CHECK(cli("train-cvae --data cv.bin --out cv_model.bin --epochs 2") == 3);
    CHECK(cli("train-cvae --data cv.bin --out cv2.bin --beta-max 3") == 3);
    CHECK(cli("train-cvae --data nothere.bin --out cv3.bin") == 2);
}

TEST_CASE("verify passes on the tabular gate suite") {
    CHECK(cli("verify --suite regret --report regret.json") == 0);
    CHECK(fs::exists(work_dir() / "regret.json"));
}

TEST_CASE("output root environment variable relocates relative outputs") {
    const fs::path root = work_dir() / "root";
    const std::string cmd = "cd '" + work_dir().string() + "' && SPAARS_OUTPUT_ROOT='" + root.string() + "' '" SPAARS_CLI
                            "' gen-data --pairs 50 --out sub/x.bin > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(fs::exists(root / "sub" / "x.bin"));
}
