// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dvx/config.hpp"

using namespace dvx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, const fs::path& dir, std::string* output = nullptr) {
    const fs::path out_file = dir / "cli_output.txt";
    const std::string cmd = std::string(DVX_CLI_PATH) + " " + args + " > " + out_file.string() +
                            " 2>&1";
    const int rc = std::system(cmd.c_str());
    if (output != nullptr) {
        std::ifstream is(out_file);
        std::stringstream ss;
        ss << is.rdbuf();
        *output = ss.str();
    }
    return WEXITSTATUS(rc);
}

std::string tiny_train_config(const fs::path& out_dir, int epochs, std::uint64_t seed) {
    std::ostringstream os;
    os << "widths = 8,8,8,8\n"
       << "depths = 1,1,1,1\n"
       << "input_h = 32\ninput_w = 32\n"
       << "heads = 2\nfdim_reduction = 2\ncbam_reduction = 4\n"
       << "batch_size = 8\n"
       << "epochs = " << epochs << "\n"
       << "warmup_epochs = 0\n"
       << "base_lr = 1e-3\n"
       << "data = synthetic\n"
       << "synthetic_classes = 4\n"
       << "synthetic_train = 16\nsynthetic_val = 8\nsynthetic_test = 8\n"
       << "seed = " << seed << "\n"
       << "out_dir = " << out_dir.string() << "\n";
    return os.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config parser round trips and rejects junk") {
    RunConfig cfg = parse_config_text("widths = 8, 8, 8, 8\nepochs=3\n# comment\n\nseed = 9\n");
    CHECK(cfg.widths == std::vector<int>{8, 8, 8, 8});
    CHECK(cfg.epochs == 3);
    CHECK(cfg.seed == 9);

    CHECK_THROWS_WITH_AS(parse_config_text("nonsense_key = 1\n"),
                         doctest::Contains("nonsense_key"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("epochs 3\n"), doctest::Contains(":1"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("epochs = banana\n"), doctest::Contains("epochs"),
                         ConfigError);

    RunConfig echo = parse_config_text(cfg.resolved());
    CHECK(echo.resolved() == cfg.resolved());
}

TEST_CASE("cli train smoke test: exit 0, history rows, artifacts present") {
    auto dir = temp_dir("dvx_cli_train");
    const fs::path run_dir = dir / "run";
    std::ofstream(dir / "cfg.txt") << tiny_train_config(run_dir, 2, 5);
    std::string out;
    const int rc = run_cli("train --config " + (dir / "cfg.txt").string(), dir, &out);
    INFO(out);
    CHECK(rc == 0);
    CHECK(fs::exists(run_dir / "history.csv"));
    CHECK(fs::exists(run_dir / "best.dvxf"));
    CHECK(fs::exists(run_dir / "resolved.config"));
    const std::string history = read_file(run_dir / "history.csv");
    CHECK(std::count(history.begin(), history.end(), '\n') == 3);  // header + 2 epochs
    fs::remove_all(dir);
}

TEST_CASE("cli determinism: same config and seed give byte-identical history") {
    auto dir = temp_dir("dvx_cli_det");
    const fs::path run_a = dir / "a", run_b = dir / "b";
    std::ofstream(dir / "a.txt") << tiny_train_config(run_a, 2, 123);
    std::ofstream(dir / "b.txt") << tiny_train_config(run_b, 2, 123);
    CHECK(run_cli("train --config " + (dir / "a.txt").string(), dir) == 0);
    CHECK(run_cli("train --config " + (dir / "b.txt").string(), dir) == 0);
    CHECK(read_file(run_a / "history.csv") == read_file(run_b / "history.csv"));
    CHECK(read_file(run_a / "history.csv") != "");
    fs::remove_all(dir);
}

TEST_CASE("cli rejects unknown config keys with exit 2 naming the key") {
    auto dir = temp_dir("dvx_cli_badkey");
    std::ofstream(dir / "cfg.txt") << "bogus_key = 1\n";
    std::string out;
    const int rc = run_cli("train --config " + (dir / "cfg.txt").string(), dir, &out);
    CHECK(rc == 2);
    CHECK(out.find("bogus_key") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli eval reproduces the memorized training set") {
    auto dir = temp_dir("dvx_cli_eval");
    const fs::path run_dir = dir / "run";
    // overfit 8 samples hard, then eval on the train split
    std::ostringstream cfg;
    cfg << "widths = 8,8,8,8\ndepths = 1,1,1,1\ninput_h = 32\ninput_w = 32\n"
        << "heads = 2\nfdim_reduction = 2\ncbam_reduction = 4\n"
        << "use_fdim = false\nuse_mscfe = false\nuse_cafm = false\n"
        << "batch_size = 8\nepochs = 150\nwarmup_epochs = 5\nbase_lr = 1e-2\n"
        << "weight_decay = 0\n"
        << "data = synthetic\nsynthetic_classes = 4\n"
        << "synthetic_train = 8\nsynthetic_val = 8\nsynthetic_test = 8\n"
        << "seed = 11\nout_dir = " << run_dir.string() << "\n";
    std::ofstream(dir / "cfg.txt") << cfg.str();
    std::string out;
    REQUIRE(run_cli("train --config " + (dir / "cfg.txt").string(), dir, &out) == 0);

    const int rc = run_cli("eval --ckpt " + (run_dir / "best.dvxf").string() + " --config " +
                               (dir / "cfg.txt").string() + " --split train",
                           dir, &out);
    INFO(out);
    CHECK(rc == 0);
    const auto pos = out.find("mAP ");
    REQUIRE(pos != std::string::npos);
    const double map = std::stod(out.substr(pos + 4));
    CHECK(map > 0.99);
    fs::remove_all(dir);
}

TEST_CASE("cli eval exits 2 when the checkpoint is missing") {
    auto dir = temp_dir("dvx_cli_noeval");
    std::ofstream(dir / "cfg.txt") << tiny_train_config(dir / "run", 1, 3);
    std::string out;
    const int rc = run_cli("eval --ckpt " + (dir / "nope.dvxf").string() + " --config " +
                               (dir / "cfg.txt").string(),
                           dir, &out);
    CHECK(rc == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli info reports strictly larger counts for +ALL than baseline") {
    auto dir = temp_dir("dvx_cli_info");
    auto write_cfg = [&](const char* name, bool on) {
        std::ofstream os(dir / name);
        os << "widths = 8,8,8,8\ndepths = 1,1,1,1\ninput_h = 32\ninput_w = 32\n"
           << "heads = 2\nfdim_reduction = 2\ncbam_reduction = 4\n"
           << "synthetic_classes = 4\n"
           << "use_fdim = " << (on ? "true" : "false") << "\n"
           << "use_mscfe = " << (on ? "true" : "false") << "\n"
           << "use_cafm = " << (on ? "true" : "false") << "\n";
    };
    write_cfg("base.txt", false);
    write_cfg("all.txt", true);
    std::string base_out, all_out;
    REQUIRE(run_cli("info --config " + (dir / "base.txt").string(), dir, &base_out) == 0);
    REQUIRE(run_cli("info --config " + (dir / "all.txt").string(), dir, &all_out) == 0);
    auto grab = [](const std::string& s, const char* key) {
        const auto pos = s.find(key);
        REQUIRE(pos != std::string::npos);
        return std::stoll(s.substr(pos + std::string(key).size()));
    };
    CHECK(grab(all_out, "params ") > grab(base_out, "params "));
    CHECK(grab(all_out, "flops  ") > grab(base_out, "flops  "));
    fs::remove_all(dir);
}

TEST_CASE("cli gradcheck passes on a reduced instance budget") {
    auto dir = temp_dir("dvx_cli_grad");
    std::string out;
    const int rc = run_cli("gradcheck --instances 3", dir, &out);
    INFO(out);
    CHECK(rc == 0);
    CHECK(out.find("conv2d") != std::string::npos);
    CHECK(out.find("FAIL") == std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli ablate emits an 8-row table with monotone param accounting") {
    auto dir = temp_dir("dvx_cli_ablate");
    const fs::path run_dir = dir / "run";
    // keep this tiny: 1 epoch, 16 samples; the desk-scale experiment lives in
    // the acceptance suite
    std::ostringstream cfg;
    cfg << "widths = 8,8,8,8\ndepths = 1,1,1,1\ninput_h = 32\ninput_w = 32\n"
        << "heads = 2\nfdim_reduction = 2\ncbam_reduction = 4\n"
        << "batch_size = 8\nepochs = 1\nwarmup_epochs = 0\nbase_lr = 1e-3\n"
        << "data = synthetic\nsynthetic_classes = 4\n"
        << "synthetic_train = 16\nsynthetic_val = 8\nsynthetic_test = 8\n"
        << "seed = 2\nout_dir = " << run_dir.string() << "\n";
    std::ofstream(dir / "cfg.txt") << cfg.str();
    std::string out;
    const int rc = run_cli("ablate --config " + (dir / "cfg.txt").string(), dir, &out);
    INFO(out);
    CHECK(rc == 0);
    const std::string table = read_file(run_dir / "ablation.txt");
    CHECK(std::count(table.begin(), table.end(), '\n') == 9);  // header + 8 rows

    // params strictly increase from the baseline row to +ALL
    std::istringstream is(table);
    std::string line;
    std::getline(is, line);  // header
    long long base_params = -1, all_params = -1, line_no = 0;
    std::vector<long long> params;
    while (std::getline(is, line)) {
        ++line_no;
        // columns: name (padded), flops, params, val_mAP
        std::istringstream ls(line.substr(16));
        long long flops, p;
        double map;
        ls >> flops >> p >> map;
        params.push_back(p);
        if (line_no == 1) base_params = p;
        if (line_no == 8) all_params = p;
    }
    REQUIRE(params.size() == 8);
    CHECK(all_params > base_params);
    for (std::size_t i = 1; i < params.size(); ++i) CHECK(params[i] > base_params);
    for (std::size_t i = 0; i + 1 < params.size(); ++i) CHECK(params[i] < all_params);
    fs::remove_all(dir);
}
