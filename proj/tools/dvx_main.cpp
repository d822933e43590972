// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train / ablate / eval / gradcheck / info.
// Exit codes: 0 success, 2 usage or config error, 3 numeric failure.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dvx/checkpoint.hpp"
#include "dvx/config.hpp"
#include "dvx/dataset.hpp"
#include "dvx/gradsuite.hpp"
#include "dvx/init.hpp"
#include "dvx/metrics.hpp"
#include "dvx/model.hpp"
#include "dvx/training.hpp"

namespace fs = std::filesystem;
using namespace dvx;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct DataSplits {
    std::vector<SamplePair> train, val, test;
};

DataSplits load_data(const RunConfig& cfg) {
    DataSplits out;
    if (cfg.data == "synthetic") {
        out.train = generate_synthetic_pairs(cfg.synthetic_train, cfg.synthetic_classes,
                                             cfg.input_h, cfg.input_w, substream(cfg.seed, 0xd0))
                        .samples;
        out.val = generate_synthetic_pairs(cfg.synthetic_val, cfg.synthetic_classes, cfg.input_h,
                                           cfg.input_w, substream(cfg.seed, 0xd1))
                      .samples;
        out.test = generate_synthetic_pairs(cfg.synthetic_test, cfg.synthetic_classes, cfg.input_h,
                                            cfg.input_w, substream(cfg.seed, 0xd2))
                       .samples;
        return out;
    }
    std::vector<SamplePair> all = load_png_pair_dataset(cfg.data, cfg.input_h, cfg.input_w);
    SplitIndices split = split_by_id_hash(all);
    for (int i : split.train) out.train.push_back(all[i]);
    for (int i : split.val) out.val.push_back(all[i]);
    for (int i : split.test) out.test.push_back(all[i]);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

int cmd_train(const std::string& config_path) {
    RunConfig cfg = parse_config_file(config_path);
    ModelConfig mc = cfg.to_model_config();
    mc.num_classes = cfg.data == "synthetic" ? cfg.synthetic_classes : cfg.num_classes;
    Model model(mc);
    DataSplits data = load_data(cfg);
    if (data.train.empty()) {
        std::cerr << "error: training split is empty\n";
        return kExitConfig;
    }

    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "resolved.config", cfg.resolved());

    TrainConfig tc = cfg.to_train_config();
    tc.verbose = true;
    TrainResult result = train(model, data.train, data.val, tc);
    write_text(fs::path(cfg.out_dir) / "history.csv", history_to_csv(result.history));
    // persist the best-validation-epoch state, not the last one
    if (!result.best_params.empty()) {
        apply_state(model, result.best_params, result.best_buffers);
        result.ema.shadow = result.best_ema;
    }
    save_checkpoint((fs::path(cfg.out_dir) / "best.dvxf").string(), model, &result.ema.shadow);

    std::string summary;
    {
        char buf[256];
        const double val_raw = data.val.empty() ? 0.0 : evaluate_map(model, data.val);
        const double val_ema =
            data.val.empty() ? 0.0 : evaluate_map(model, data.val, &result.ema.shadow);
        const double test_raw = data.test.empty() ? 0.0 : evaluate_map(model, data.test);
        const double test_ema =
            data.test.empty() ? 0.0 : evaluate_map(model, data.test, &result.ema.shadow);
        std::snprintf(buf, sizeof(buf),
                      "best_epoch %d\nval_mAP_raw %.6f\nval_mAP_ema %.6f\ntest_mAP_raw "
                      "%.6f\ntest_mAP_ema %.6f\n",
                      result.best_epoch, val_raw, val_ema, test_raw, test_ema);
        summary = buf;
    }
    write_text(fs::path(cfg.out_dir) / "metrics.txt", summary);
    std::cout << summary;
    return kExitOk;
}

struct AblationRow {
    const char* name;
    bool fdim, mscfe, cafm;
};

// Table-ordered toggle grid: baseline, singles, pairs, all.
constexpr AblationRow kAblationRows[] = {
    {"dual", false, false, false},
    {"+CAFM", false, false, true},
    {"+MSCFE", false, true, false},
    {"+FDIM", true, false, false},
    {"+MSCFE & FDIM", true, true, false},
    {"+CAFM & MSCFE", false, true, true},
    {"+CAFM & FDIM", true, false, true},
    {"+ALL", true, true, true},
};

int cmd_ablate(const std::string& config_path) {
    RunConfig cfg = parse_config_file(config_path);
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "resolved.config", cfg.resolved());
    DataSplits data = load_data(cfg);

    std::string table = "Model            FLOPs        Params      Val_mAP\n";
    std::cout << table;
    for (const AblationRow& row : kAblationRows) {
        RunConfig rc = cfg;
        rc.use_fdim = row.fdim;
        rc.use_mscfe = row.mscfe;
        rc.use_cafm = row.cafm;
        ModelConfig mc = rc.to_model_config();
        mc.num_classes = cfg.data == "synthetic" ? cfg.synthetic_classes : cfg.num_classes;
        Model model(mc);
        Model::Cost cost = model.count_params_flops();
        TrainResult result = train(model, data.train, data.val, rc.to_train_config());
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-16s %-12" PRIu64 " %-11" PRId64 " %.4f\n", row.name,
                      static_cast<std::uint64_t>(cost.flops), cost.params, result.best_val_map);
        table += buf;
        std::cout << buf << std::flush;
    }
    write_text(fs::path(cfg.out_dir) / "ablation.txt", table);
    return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_arg, const std::string& config_path,
             const std::string& split) {
    RunConfig cfg = parse_config_file(config_path);
    if (!data_arg.empty()) cfg.data = data_arg;
    ModelConfig mc = cfg.to_model_config();
    mc.num_classes = cfg.data == "synthetic" ? cfg.synthetic_classes : cfg.num_classes;
    Model model(mc);
    if (!fs::exists(ckpt)) {
        std::cerr << "error: checkpoint " << ckpt << " not found\n";
        return kExitConfig;
    }
    std::map<std::string, Tensor> ema;
    load_checkpoint(ckpt, model, &ema);

    DataSplits data = load_data(cfg);
    const std::vector<SamplePair>* subset = &data.test;
    if (split == "train") subset = &data.train;
    if (split == "val") subset = &data.val;
    if (subset->empty()) {
        std::cerr << "error: selected split is empty\n";
        return kExitConfig;
    }

    std::vector<double> per_class;
    const double map = evaluate_map(model, *subset, nullptr, &per_class);
    std::printf("mAP %.6f over %zu samples (%s split)\n", map, subset->size(), split.c_str());
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c] < 0) {
            std::printf("  class %zu AP: undefined (no positives)\n", c);
        } else {
            std::printf("  class %zu AP: %.6f\n", c, per_class[c]);
        }
    }
    if (!ema.empty()) {
        std::printf("mAP_ema %.6f\n", evaluate_map(model, *subset, &ema));
    }
    return kExitOk;
}

int cmd_gradcheck(double block_tol, double primitive_tol, int instances) {
    auto reports = run_gradient_suite(instances, 1e-5, primitive_tol, block_tol);
    std::printf("%-20s %-10s %-14s %s\n", "op", "instances", "max_rel_err", "status");
    for (const auto& r : reports) {
        std::printf("%-20s %-10d %-14.3e %s\n", r.op.c_str(), r.instances, r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
    }
    return gradient_suite_passed(reports) ? kExitOk : kExitNumeric;
}

int cmd_info(const std::string& config_path) {
    RunConfig cfg = parse_config_file(config_path);
    ModelConfig mc = cfg.to_model_config();
    mc.num_classes = cfg.data == "synthetic" ? cfg.synthetic_classes : cfg.num_classes;
    Model model(mc);
    Model::Cost cost = model.count_params_flops();
    std::printf("params %" PRId64 "\n", cost.params);
    std::printf("flops  %" PRIu64 "\n", static_cast<std::uint64_t>(cost.flops));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-view X-ray fusion: training, evaluation and diagnostics"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, data_arg, split = "test";
    double block_tol = 1e-3, primitive_tol = 1e-5;
    int instances = 20;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", config_path, "config file")->required();

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "train all 8 module-toggle combinations");
    ablate_cmd->add_option("--config", config_path, "config file")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_arg, "'synthetic' or dataset directory");
    eval_cmd->add_option("--config", config_path, "config file")->required();
    eval_cmd->add_option("--split", split, "train|val|test (default test)");

    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    grad_cmd->add_option("--tol", block_tol, "block tolerance (default 1e-3)");
    grad_cmd->add_option("--primitive-tol", primitive_tol, "primitive op tolerance");
    grad_cmd->add_option("--instances", instances, "instances per op");

    CLI::App* info_cmd = app.add_subcommand("info", "print parameter and FLOP counts");
    info_cmd->add_option("--config", config_path, "config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(config_path);
        if (ablate_cmd->parsed()) return cmd_ablate(config_path);
        if (eval_cmd->parsed()) return cmd_eval(ckpt_path, data_arg, config_path, split);
        if (grad_cmd->parsed()) return cmd_gradcheck(block_tol, primitive_tol, instances);
        if (info_cmd->parsed()) return cmd_info(config_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitConfig;
}
