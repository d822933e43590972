// SPDX-License-Identifier: Apache-2.0
#include "dvx/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dvx {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(std::stoi(trim(item)));
    }
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

std::string join(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& key_table() {
    static const std::map<std::string, Setter> table = {
        {"widths", [](RunConfig& c, const std::string& v) { c.widths = parse_int_list(v); }},
        {"depths", [](RunConfig& c, const std::string& v) { c.depths = parse_int_list(v); }},
        {"input_h", [](RunConfig& c, const std::string& v) { c.input_h = std::stoi(v); }},
        {"input_w", [](RunConfig& c, const std::string& v) { c.input_w = std::stoi(v); }},
        {"num_classes", [](RunConfig& c, const std::string& v) { c.num_classes = std::stoi(v); }},
        {"heads", [](RunConfig& c, const std::string& v) { c.heads = std::stoi(v); }},
        {"fdim_reduction",
         [](RunConfig& c, const std::string& v) { c.fdim_reduction = std::stoi(v); }},
        {"cbam_reduction",
         [](RunConfig& c, const std::string& v) { c.cbam_reduction = std::stoi(v); }},
        {"use_fdim", [](RunConfig& c, const std::string& v) { c.use_fdim = parse_bool(v); }},
        {"use_mscfe", [](RunConfig& c, const std::string& v) { c.use_mscfe = parse_bool(v); }},
        {"use_cafm", [](RunConfig& c, const std::string& v) { c.use_cafm = parse_bool(v); }},
        {"fdim_cross_conditioning",
         [](RunConfig& c, const std::string& v) { c.fdim_cross_conditioning = parse_bool(v); }},
        {"mscfe_after_stage1",
         [](RunConfig& c, const std::string& v) { c.mscfe_after_stage1 = parse_bool(v); }},
        {"batch_size", [](RunConfig& c, const std::string& v) { c.batch_size = std::stoi(v); }},
        {"epochs", [](RunConfig& c, const std::string& v) { c.epochs = std::stoi(v); }},
        {"base_lr", [](RunConfig& c, const std::string& v) { c.base_lr = std::stod(v); }},
        {"min_lr", [](RunConfig& c, const std::string& v) { c.min_lr = std::stod(v); }},
        {"warmup_epochs",
         [](RunConfig& c, const std::string& v) { c.warmup_epochs = std::stoi(v); }},
        {"weight_decay",
         [](RunConfig& c, const std::string& v) { c.weight_decay = std::stod(v); }},
        {"beta1", [](RunConfig& c, const std::string& v) { c.beta1 = std::stod(v); }},
        {"beta2", [](RunConfig& c, const std::string& v) { c.beta2 = std::stod(v); }},
        {"adam_eps", [](RunConfig& c, const std::string& v) { c.adam_eps = std::stod(v); }},
        {"ema_decay", [](RunConfig& c, const std::string& v) { c.ema_decay = std::stod(v); }},
        {"data", [](RunConfig& c, const std::string& v) { c.data = v; }},
        {"synthetic_classes",
         [](RunConfig& c, const std::string& v) { c.synthetic_classes = std::stoi(v); }},
        {"synthetic_train",
         [](RunConfig& c, const std::string& v) { c.synthetic_train = std::stoi(v); }},
        {"synthetic_val",
         [](RunConfig& c, const std::string& v) { c.synthetic_val = std::stoi(v); }},
        {"synthetic_test",
         [](RunConfig& c, const std::string& v) { c.synthetic_test = std::stoi(v); }},
        {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
        {"seed", [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }},
    };
    return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto& table = key_table();
        auto it = table.find(key);
        if (it == table.end()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key +
                              "'");
        }
        try {
            it->second(cfg, value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad value for '" + key +
                              "': " + e.what());
        }
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot open config file " + path);
    }
    std::stringstream buffer;
    buffer << is.rdbuf();
    return parse_config_text(buffer.str(), path);
}

ModelConfig RunConfig::to_model_config() const {
    ModelConfig m;
    m.widths = widths;
    m.depths = depths;
    m.input_h = input_h;
    m.input_w = input_w;
    m.num_classes = num_classes;
    m.heads = heads;
    m.fdim_reduction = fdim_reduction;
    m.cbam_reduction = cbam_reduction;
    m.use_fdim = use_fdim;
    m.use_mscfe = use_mscfe;
    m.use_cafm = use_cafm;
    m.fdim_cross_conditioning = fdim_cross_conditioning;
    m.mscfe_after_stage1 = mscfe_after_stage1;
    m.seed = seed;
    return m;
}

ScheduleConfig RunConfig::to_schedule() const {
    return ScheduleConfig{base_lr, warmup_epochs, epochs, min_lr};
}

TrainConfig RunConfig::to_train_config() const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.schedule = to_schedule();
    t.optimizer = AdamWConfig{beta1, beta2, adam_eps, weight_decay};
    t.ema_decay = ema_decay;
    t.seed = seed;
    return t;
}

std::string RunConfig::resolved() const {
    std::ostringstream os;
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    os << "widths = " << join(widths) << "\n";
    os << "depths = " << join(depths) << "\n";
    os << "input_h = " << input_h << "\n";
    os << "input_w = " << input_w << "\n";
    os << "num_classes = " << num_classes << "\n";
    os << "heads = " << heads << "\n";
    os << "fdim_reduction = " << fdim_reduction << "\n";
    os << "cbam_reduction = " << cbam_reduction << "\n";
    os << "use_fdim = " << (use_fdim ? "true" : "false") << "\n";
    os << "use_mscfe = " << (use_mscfe ? "true" : "false") << "\n";
    os << "use_cafm = " << (use_cafm ? "true" : "false") << "\n";
    os << "fdim_cross_conditioning = " << (fdim_cross_conditioning ? "true" : "false") << "\n";
    os << "mscfe_after_stage1 = " << (mscfe_after_stage1 ? "true" : "false") << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "epochs = " << epochs << "\n";
    os << "base_lr = " << num(base_lr) << "\n";
    os << "min_lr = " << num(min_lr) << "\n";
    os << "warmup_epochs = " << warmup_epochs << "\n";
    os << "weight_decay = " << num(weight_decay) << "\n";
    os << "beta1 = " << num(beta1) << "\n";
    os << "beta2 = " << num(beta2) << "\n";
    os << "adam_eps = " << num(adam_eps) << "\n";
    os << "ema_decay = " << num(ema_decay) << "\n";
    os << "data = " << data << "\n";
    os << "synthetic_classes = " << synthetic_classes << "\n";
    os << "synthetic_train = " << synthetic_train << "\n";
    os << "synthetic_val = " << synthetic_val << "\n";
    os << "synthetic_test = " << synthetic_test << "\n";
    os << "out_dir = " << out_dir << "\n";
    os << "seed = " << seed << "\n";
    return os.str();
}

}  // namespace dvx
