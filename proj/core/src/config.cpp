#include "hkd/config.hpp"

#include <fstream>
#include <sstream>

namespace hkd {

const std::map<std::string, std::string>& RunConfig::defaults() {
    static const std::map<std::string, std::string> d = {
        {"model.channels", "1"},
        {"model.size", "16"},
        {"model.levels", "3"},
        {"model.latent_channels", "8,16,32"},
        {"model.hidden_widths", "16,32,64"},
        {"model.epsilon", "0.02"},
        {"model.horizon", "3.0"},
        {"model.seed", "0"},
        {"teacher.kind", "procedural"},  // procedural | single
        {"teacher.components", "8"},
        {"teacher.std", "0.1"},
        {"teacher.seed", "0"},
        {"teacher.n_traj", "256"},
        {"teacher.n_grid", "9"},
        {"teacher.substeps", "64"},
        {"train.batch", "16"},
        {"train.samples", "4"},
        {"train.epochs", "4"},
        {"train.iters_per_epoch", "0"},  // 0 = n_traj / batch
        {"train.lr", "0.001"},
        {"train.beta1", "0.9"},
        {"train.beta2", "0.999"},
        {"train.eps", "1e-8"},
        {"train.decay", "0.95"},
        {"train.seed", "0"},
        {"train.log_interval", "10"},
        {"metrics.feature_channels1", "8"},
        {"metrics.feature_channels2", "16"},
        {"metrics.feature_seed", "71"},
        {"analysis.t_edit", "-1"},  // -1 = midpoint (horizon+epsilon)/2
        {"analysis.bands", "3"},
    };
    return d;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    cfg.text_ = text;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) +
                               ": expected key=value, got '" + s + "'");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (defaults().find(key) == defaults().end())
            throw config_error("unknown config key '" + key + "'");
        if (cfg.values_.count(key))
            throw config_error("duplicate config key '" + key + "'");
        cfg.values_[key] = val;
    }
    return cfg;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    auto dit = defaults().find(key);
    if (dit == defaults().end()) throw config_error("unknown config key '" + key + "'");
    return dit->second;
}

int RunConfig::get_int(const std::string& key) const {
    try {
        return std::stoi(get(key));
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "' is not an integer: " + get(key));
    }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    try {
        return std::stoull(get(key));
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "' is not an unsigned integer: " + get(key));
    }
}

double RunConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "' is not a number: " + get(key));
    }
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::istringstream ss(get(key));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "' has a non-integer entry: " + tok);
        }
    }
    if (out.empty()) throw config_error("config key '" + key + "' is an empty list");
    return out;
}

}  // namespace hkd
