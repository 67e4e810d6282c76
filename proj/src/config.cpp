#include "ssml/config.hpp"

#include <fstream>
#include <sstream>

namespace ssml {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config: bad boolean '" + v + "'");
}

}  // namespace

std::vector<std::string> split_list(const std::string& s, char delim) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, delim)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap map;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw FormatError("config line " + std::to_string(lineno) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        map[section.empty() ? key : section + "." + key] = val;
    }
    return map;
}

ConfigMap parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void apply_config(ExperimentConfig& cfg, const ConfigMap& map) {
    for (const auto& [key, val] : map) {
        if (key == "synth.subjects") cfg.synth.n_subjects = std::stoi(val);
        else if (key == "synth.classes") cfg.synth.n_classes = std::stoi(val);
        else if (key == "synth.channels") cfg.synth.channels = std::stoi(val);
        else if (key == "synth.time_len") cfg.synth.time_len = std::stoi(val);
        else if (key == "synth.samples_per_subject") cfg.synth.samples_per_subject = std::stoi(val);
        else if (key == "synth.shift_scale") cfg.synth.shift_scale = std::stof(val);
        else if (key == "synth.noise_sd") cfg.synth.noise_sd = std::stof(val);
        else if (key == "synth.seed") cfg.synth.seed = std::stoull(val);
        else if (key == "model.kind") cfg.model = model_kind_from_string(val);
        else if (key == "meta.alpha") cfg.meta.alpha = std::stof(val);
        else if (key == "meta.beta") cfg.meta.beta = std::stof(val);
        else if (key == "meta.subjects_per_batch") cfg.meta.subjects_per_batch = std::stoi(val);
        else if (key == "meta.inner_steps") cfg.meta.inner_steps = std::stoi(val);
        else if (key == "meta.inner_batch") cfg.meta.inner_batch = std::stoi(val);
        else if (key == "meta.max_epochs") cfg.meta.max_epochs = std::stoi(val);
        else if (key == "meta.patience") cfg.meta.patience = std::stoi(val);
        else if (key == "meta.val_fraction") cfg.meta.val_fraction = std::stof(val);
        else if (key == "meta.subject_level_val") cfg.meta.subject_level_val = parse_bool(val);
        else if (key == "meta.center_lr") cfg.meta.center_lr = std::stof(val);
        else if (key == "meta.center_lambda") cfg.meta.center_lambda = std::stof(val);
        else if (key == "meta.ce_sum") cfg.meta.ce_sum = parse_bool(val);
        else if (key == "adapt.epsilon") cfg.adapt.epsilon = std::stof(val);
        else if (key == "adapt.sigma") cfg.adapt.sigma = std::stof(val);
        else if (key == "adapt.gamma") cfg.adapt.gamma = std::stof(val);
        else if (key == "adapt.alpha") cfg.adapt.alpha = std::stof(val);
        else if (key == "adapt.weight_decay") cfg.adapt.weight_decay = std::stof(val);
        else if (key == "adapt.outer_epochs") cfg.adapt.outer_epochs = std::stoi(val);
        else if (key == "adapt.n_shot") cfg.adapt.n_shot = std::stoi(val);
        else if (key == "adapt.batches_per_epoch") cfg.adapt.batches_per_epoch = std::stoi(val);
        else if (key == "adapt.max_batch") cfg.adapt.max_batch = std::stoi(val);
        else if (key == "adapt.refresh_support") cfg.adapt.refresh_support = parse_bool(val);
        else if (key == "adapt.ce_sum") cfg.adapt.ce_sum = parse_bool(val);
        else if (key == "experiment.dataset") cfg.dataset_path = val;
        else if (key == "experiment.methods") {
            cfg.methods.clear();
            for (const std::string& m : split_list(val)) cfg.methods.push_back(method_from_string(m));
        } else if (key == "experiment.shots") {
            cfg.shots.clear();
            for (const std::string& s : split_list(val)) cfg.shots.push_back(std::stoi(s));
        } else if (key == "experiment.seeds") {
            cfg.seeds.clear();
            for (const std::string& s : split_list(val)) cfg.seeds.push_back(std::stoull(s));
        } else if (key == "experiment.eval_fraction") cfg.eval_fraction = std::stod(val);
        else if (key == "experiment.threads") cfg.threads = std::stoi(val);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

}  // namespace ssml
