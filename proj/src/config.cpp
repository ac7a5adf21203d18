#include "pam/config.hpp"

#include <fstream>

#include <fmt/format.h>

#include "pam/errors.hpp"

namespace pam {

using nlohmann::json;

void ExperimentConfig::validate() const {
    setup.stream.validate();
    make_model_spec(setup.stream, setup.model);
    setup.train.validate();
    setup.perturb.validate();
    if (methods.empty()) throw ConfigError("config: methods must not be empty");
    if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
    if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
    if (landscape.n < 2) throw ConfigError("config: landscape.n must be >= 2");
    const auto& p = setup.pretrain;
    if (p.num_classes < 2 || p.samples_per_class < 1 || p.epochs < 0 || p.batch_size < 1 || !(p.lr > 0.0)) {
        throw ConfigError("config: invalid pretrain section");
    }
}

json config_to_json(const ExperimentConfig& cfg) {
    const auto& s = cfg.setup;
    json j;
    j["stream"] = {{"generator", to_string(s.stream.generator)},
                   {"num_tasks", s.stream.num_tasks},
                   {"classes_per_task", s.stream.classes_per_task},
                   {"samples_per_class", s.stream.samples_per_class},
                   {"test_samples_per_class", s.stream.test_samples_per_class},
                   {"input_dim", s.stream.input_dim},
                   {"noise_scale", s.stream.noise_scale},
                   {"radius", s.stream.radius},
                   {"rotation_step_deg", s.stream.rotation_step_deg},
                   {"master_seed", s.stream.master_seed}};
    j["model"] = {{"kind", to_string(s.model.kind)},
                  {"hidden_dim", s.model.hidden_dim},
                  {"activation", to_string(s.model.activation)},
                  {"adapter_rank", s.model.adapter_rank}};
    j["pretrain"] = {{"num_classes", s.pretrain.num_classes},
                     {"samples_per_class", s.pretrain.samples_per_class},
                     {"epochs", s.pretrain.epochs},
                     {"batch_size", s.pretrain.batch_size},
                     {"lr", s.pretrain.lr}};
    j["train"] = {{"epochs", s.train.epochs},
                  {"batch_size", s.train.batch_size},
                  {"lr_adapter", s.train.lr_adapter},
                  {"lr_head", s.train.lr_head},
                  {"weight_decay", s.train.weight_decay},
                  {"beta1", s.train.beta1},
                  {"beta2", s.train.beta2},
                  {"adam_eps", s.train.adam_eps},
                  {"adapter_init_std", s.train.adapter_init_std}};
    j["perturb"] = {{"eps", s.perturb.eps}, {"p0", s.perturb.p0}, {"mode", to_string(s.perturb.mode)}};
    json methods = json::array();
    for (Method m : cfg.methods) methods.push_back(to_string(m));
    j["methods"] = methods;
    j["seeds"] = cfg.seeds;
    j["out_dir"] = cfg.out_dir;
    j["landscape"] = {{"beta_min", cfg.landscape.beta.lo},
                      {"beta_max", cfg.landscape.beta.hi},
                      {"alpha_min", cfg.landscape.alpha.lo},
                      {"alpha_max", cfg.landscape.alpha.hi},
                      {"n", cfg.landscape.n}};
    return j;
}

namespace {

// Overwrites leaves of `base` with `patch`, refusing keys `base` lacks.
void merge_checked(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) {
        throw ConfigError(fmt::format("config: '{}' must be an object", path.empty() ? "<root>" : path));
    }
    for (const auto& [key, value] : patch.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError(fmt::format("config: unknown key '{}'", full));
        json& slot = base[key];
        if (slot.is_object()) {
            merge_checked(slot, value, full);
        } else {
            slot = value;
        }
    }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(fmt::format("config: '{}.{}' has the wrong type", section, key));
    }
}

template <typename T>
T get_top(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(fmt::format("config: '{}' has the wrong type", key));
    }
}

}  // namespace

ExperimentConfig config_from_json(const json& doc) {
    json full = config_to_json(ExperimentConfig{});
    merge_checked(full, doc, "");

    ExperimentConfig cfg;
    auto& s = cfg.setup;
    s.stream.generator = parse_generator(get<std::string>(full, "stream", "generator"));
    s.stream.num_tasks = get<int>(full, "stream", "num_tasks");
    s.stream.classes_per_task = get<int>(full, "stream", "classes_per_task");
    s.stream.samples_per_class = get<int>(full, "stream", "samples_per_class");
    s.stream.test_samples_per_class = get<int>(full, "stream", "test_samples_per_class");
    const int input_dim = get<int>(full, "stream", "input_dim");
    if (input_dim < 1) throw ConfigError("config: stream.input_dim must be positive");
    s.stream.input_dim = static_cast<std::size_t>(input_dim);
    s.stream.noise_scale = get<double>(full, "stream", "noise_scale");
    s.stream.radius = get<double>(full, "stream", "radius");
    s.stream.rotation_step_deg = get<double>(full, "stream", "rotation_step_deg");
    s.stream.master_seed = get<std::uint64_t>(full, "stream", "master_seed");

    s.model.kind = parse_model_kind(get<std::string>(full, "model", "kind"));
    const int hidden = get<int>(full, "model", "hidden_dim");
    const int rank = get<int>(full, "model", "adapter_rank");
    if (hidden < 1 || rank < 1) throw ConfigError("config: model.hidden_dim and model.adapter_rank must be positive");
    s.model.hidden_dim = static_cast<std::size_t>(hidden);
    s.model.adapter_rank = static_cast<std::size_t>(rank);
    s.model.activation = parse_activation(get<std::string>(full, "model", "activation"));

    s.pretrain.num_classes = get<int>(full, "pretrain", "num_classes");
    s.pretrain.samples_per_class = get<int>(full, "pretrain", "samples_per_class");
    s.pretrain.epochs = get<int>(full, "pretrain", "epochs");
    s.pretrain.batch_size = get<int>(full, "pretrain", "batch_size");
    s.pretrain.lr = get<double>(full, "pretrain", "lr");

    s.train.epochs = get<int>(full, "train", "epochs");
    s.train.batch_size = get<int>(full, "train", "batch_size");
    s.train.lr_adapter = get<double>(full, "train", "lr_adapter");
    s.train.lr_head = get<double>(full, "train", "lr_head");
    s.train.weight_decay = get<double>(full, "train", "weight_decay");
    s.train.beta1 = get<double>(full, "train", "beta1");
    s.train.beta2 = get<double>(full, "train", "beta2");
    s.train.adam_eps = get<double>(full, "train", "adam_eps");
    s.train.adapter_init_std = get<double>(full, "train", "adapter_init_std");

    s.perturb.eps = get<double>(full, "perturb", "eps");
    s.perturb.p0 = get<double>(full, "perturb", "p0");
    s.perturb.mode = parse_perturb_mode(get<std::string>(full, "perturb", "mode"));

    cfg.methods.clear();
    for (const auto& m : get_top<std::vector<std::string>>(full, "methods")) cfg.methods.push_back(parse_method(m));
    cfg.seeds = get_top<std::vector<std::uint64_t>>(full, "seeds");
    cfg.out_dir = get_top<std::string>(full, "out_dir");

    cfg.landscape.beta = {get<double>(full, "landscape", "beta_min"), get<double>(full, "landscape", "beta_max")};
    cfg.landscape.alpha = {get<double>(full, "landscape", "alpha_min"), get<double>(full, "landscape", "alpha_max")};
    cfg.landscape.n = get<int>(full, "landscape", "n");
    return cfg;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(fmt::format("override '{}' is not of the form section.key=value", assignment));
    }
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    // Check the path against the full schema so typos fail even when the
    // file omits the section.
    json probe = config_to_json(ExperimentConfig{});
    json patch = value;
    std::size_t end = path.size();
    while (true) {
        const auto dot = path.rfind('.', end - 1);
        const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                            end - (dot == std::string::npos ? 0 : dot + 1));
        if (key.empty()) throw ConfigError(fmt::format("override '{}' has an empty key", assignment));
        patch = json{{key, patch}};
        if (dot == std::string::npos) break;
        end = dot;
    }
    merge_checked(probe, patch, "");
    if (!doc.is_object()) doc = json::object();
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
        node = &(*node)[key];
        start = dot + 1;
    }
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError(fmt::format("'{}' is not valid JSON", path.string()));
    return doc;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json doc;
    try {
        doc = read_json_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    for (const auto& o : overrides) apply_override(doc, o);
    ExperimentConfig cfg = config_from_json(doc);
    cfg.validate();
    return cfg;
}

}  // namespace pam
