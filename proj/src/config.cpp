#include "murestitch/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <vector>

#include "murestitch/errors.hpp"

namespace murestitch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Field {
    const char* key;
    std::function<void(RunConfig&, const json&)> set;
    std::function<json(const RunConfig&)> get;
};

template <typename V>
V as(const json& value) {
    if constexpr (std::is_same_v<V, std::string>) {
        if (!value.is_string()) throw std::invalid_argument("expected a string");
    } else if constexpr (std::is_floating_point_v<V>) {
        if (!value.is_number()) throw std::invalid_argument("expected a number");
    } else {
        if (!value.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<V>) {
            if (value.is_number_integer() && !value.is_number_unsigned() && value.get<long long>() < 0)
                throw std::invalid_argument("expected a non-negative integer");
        }
    }
    return value.get<V>();
}

#define FIELD(KEY, MEMBER, TYPE)                                                         \
    Field {                                                                              \
        KEY, [](RunConfig& c, const json& v) { c.MEMBER = static_cast<std::remove_reference_t<decltype(c.MEMBER)>>(as<TYPE>(v)); }, \
            [](const RunConfig& c) { return json(c.MEMBER); }                            \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        FIELD("model.image_size", model.image_size, int),
        Field{"model.cond_dim",
              [](RunConfig& c, const json& v) { c.model.encoder.cond_dim = c.model.denoiser.cond_dim = as<int>(v); },
              [](const RunConfig& c) { return json(c.model.encoder.cond_dim); }},
        FIELD("model.init_seed", model.init_seed, std::uint64_t),
        FIELD("encoder.resolution", model.encoder.resolution, int),
        FIELD("encoder.patch", model.encoder.patch, int),
        FIELD("encoder.embed_dim", model.encoder.embed_dim, int),
        FIELD("encoder.blocks", model.encoder.blocks, int),
        FIELD("encoder.mlp_ratio", model.encoder.mlp_ratio, int),
        FIELD("unet.width1", model.denoiser.widths[0], int),
        FIELD("unet.width2", model.denoiser.widths[1], int),
        FIELD("unet.width3", model.denoiser.widths[2], int),
        FIELD("unet.norm_groups", model.denoiser.norm_groups, int),
        FIELD("diffusion.T", model.timesteps, int),
        FIELD("diffusion.beta_start", model.beta_start, double),
        FIELD("diffusion.beta_end", model.beta_end, double),
        FIELD("train.epochs", train.epochs, int),
        FIELD("train.lr", train.lr, double),
        FIELD("train.batch_size", train.batch_size, int),
        FIELD("train.seed", train.seed, std::uint64_t),
        FIELD("train.k_refs", train.k_refs, int),
        Field{"train.scope", [](RunConfig& c, const json& v) { c.train.scope = finetune::parse_scope(as<std::string>(v)); },
              [](const RunConfig& c) { return json(finetune::to_string(c.train.scope)); }},
        Field{"train.optimizer",
              [](RunConfig& c, const json& v) { c.train.optimizer = finetune::parse_optimizer(as<std::string>(v)); },
              [](const RunConfig& c) { return json(finetune::to_string(c.train.optimizer)); }},
        FIELD("perturb.max_corner_jitter", perturb.max_corner_jitter, double),
        FIELD("perturb.gain_min", perturb.gain_min, double),
        FIELD("perturb.gain_max", perturb.gain_max, double),
        FIELD("perturb.shift_max", perturb.shift_max, double),
        FIELD("sampler.steps", sampler.steps, int),
        FIELD("sampler.eta", sampler.eta, double),
        FIELD("sampler.dilate", sampler.dilate, int),
        FIELD("sampler.feather", sampler.feather, int),
    };
    return table;
}

#undef FIELD

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return &f;
    return nullptr;
}

}  // namespace

void RunConfig::apply(const json& flat) {
    if (!flat.is_object()) throw ConfigError("config must be a flat JSON object");
    for (const auto& [key, value] : flat.items()) {
        const Field* f = find_field(key);
        if (!f) throw ConfigError("unknown config key: " + key);
        try {
            f->set(*this, value);
        } catch (const ConfigError& e) {
            throw ConfigError("invalid value for config key " + key + ": " + e.what());
        } catch (const std::exception& e) {
            throw ConfigError("invalid value for config key " + key + ": " + e.what());
        }
    }
}

json RunConfig::to_json() const {
    json out = json::object();
    for (const auto& f : fields()) out[f.key] = f.get(*this);
    return out;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    perturb.validate();
    sampler.validate(model.timesteps);
    if (model.encoder.resolution < 1) throw ConfigError("encoder.resolution must be positive");
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    RunConfig config;
    config.apply(doc);
    return config;
}

std::optional<fs::path> resolve_config_path(const std::optional<fs::path>& flag) {
    if (flag && !flag->empty()) return flag;
    if (const char* env = std::getenv(kConfigEnvVar); env && *env) return fs::path(env);
    return std::nullopt;
}

diffusion::ModelConfig model_config_from_json(const json& flat) {
    RunConfig config;
    json model_only = json::object();
    for (const auto& [key, value] : flat.items()) {
        if (key.starts_with("model.") || key.starts_with("encoder.") || key.starts_with("unet.") ||
            key.starts_with("diffusion."))
            model_only[key] = value;
    }
    config.apply(model_only);
    config.model.validate();
    return config.model;
}

json model_config_to_json(const diffusion::ModelConfig& model) {
    RunConfig config;
    config.model = model;
    json all = config.to_json();
    json out = json::object();
    for (const auto& [key, value] : all.items()) {
        if (key.starts_with("model.") || key.starts_with("encoder.") || key.starts_with("unet.") ||
            key.starts_with("diffusion."))
            out[key] = value;
    }
    return out;
}

}  // namespace murestitch
