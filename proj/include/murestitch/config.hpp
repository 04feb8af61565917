#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "murestitch/finetune.hpp"

namespace murestitch {

// Everything a command may need, addressed by flat dotted keys such as
// "diffusion.T" or "train.lr".
struct RunConfig {
    diffusion::ModelConfig model;
    finetune::TrainConfig train;
    dataprep::PerturbConfig perturb;
    diffusion::SamplerConfig sampler;

    // Applies a flat JSON object. Unknown keys and ill-typed values raise
    // ConfigError naming the key.
    void apply(const nlohmann::json& flat);
    nlohmann::json to_json() const;
    void validate() const;
};

inline constexpr const char* kConfigEnvVar = "MURESTITCH_CONFIG";

RunConfig load_run_config(const std::filesystem::path& path);

// The explicit path if given, else $MURESTITCH_CONFIG if set.
std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::filesystem::path>& flag);

// Model fields only; other keys in `flat` are ignored.
diffusion::ModelConfig model_config_from_json(const nlohmann::json& flat);
nlohmann::json model_config_to_json(const diffusion::ModelConfig& config);

}  // namespace murestitch
