#include "murestitch/model.hpp"

namespace murestitch::diffusion {

void ModelConfig::validate() const {
    if (image_size < 4 || image_size % 4 != 0)
        throw ConfigError("model.image_size must be a positive multiple of 4, got " + std::to_string(image_size));
    encoder.validate();
    denoiser.validate();
    if (encoder.cond_dim != denoiser.cond_dim) {
        throw ConfigError("encoder.cond_dim (" + std::to_string(encoder.cond_dim) +
                          ") must equal denoiser cross-attention width (" + std::to_string(denoiser.cond_dim) + ")");
    }
    make_schedule(timesteps, beta_start, beta_end);
}

template <typename T>
CompositionModel<T>::CompositionModel(const ModelConfig& config)
    : config_(config), params_((config.validate(), config.init_seed)), encoder_(params_, config.encoder),
      denoiser_(params_, config.denoiser) {}

template <typename T>
encoder::ConditioningTokens<T> CompositionModel<T>::condition(const std::vector<dataprep::ReferenceImage>& refs) const {
    std::vector<encoder::ReferenceTokens<T>> sets;
    sets.reserve(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) sets.push_back(encoder_.encode(refs[i], static_cast<int>(i)));
    return encoder::concat_references(sets);
}

template <typename T>
nn::Var<T> CompositionModel<T>::predict_noise(const DenoiserInput<T>& input) const {
    if (input.timestep < 0 || input.timestep >= config_.timesteps) {
        throw ValidationError("timestep " + std::to_string(input.timestep) + " outside [0, " +
                              std::to_string(config_.timesteps) + ")");
    }
    return denoiser_.forward(input);
}

void SamplerConfig::validate(int timesteps) const {
    if (steps < 1 || steps > timesteps) {
        throw ConfigError("sampler.steps must be in [1, " + std::to_string(timesteps) + "], got " +
                          std::to_string(steps));
    }
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("sampler.eta must be in [0, 1]");
    if (dilate < 0 || feather < 0 || feather > dilate) throw ConfigError("sampler feather must be in [0, dilate]");
}

std::vector<int> ddim_timesteps(int timesteps, int steps) {
    if (steps < 1 || steps > timesteps) throw ConfigError("invalid DDIM step count");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    if (steps == 1) return {timesteps - 1};
    for (int i = steps - 1; i >= 0; --i) {
        ts.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (timesteps - 1) / (steps - 1))));
    }
    return ts;
}

template class CompositionModel<float>;
template class CompositionModel<double>;

}  // namespace murestitch::diffusion
