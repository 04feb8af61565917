#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "murestitch/convert.hpp"
#include "murestitch/diffusion.hpp"
#include "murestitch/errors.hpp"

namespace murestitch::diffusion {

struct ModelConfig {
    int image_size = 64;
    encoder::EncoderConfig encoder;
    DenoiserConfig denoiser;
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::uint64_t init_seed = 0;

    void validate() const;
    NoiseSchedule schedule() const { return make_schedule(timesteps, beta_start, beta_end); }
};

// Reference encoder + adaptor + denoiser sharing one parameter registry.
template <typename T>
class CompositionModel {
public:
    explicit CompositionModel(const ModelConfig& config);
    CompositionModel(const CompositionModel&) = delete;
    CompositionModel& operator=(const CompositionModel&) = delete;

    encoder::ConditioningTokens<T> condition(const std::vector<dataprep::ReferenceImage>& refs) const;
    nn::Var<T> predict_noise(const DenoiserInput<T>& input) const;

    const ModelConfig& config() const { return config_; }
    nn::ParameterSet<T>& params() { return params_; }
    const nn::ParameterSet<T>& params() const { return params_; }
    const encoder::ReferenceEncoder<T>& reference_encoder() const { return encoder_; }
    const Denoiser<T>& denoiser() const { return denoiser_; }

private:
    ModelConfig config_;
    nn::ParameterSet<T> params_;
    encoder::ReferenceEncoder<T> encoder_;
    Denoiser<T> denoiser_;
};

// Mean over the batch of ||eps - eps_hat||^2 / numel, with t ~ U[0, T) and
// eps ~ N(0, I) drawn from `rng` in sample order. `Model` needs
// condition(refs) and predict_noise(input), as CompositionModel provides.
template <typename T, typename Model>
nn::Var<T> training_loss(std::span<const dataprep::CompositionSample> batch, const Model& model,
                         const NoiseSchedule& schedule, std::mt19937_64& rng) {
    if (batch.empty()) throw ValidationError("training_loss: empty batch");
    std::uniform_int_distribution<int> pick_t(0, schedule.steps - 1);
    std::normal_distribution<double> gauss(0.0, 1.0);
    nn::Var<T> total;
    for (const auto& s : batch) {
        const int t = pick_t(rng);
        const auto z0 = to_signed_tensor<T>(s.ground_truth);
        nn::Tensor<T> eps(z0.shape);
        for (auto& v : eps.data) v = static_cast<T>(gauss(rng));
        DenoiserInput<T> input;
        input.noisy = forward_diffuse(z0, t, eps, schedule);
        input.background = to_signed_tensor<T>(s.background);
        input.mask = to_tensor<T>(s.mask);
        input.timestep = t;
        input.cond = model.condition(s.references);
        auto loss = nn::mse_loss(model.predict_noise(input), eps);
        total = total ? nn::add(total, loss) : loss;
    }
    return nn::scale(total, T(1) / static_cast<T>(batch.size()));
}

struct SamplerConfig {
    std::uint64_t seed = 0;
    int steps = 50;
    double eta = 0.0;
    int dilate = 4;
    int feather = 4;

    void validate(int timesteps) const;
};

// Descending DDIM timesteps from T-1 to 0, `steps` of them.
std::vector<int> ddim_timesteps(int timesteps, int steps);

// DDIM from z_T ~ N(0, I) (seeded), then pastes the result into `background`
// through the feathered, dilated box mask. `background` is the erased scene.
template <typename T, typename Model>
Image sample(const Model& model, const Image& background, const dataprep::BBox& bbox,
             const encoder::ConditioningTokens<T>& cond, const NoiseSchedule& schedule, const SamplerConfig& config) {
    config.validate(schedule.steps);
    bbox.validate(background.height, background.width);
    nn::NoGradGuard no_grad;
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    DenoiserInput<T> input;
    input.background = to_signed_tensor<T>(background);
    input.mask = to_tensor<T>(dataprep::bbox_mask(bbox, background.height, background.width));
    input.cond = cond;
    nn::Tensor<T> z(input.background.shape);
    for (auto& v : z.data) v = static_cast<T>(gauss(rng));

    const auto ts = ddim_timesteps(schedule.steps, config.steps);
    nn::Tensor<T> x0(z.shape);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const double abar = schedule.alpha_bar(t);
        const double abar_prev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
        input.noisy = z;
        input.timestep = t;
        const auto eps = model.predict_noise(input)->value;
        const double sigma =
            config.eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar)) * std::sqrt(1.0 - abar / abar_prev);
        const double dir = std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma * sigma));
        for (std::size_t k = 0; k < z.size(); ++k) {
            double pred = (static_cast<double>(z[k]) - std::sqrt(1.0 - abar) * eps[k]) / std::sqrt(abar);
            pred = std::clamp(pred, -1.0, 1.0);
            x0[k] = static_cast<T>(pred);
            double next = std::sqrt(abar_prev) * pred + dir * eps[k];
            if (sigma > 0.0) next += sigma * gauss(rng);
            z[k] = static_cast<T>(next);
        }
    }
    const Image generated = from_signed_tensor(x0);
    return composite(generated, background,
                     soft_mask(bbox, background.height, background.width, config.dilate, config.feather));
}

}  // namespace murestitch::diffusion
