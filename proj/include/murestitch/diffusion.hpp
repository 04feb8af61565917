#pragma once

#include <vector>

#include "murestitch/dataprep.hpp"
#include "murestitch/encoder.hpp"
#include "murestitch/nn/layers.hpp"

namespace murestitch::diffusion {

struct NoiseSchedule {
    int steps = 0;  // T
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> betas;
    std::vector<double> alpha_bars;

    double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t)); }
};

// Linear betas from beta_start to beta_end; alpha_bars[t] = prod_{s<=t}(1 - beta_s).
NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <typename T>
nn::Tensor<T> forward_diffuse(const nn::Tensor<T>& z0, int t, const nn::Tensor<T>& eps, const NoiseSchedule& schedule);

// Sinusoidal embedding of an integer timestep, [1, dim].
template <typename T>
nn::Tensor<T> timestep_embedding(int t, int dim);

struct DenoiserConfig {
    int widths[3] = {64, 128, 256};
    int cond_dim = 128;
    int norm_groups = 8;

    void validate() const;
};

// Channel layout of the first convolution: [background(3) | mask(1) | noisy(3)].
inline constexpr int kInputChannels = 7;

template <typename T>
struct DenoiserInput {
    nn::Tensor<T> noisy;       // [3, H, W], z_t
    nn::Tensor<T> background;  // [3, H, W] in [-1, 1]
    nn::Tensor<T> mask;        // [1, H, W] in {0, 1}
    int timestep = 0;
    encoder::ConditioningTokens<T> cond;
};

// Three-level U-Net. Every residual block receives the timestep embedding;
// the two lower resolutions cross-attend to the conditioning tokens; the
// encoder path feeds skip connections into the decoder at matching levels.
template <typename T>
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(nn::ParameterSet<T>& params, const DenoiserConfig& config);

    nn::Var<T> forward(const DenoiserInput<T>& input) const;

    const DenoiserConfig& config() const { return config_; }

private:
    struct ResBlock {
        nn::GroupNorm<T> norm1, norm2;
        nn::Conv2d<T> conv1, conv2;
        nn::Linear<T> time_proj;
        nn::Conv2d<T> skip;
        bool has_skip = false;
    };
    struct CrossAttn {
        nn::GroupNorm<T> norm;
        nn::Attention<T> attn;
    };

    ResBlock make_res(nn::ParameterSet<T>& ps, const std::string& name, int in, int out);
    CrossAttn make_attn(nn::ParameterSet<T>& ps, const std::string& name, int channels);
    nn::Var<T> run(const ResBlock& b, const nn::Var<T>& x, const nn::Var<T>& temb) const;
    nn::Var<T> run(const CrossAttn& a, const nn::Var<T>& x, const nn::Var<T>& context) const;

    DenoiserConfig config_;
    int time_dim_ = 0;
    nn::Linear<T> time1_, time2_;
    nn::Conv2d<T> in_conv_;
    ResBlock down1_, down2_, mid1_, mid2_, up2_, up1_;
    CrossAttn down2_attn_, mid_attn_, up2_attn_;
    nn::Conv2d<T> downsample1_, downsample2_, upsample2_, upsample1_;
    nn::GroupNorm<T> out_norm_;
    nn::Conv2d<T> out_conv_;
};

// Bbox dilated by `dilate` px with a linear ramp over the outer `feather` px:
// 1 inside the box, (dilate - d + 1) / (feather + 1) in the ramp, 0 beyond
// the dilated box, where d is the Chebyshev distance to the box.
Image soft_mask(const dataprep::BBox& bbox, int height, int width, int dilate = 4, int feather = 4);

// Binary mask of the dilated box.
Image dilated_mask(const dataprep::BBox& bbox, int height, int width, int dilate = 4);

// generated * m + background * (1 - m)
Image composite(const Image& generated, const Image& background, const Image& soft);

}  // namespace murestitch::diffusion
