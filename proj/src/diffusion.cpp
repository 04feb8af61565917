#include "murestitch/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "murestitch/errors.hpp"

namespace murestitch::diffusion {

using nn::ParamGroup;
using nn::Var;

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw ConfigError("diffusion.T must be >= 2, got " + std::to_string(steps));
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
        throw ConfigError("beta range must satisfy 0 < beta_start < beta_end < 1");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alpha_bars.resize(static_cast<std::size_t>(steps));
    double running = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double beta = beta_start + (beta_end - beta_start) * t / (steps - 1);
        running *= 1.0 - beta;
        s.betas[static_cast<std::size_t>(t)] = beta;
        s.alpha_bars[static_cast<std::size_t>(t)] = running;
    }
    return s;
}

template <typename T>
nn::Tensor<T> forward_diffuse(const nn::Tensor<T>& z0, int t, const nn::Tensor<T>& eps, const NoiseSchedule& schedule) {
    if (t < 0 || t >= schedule.steps) {
        throw ValidationError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(schedule.steps) + ")");
    }
    if (z0.shape != eps.shape) throw ValidationError("forward_diffuse: noise shape does not match z0");
    const double abar = schedule.alpha_bar(t);
    const T a = static_cast<T>(std::sqrt(abar));
    const T b = static_cast<T>(std::sqrt(1.0 - abar));
    nn::Tensor<T> out(z0.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

template <typename T>
nn::Tensor<T> timestep_embedding(int t, int dim) {
    nn::Tensor<T> out({1, dim});
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / std::max(half, 1));
        out[static_cast<std::size_t>(k)] = static_cast<T>(std::sin(t * freq));
        out[static_cast<std::size_t>(half + k)] = static_cast<T>(std::cos(t * freq));
    }
    return out;
}

void DenoiserConfig::validate() const {
    for (int w : widths)
        if (w < 1) throw ConfigError("denoiser widths must be positive");
    if (cond_dim < 1) throw ConfigError("denoiser cond_dim must be positive");
    if (norm_groups < 1) throw ConfigError("denoiser norm_groups must be positive");
}

template <typename T>
typename Denoiser<T>::ResBlock Denoiser<T>::make_res(nn::ParameterSet<T>& ps, const std::string& name, int in,
                                                     int out) {
    const auto g = ParamGroup::Denoiser;
    ResBlock b;
    b.norm1 = nn::GroupNorm<T>(ps, name + ".norm1", in, config_.norm_groups, g);
    b.conv1 = nn::Conv2d<T>(ps, name + ".conv1", in, out, 3, 1, g);
    b.time_proj = nn::Linear<T>(ps, name + ".time_proj", time_dim_, out, g);
    b.norm2 = nn::GroupNorm<T>(ps, name + ".norm2", out, config_.norm_groups, g);
    b.conv2 = nn::Conv2d<T>(ps, name + ".conv2", out, out, 3, 1, g);
    if (in != out) {
        b.skip = nn::Conv2d<T>(ps, name + ".skip", in, out, 1, 1, g);
        b.has_skip = true;
    }
    return b;
}

template <typename T>
typename Denoiser<T>::CrossAttn Denoiser<T>::make_attn(nn::ParameterSet<T>& ps, const std::string& name,
                                                       int channels) {
    const auto g = ParamGroup::Denoiser;
    CrossAttn a;
    a.norm = nn::GroupNorm<T>(ps, name + ".norm", channels, config_.norm_groups, g);
    a.attn = nn::Attention<T>(ps, name + ".attn", channels, config_.cond_dim, channels, g);
    return a;
}

template <typename T>
Denoiser<T>::Denoiser(nn::ParameterSet<T>& ps, const DenoiserConfig& config) : config_(config) {
    config_.validate();
    const auto g = ParamGroup::Denoiser;
    const int c1 = config.widths[0], c2 = config.widths[1], c3 = config.widths[2];
    time_dim_ = 4 * c1;
    time1_ = nn::Linear<T>(ps, "unet.time.fc1", c1, time_dim_, g);
    time2_ = nn::Linear<T>(ps, "unet.time.fc2", time_dim_, time_dim_, g);
    in_conv_ = nn::Conv2d<T>(ps, "unet.in_conv", kInputChannels, c1, 3, 1, g);
    down1_ = make_res(ps, "unet.down1.res", c1, c1);
    downsample1_ = nn::Conv2d<T>(ps, "unet.down1.downsample", c1, c1, 3, 2, g);
    down2_ = make_res(ps, "unet.down2.res", c1, c2);
    down2_attn_ = make_attn(ps, "unet.down2.xattn", c2);
    downsample2_ = nn::Conv2d<T>(ps, "unet.down2.downsample", c2, c2, 3, 2, g);
    mid1_ = make_res(ps, "unet.mid.res1", c2, c3);
    mid_attn_ = make_attn(ps, "unet.mid.xattn", c3);
    mid2_ = make_res(ps, "unet.mid.res2", c3, c3);
    upsample2_ = nn::Conv2d<T>(ps, "unet.up2.upsample", c3, c3, 3, 1, g);
    up2_ = make_res(ps, "unet.up2.res", c3 + c2, c2);
    up2_attn_ = make_attn(ps, "unet.up2.xattn", c2);
    upsample1_ = nn::Conv2d<T>(ps, "unet.up1.upsample", c2, c2, 3, 1, g);
    up1_ = make_res(ps, "unet.up1.res", c2 + c1, c1);
    out_norm_ = nn::GroupNorm<T>(ps, "unet.out.norm", c1, config_.norm_groups, g);
    out_conv_ = nn::Conv2d<T>(ps, "unet.out.conv", c1, 3, 3, 1, g);
}

template <typename T>
Var<T> Denoiser<T>::run(const ResBlock& b, const Var<T>& x, const Var<T>& temb) const {
    auto h = b.conv1(nn::silu(b.norm1(x)));
    h = nn::add_channel_bias(h, b.time_proj(temb));
    h = b.conv2(nn::silu(b.norm2(h)));
    return nn::add(h, b.has_skip ? b.skip(x) : x);
}

template <typename T>
Var<T> Denoiser<T>::run(const CrossAttn& a, const Var<T>& x, const Var<T>& context) const {
    const int channels = x->value.dim(0), height = x->value.dim(1), width = x->value.dim(2);
    auto tokens = nn::transpose(nn::reshape(a.norm(x), {channels, height * width}));
    auto attended = a.attn(tokens, context);
    return nn::add(x, nn::reshape(nn::transpose(attended), {channels, height, width}));
}

template <typename T>
Var<T> Denoiser<T>::forward(const DenoiserInput<T>& in) const {
    const auto& s = in.noisy.shape;
    if (s.size() != 3 || s[0] != 3) throw ConfigError("noisy input must be [3, H, W], got " + nn::shape_string(s));
    const int height = s[1], width = s[2];
    if (height % 4 != 0 || width % 4 != 0) throw ConfigError("denoiser input size must be divisible by 4");
    if (in.background.shape != s) throw ConfigError("background shape does not match noisy input");
    if (in.mask.shape != nn::Shape{1, height, width}) throw ConfigError("mask must be [1, H, W]");
    if (!in.cond.tokens || in.cond.dim() != config_.cond_dim) {
        throw ConfigError("conditioning width does not match denoiser cross-attention width " +
                          std::to_string(config_.cond_dim));
    }

    const auto temb = nn::silu(time2_(nn::silu(time1_(nn::constant(timestep_embedding<T>(in.timestep, config_.widths[0]))))));
    const auto& context = in.cond.tokens;
    auto x = nn::concat<T>({nn::constant(in.background), nn::constant(in.mask), nn::constant(in.noisy)});

    x = in_conv_(x);
    auto h1 = run(down1_, x, temb);
    auto h2 = run(down2_attn_, run(down2_, downsample1_(h1), temb), context);
    auto m = run(mid1_, downsample2_(h2), temb);
    m = run(mid2_, run(mid_attn_, m, context), temb);
    auto u = upsample2_(nn::upsample_nearest2x(m));
    u = run(up2_attn_, run(up2_, nn::concat<T>({u, h2}), temb), context);
    u = upsample1_(nn::upsample_nearest2x(u));
    u = run(up1_, nn::concat<T>({u, h1}), temb);
    return out_conv_(nn::silu(out_norm_(u)));
}

namespace {

int box_distance(const dataprep::BBox& b, int x, int y) {
    const int dx = std::max({0, b.x - x, x - (b.x + b.w - 1)});
    const int dy = std::max({0, b.y - y, y - (b.y + b.h - 1)});
    return std::max(dx, dy);
}

}  // namespace

Image soft_mask(const dataprep::BBox& bbox, int height, int width, int dilate, int feather) {
    bbox.validate(height, width);
    if (dilate < 0 || feather < 0 || feather > dilate) throw ConfigError("feather must be in [0, dilate]");
    Image m(height, width, 1, 0.0f);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int d = box_distance(bbox, x, y);
            if (d > dilate) continue;
            m.at(y, x, 0) = d <= dilate - feather ? 1.0f
                                                  : static_cast<float>(dilate - d + 1) / static_cast<float>(feather + 1);
        }
    return m;
}

Image dilated_mask(const dataprep::BBox& bbox, int height, int width, int dilate) {
    bbox.validate(height, width);
    Image m(height, width, 1, 0.0f);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) m.at(y, x, 0) = box_distance(bbox, x, y) <= dilate ? 1.0f : 0.0f;
    return m;
}

Image composite(const Image& generated, const Image& background, const Image& soft) {
    if (!generated.same_shape(background) || soft.height != generated.height || soft.width != generated.width)
        throw ValidationError("composite: image sizes differ");
    Image out = background;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const float m = soft.at(y, x, 0);
            if (m == 0.0f) continue;
            for (int c = 0; c < out.channels; ++c)
                out.at(y, x, c) = generated.at(y, x, c) * m + background.at(y, x, c) * (1.0f - m);
        }
    return out;
}

template nn::Tensor<float> forward_diffuse(const nn::Tensor<float>&, int, const nn::Tensor<float>&, const NoiseSchedule&);
template nn::Tensor<double> forward_diffuse(const nn::Tensor<double>&, int, const nn::Tensor<double>&,
                                            const NoiseSchedule&);
template nn::Tensor<float> timestep_embedding<float>(int, int);
template nn::Tensor<double> timestep_embedding<double>(int, int);
template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace murestitch::diffusion
