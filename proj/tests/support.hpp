#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "murestitch/dataprep.hpp"
#include "murestitch/model.hpp"
#include "murestitch/nn/ops.hpp"

namespace testing {

namespace nn = murestitch::nn;

inline nn::Tensor<double> random_tensor(nn::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    nn::Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = g(rng);
    return t;
}

inline murestitch::Image random_image(int h, int w, int c, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    murestitch::Image img(h, w, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

// Largest relative error between analytic and central-difference gradients
// of sum(w * f(inputs)) over every input element; w is a fixed random weighting.
inline double max_grad_error(const std::vector<nn::Var<double>>& inputs,
                             const std::function<nn::Var<double>()>& f, std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    const auto probe = f();
    const auto weights = random_tensor(probe->value.shape, rng);
    auto objective = [&] {
        const auto out = f();
        double s = 0.0;
        for (std::size_t i = 0; i < out->value.size(); ++i) s += weights[i] * out->value[i];
        return s;
    };
    for (auto& in : inputs) in->zero_grad();
    {
        const int n = static_cast<int>(weights.size());
        auto w = nn::constant(nn::Tensor<double>({1, n}, weights.data));
        auto y = nn::reshape(f(), {1, n});
        nn::backward(nn::linear<double>(y, w, nullptr));
    }
    double worst = 0.0;
    const double h = 1e-5;
    for (auto& in : inputs) {
        for (std::size_t i = 0; i < in->value.size(); ++i) {
            const double v = in->value[i];
            in->value[i] = v + h;
            const double up = objective();
            in->value[i] = v - h;
            const double down = objective();
            in->value[i] = v;
            const double fd = (up - down) / (2 * h);
            const double an = in->grad.size() ? in->grad[i] : 0.0;
            worst = std::max(worst, std::abs(fd - an) / std::max(1e-4, std::abs(fd) + std::abs(an)));
        }
    }
    return worst;
}

// Direct linear transform: solves the 8x8 system for the homography with h33 = 1.
inline murestitch::dataprep::Homography dlt(const std::array<murestitch::dataprep::Point, 4>& src,
                                            const std::array<murestitch::dataprep::Point, 4>& dst) {
    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
        a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
        a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
        b(2 * i) = u;
        b(2 * i + 1) = v;
    }
    const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
    return {h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0};
}

// 16x16 model with a few tens of thousands of parameters.
inline murestitch::diffusion::ModelConfig tiny_config(std::uint64_t seed = 3) {
    murestitch::diffusion::ModelConfig mc;
    mc.image_size = 16;
    mc.encoder.resolution = 16;
    mc.encoder.patch = 4;
    mc.encoder.embed_dim = 16;
    mc.encoder.cond_dim = 16;
    mc.denoiser.cond_dim = 16;
    mc.denoiser.widths[0] = 8;
    mc.denoiser.widths[1] = 16;
    mc.denoiser.widths[2] = 16;
    mc.denoiser.norm_groups = 4;
    mc.init_seed = seed;
    return mc;
}

inline std::vector<murestitch::dataprep::ReferenceImage> random_refs(int k, int resolution, std::mt19937_64& rng) {
    std::vector<murestitch::dataprep::ReferenceImage> refs;
    for (int i = 0; i < k; ++i)
        refs.push_back({random_image(resolution, resolution, 3, rng), "ref" + std::to_string(i), {}});
    return refs;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("murestitch_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing
