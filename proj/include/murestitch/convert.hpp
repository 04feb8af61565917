#pragma once

#include "murestitch/image.hpp"
#include "murestitch/nn/tensor.hpp"

namespace murestitch {

// HWC [0,1] image -> CHW tensor in [-1,1].
template <typename T>
nn::Tensor<T> to_signed_tensor(const Image& image) {
    nn::Tensor<T> t({image.channels, image.height, image.width});
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                t[(static_cast<std::size_t>(c) * image.height + y) * image.width + x] =
                    static_cast<T>(2.0f * image.at(y, x, c) - 1.0f);
    return t;
}

// HWC image -> CHW tensor, values unchanged (used for masks).
template <typename T>
nn::Tensor<T> to_tensor(const Image& image) {
    nn::Tensor<T> t({image.channels, image.height, image.width});
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                t[(static_cast<std::size_t>(c) * image.height + y) * image.width + x] =
                    static_cast<T>(image.at(y, x, c));
    return t;
}

// CHW tensor in [-1,1] -> HWC image in [0,1], clamped.
template <typename T>
Image from_signed_tensor(const nn::Tensor<T>& t) {
    Image image(t.dim(1), t.dim(2), t.dim(0));
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                const double v = (static_cast<double>(t[(static_cast<std::size_t>(c) * image.height + y) * image.width + x]) + 1.0) * 0.5;
                image.at(y, x, c) = static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
            }
    return image;
}

}  // namespace murestitch
