#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace murestitch {

// Interleaved H x W x C float image, nominally in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }
    bool empty() const { return data.empty(); }

    friend bool operator==(const Image&, const Image&) = default;
};

// 8-bit PNG I/O. Gray images load as 1 channel, everything else as RGB.
Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);

// Loads an 8-bit mask PNG and thresholds at 128 into {0, 1}.
Image load_mask_png(const std::filesystem::path& path);

std::uint8_t to_byte(float v);

}  // namespace murestitch
