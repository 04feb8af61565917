#include "murestitch/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "murestitch/errors.hpp"

namespace murestitch {

std::uint8_t to_byte(float v) {
    const float clamped = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

Image load_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    }
    const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int channels = gray ? 1 : 3;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + msg);
    }
    Image out(static_cast<int>(img.height), static_cast<int>(img.width), channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(buffer[i]) / 255.0f;
    return out;
}

void save_png(const Image& image, const std::filesystem::path& path) {
    if (image.channels != 1 && image.channels != 3) throw IoError("save_png: unsupported channel count");
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(image.data.size());
    std::transform(image.data.begin(), image.data.end(), buffer.begin(), to_byte);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

Image load_mask_png(const std::filesystem::path& path) {
    Image raw = load_png(path);
    Image mask(raw.height, raw.width, 1);
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x) {
            // Any channel works for gray masks; RGB masks use the first.
            const float v = raw.at(y, x, 0);
            mask.at(y, x, 0) = std::lround(v * 255.0f) >= 128 ? 1.0f : 0.0f;
        }
    return mask;
}

}  // namespace murestitch
