#include "murestitch/dataprep.hpp"

#include <cctype>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "murestitch/errors.hpp"

namespace murestitch::dataprep {

namespace fs = std::filesystem;

std::string to_string(const BBox& box) {
    std::ostringstream os;
    os << '(' << box.x << ',' << box.y << ',' << box.w << ',' << box.h << ')';
    return os.str();
}

void BBox::validate(int height, int width) const {
    if (!fits(height, width)) {
        throw BoundsError("bbox " + to_string(*this) + " out of bounds for " + std::to_string(width) + "x" +
                          std::to_string(height) + " image");
    }
}

void PerturbConfig::validate() const {
    if (!(max_corner_jitter >= 0.0 && max_corner_jitter < 0.5))
        throw ConfigError("perturb.max_corner_jitter must be in [0, 0.5)");
    if (!(gain_min > 0.0f && gain_min <= gain_max)) throw ConfigError("perturb gain range invalid");
    if (!(shift_max >= 0.0f && shift_max <= 1.0f)) throw ConfigError("perturb.shift_max must be in [0, 1]");
}

void PerturbParams::validate(const PerturbConfig& config) const {
    for (double j : corner_jitter) {
        if (!(std::abs(j) <= config.max_corner_jitter)) {
            throw ValidationError("corner jitter " + std::to_string(j) + " exceeds max " +
                                  std::to_string(config.max_corner_jitter));
        }
    }
    for (int c = 0; c < 3; ++c) {
        if (color_gain[c] < config.gain_min || color_gain[c] > config.gain_max)
            throw ValidationError("color gain out of range");
        if (std::abs(color_shift[c]) > config.shift_max) throw ValidationError("color shift out of range");
    }
}

Image bbox_mask(const BBox& bbox, int height, int width) {
    bbox.validate(height, width);
    Image mask(height, width, 1, 0.0f);
    for (int y = bbox.y; y < bbox.y + bbox.h; ++y)
        for (int x = bbox.x; x < bbox.x + bbox.w; ++x) mask.at(y, x, 0) = 1.0f;
    return mask;
}

Image erase_bbox(const Image& image, const BBox& bbox) {
    bbox.validate(image.height, image.width);
    Image out = image;
    for (int y = bbox.y; y < bbox.y + bbox.h; ++y)
        for (int x = bbox.x; x < bbox.x + bbox.w; ++x)
            for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = kFill;
    return out;
}

namespace {

struct Tap {
    int index;
    float weight;
};

// Per-output-sample source taps along one axis.
std::vector<std::vector<Tap>> axis_taps(int src, int dst) {
    std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(dst));
    if (src == dst) {
        for (int i = 0; i < dst; ++i) taps[static_cast<std::size_t>(i)] = {{i, 1.0f}};
        return taps;
    }
    const double ratio = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        auto& t = taps[static_cast<std::size_t>(i)];
        if (dst < src) {
            const double lo = i * ratio, hi = (i + 1) * ratio;
            for (int k = static_cast<int>(std::floor(lo)); k < static_cast<int>(std::ceil(hi)) && k < src; ++k) {
                const double overlap = std::min(hi, k + 1.0) - std::max(lo, static_cast<double>(k));
                if (overlap > 0.0) t.push_back({k, static_cast<float>(overlap / ratio)});
            }
        } else {
            const double s = std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(src - 1));
            const int k0 = static_cast<int>(std::floor(s));
            const int k1 = std::min(k0 + 1, src - 1);
            const auto f = static_cast<float>(s - k0);
            t.push_back({k0, 1.0f - f});
            if (f > 0.0f) t.push_back({k1, f});
        }
    }
    return taps;
}

}  // namespace

Image resize(const Image& image, int height, int width) {
    if (height < 1 || width < 1) throw ValidationError("resize: target size must be positive");
    const auto htaps = axis_taps(image.width, width);
    const auto vtaps = axis_taps(image.height, height);
    Image horizontal(image.height, width, image.channels);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                float acc = 0.0f;
                for (const auto& t : htaps[static_cast<std::size_t>(x)]) acc += t.weight * image.at(y, t.index, c);
                horizontal.at(y, x, c) = acc;
            }
    Image out(height, width, image.channels);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                float acc = 0.0f;
                for (const auto& t : vtaps[static_cast<std::size_t>(y)]) acc += t.weight * horizontal.at(t.index, x, c);
                out.at(y, x, c) = acc;
            }
    return out;
}

Image extract_foreground(const Image& image, const BBox& bbox, const Image* fg_mask, int resolution) {
    bbox.validate(image.height, image.width);
    if (resolution < 1) throw ConfigError("reference resolution must be positive");
    if (fg_mask) {
        if (fg_mask->height != image.height || fg_mask->width != image.width || fg_mask->channels != 1)
            throw ValidationError("foreground mask size does not match image");
        long long inside = 0;
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                if (fg_mask->at(y, x, 0) < 0.5f) continue;
                if (!bbox.contains(x, y))
                    throw ValidationError("foreground mask extends outside bbox " + to_string(bbox));
                ++inside;
            }
        if (inside == 0) throw DataError("degenerate foreground: mask is empty inside bbox " + to_string(bbox));
    }

    Image crop(bbox.h, bbox.w, image.channels);
    for (int y = 0; y < bbox.h; ++y)
        for (int x = 0; x < bbox.w; ++x) {
            const bool keep = !fg_mask || fg_mask->at(bbox.y + y, bbox.x + x, 0) >= 0.5f;
            for (int c = 0; c < image.channels; ++c)
                crop.at(y, x, c) = keep ? image.at(bbox.y + y, bbox.x + x, c) : kFill;
        }

    const double s = static_cast<double>(resolution) / std::max(bbox.w, bbox.h);
    const int new_w = std::clamp(static_cast<int>(std::lround(bbox.w * s)), 1, resolution);
    const int new_h = std::clamp(static_cast<int>(std::lround(bbox.h * s)), 1, resolution);
    const Image scaled = resize(crop, new_h, new_w);

    Image canvas(resolution, resolution, image.channels, kFill);
    const int ox = (resolution - new_w) / 2;
    const int oy = (resolution - new_h) / 2;
    for (int y = 0; y < new_h; ++y)
        for (int x = 0; x < new_w; ++x)
            for (int c = 0; c < image.channels; ++c) canvas.at(oy + y, ox + x, c) = scaled.at(y, x, c);
    return canvas;
}

Homography homography_from_unit_square(const std::array<Point, 4>& q) {
    const double sx = q[0].x - q[1].x + q[2].x - q[3].x;
    const double sy = q[0].y - q[1].y + q[2].y - q[3].y;
    Homography h{};
    if (sx == 0.0 && sy == 0.0) {
        h = {q[1].x - q[0].x, q[2].x - q[1].x, q[0].x, q[1].y - q[0].y, q[2].y - q[1].y, q[0].y, 0.0, 0.0, 1.0};
    } else {
        const double dx1 = q[1].x - q[2].x, dx2 = q[3].x - q[2].x;
        const double dy1 = q[1].y - q[2].y, dy2 = q[3].y - q[2].y;
        const double den = dx1 * dy2 - dx2 * dy1;
        if (std::abs(den) < 1e-12) throw DataError("degenerate warp: corner configuration is singular");
        const double g = (sx * dy2 - dx2 * sy) / den;
        const double k = (dx1 * sy - sx * dy1) / den;
        h = {q[1].x - q[0].x + g * q[1].x, q[3].x - q[0].x + k * q[3].x, q[0].x,
             q[1].y - q[0].y + g * q[1].y, q[3].y - q[0].y + k * q[3].y, q[0].y,
             g,                            k,                            1.0};
    }
    if (!(std::abs(determinant(h)) >= 1e-6)) throw DataError("degenerate warp: |det H| < 1e-6");
    return h;
}

Point apply(const Homography& h, Point p) {
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    return {(h[0] * p.x + h[1] * p.y + h[2]) / w, (h[3] * p.x + h[4] * p.y + h[5]) / w};
}

double determinant(const Homography& h) {
    return h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6]) +
           h[2] * (h[3] * h[7] - h[4] * h[6]);
}

namespace {

Homography adjugate(const Homography& h) {
    return {h[4] * h[8] - h[5] * h[7], h[2] * h[7] - h[1] * h[8], h[1] * h[5] - h[2] * h[4],
            h[5] * h[6] - h[3] * h[8], h[0] * h[8] - h[2] * h[6], h[2] * h[3] - h[0] * h[5],
            h[3] * h[7] - h[4] * h[6], h[1] * h[6] - h[0] * h[7], h[0] * h[4] - h[1] * h[3]};
}

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Image perspective_perturb(const Image& canvas, const PerturbParams& params, const PerturbConfig& config) {
    params.validate(config);
    const std::array<Point, 4> unit{Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}};
    std::array<Point, 4> target{};
    for (int k = 0; k < 4; ++k) {
        target[k] = {unit[k].x + params.corner_jitter[2 * k], unit[k].y + params.corner_jitter[2 * k + 1]};
    }
    const Homography inverse = adjugate(homography_from_unit_square(target));

    const int height = canvas.height, width = canvas.width;
    Image out(height, width, canvas.channels, kFill);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Point src = apply(inverse, {(x + 0.5) / width, (y + 0.5) / height});
            const double sx = snap(src.x * width - 0.5);
            const double sy = snap(src.y * height - 0.5);
            if (!(sx >= 0.0 && sy >= 0.0 && sx <= width - 1 && sy <= height - 1)) continue;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x1 = std::min(x0 + 1, width - 1);
            const int y1 = std::min(y0 + 1, height - 1);
            const auto fx = static_cast<float>(sx - x0);
            const auto fy = static_cast<float>(sy - y0);
            for (int c = 0; c < canvas.channels; ++c) {
                const float top = (1.0f - fx) * canvas.at(y0, x0, c) + fx * canvas.at(y0, x1, c);
                const float bottom = (1.0f - fx) * canvas.at(y1, x0, c) + fx * canvas.at(y1, x1, c);
                out.at(y, x, c) = (1.0f - fy) * top + fy * bottom;
            }
        }
    return out;
}

Image color_transfer(const Image& canvas, const std::array<float, 3>& gain, const std::array<float, 3>& shift) {
    Image out = canvas;
    for (int y = 0; y < canvas.height; ++y)
        for (int x = 0; x < canvas.width; ++x) {
            bool fill = true;
            for (int c = 0; c < canvas.channels; ++c) fill = fill && canvas.at(y, x, c) == kFill;
            if (fill) continue;
            for (int c = 0; c < canvas.channels; ++c) {
                const int k = std::min(c, 2);
                out.at(y, x, c) = std::clamp(gain[k] * canvas.at(y, x, c) + shift[k], 0.0f, 1.0f);
            }
        }
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
    // splitmix64 finalizer folded over the parts.
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(base);
    for (std::uint64_t p : parts) h = mix(h ^ mix(p));
    return h;
}

PerturbParams draw_perturbation(std::uint64_t seed, const PerturbConfig& config) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    PerturbParams p;
    p.rng_seed = seed;
    for (auto& j : p.corner_jitter) j = between(-config.max_corner_jitter, config.max_corner_jitter);
    for (int c = 0; c < 3; ++c) p.color_gain[c] = static_cast<float>(between(config.gain_min, config.gain_max));
    for (int c = 0; c < 3; ++c) p.color_shift[c] = static_cast<float>(between(-config.shift_max, config.shift_max));
    return p;
}

ReferenceImage make_reference(const Image& canvas, const std::string& source_id, const PerturbParams& params,
                              const PerturbConfig& config) {
    ReferenceImage ref;
    ref.source_id = source_id;
    ref.perturbation = params;
    ref.pixels = color_transfer(perspective_perturb(canvas, params, config), params.color_gain, params.color_shift);
    return ref;
}

std::vector<Image> extract_canvases(const std::vector<AnnotatedImage>& images, int ref_resolution) {
    std::vector<Image> canvases;
    canvases.reserve(images.size());
    for (const auto& img : images) {
        try {
            canvases.push_back(
                extract_foreground(img.pixels, img.bbox, img.fg_mask ? &*img.fg_mask : nullptr, ref_resolution));
        } catch (const Error& e) {
            throw DataError(img.id + ": " + e.what());
        }
    }
    return canvases;
}

std::vector<CompositionSample> build_finetune_set(const std::vector<AnnotatedImage>& images,
                                                  const std::vector<Image>& canvases, int k_refs,
                                                  std::uint64_t rng_seed, const PerturbConfig& config) {
    const int n = static_cast<int>(images.size());
    if (n < 1) throw ValidationError("build_finetune_set: no images");
    if (k_refs < 1 || k_refs > n)
        throw ValidationError("k_refs must be in [1, " + std::to_string(n) + "], got " + std::to_string(k_refs));
    if (canvases.size() != images.size()) throw ValidationError("canvas count does not match image count");
    config.validate();

    std::vector<CompositionSample> samples;
    samples.reserve(images.size());
    for (int i = 0; i < n; ++i) {
        const auto& img = images[static_cast<std::size_t>(i)];
        CompositionSample s;
        s.id = img.id;
        s.bbox = img.bbox;
        s.ground_truth = img.pixels;
        s.background = erase_bbox(img.pixels, img.bbox);
        s.mask = bbox_mask(img.bbox, img.pixels.height, img.pixels.width);
        for (int r = 0; r < k_refs; ++r) {
            const int j = (i + r) % n;
            const auto seed = derive_seed(rng_seed, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)});
            s.references.push_back(make_reference(canvases[static_cast<std::size_t>(j)],
                                                  images[static_cast<std::size_t>(j)].id,
                                                  draw_perturbation(seed, config), config));
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<CompositionSample> build_finetune_set(const std::vector<AnnotatedImage>& images, int k_refs,
                                                  std::uint64_t rng_seed, const PerturbConfig& config,
                                                  int ref_resolution) {
    return build_finetune_set(images, extract_canvases(images, ref_resolution), k_refs, rng_seed, config);
}

BBox read_bbox_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotation " + path.string());
    try {
        const auto doc = nlohmann::json::parse(in);
        const auto& b = doc.at("bbox");
        if (!b.is_array() || b.size() != 4) throw ValidationError("bbox must be [x, y, w, h]");
        return BBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed annotation " + path.string() + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError("malformed annotation " + path.string() + ": " + e.what());
    }
}

void write_bbox_json(const fs::path& path, const BBox& bbox) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << nlohmann::json{{"bbox", {bbox.x, bbox.y, bbox.w, bbox.h}}}.dump() << '\n';
}

AnnotatedImage load_annotated(const fs::path& png) {
    AnnotatedImage a;
    a.id = png.stem().string();
    a.pixels = load_png(png);
    if (a.pixels.channels != 3) throw ValidationError(png.string() + ": expected an RGB image");
    fs::path json = png;
    json.replace_extension(".json");
    a.bbox = read_bbox_json(json);
    a.bbox.validate(a.pixels.height, a.pixels.width);
    const fs::path mask = png.parent_path() / (png.stem().string() + "_mask.png");
    if (fs::exists(mask)) {
        a.fg_mask = load_mask_png(mask);
        if (a.fg_mask->height != a.pixels.height || a.fg_mask->width != a.pixels.width)
            throw ValidationError(mask.string() + ": mask size does not match image");
    }
    return a;
}

std::vector<fs::path> numbered_pngs(const fs::path& dir, const std::string& prefix) {
    std::map<long long, fs::path> found;
    if (!fs::is_directory(dir)) return {};
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        const std::string stem = entry.path().stem().string();
        if (stem.size() <= prefix.size() || stem.compare(0, prefix.size(), prefix) != 0) continue;
        const std::string digits = stem.substr(prefix.size());
        if (!std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
        found.emplace(std::stoll(digits), entry.path());
    }
    std::vector<fs::path> out;
    for (auto& [_, p] : found) out.push_back(p);
    return out;
}

std::vector<AnnotatedImage> load_object_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("object directory not found: " + dir.string());
    const auto pngs = numbered_pngs(dir, "img");
    if (pngs.empty()) throw ValidationError("object directory contains no img<j>.png files: " + dir.string());
    std::vector<std::string> missing;
    for (const auto& p : pngs) {
        fs::path json = p;
        json.replace_extension(".json");
        if (!fs::exists(json)) missing.push_back(json.string());
    }
    if (!missing.empty()) {
        std::string msg = "missing annotations:";
        for (const auto& m : missing) msg += " " + m;
        throw ValidationError(msg);
    }
    std::vector<AnnotatedImage> images;
    for (const auto& p : pngs) images.push_back(load_annotated(p));
    return images;
}

}  // namespace murestitch::dataprep
