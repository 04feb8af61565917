#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "murestitch/image.hpp"

namespace murestitch::dataprep {

// Neutral value used for erased boxes, letterbox bands and out-of-source samples.
inline constexpr float kFill = 0.5f;

struct BBox {
    int x = 0;
    int y = 0;
    int w = 1;
    int h = 1;

    bool fits(int height, int width) const {
        return w >= 1 && h >= 1 && x >= 0 && y >= 0 && x + w <= width && y + h <= height;
    }
    // Throws BoundsError naming the box and the image size.
    void validate(int height, int width) const;
    bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
    long long area() const { return static_cast<long long>(w) * h; }

    friend bool operator==(const BBox&, const BBox&) = default;
};

std::string to_string(const BBox& box);

struct AnnotatedImage {
    std::string id;
    Image pixels;  // H x W x 3
    BBox bbox;
    std::optional<Image> fg_mask;  // H x W x 1, 1 = object
};

struct PerturbConfig {
    double max_corner_jitter = 0.15;
    float gain_min = 0.7f;
    float gain_max = 1.3f;
    float shift_max = 0.15f;

    void validate() const;
};

struct PerturbParams {
    // (dx, dy) per corner in order top-left, top-right, bottom-right,
    // bottom-left, as fractions of the canvas size.
    std::array<double, 8> corner_jitter{};
    std::array<float, 3> color_gain{1.0f, 1.0f, 1.0f};
    std::array<float, 3> color_shift{0.0f, 0.0f, 0.0f};
    std::uint64_t rng_seed = 0;

    // Throws ValidationError when any knob exceeds the configured range.
    void validate(const PerturbConfig& config) const;
};

struct ReferenceImage {
    Image pixels;  // R x R x 3
    std::string source_id;
    PerturbParams perturbation;
};

struct CompositionSample {
    std::string id;
    Image background;
    Image mask;
    std::vector<ReferenceImage> references;
    Image ground_truth;
    BBox bbox;
};

Image bbox_mask(const BBox& bbox, int height, int width);

Image erase_bbox(const Image& image, const BBox& bbox);

// Crops the box, blanks non-object pixels to kFill and letterboxes the crop
// onto a resolution x resolution canvas, centered, aspect preserved.
Image extract_foreground(const Image& image, const BBox& bbox, const Image* fg_mask, int resolution);

// Separable resize: box-filter averaging along shrinking axes, bilinear along
// growing axes. Same-size resizing is an exact copy.
Image resize(const Image& image, int height, int width);

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Row-major 3x3 projective matrix, normalized so that entry [8] is 1.
using Homography = std::array<double, 9>;

// Closed-form projective map taking (0,0), (1,0), (1,1), (0,1) to the four
// given corners in that order. Throws DataError("degenerate warp") when the
// corners admit no invertible map.
Homography homography_from_unit_square(const std::array<Point, 4>& corners);
Point apply(const Homography& h, Point p);
double determinant(const Homography& h);

Image perspective_perturb(const Image& canvas, const PerturbParams& params,
                          const PerturbConfig& config = PerturbConfig{});

Image color_transfer(const Image& canvas, const std::array<float, 3>& gain, const std::array<float, 3>& shift);

PerturbParams draw_perturbation(std::uint64_t seed, const PerturbConfig& config);

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

ReferenceImage make_reference(const Image& canvas, const std::string& source_id, const PerturbParams& params,
                              const PerturbConfig& config);

// One sample per image. Sample i references images i, i+1, ... (cyclic),
// k_refs of them, each perturbed with derive_seed(rng_seed, {i, j}).
std::vector<CompositionSample> build_finetune_set(const std::vector<AnnotatedImage>& images, int k_refs,
                                                  std::uint64_t rng_seed, const PerturbConfig& config,
                                                  int ref_resolution);

// Extracted canvases are independent of the perturbation seed, so training
// loops that re-perturb every epoch can reuse them.
std::vector<Image> extract_canvases(const std::vector<AnnotatedImage>& images, int ref_resolution);
std::vector<CompositionSample> build_finetune_set(const std::vector<AnnotatedImage>& images,
                                                  const std::vector<Image>& canvases, int k_refs,
                                                  std::uint64_t rng_seed, const PerturbConfig& config);

// --- Dataset files ---------------------------------------------------------

BBox read_bbox_json(const std::filesystem::path& path);
void write_bbox_json(const std::filesystem::path& path, const BBox& bbox);

// Loads <stem>.png, <stem>.json and the optional <stem>_mask.png.
AnnotatedImage load_annotated(const std::filesystem::path& png);

// All img<j>.png files in a foreground-object directory, ordered by j.
// Throws ValidationError listing every image without an annotation.
std::vector<AnnotatedImage> load_object_dir(const std::filesystem::path& dir);

// Numbered image files with the given prefix, e.g. img0.png, img1.png, ...
std::vector<std::filesystem::path> numbered_pngs(const std::filesystem::path& dir, const std::string& prefix);

}  // namespace murestitch::dataprep
