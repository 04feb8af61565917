#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "murestitch/dataprep.hpp"

namespace murestitch::eval {

// --- Synthetic corpus --------------------------------------------------------

// Identity of a procedural object: a star-shaped polygon with a striped
// texture. Scenes reuse it under different poses and backgrounds.
struct SyntheticObject {
    int object_id = 0;
    std::vector<dataprep::Point> polygon;  // unit-radius local coordinates
    std::array<float, 3> base_color{};
    std::array<float, 3> stripe_color{};
    double stripe_frequency = 2.0;
    double stripe_angle = 0.0;
    std::uint64_t texture_seed = 0;
};

struct SyntheticSceneSpec {
    SyntheticObject object;
    std::array<float, 3> background_a{};
    std::array<float, 3> background_b{};
    double background_angle = 0.0;
    std::uint64_t background_seed = 0;
    double center_x = 0.5;  // fractions of the frame
    double center_y = 0.5;
    double scale = 0.4;     // object diameter / frame side, in [0.2, 0.6]
    double rotation = 0.0;  // radians
    int resolution = 64;

    // Throws ValidationError unless the object's bounding circle lies inside
    // the frame and scale is in range.
    void validate() const;
};

struct RenderedScene {
    Image image;  // H x W x 3
    Image mask;   // H x W x 1
    dataprep::BBox bbox;  // tight bounds of mask
};

SyntheticObject random_object(int object_id, std::uint64_t seed);
SyntheticSceneSpec random_scene(const SyntheticObject& object, std::uint64_t seed, int resolution);
RenderedScene render_scene(const SyntheticSceneSpec& spec);

// Tightest box around the nonzero pixels of a single-channel mask.
std::optional<dataprep::BBox> tight_bbox(const Image& mask);

struct CorpusSummary {
    int objects = 0;
    int scenes = 0;
    std::vector<std::filesystem::path> object_dirs;
};

// Writes <out>/synth<o/3>/fg<o%3>/img<j>.png + .json + _mask.png for every
// object o and scene j. Deterministic per seed.
CorpusSummary gen_synthetic_corpus(int num_objects, int scenes_per_object, std::uint64_t seed,
                                   const std::filesystem::path& out, int resolution = 64);

// Every fg<k> directory below root, sorted.
std::vector<std::filesystem::path> find_object_dirs(const std::filesystem::path& root);

// --- Dataset layout ----------------------------------------------------------

struct LayoutExpectation {
    int backgrounds = 20;
    int objects = 3;
    int images_per_object = 5;
};

struct CategoryIndex {
    std::string name;
    int backgrounds = 0;
    std::vector<int> images_per_object;
    std::vector<std::string> deviations;

    int objects() const { return static_cast<int>(images_per_object.size()); }
    int foreground_images() const;
};

struct LayoutIndex {
    std::vector<CategoryIndex> categories;

    int total_backgrounds() const;
    int total_objects() const;
    int total_foreground_images() const;
    bool conforming() const;
    nlohmann::json to_json() const;
};

// Walks <root>/<category>/{bg,fg<k>}; deviations are recorded, not fatal.
// A malformed annotation JSON raises ValidationError naming the file.
LayoutIndex validate_murecom_layout(const std::filesystem::path& root, const LayoutExpectation& expect = {});

// Tiny placeholder tree with the given counts, for exercising the walker.
void write_mock_murecom(const std::filesystem::path& root, int categories = 32, const LayoutExpectation& shape = {},
                        int image_size = 8);

// --- Metrics -----------------------------------------------------------------

inline constexpr double kPsnrCap = 99.0;

// PSNR in dB over pixels where mask > 0.5, all channels, peak 1.
double fg_fidelity(const Image& pred, const Image& gt, const Image& mask);

// Mean absolute difference over pixels where mask_dilated <= 0.5.
double bg_preservation(const Image& pred, const Image& background, const Image& mask_dilated);

// Mean over prediction pairs of the RMS difference inside the mask.
double seed_diversity(const std::vector<Image>& preds, const Image& mask);

struct SampleMetrics {
    std::string name;
    double fg_psnr = 0.0;
    double bg_l1 = 0.0;
    std::optional<double> seed_diversity;
    int predictions = 1;
};

struct MetricsReport {
    double fg_psnr = 0.0;
    double bg_l1 = 0.0;
    std::optional<double> seed_diversity;
    std::vector<SampleMetrics> samples;

    nlohmann::json to_json() const;
    static MetricsReport aggregate(std::vector<SampleMetrics> samples);
};

// Scores every <stem>.png (+ <stem>.json bbox) in gt_dir against either
// pred_dir/<stem>.png or all PNGs in pred_dir/<stem>/ (one per seed).
MetricsReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                            int dilate = 4);

}  // namespace murestitch::eval
