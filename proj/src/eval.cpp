#include "murestitch/eval.hpp"

#include <cctype>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "murestitch/diffusion.hpp"
#include "murestitch/errors.hpp"

namespace murestitch::eval {

namespace fs = std::filesystem;
using dataprep::BBox;
using dataprep::Point;

void SyntheticSceneSpec::validate() const {
    if (resolution < 4) throw ValidationError("scene resolution too small");
    if (!(scale >= 0.2 && scale <= 0.6)) throw ValidationError("scene scale must be in [0.2, 0.6]");
    const double r = scale / 2.0;
    if (center_x - r < 0.0 || center_x + r > 1.0 || center_y - r < 0.0 || center_y + r > 1.0)
        throw ValidationError("object extends outside the frame");
    if (object.polygon.size() < 3) throw ValidationError("object polygon needs at least 3 vertices");
}

SyntheticObject random_object(int object_id, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SyntheticObject o;
    o.object_id = object_id;
    o.texture_seed = seed;
    const int vertices = 5 + static_cast<int>(unit(rng) * 4.0);
    const double phase = unit(rng) * 2.0 * std::numbers::pi;
    for (int k = 0; k < vertices; ++k) {
        const double angle = phase + 2.0 * std::numbers::pi * (k + 0.3 * (unit(rng) - 0.5)) / vertices;
        const double radius = 0.6 + 0.4 * unit(rng);
        o.polygon.push_back({radius * std::cos(angle), radius * std::sin(angle)});
    }
    for (auto& c : o.base_color) c = static_cast<float>(0.1 + 0.8 * unit(rng));
    for (auto& c : o.stripe_color) c = static_cast<float>(0.1 + 0.8 * unit(rng));
    o.stripe_frequency = 1.5 + 2.5 * unit(rng);
    o.stripe_angle = unit(rng) * std::numbers::pi;
    return o;
}

SyntheticSceneSpec random_scene(const SyntheticObject& object, std::uint64_t seed, int resolution) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SyntheticSceneSpec s;
    s.object = object;
    s.resolution = resolution;
    for (auto& c : s.background_a) c = static_cast<float>(0.15 + 0.7 * unit(rng));
    for (auto& c : s.background_b) c = static_cast<float>(0.15 + 0.7 * unit(rng));
    s.background_angle = unit(rng) * 2.0 * std::numbers::pi;
    s.background_seed = seed;
    s.scale = 0.3 + 0.3 * unit(rng);
    const double r = s.scale / 2.0;
    s.center_x = r + (1.0 - 2.0 * r) * unit(rng);
    s.center_y = r + (1.0 - 2.0 * r) * unit(rng);
    s.rotation = unit(rng) * 2.0 * std::numbers::pi;
    return s;
}

namespace {

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point& a = poly[i];
        const Point& b = poly[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
    }
    return inside;
}

}  // namespace

RenderedScene render_scene(const SyntheticSceneSpec& spec) {
    spec.validate();
    const int n = spec.resolution;
    std::mt19937_64 rng(spec.background_seed ^ 0x5bd1e995ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double fx = 0.5 + 1.5 * unit(rng), fy = 0.5 + 1.5 * unit(rng);
    const double px = unit(rng), py = unit(rng);

    RenderedScene out;
    out.image = Image(n, n, 3);
    out.mask = Image(n, n, 1, 0.0f);
    const double radius = spec.scale * n / 2.0;
    const double cos_r = std::cos(spec.rotation), sin_r = std::sin(spec.rotation);
    const double dir_x = std::cos(spec.background_angle), dir_y = std::sin(spec.background_angle);
    const double sdx = std::cos(spec.object.stripe_angle), sdy = std::sin(spec.object.stripe_angle);

    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double u = (x + 0.5) / n, v = (y + 0.5) / n;
            const double ramp = std::clamp(0.5 + (u - 0.5) * dir_x + (v - 0.5) * dir_y, 0.0, 1.0);
            const double wave = 0.04 * std::sin(2.0 * std::numbers::pi * (fx * u + px)) *
                                std::sin(2.0 * std::numbers::pi * (fy * v + py));
            for (int c = 0; c < 3; ++c) {
                const double bg = spec.background_a[c] + (spec.background_b[c] - spec.background_a[c]) * ramp + wave;
                out.image.at(y, x, c) = static_cast<float>(std::clamp(bg, 0.0, 1.0));
            }
            // Pixel center in object-local coordinates.
            const double dx = (x + 0.5 - spec.center_x * n) / radius;
            const double dy = (y + 0.5 - spec.center_y * n) / radius;
            const double lx = cos_r * dx + sin_r * dy;
            const double ly = -sin_r * dx + cos_r * dy;
            if (!inside_polygon(spec.object.polygon, lx, ly)) continue;
            const bool stripe =
                std::sin(std::numbers::pi * spec.object.stripe_frequency * (lx * sdx + ly * sdy)) > 0.0;
            const auto& color = stripe ? spec.object.stripe_color : spec.object.base_color;
            for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = color[c];
            out.mask.at(y, x, 0) = 1.0f;
        }
    auto box = tight_bbox(out.mask);
    if (!box) throw DataError("synthetic object rendered no pixels");
    out.bbox = *box;
    return out;
}

std::optional<BBox> tight_bbox(const Image& mask) {
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x, 0) <= 0.5f) continue;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    if (x1 < 0) return std::nullopt;
    return BBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

CorpusSummary gen_synthetic_corpus(int num_objects, int scenes_per_object, std::uint64_t seed, const fs::path& out,
                                   int resolution) {
    if (num_objects < 1 || scenes_per_object < 1) throw ValidationError("object and scene counts must be >= 1");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw IoError("cannot create corpus directory " + out.string());
    CorpusSummary summary;
    for (int o = 0; o < num_objects; ++o) {
        const auto object = random_object(o, dataprep::derive_seed(seed, {static_cast<std::uint64_t>(o)}));
        char category[32];
        std::snprintf(category, sizeof(category), "synth%02d", o / 3);
        const fs::path dir = out / category / ("fg" + std::to_string(o % 3));
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string());
        for (int j = 0; j < scenes_per_object; ++j) {
            const auto spec = random_scene(
                object, dataprep::derive_seed(seed, {static_cast<std::uint64_t>(o), 1000u + static_cast<std::uint64_t>(j)}),
                resolution);
            const auto scene = render_scene(spec);
            const std::string stem = "img" + std::to_string(j);
            save_png(scene.image, dir / (stem + ".png"));
            save_png(scene.mask, dir / (stem + "_mask.png"));
            dataprep::write_bbox_json(dir / (stem + ".json"), scene.bbox);
            ++summary.scenes;
        }
        summary.object_dirs.push_back(dir);
        ++summary.objects;
    }
    return summary;
}

namespace {

bool is_numbered(const std::string& name, const std::string& prefix) {
    return name.size() > prefix.size() && name.compare(0, prefix.size(), prefix) == 0 &&
           std::all_of(name.begin() + static_cast<std::ptrdiff_t>(prefix.size()), name.end(),
                       [](unsigned char c) { return std::isdigit(c); });
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<fs::path> find_object_dirs(const fs::path& root) {
    std::vector<fs::path> out;
    if (!fs::is_directory(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_directory() && is_numbered(e.path().filename().string(), "fg")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

int CategoryIndex::foreground_images() const {
    int n = 0;
    for (int k : images_per_object) n += k;
    return n;
}

int LayoutIndex::total_backgrounds() const {
    int n = 0;
    for (const auto& c : categories) n += c.backgrounds;
    return n;
}

int LayoutIndex::total_objects() const {
    int n = 0;
    for (const auto& c : categories) n += c.objects();
    return n;
}

int LayoutIndex::total_foreground_images() const {
    int n = 0;
    for (const auto& c : categories) n += c.foreground_images();
    return n;
}

bool LayoutIndex::conforming() const {
    return std::all_of(categories.begin(), categories.end(), [](const auto& c) { return c.deviations.empty(); });
}

nlohmann::json LayoutIndex::to_json() const {
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : categories) {
        cats.push_back({{"name", c.name},
                        {"backgrounds", c.backgrounds},
                        {"objects", c.objects()},
                        {"images_per_object", c.images_per_object},
                        {"deviations", c.deviations}});
    }
    return {{"categories", cats},
            {"total_backgrounds", total_backgrounds()},
            {"total_objects", total_objects()},
            {"total_foreground_images", total_foreground_images()},
            {"conforming", conforming()}};
}

LayoutIndex validate_murecom_layout(const fs::path& root, const LayoutExpectation& expect) {
    if (!fs::is_directory(root)) throw ValidationError("dataset root not found: " + root.string());
    LayoutIndex index;
    for (const auto& cat_dir : sorted_subdirs(root)) {
        CategoryIndex cat;
        cat.name = cat_dir.filename().string();
        for (const auto& png : dataprep::numbered_pngs(cat_dir / "bg", "bg")) {
            fs::path json = png;
            json.replace_extension(".json");
            if (!fs::exists(json)) {
                cat.deviations.push_back("missing annotation " + json.filename().string());
            } else {
                dataprep::read_bbox_json(json);
            }
            ++cat.backgrounds;
        }
        for (const auto& sub : sorted_subdirs(cat_dir)) {
            if (!is_numbered(sub.filename().string(), "fg")) continue;
            int images = 0;
            for (const auto& png : dataprep::numbered_pngs(sub, "img")) {
                fs::path json = png;
                json.replace_extension(".json");
                if (!fs::exists(json)) {
                    cat.deviations.push_back("missing annotation " + sub.filename().string() + "/" +
                                             json.filename().string());
                } else {
                    dataprep::read_bbox_json(json);
                }
                ++images;
            }
            cat.images_per_object.push_back(images);
            if (images != expect.images_per_object) {
                cat.deviations.push_back(sub.filename().string() + " has " + std::to_string(images) +
                                         " images, expected " + std::to_string(expect.images_per_object));
            }
        }
        if (cat.backgrounds != expect.backgrounds) {
            cat.deviations.push_back(std::to_string(cat.backgrounds) + " backgrounds, expected " +
                                     std::to_string(expect.backgrounds));
        }
        if (cat.objects() != expect.objects) {
            cat.deviations.push_back(std::to_string(cat.objects()) + " objects, expected " +
                                     std::to_string(expect.objects));
        }
        index.categories.push_back(std::move(cat));
    }
    return index;
}

void write_mock_murecom(const fs::path& root, int categories, const LayoutExpectation& shape, int image_size) {
    const Image blank(image_size, image_size, 3, 0.5f);
    const BBox box{0, 0, std::max(1, image_size / 2), std::max(1, image_size / 2)};
    for (int c = 0; c < categories; ++c) {
        const fs::path cat = root / ("category" + std::to_string(c));
        fs::create_directories(cat / "bg");
        for (int m = 0; m < shape.backgrounds; ++m) {
            save_png(blank, cat / "bg" / ("bg" + std::to_string(m) + ".png"));
            dataprep::write_bbox_json(cat / "bg" / ("bg" + std::to_string(m) + ".json"), box);
        }
        for (int k = 0; k < shape.objects; ++k) {
            const fs::path fg = cat / ("fg" + std::to_string(k));
            fs::create_directories(fg);
            for (int j = 0; j < shape.images_per_object; ++j) {
                save_png(blank, fg / ("img" + std::to_string(j) + ".png"));
                dataprep::write_bbox_json(fg / ("img" + std::to_string(j) + ".json"), box);
            }
        }
    }
}

namespace {

void require_same_shape(const Image& a, const Image& b, const Image& mask) {
    if (!a.same_shape(b)) throw ValidationError("metric inputs differ in shape");
    if (mask.height != a.height || mask.width != a.width || mask.channels != 1)
        throw ValidationError("metric mask must be single-channel and match the image");
}

}  // namespace

double fg_fidelity(const Image& pred, const Image& gt, const Image& mask) {
    require_same_shape(pred, gt, mask);
    double sum = 0.0;
    long long count = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (mask.at(y, x, 0) <= 0.5f) continue;
            for (int c = 0; c < pred.channels; ++c) {
                const double d = static_cast<double>(pred.at(y, x, c)) - gt.at(y, x, c);
                sum += d * d;
                ++count;
            }
        }
    if (count == 0) throw ValidationError("fg_fidelity: empty mask");
    const double mse = sum / static_cast<double>(count);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double bg_preservation(const Image& pred, const Image& background, const Image& mask_dilated) {
    require_same_shape(pred, background, mask_dilated);
    double sum = 0.0;
    long long count = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (mask_dilated.at(y, x, 0) > 0.5f) continue;
            for (int c = 0; c < pred.channels; ++c) {
                sum += std::abs(static_cast<double>(pred.at(y, x, c)) - background.at(y, x, c));
                ++count;
            }
        }
    if (count == 0) throw ValidationError("no background region");
    return sum / static_cast<double>(count);
}

double seed_diversity(const std::vector<Image>& preds, const Image& mask) {
    if (preds.size() < 2) throw ValidationError("seed_diversity: need >= 2 predictions");
    double total = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (std::size_t j = i + 1; j < preds.size(); ++j) {
            require_same_shape(preds[i], preds[j], mask);
            double sum = 0.0;
            long long count = 0;
            for (int y = 0; y < mask.height; ++y)
                for (int x = 0; x < mask.width; ++x) {
                    if (mask.at(y, x, 0) <= 0.5f) continue;
                    for (int c = 0; c < preds[i].channels; ++c) {
                        const double d = static_cast<double>(preds[i].at(y, x, c)) - preds[j].at(y, x, c);
                        sum += d * d;
                        ++count;
                    }
                }
            if (count == 0) throw ValidationError("seed_diversity: empty mask");
            total += std::sqrt(sum / static_cast<double>(count));
            ++pairs;
        }
    return total / pairs;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json row{{"name", s.name}, {"fg_psnr", s.fg_psnr}, {"bg_l1", s.bg_l1}, {"predictions", s.predictions}};
        row["seed_diversity"] = s.seed_diversity ? nlohmann::json(*s.seed_diversity) : nlohmann::json(nullptr);
        rows.push_back(std::move(row));
    }
    nlohmann::json out{{"fg_psnr", fg_psnr}, {"bg_l1", bg_l1}, {"samples", rows}};
    out["seed_diversity"] = seed_diversity ? nlohmann::json(*seed_diversity) : nlohmann::json(nullptr);
    return out;
}

MetricsReport MetricsReport::aggregate(std::vector<SampleMetrics> samples) {
    MetricsReport r;
    if (samples.empty()) return r;
    double diversity = 0.0;
    int with_diversity = 0;
    for (const auto& s : samples) {
        r.fg_psnr += s.fg_psnr;
        r.bg_l1 += s.bg_l1;
        if (s.seed_diversity) {
            diversity += *s.seed_diversity;
            ++with_diversity;
        }
    }
    r.fg_psnr /= static_cast<double>(samples.size());
    r.bg_l1 /= static_cast<double>(samples.size());
    if (with_diversity) r.seed_diversity = diversity / with_diversity;
    r.samples = std::move(samples);
    return r;
}

MetricsReport evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir, int dilate) {
    if (!fs::is_directory(gt_dir)) throw ValidationError("ground-truth directory not found: " + gt_dir.string());
    if (!fs::is_directory(pred_dir)) throw ValidationError("prediction directory not found: " + pred_dir.string());

    std::set<std::string> gt_stems;
    for (const auto& e : fs::directory_iterator(gt_dir)) {
        const auto stem = e.path().stem().string();
        if (e.is_regular_file() && e.path().extension() == ".png" && !stem.ends_with("_mask")) gt_stems.insert(stem);
    }
    std::set<std::string> pred_stems;
    for (const auto& e : fs::directory_iterator(pred_dir)) {
        if (e.is_directory()) pred_stems.insert(e.path().filename().string());
        else if (e.path().extension() == ".png") pred_stems.insert(e.path().stem().string());
    }
    std::vector<std::string> missing, extra;
    std::set_difference(gt_stems.begin(), gt_stems.end(), pred_stems.begin(), pred_stems.end(),
                        std::back_inserter(missing));
    std::set_difference(pred_stems.begin(), pred_stems.end(), gt_stems.begin(), gt_stems.end(),
                        std::back_inserter(extra));
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "prediction and ground-truth file sets differ;";
        if (!missing.empty()) {
            msg += " missing predictions:";
            for (const auto& m : missing) msg += " " + m;
            msg += ";";
        }
        if (!extra.empty()) {
            msg += " unmatched predictions:";
            for (const auto& m : extra) msg += " " + m;
        }
        throw ValidationError(msg);
    }

    std::vector<SampleMetrics> rows;
    for (const auto& stem : gt_stems) {
        const Image gt = load_png(gt_dir / (stem + ".png"));
        const BBox box = dataprep::read_bbox_json(gt_dir / (stem + ".json"));
        const Image mask = dataprep::bbox_mask(box, gt.height, gt.width);
        const Image outside = diffusion::dilated_mask(box, gt.height, gt.width, dilate);

        std::vector<Image> preds;
        const fs::path as_dir = pred_dir / stem;
        if (fs::is_directory(as_dir)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(as_dir))
                if (e.path().extension() == ".png") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) preds.push_back(load_png(f));
        } else {
            preds.push_back(load_png(pred_dir / (stem + ".png")));
        }
        if (preds.empty()) throw ValidationError("no predictions for " + stem);

        SampleMetrics m;
        m.name = stem;
        m.predictions = static_cast<int>(preds.size());
        for (const auto& p : preds) {
            if (!p.same_shape(gt)) throw ValidationError("prediction for " + stem + " differs in size");
            m.fg_psnr += fg_fidelity(p, gt, mask);
            m.bg_l1 += bg_preservation(p, gt, outside);
        }
        m.fg_psnr /= static_cast<double>(preds.size());
        m.bg_l1 /= static_cast<double>(preds.size());
        if (preds.size() >= 2) m.seed_diversity = seed_diversity(preds, mask);
        rows.push_back(std::move(m));
    }
    return MetricsReport::aggregate(std::move(rows));
}

}  // namespace murestitch::eval
