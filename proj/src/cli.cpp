#include "murestitch/cli.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "murestitch/config.hpp"
#include "murestitch/errors.hpp"
#include "murestitch/eval.hpp"

namespace murestitch::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Invocation {
    std::string command;
    std::vector<std::string> argv;
};

void write_json(const fs::path& path, const json& doc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

// Sits next to a file artifact (<file>.manifest.json) or inside a directory
// artifact (<dir>/manifest.json).
void write_manifest(const fs::path& artifact, bool is_dir, const Invocation& inv, const json& config,
                    const json& seeds, const json& extra = json::object()) {
    json m;
    m["format_version"] = kManifestVersion;
    m["command"] = inv.command;
    m["argv"] = inv.argv;
    m["config"] = config;
    m["seeds"] = seeds;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_json(is_dir ? artifact / "manifest.json" : fs::path(artifact.string() + ".manifest.json"), m);
}

RunConfig load_config(const std::string& flag) {
    const auto path = resolve_config_path(flag.empty() ? std::nullopt : std::optional<fs::path>(flag));
    return path ? load_run_config(*path) : RunConfig{};
}

dataprep::BBox parse_bbox(const std::string& text) {
    std::vector<int> v;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stoi(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ValidationError("--bbox must be x,y,w,h integers, got '" + text + "'");
        }
    }
    if (v.size() != 4) throw ValidationError("--bbox must be x,y,w,h integers, got '" + text + "'");
    return {v[0], v[1], v[2], v[3]};
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            if (!part.empty() && part[0] == '-') throw std::invalid_argument(part);
            seeds.push_back(std::stoull(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ValidationError("--seeds must be comma-separated non-negative integers, got '" + text + "'");
        }
    }
    if (seeds.empty()) throw ValidationError("--seeds is empty");
    return seeds;
}

// Annotated images (<stem>.png + <stem>.json) are cut out and letterboxed;
// bare PNGs are taken as ready-made reference canvases.
std::vector<dataprep::ReferenceImage> load_references(const fs::path& dir, int resolution) {
    if (!fs::is_directory(dir)) throw ValidationError("reference directory not found: " + dir.string());
    std::vector<fs::path> pngs;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto& p = e.path();
        if (p.extension() == ".png" && !p.stem().string().ends_with("_mask")) pngs.push_back(p);
    }
    std::sort(pngs.begin(), pngs.end());
    if (pngs.empty()) throw ValidationError("no reference images in " + dir.string());
    std::vector<dataprep::ReferenceImage> refs;
    for (const auto& p : pngs) {
        dataprep::ReferenceImage r;
        r.source_id = p.stem().string();
        if (fs::exists(fs::path(p).replace_extension(".json"))) {
            const auto a = dataprep::load_annotated(p);
            r.pixels = dataprep::extract_foreground(a.pixels, a.bbox, a.fg_mask ? &*a.fg_mask : nullptr, resolution);
        } else {
            Image img = load_png(p);
            if (img.channels != 3) throw ValidationError(p.string() + ": expected an RGB image");
            r.pixels = dataprep::resize(img, resolution, resolution);
        }
        refs.push_back(std::move(r));
    }
    return refs;
}

// background | references | results, each scaled to the background height.
Image contact_sheet(const Image& background, const std::vector<dataprep::ReferenceImage>& refs,
                    const std::vector<Image>& results) {
    const int h = background.height;
    std::vector<Image> panels{background};
    for (const auto& r : refs) panels.push_back(dataprep::resize(r.pixels, h, std::max(1, r.pixels.width * h / r.pixels.height)));
    for (const auto& r : results) panels.push_back(r);
    constexpr int gutter = 2;
    int width = -gutter;
    for (const auto& p : panels) width += p.width + gutter;
    Image sheet(h, width, 3, 1.0f);
    int x0 = 0;
    for (const auto& p : panels) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < p.width; ++x)
                for (int c = 0; c < 3; ++c) sheet.at(y, x0 + x, c) = p.at(y, x, c);
        x0 += p.width + gutter;
    }
    return sheet;
}

void print_loss(std::ostream& out, const finetune::EpochLog& log) {
    out << "epoch " << log.epoch << " loss " << log.mean_loss << " step " << log.step << '\n';
    out.flush();
}

json loss_log(const std::vector<double>& losses) {
    json j = json::array();
    for (std::size_t i = 0; i < losses.size(); ++i) j.push_back({{"epoch", i}, {"mean_loss", losses[i]}});
    return j;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-reference object composition with per-object finetuning", "murestitch"};
    app.require_subcommand(1);

    Invocation inv;
    for (int i = 0; i < argc; ++i) inv.argv.emplace_back(argv[i]);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a procedural object corpus");
    int synth_objects = 0, synth_scenes = 0, synth_resolution = 64;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    synth->add_option("--objects", synth_objects, "Number of objects")->required();
    synth->add_option("--scenes", synth_scenes, "Scenes per object")->required();
    synth->add_option("--seed", synth_seed, "Corpus seed");
    synth->add_option("--resolution", synth_resolution, "Scene side length in pixels");
    synth->add_option("--out", synth_out, "Output directory")->required();

    // mock / validate
    auto* mock = app.add_subcommand("mock", "Write a placeholder benchmark-layout tree");
    int mock_categories = 32;
    std::string mock_out;
    mock->add_option("--categories", mock_categories, "Category count");
    mock->add_option("--out", mock_out, "Output directory")->required();

    auto* validate = app.add_subcommand("validate", "Index a benchmark-layout tree and report deviations");
    std::string validate_root, validate_out;
    bool validate_strict = false;
    validate->add_option("--root", validate_root, "Dataset root")->required();
    validate->add_option("--out", validate_out, "Write the index JSON here");
    validate->add_flag("--strict", validate_strict, "Exit 2 unless the layout conforms");

    // prepare
    auto* prepare = app.add_subcommand("prepare", "Materialize finetuning samples for one object");
    std::string prep_object, prep_out, prep_config;
    std::optional<int> prep_k;
    std::optional<std::uint64_t> prep_seed;
    prepare->add_option("--object", prep_object, "Object directory (img<j>.png + .json)")->required();
    prepare->add_option("--out", prep_out, "Output directory")->required();
    prepare->add_option("--config", prep_config, "Flat JSON config");
    prepare->add_option("--k-refs", prep_k, "References per sample (0 = all)");
    prepare->add_option("--seed", prep_seed, "Perturbation seed");

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "Train the base model on a synthetic corpus");
    std::string pre_corpus, pre_config, pre_out, pre_resume;
    std::optional<int> pre_epochs, pre_batch;
    std::optional<double> pre_lr;
    std::optional<std::uint64_t> pre_seed;
    pretrain->add_option("--corpus", pre_corpus, "Corpus root")->required();
    pretrain->add_option("--config", pre_config, "Flat JSON config");
    pretrain->add_option("--out", pre_out, "Checkpoint path")->required();
    pretrain->add_option("--resume", pre_resume, "Continue from this checkpoint");
    pretrain->add_option("--epochs", pre_epochs, "Override train.epochs");
    pretrain->add_option("--batch-size", pre_batch, "Override train.batch_size");
    pretrain->add_option("--lr", pre_lr, "Override train.lr");
    pretrain->add_option("--seed", pre_seed, "Override train.seed");

    // finetune
    auto* ft = app.add_subcommand("finetune", "Adapt a base checkpoint to one object");
    std::string ft_base, ft_object, ft_out, ft_config, ft_scope;
    std::optional<int> ft_epochs, ft_k, ft_batch;
    std::optional<double> ft_lr;
    std::optional<std::uint64_t> ft_seed;
    ft->add_option("--base", ft_base, "Base checkpoint")->required();
    ft->add_option("--object", ft_object, "Object directory (img<j>.png + .json)")->required();
    ft->add_option("--out", ft_out, "Checkpoint path")->required();
    ft->add_option("--config", ft_config, "Flat JSON config");
    ft->add_option("--epochs", ft_epochs, "Override train.epochs (default 150)");
    ft->add_option("--lr", ft_lr, "Override train.lr");
    ft->add_option("--batch-size", ft_batch, "Override train.batch_size");
    ft->add_option("--seed", ft_seed, "Override train.seed");
    ft->add_option("--k-refs", ft_k, "References per sample (0 = all)");
    ft->add_option("--scope", ft_scope, "denoiser+adaptor or all");

    // generate
    auto* gen = app.add_subcommand("generate", "Composite an object into a background");
    std::string gen_ckpt, gen_background, gen_bbox, gen_refs, gen_seeds = "1,2,3,4,5", gen_out, gen_config;
    std::optional<double> gen_eta;
    std::optional<int> gen_steps;
    gen->add_option("--ckpt", gen_ckpt, "Checkpoint")->required();
    gen->add_option("--background", gen_background, "Background PNG")->required();
    gen->add_option("--bbox", gen_bbox, "Placement box x,y,w,h")->required();
    gen->add_option("--refs", gen_refs, "Reference image directory")->required();
    gen->add_option("--seeds", gen_seeds, "Comma-separated sampler seeds");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--config", gen_config, "Flat JSON config (sampler.* keys)");
    gen->add_option("--eta", gen_eta, "Override sampler.eta");
    gen->add_option("--steps", gen_steps, "Override sampler.steps");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
    std::string ev_pred, ev_gt, ev_out;
    int ev_dilate = 4;
    evaluate->add_option("--pred", ev_pred, "Prediction directory")->required();
    evaluate->add_option("--gt", ev_gt, "Ground-truth directory (<stem>.png + <stem>.json)")->required();
    evaluate->add_option("--out", ev_out, "Report JSON path")->required();
    evaluate->add_option("--dilate", ev_dilate, "Box dilation excluded from the background score");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) {
            inv.command = "synth";
            const auto summary = eval::gen_synthetic_corpus(synth_objects, synth_scenes, synth_seed, synth_out,
                                                            synth_resolution);
            write_manifest(synth_out, true, inv,
                           {{"objects", synth_objects}, {"scenes", synth_scenes}, {"resolution", synth_resolution}},
                           {{"corpus", synth_seed}});
            out << "wrote " << summary.scenes << " scenes of " << summary.objects << " objects to " << synth_out << '\n';
        } else if (*mock) {
            inv.command = "mock";
            if (mock_categories < 1) throw ValidationError("--categories must be >= 1");
            eval::write_mock_murecom(mock_out, mock_categories);
            out << "wrote mock layout with " << mock_categories << " categories to " << mock_out << '\n';
        } else if (*validate) {
            inv.command = "validate";
            const auto index = eval::validate_murecom_layout(validate_root);
            const json doc = index.to_json();
            if (!validate_out.empty()) write_json(validate_out, doc);
            out << "categories " << index.categories.size() << " backgrounds " << index.total_backgrounds()
                << " objects " << index.total_objects() << " foreground_images " << index.total_foreground_images()
                << " conforming " << (index.conforming() ? "yes" : "no") << '\n';
            for (const auto& c : index.categories)
                for (const auto& d : c.deviations) out << "  " << c.name << ": " << d << '\n';
            if (validate_strict && !index.conforming()) return kExitUsage;
        } else if (*prepare) {
            inv.command = "prepare";
            RunConfig rc = load_config(prep_config);
            if (prep_k) rc.train.k_refs = *prep_k;
            if (prep_seed) rc.train.seed = *prep_seed;
            rc.validate();
            const auto images = dataprep::load_object_dir(prep_object);
            const int n = static_cast<int>(images.size());
            const int k = rc.train.k_refs == 0 ? n : rc.train.k_refs;
            const auto samples =
                dataprep::build_finetune_set(images, k, rc.train.seed, rc.perturb, rc.model.encoder.resolution);
            for (const auto& s : samples) {
                const fs::path dir = fs::path(prep_out) / s.id;
                save_png(s.background, dir / "background.png");
                save_png(s.mask, dir / "mask.png");
                save_png(s.ground_truth, dir / "ground_truth.png");
                json refs = json::array();
                for (std::size_t r = 0; r < s.references.size(); ++r) {
                    const auto& ref = s.references[r];
                    save_png(ref.pixels, dir / ("ref" + std::to_string(r) + ".png"));
                    refs.push_back({{"source_id", ref.source_id},
                                    {"corner_jitter", ref.perturbation.corner_jitter},
                                    {"color_gain", ref.perturbation.color_gain},
                                    {"color_shift", ref.perturbation.color_shift},
                                    {"rng_seed", ref.perturbation.rng_seed}});
                }
                write_json(dir / "sample.json",
                           {{"id", s.id}, {"bbox", {s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h}}, {"references", refs}});
            }
            write_manifest(prep_out, true, inv, rc.to_json(), {{"perturbation", rc.train.seed}});
            out << "wrote " << samples.size() << " samples with " << k << " references each to " << prep_out << '\n';
        } else if (*pretrain) {
            inv.command = "pretrain";
            RunConfig rc = load_config(pre_config);
            rc.train.scope = finetune::FinetuneScope::All;
            if (pre_epochs) rc.train.epochs = *pre_epochs;
            if (pre_batch) rc.train.batch_size = *pre_batch;
            if (pre_lr) rc.train.lr = *pre_lr;
            if (pre_seed) rc.train.seed = *pre_seed;
            rc.validate();
            std::optional<finetune::ModelCheckpoint> resume;
            if (!pre_resume.empty()) resume = finetune::load_checkpoint(pre_resume);
            const auto result = finetune::pretrain_toy(pre_corpus, rc.model, rc.train, rc.perturb,
                                                       resume ? &*resume : nullptr,
                                                       [&](const finetune::EpochLog& l) { print_loss(out, l); });
            finetune::save_checkpoint(result.checkpoint, pre_out);
            write_json(pre_out + ".losses.json", loss_log(result.epoch_losses));
            write_manifest(pre_out, false, inv, result.checkpoint.config_snapshot,
                           {{"train", rc.train.seed}, {"init", result.checkpoint.model.init_seed}},
                           {{"step", result.checkpoint.step}, {"resumed_from", pre_resume}});
            out << "saved " << pre_out << " at step " << result.checkpoint.step << '\n';
        } else if (*ft) {
            inv.command = "finetune";
            RunConfig rc = load_config(ft_config);
            if (ft_epochs) rc.train.epochs = *ft_epochs;
            if (ft_lr) rc.train.lr = *ft_lr;
            if (ft_batch) rc.train.batch_size = *ft_batch;
            if (ft_seed) rc.train.seed = *ft_seed;
            if (ft_k) rc.train.k_refs = *ft_k;
            if (!ft_scope.empty()) rc.train.scope = finetune::parse_scope(ft_scope);
            rc.validate();
            const auto base = finetune::load_checkpoint(ft_base);
            const auto result = finetune::finetune_object(base, fs::path(ft_object), rc.train, rc.perturb,
                                                          [&](const finetune::EpochLog& l) { print_loss(out, l); });
            finetune::save_checkpoint(result.checkpoint, ft_out);
            write_json(ft_out + ".losses.json", loss_log(result.epoch_losses));
            write_manifest(ft_out, false, inv, result.checkpoint.config_snapshot, {{"train", rc.train.seed}},
                           {{"step", result.checkpoint.step}, {"base", ft_base}, {"object", ft_object}});
            out << "saved " << ft_out << " at step " << result.checkpoint.step << '\n';
        } else if (*gen) {
            inv.command = "generate";
            RunConfig rc = load_config(gen_config);
            if (gen_eta) rc.sampler.eta = *gen_eta;
            if (gen_steps) rc.sampler.steps = *gen_steps;
            const auto seeds = parse_seeds(gen_seeds);
            const auto bbox = parse_bbox(gen_bbox);
            const auto ckpt = finetune::load_checkpoint(gen_ckpt);
            rc.sampler.validate(ckpt.model.timesteps);
            Image background = load_png(gen_background);
            if (background.channels != 3) throw ValidationError(gen_background + ": expected an RGB image");
            if (background.height != ckpt.model.image_size || background.width != ckpt.model.image_size)
                throw ValidationError(gen_background + ": background must be " +
                                      std::to_string(ckpt.model.image_size) + "x" +
                                      std::to_string(ckpt.model.image_size) + " for this checkpoint");
            bbox.validate(background.height, background.width);
            const auto refs = load_references(gen_refs, ckpt.model.encoder.resolution);

            const auto model = finetune::instantiate<float>(ckpt);
            const auto cond = model->condition(refs);
            const Image erased = dataprep::erase_bbox(background, bbox);
            const auto schedule = ckpt.model.schedule();
            std::vector<Image> results;
            json outputs = json::array();
            for (const auto seed : seeds) {
                auto sc = rc.sampler;
                sc.seed = seed;
                results.push_back(diffusion::sample<float>(*model, erased, bbox, cond, schedule, sc));
                const std::string name = "seed" + std::to_string(seed) + ".png";
                save_png(results.back(), fs::path(gen_out) / name);
                outputs.push_back(name);
            }
            save_png(contact_sheet(erased, refs, results), fs::path(gen_out) / "grid.png");
            outputs.push_back("grid.png");
            json cfg = rc.to_json();
            const json model_cfg = model_config_to_json(ckpt.model);
            for (const auto& [k, v] : model_cfg.items()) cfg[k] = v;
            write_manifest(gen_out, true, inv, cfg, {{"sampler", seeds}},
                           {{"checkpoint", gen_ckpt},
                            {"bbox", {bbox.x, bbox.y, bbox.w, bbox.h}},
                            {"references", refs.size()},
                            {"outputs", outputs}});
            out << "wrote " << seeds.size() << " results and grid.png to " << gen_out << '\n';
        } else if (*evaluate) {
            inv.command = "evaluate";
            if (ev_dilate < 0) throw ValidationError("--dilate must be >= 0");
            const auto report = eval::evaluate_dirs(ev_pred, ev_gt, ev_dilate);
            write_json(ev_out, report.to_json());
            write_manifest(ev_out, false, inv, {{"dilate", ev_dilate}, {"pred", ev_pred}, {"gt", ev_gt}},
                           json::object());
            out << "fg_psnr " << report.fg_psnr << " bg_l1 " << report.bg_l1;
            if (report.seed_diversity) out << " seed_diversity " << *report.seed_diversity;
            out << " samples " << report.samples.size() << '\n';
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace murestitch::cli
