// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "murestitch/cli.hpp"
#include "murestitch/config.hpp"
#include "murestitch/eval.hpp"
#include "support.hpp"

using namespace murestitch;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome(const fs::path&)> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

int cli_call(std::vector<std::string> args, bool echo = false) {
    args.insert(args.begin(), "murestitch");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream sink;
    std::ostream& out = echo ? std::cout : sink;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, std::cerr);
    if (code != 0) {
        std::string line;
        for (const auto& a : args) line += a + " ";
        std::cerr << "command failed (" << code << "): " << line << '\n';
    }
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// --- 1 ---------------------------------------------------------------------

Outcome layout(const fs::path& work) {
    const auto root = work / "mock";
    fs::remove_all(root);
    if (cli_call({"mock", "--out", root.string()}) != 0) return {false, "mock command failed"};
    if (cli_call({"validate", "--root", root.string(), "--out", (work / "layout.json").string(), "--strict"}) != 0)
        return {false, "validate command failed"};
    const auto j = read_json(work / "layout.json");
    const int bg = j["total_backgrounds"], fg = j["total_foreground_images"];
    const bool ok = bg == 32 * 20 && fg == 32 * 3 * 5 && j["categories"].size() == 32 && j["conforming"] == true;
    fs::remove_all(root);
    return {ok, std::to_string(bg) + " backgrounds, " + std::to_string(fg) + " foreground images"};
}

// --- 2 ---------------------------------------------------------------------

Outcome augmentation(const fs::path&) {
    using namespace dataprep;
    std::mt19937_64 rng(2024);
    double worst_identity = 0, worst_corner = 0, worst_moment = 0;
    long long mask_errors = 0, erase_errors = 0;

    for (int size : {8, 17, 32, 64}) {
        const Image img = testing::random_image(size, size, 3, rng);
        const Image out = perspective_perturb(img, PerturbParams{});
        for (std::size_t i = 0; i < img.data.size(); ++i)
            worst_identity = std::max(worst_identity, double(std::abs(out.data[i] - img.data[i])));
    }

    const std::array<Point, 4> unit{Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}};
    std::uniform_real_distribution<double> jit(-0.15, 0.15), u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::array<Point, 4> q;
        for (int k = 0; k < 4; ++k) q[k] = {unit[k].x + jit(rng), unit[k].y + jit(rng)};
        const auto h = homography_from_unit_square(q);
        const auto ref = testing::dlt(unit, q);
        for (int k = 0; k < 4; ++k) {
            const Point p = apply(h, unit[k]);
            worst_corner = std::max({worst_corner, std::abs(p.x - q[k].x), std::abs(p.y - q[k].y)});
        }
        for (int s = 0; s < 4; ++s) {
            const Point p{u(rng), u(rng)};
            const Point a = apply(h, p), b = apply(ref, p);
            worst_corner = std::max({worst_corner, std::abs(a.x - b.x), std::abs(a.y - b.y)});
        }
    }

    std::uniform_real_distribution<float> mid(0.3f, 0.6f), gain(0.8f, 1.2f), shift(-0.1f, 0.1f);
    for (int trial = 0; trial < 50; ++trial) {
        Image img(16, 16, 3);
        for (auto& v : img.data) {
            do v = mid(rng);
            while (v == kFill);
        }
        const std::array<float, 3> g{gain(rng), gain(rng), gain(rng)}, s{shift(rng), shift(rng), shift(rng)};
        const Image out = color_transfer(img, g, s);
        for (int c = 0; c < 3; ++c) {
            double mi = 0, mo = 0, vi = 0, vo = 0;
            const int n = 256;
            for (int k = 0; k < n; ++k) mi += img.data[k * 3 + c], mo += out.data[k * 3 + c];
            mi /= n, mo /= n;
            for (int k = 0; k < n; ++k) {
                vi += std::pow(img.data[k * 3 + c] - mi, 2);
                vo += std::pow(out.data[k * 3 + c] - mo, 2);
            }
            worst_moment = std::max({worst_moment, std::abs(mo - (g[c] * mi + s[c])),
                                     std::abs(std::sqrt(vo / n) - g[c] * std::sqrt(vi / n))});
        }
    }

    std::uniform_int_distribution<int> dim(1, 40);
    for (int trial = 0; trial < 200; ++trial) {
        const int h = dim(rng), w = dim(rng);
        std::uniform_int_distribution<int> px(0, w - 1), py(0, h - 1);
        BBox b;
        b.x = px(rng);
        b.y = py(rng);
        b.w = std::uniform_int_distribution<int>(1, w - b.x)(rng);
        b.h = std::uniform_int_distribution<int>(1, h - b.y)(rng);
        const Image img = testing::random_image(h, w, 3, rng);
        const Image m = bbox_mask(b, h, w);
        const Image e = erase_bbox(img, b);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const bool in = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
                mask_errors += m.at(y, x, 0) != (in ? 1.0f : 0.0f);
                for (int c = 0; c < 3; ++c) erase_errors += e.at(y, x, c) != (in ? kFill : img.at(y, x, c));
            }
    }
    const bool ok = worst_identity == 0.0 && worst_corner <= 1e-6 && worst_moment <= 1e-6 && mask_errors == 0 &&
                    erase_errors == 0;
    return {ok, "identity " + fmt("%.1e", worst_identity) + ", corners " + fmt("%.1e", worst_corner) + ", moments " +
                    fmt("%.1e", worst_moment) + ", mask/erase mismatches " + std::to_string(mask_errors + erase_errors)};
}

// --- 3 ---------------------------------------------------------------------

Outcome diffusion_moments(const fs::path&) {
    const auto s = diffusion::make_schedule(1000, 1e-4, 0.02);
    std::mt19937_64 rng(31);
    std::normal_distribution<double> g(0.0, 1.0);
    const int n = 100000;
    const nn::Tensor<double> z0({1}, 1.0);
    nn::Tensor<double> eps({1});
    double worst_mean = 0, worst_var = 0;
    for (int t : {10, 75, 150, 225, 300}) {
        double m = 0, m2 = 0;
        for (int i = 0; i < n; ++i) {
            eps[0] = g(rng);
            const double v = diffusion::forward_diffuse(z0, t, eps, s)[0];
            m += v;
            m2 += v * v;
        }
        m /= n;
        const double var = m2 / n - m * m;
        const double ab = s.alpha_bar(t);
        worst_mean = std::max(worst_mean, std::abs(m - std::sqrt(ab)) / std::sqrt(ab));
        worst_var = std::max(worst_var, std::abs(var - (1 - ab)) / (1 - ab));
    }
    return {worst_mean <= 0.02 && worst_var <= 0.02,
            "t in {10,75,150,225,300}: mean rel err " + fmt("%.4f", worst_mean) + ", var rel err " +
                fmt("%.4f", worst_var)};
}

// --- 4 ---------------------------------------------------------------------

Outcome gradient_check(const fs::path&) {
    diffusion::CompositionModel<double> model(testing::tiny_config());
    std::size_t count = 0;
    for (const auto& p : model.params().params()) count += p.var->value.size();
    std::mt19937_64 rng(41);
    std::vector<dataprep::CompositionSample> batch;
    for (int k : {2, 1}) {
        dataprep::CompositionSample s;
        s.ground_truth = testing::random_image(16, 16, 3, rng);
        s.bbox = {3, 2, 8, 9};
        s.background = dataprep::erase_bbox(s.ground_truth, s.bbox);
        s.mask = dataprep::bbox_mask(s.bbox, 16, 16);
        s.references = testing::random_refs(k, 16, rng);
        batch.push_back(std::move(s));
    }
    const auto schedule = model.config().schedule();
    auto loss = [&] {
        std::mt19937_64 r(5);
        return diffusion::training_loss<double>(batch, model, schedule, r);
    };
    model.params().zero_grad();
    nn::backward(loss());
    std::mt19937_64 pick(43);
    double worst = 0;
    int probes = 0;
    for (auto& p : model.params().params()) {
        for (int k = 0; k < 3; ++k) {
            const std::size_t i = pick() % p.var->value.size();
            const double v = p.var->value[i], h = 1e-5;
            nn::NoGradGuard guard;
            p.var->value[i] = v + h;
            const double up = loss()->value[0];
            p.var->value[i] = v - h;
            const double down = loss()->value[0];
            p.var->value[i] = v;
            const double fd = (up - down) / (2 * h), an = p.var->grad[i];
            worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
            ++probes;
        }
    }
    return {count <= 50000 && worst <= 1e-3, std::to_string(count) + " params, " + std::to_string(probes) +
                                                 " probes, worst rel err " + fmt("%.2e", worst)};
}

// --- 5 ---------------------------------------------------------------------

Outcome permutation(const fs::path&) {
    diffusion::CompositionModel<float> model(testing::tiny_config(51));
    std::mt19937_64 rng(52);
    auto refs = testing::random_refs(5, 16, rng);
    diffusion::DenoiserInput<float> in;
    in.noisy = testing::random_tensor({3, 16, 16}, rng).cast<float>();
    in.background = testing::random_tensor({3, 16, 16}, rng, 0.5).cast<float>();
    in.mask = to_tensor<float>(dataprep::bbox_mask({4, 4, 8, 8}, 16, 16));
    in.timestep = 600;
    in.cond = model.condition(refs);
    const auto base = model.predict_noise(in)->value;
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(refs.begin(), refs.end(), rng);
        in.cond = model.condition(refs);
        const auto out = model.predict_noise(in)->value;
        for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, double(std::abs(out[i] - base[i])));
    }
    return {worst <= 1e-5, "K=5, 20 shuffles, max abs change " + fmt("%.2e", worst)};
}

// --- 6 ---------------------------------------------------------------------

Outcome determinism(const fs::path& work) {
    const auto dir = work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto mc = testing::tiny_config(61);
    diffusion::CompositionModel<float> model(mc);
    const auto ckpt = dir / "m.ckpt";
    finetune::save_checkpoint(finetune::capture(model, 0), ckpt);

    // Round trip under the denoiser forward pass.
    const auto loaded = finetune::instantiate<float>(finetune::load_checkpoint(ckpt));
    std::mt19937_64 rng(62);
    const auto refs = testing::random_refs(3, 16, rng);
    diffusion::DenoiserInput<float> in;
    in.noisy = testing::random_tensor({3, 16, 16}, rng).cast<float>();
    in.background = testing::random_tensor({3, 16, 16}, rng, 0.5).cast<float>();
    in.mask = to_tensor<float>(dataprep::bbox_mask({2, 5, 9, 6}, 16, 16));
    in.timestep = 321;
    in.cond = model.condition(refs);
    const auto a = model.predict_noise(in)->value;
    in.cond = loaded->condition(refs);
    const auto b = loaded->predict_noise(in)->value;
    const bool roundtrip = a.data == b.data;

    eval::gen_synthetic_corpus(1, 3, 63, dir / "corpus", 16);
    const auto object = eval::find_object_dirs(dir / "corpus").at(0);
    auto gen = [&](const fs::path& out) {
        return cli_call({"generate", "--ckpt", ckpt.string(), "--background", (object / "img0.png").string(), "--bbox",
                         "3,3,9,8", "--refs", object.string(), "--seeds", "1,2,3,4,5", "--eta", "0", "--out",
                         out.string()});
    };
    if (gen(dir / "run1") != 0 || gen(dir / "run2") != 0) return {false, "generate failed"};
    int identical = 0;
    for (int s = 1; s <= 5; ++s) {
        const auto name = "seed" + std::to_string(s) + ".png";
        identical += slurp(dir / "run1" / name) == slurp(dir / "run2" / name);
    }
    identical += slurp(dir / "run1" / "grid.png") == slurp(dir / "run2" / "grid.png");
    return {roundtrip && identical == 6, std::string("checkpoint round trip ") +
                                             (roundtrip ? "bit-identical" : "DIFFERS") + ", " +
                                             std::to_string(identical) + "/6 PNGs byte-identical"};
}

// --- 7, 8, 9 ---------------------------------------------------------------

// Shared desk-scale experiment: pretrain once, finetune with K=5 and K=1,
// generate on the held-in scene img0 of the target object.
struct Overfit {
    fs::path root;
    fs::path config;
    bool ran = false;
    std::string error;
    eval::MetricsReport base, k5, k1;

    static constexpr int kCorpusObjects = 40;
    static constexpr int kCorpusScenes = 5;
    static constexpr int kPretrainEpochs = 30;
    static constexpr int kPretrainBatch = 4;
    static constexpr const char* kPretrainLr = "1e-3";

    eval::MetricsReport generate_and_score(const fs::path& ckpt, const fs::path& refs, const std::string& tag) {
        const auto object = root / "target_object";
        const auto pred = root / ("pred_" + tag);
        fs::remove_all(pred);
        const auto box = dataprep::read_bbox_json(object / "img0.json");
        const std::string bbox = std::to_string(box.x) + "," + std::to_string(box.y) + "," + std::to_string(box.w) +
                                 "," + std::to_string(box.h);
        if (cli_call({"generate", "--ckpt", ckpt.string(), "--background", (object / "img0.png").string(), "--bbox",
                      bbox, "--refs", refs.string(), "--config", config.string(), "--out", (pred / "img0").string()}) !=
            0)
            throw std::runtime_error("generate failed for " + tag);
        // Seed images only; the grid is a visual aid.
        fs::rename(pred / "img0" / "grid.png", root / ("grid_" + tag + ".png"));
        fs::rename(pred / "img0" / "manifest.json", root / ("generate_" + tag + ".manifest.json"));
        const auto report = root / ("report_" + tag + ".json");
        if (cli_call({"evaluate", "--pred", pred.string(), "--gt", (root / "gt").string(), "--out", report.string()}) != 0)
            throw std::runtime_error("evaluate failed for " + tag);
        eval::MetricsReport r;
        const auto j = read_json(report);
        r.fg_psnr = j["fg_psnr"];
        r.bg_l1 = j["bg_l1"];
        if (!j["seed_diversity"].is_null()) r.seed_diversity = j["seed_diversity"].get<double>();
        return r;
    }

    void run() {
        if (ran) return;
        ran = true;
        try {
            fs::create_directories(root);
            const auto corpus = root / "corpus";
            fs::remove_all(corpus);
            if (cli_call({"synth", "--objects", std::to_string(kCorpusObjects), "--scenes",
                          std::to_string(kCorpusScenes), "--seed", "1", "--resolution", "32", "--out",
                          corpus.string()}) != 0)
                throw std::runtime_error("synth failed");
            const auto target = root / "target_corpus";
            fs::remove_all(target);
            if (cli_call({"synth", "--objects", "1", "--scenes", "5", "--seed", "777", "--resolution", "32", "--out",
                          target.string()}) != 0)
                throw std::runtime_error("synth failed");
            const auto object = root / "target_object";
            fs::remove_all(object);
            fs::copy(eval::find_object_dirs(target).at(0), object);
            fs::remove_all(root / "gt");
            fs::create_directories(root / "gt");
            fs::copy(object / "img0.png", root / "gt" / "img0.png");
            fs::copy(object / "img0.json", root / "gt" / "img0.json");
            fs::remove_all(root / "single_ref");
            fs::create_directories(root / "single_ref");
            for (const auto* ext : {".png", ".json", "_mask.png"})
                fs::copy(object / (std::string("img0") + ext), root / "single_ref" / (std::string("img0") + ext));

            const auto base_ckpt = root / "base.ckpt";
            std::cout << "  pretraining on " << kCorpusObjects * kCorpusScenes << " scenes" << std::endl;
            if (cli_call({"pretrain", "--corpus", corpus.string(), "--config", config.string(), "--out",
                          base_ckpt.string(), "--epochs", std::to_string(kPretrainEpochs), "--batch-size",
                          std::to_string(kPretrainBatch), "--lr", kPretrainLr},
                         true) != 0)
                throw std::runtime_error("pretrain failed");
            for (int k : {5, 1}) {
                std::cout << "  finetuning with K=" << k << std::endl;
                if (cli_call({"finetune", "--base", base_ckpt.string(), "--object", object.string(), "--config",
                              config.string(), "--k-refs", std::to_string(k), "--out",
                              (root / ("ft_k" + std::to_string(k) + ".ckpt")).string()},
                             true) != 0)
                    throw std::runtime_error("finetune failed");
            }
            base = generate_and_score(base_ckpt, object, "base");
            k5 = generate_and_score(root / "ft_k5.ckpt", object, "k5");
            k1 = generate_and_score(root / "ft_k1.ckpt", root / "single_ref", "k1");
        } catch (const std::exception& e) {
            error = e.what();
        }
    }
};

std::string describe(const eval::MetricsReport& r) {
    std::string s = "fg_psnr " + fmt("%.2f", r.fg_psnr) + " dB, bg_l1 " + fmt("%.3g", r.bg_l1);
    if (r.seed_diversity) s += ", seed_diversity " + fmt("%.4f", *r.seed_diversity);
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    const fs::path work = fs::absolute("acceptance_work");
    fs::create_directories(work);

    Overfit overfit;
    overfit.root = work / "overfit";
    overfit.config = fs::path(MURESTITCH_SOURCE_DIR) / "configs" / "desk.json";

    const std::vector<Criterion> criteria{
        {1, "layout check", 5, layout},
        {2, "augmentation oracles", 10, augmentation},
        {3, "diffusion statistics", 30, diffusion_moments},
        {4, "gradient check", 120, gradient_check},
        {5, "reference-permutation invariance", 10, permutation},
        {6, "determinism", 120, determinism},
        {7, "end-to-end overfit", 4 * 3600,
         [&](const fs::path&) -> Outcome {
             overfit.run();
             if (!overfit.error.empty()) return {false, overfit.error};
             return {overfit.k5.fg_psnr >= 20.0 && overfit.k5.bg_l1 == 0.0,
                     "held-in " + describe(overfit.k5) + " (need >= 20 dB, bg_l1 0)"};
         }},
        {8, "finetuning gain", 4 * 3600,
         [&](const fs::path&) -> Outcome {
             overfit.run();
             if (!overfit.error.empty()) return {false, overfit.error};
             const double gain = overfit.k5.fg_psnr - overfit.base.fg_psnr;
             return {gain >= 3.0, "base " + fmt("%.2f", overfit.base.fg_psnr) + " dB -> finetuned " +
                                      fmt("%.2f", overfit.k5.fg_psnr) + " dB, gain " + fmt("%.2f", gain) +
                                      " dB (need >= 3)"};
         }},
        {9, "multi-reference ablation", 4 * 3600,
         [&](const fs::path&) -> Outcome {
             overfit.run();
             if (!overfit.error.empty()) return {false, overfit.error};
             json cmp{{"K1", {{"fg_psnr", overfit.k1.fg_psnr}, {"bg_l1", overfit.k1.bg_l1}}},
                      {"K5", {{"fg_psnr", overfit.k5.fg_psnr}, {"bg_l1", overfit.k5.bg_l1}}},
                      {"fg_psnr_delta_K5_minus_K1", overfit.k5.fg_psnr - overfit.k1.fg_psnr}};
             if (overfit.k1.seed_diversity) cmp["K1"]["seed_diversity"] = *overfit.k1.seed_diversity;
             if (overfit.k5.seed_diversity) cmp["K5"]["seed_diversity"] = *overfit.k5.seed_diversity;
             std::ofstream(overfit.root / "ablation.json") << cmp.dump(2) << '\n';
             const bool ok = std::isfinite(overfit.k1.fg_psnr) && std::isfinite(overfit.k5.fg_psnr) &&
                             overfit.k1.bg_l1 == 0.0 && overfit.k5.bg_l1 == 0.0;
             return {ok, "K=1 " + describe(overfit.k1) + " | K=5 " + describe(overfit.k5)};
         }},
    };

    int failed = 0;
    std::vector<std::string> lines;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(work);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        // The three overfit criteria share one run; only the first pays for it.
        const bool in_time = secs <= c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::string line = std::string(pass ? "PASS" : "FAIL") + " [" + std::to_string(c.id) + "] " + c.name + ": " +
                           o.detail + " (" + fmt("%.1f", secs) + " s, budget " + fmt("%.0f", c.budget_s) + " s)";
        std::cout << line << std::endl;
        lines.push_back(std::move(line));
    }
    std::cout << "\nacceptance summary\n";
    for (const auto& l : lines) std::cout << l << '\n';
    std::cout << (failed ? std::to_string(failed) + " criteria failed\n" : "all criteria passed\n");
    return failed ? 1 : 0;
}
