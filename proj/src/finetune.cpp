#include "murestitch/finetune.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "murestitch/config.hpp"
#include "murestitch/errors.hpp"
#include "murestitch/eval.hpp"

namespace murestitch::finetune {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string to_string(FinetuneScope scope) {
    return scope == FinetuneScope::All ? "all" : "denoiser+adaptor";
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

FinetuneScope parse_scope(const std::string& text) {
    if (text == "all") return FinetuneScope::All;
    if (text == "denoiser+adaptor") return FinetuneScope::DenoiserAndAdaptor;
    throw ConfigError("unknown finetune scope '" + text + "' (expected all or denoiser+adaptor)");
}

OptimizerKind parse_optimizer(const std::string& text) {
    if (text == "adam") return OptimizerKind::Adam;
    if (text == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("unknown optimizer '" + text + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1, got " + std::to_string(epochs));
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1, got " + std::to_string(batch_size));
    if (k_refs < 0) throw ConfigError("train.k_refs must be >= 0, got " + std::to_string(k_refs));
}

// --- Checkpoints ---------------------------------------------------------------

template <typename T>
ModelCheckpoint capture(const diffusion::CompositionModel<T>& model, std::int64_t step, json snapshot) {
    ModelCheckpoint ckpt;
    ckpt.model = model.config();
    ckpt.config_snapshot = std::move(snapshot);
    ckpt.step = step;
    for (const auto& p : model.params().params()) ckpt.weights.emplace_back(p.name, p.var->value.template cast<float>());
    return ckpt;
}

template <typename T>
void restore(diffusion::CompositionModel<T>& model, const ModelCheckpoint& checkpoint) {
    auto& params = model.params().params();
    if (params.size() != checkpoint.weights.size())
        throw ValidationError("checkpoint has " + std::to_string(checkpoint.weights.size()) + " tensors, model expects " +
                              std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, tensor] = checkpoint.weights[i];
        if (name != params[i].name)
            throw ValidationError("checkpoint tensor " + std::to_string(i) + " is " + name + ", model expects " +
                                  params[i].name);
        if (tensor.shape != params[i].var->value.shape)
            throw ValidationError("checkpoint tensor " + name + " has shape " + nn::shape_string(tensor.shape) +
                                  ", model expects " + nn::shape_string(params[i].var->value.shape));
        params[i].var->value = tensor.template cast<T>();
    }
}

template ModelCheckpoint capture<float>(const diffusion::CompositionModel<float>&, std::int64_t, json);
template ModelCheckpoint capture<double>(const diffusion::CompositionModel<double>&, std::int64_t, json);
template void restore<float>(diffusion::CompositionModel<float>&, const ModelCheckpoint&);
template void restore<double>(diffusion::CompositionModel<double>&, const ModelCheckpoint&);

void save_checkpoint(const ModelCheckpoint& checkpoint, const fs::path& path) {
    json header;
    header["model"] = model_config_to_json(checkpoint.model);
    header["config"] = checkpoint.config_snapshot;
    header["step"] = checkpoint.step;
    const auto schedule = checkpoint.model.schedule();
    header["schedule"] = {{"T", schedule.steps}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}};
    json tensors = json::array();
    for (const auto& [name, t] : checkpoint.weights) tensors.push_back({{"name", name}, {"shape", t.shape}});
    header["tensors"] = tensors;
    const std::string text = header.dump();

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        const std::uint32_t version = kCheckpointVersion;
        const std::uint64_t length = text.size();
        out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        out.write(reinterpret_cast<const char*>(&length), sizeof(length));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : checkpoint.weights)
            out.write(reinterpret_cast<const char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!out) throw IoError("failed writing checkpoint " + tmp.string());
    }
    fs::rename(tmp, path);
}

ModelCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[sizeof(kCheckpointMagic)];
    std::uint32_t version = 0;
    std::uint64_t length = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&length), sizeof(length));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw DataError(path.string() + " is not a checkpoint");
    if (version != kCheckpointVersion)
        throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    if (length > (1u << 30)) throw DataError(path.string() + ": corrupt checkpoint header");
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (!in) throw DataError(path.string() + ": truncated checkpoint header");

    ModelCheckpoint ckpt;
    try {
        const json header = json::parse(text);
        ckpt.model = model_config_from_json(header.at("model"));
        ckpt.config_snapshot = header.value("config", json::object());
        ckpt.step = header.at("step").get<std::int64_t>();
        for (const auto& entry : header.at("tensors")) {
            nn::Tensor<float> t(entry.at("shape").get<nn::Shape>());
            in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
            if (!in) throw DataError(path.string() + ": truncated tensor data");
            ckpt.weights.emplace_back(entry.at("name").get<std::string>(), std::move(t));
        }
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
    }
    if (in.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes after tensors");
    return ckpt;
}

// --- Optimizer -----------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double lr, std::vector<nn::Var<float>> params)
    : kind_(kind), lr_(lr), params_(std::move(params)) {
    if (kind_ == OptimizerKind::Adam) {
        for (const auto& p : params_) {
            m_.emplace_back(p->value.size(), 0.0f);
            v_.emplace_back(p->value.size(), 0.0f);
        }
    }
}

void Optimizer::step() {
    ++t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        if (p.grad.size() != p.value.size()) continue;  // untouched this step
        if (kind_ == OptimizerKind::Sgd) {
            for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] -= static_cast<float>(lr_ * p.grad[k]);
            continue;
        }
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            m[k] = static_cast<float>(b1 * m[k] + (1.0 - b1) * g);
            v[k] = static_cast<float>(b2 * v[k] + (1.0 - b2) * g * g);
            p.value[k] -= static_cast<float>(lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps));
        }
    }
}

// --- Training ------------------------------------------------------------------

std::vector<nn::Var<float>> apply_scope(diffusion::CompositionModel<float>& model, FinetuneScope scope) {
    std::vector<nn::Var<float>> trainable;
    for (auto& p : model.params().params()) {
        const bool on = scope == FinetuneScope::All || p.group != nn::ParamGroup::EncoderBackbone;
        p.var->requires_grad = on;
        p.var->zero_grad();
        if (on) trainable.push_back(p.var);
    }
    return trainable;
}

namespace {

struct ObjectData {
    std::vector<dataprep::AnnotatedImage> images;
    std::vector<Image> canvases;
};

void check_images(const std::vector<dataprep::AnnotatedImage>& images, int image_size, const std::string& where) {
    if (images.empty()) throw ValidationError(where + ": no images");
    for (const auto& img : images) {
        if (img.pixels.height != image_size || img.pixels.width != image_size)
            throw ValidationError(where + "/" + img.id + ": image is " + std::to_string(img.pixels.width) + "x" +
                                  std::to_string(img.pixels.height) + ", model expects " + std::to_string(image_size) +
                                  "x" + std::to_string(image_size));
    }
}

TrainResult train_loop(diffusion::CompositionModel<float>& model, const std::vector<ObjectData>& objects,
                       const TrainConfig& config, const dataprep::PerturbConfig& perturb, FinetuneScope scope,
                       std::int64_t start_step, const json& snapshot, const EpochCallback& on_epoch) {
    const auto schedule = model.config().schedule();
    Optimizer opt(config.optimizer, config.lr, apply_scope(model, scope));
    std::mt19937_64 rng(dataprep::derive_seed(config.seed, {0x7472616eULL, static_cast<std::uint64_t>(start_step)}));

    TrainResult result;
    std::int64_t step = start_step;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<dataprep::CompositionSample> samples;
        for (std::size_t o = 0; o < objects.size(); ++o) {
            const auto& obj = objects[o];
            const int n = static_cast<int>(obj.images.size());
            const int k = config.k_refs == 0 ? n : std::min(config.k_refs, n);
            const auto seed = dataprep::derive_seed(config.seed, {static_cast<std::uint64_t>(step),
                                                                  static_cast<std::uint64_t>(epoch), o});
            auto part = dataprep::build_finetune_set(obj.images, obj.canvases, k, seed, perturb);
            std::move(part.begin(), part.end(), std::back_inserter(samples));
        }
        std::shuffle(samples.begin(), samples.end(), rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t len = std::min(samples.size() - b, static_cast<std::size_t>(config.batch_size));
            const std::span<const dataprep::CompositionSample> batch(samples.data() + b, len);
            model.params().zero_grad();
            auto loss = diffusion::training_loss<float>(batch, model, schedule, rng);
            if (!std::isfinite(loss->value[0]))
                throw DataError("training loss diverged at step " + std::to_string(step));
            nn::backward(loss);
            opt.step();
            loss_sum += loss->value[0];
            ++batches;
            ++step;
        }
        const double mean = loss_sum / std::max(batches, 1);
        result.epoch_losses.push_back(mean);
        if (on_epoch) on_epoch(EpochLog{epoch, mean, step});
    }
    model.params().zero_grad();
    result.checkpoint = capture(model, step, snapshot);
    return result;
}

json snapshot_of(const diffusion::ModelConfig& model, const TrainConfig& train, const dataprep::PerturbConfig& perturb) {
    RunConfig rc;
    rc.model = model;
    rc.train = train;
    rc.perturb = perturb;
    return rc.to_json();
}

}  // namespace

TrainResult pretrain_toy(const fs::path& corpus, const diffusion::ModelConfig& model_config, const TrainConfig& config,
                         const dataprep::PerturbConfig& perturb, const ModelCheckpoint* resume,
                         const EpochCallback& on_epoch) {
    config.validate();
    perturb.validate();
    const auto& mc = resume ? resume->model : model_config;
    mc.validate();
    if (!fs::is_directory(corpus)) throw ValidationError("corpus directory not found: " + corpus.string());
    const auto dirs = eval::find_object_dirs(corpus);
    if (dirs.empty()) throw ValidationError("no object directories (fg<k>) under " + corpus.string());

    std::vector<ObjectData> objects;
    std::size_t total = 0;
    for (const auto& dir : dirs) {
        ObjectData obj;
        obj.images = dataprep::load_object_dir(dir);
        check_images(obj.images, mc.image_size, dir.string());
        obj.canvases = dataprep::extract_canvases(obj.images, mc.encoder.resolution);
        total += obj.images.size();
        objects.push_back(std::move(obj));
    }
    if (static_cast<std::size_t>(config.batch_size) > total)
        throw ConfigError("train.batch_size " + std::to_string(config.batch_size) + " exceeds corpus size " +
                          std::to_string(total));

    diffusion::CompositionModel<float> model(mc);
    std::int64_t step = 0;
    if (resume) {
        restore(model, *resume);
        step = resume->step;
    }
    return train_loop(model, objects, config, perturb, FinetuneScope::All, step, snapshot_of(mc, config, perturb),
                      on_epoch);
}

TrainResult finetune_object(const ModelCheckpoint& base, const std::vector<dataprep::AnnotatedImage>& images,
                            const TrainConfig& config, const dataprep::PerturbConfig& perturb,
                            const EpochCallback& on_epoch) {
    config.validate();
    perturb.validate();
    check_images(images, base.model.image_size, "object");
    if (static_cast<std::size_t>(config.batch_size) > images.size())
        throw ConfigError("train.batch_size " + std::to_string(config.batch_size) + " exceeds the " +
                          std::to_string(images.size()) + " object images");
    std::vector<ObjectData> objects(1);
    objects[0].images = images;
    objects[0].canvases = dataprep::extract_canvases(images, base.model.encoder.resolution);

    auto model = instantiate<float>(base);
    return train_loop(*model, objects, config, perturb, config.scope, base.step,
                      snapshot_of(base.model, config, perturb), on_epoch);
}

TrainResult finetune_object(const ModelCheckpoint& base, const fs::path& object_dir, const TrainConfig& config,
                            const dataprep::PerturbConfig& perturb, const EpochCallback& on_epoch) {
    return finetune_object(base, dataprep::load_object_dir(object_dir), config, perturb, on_epoch);
}

}  // namespace murestitch::finetune
