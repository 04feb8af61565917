#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "murestitch/model.hpp"

namespace murestitch::finetune {

enum class FinetuneScope { DenoiserAndAdaptor, All };
enum class OptimizerKind { Adam, Sgd };

std::string to_string(FinetuneScope scope);
std::string to_string(OptimizerKind kind);
FinetuneScope parse_scope(const std::string& text);
OptimizerKind parse_optimizer(const std::string& text);

struct TrainConfig {
    int epochs = 150;
    double lr = 1e-4;
    int batch_size = 1;
    std::uint64_t seed = 0;
    FinetuneScope scope = FinetuneScope::DenoiserAndAdaptor;
    OptimizerKind optimizer = OptimizerKind::Adam;
    int k_refs = 0;  // references per sample; 0 = all images of the object

    void validate() const;
};

// Weights are always stored as float32, in parameter-registry order.
struct ModelCheckpoint {
    diffusion::ModelConfig model;
    nlohmann::json config_snapshot = nlohmann::json::object();
    std::int64_t step = 0;
    std::vector<std::pair<std::string, nn::Tensor<float>>> weights;
};

inline constexpr char kCheckpointMagic[8] = {'M', 'U', 'R', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
ModelCheckpoint capture(const diffusion::CompositionModel<T>& model, std::int64_t step,
                        nlohmann::json snapshot = nlohmann::json::object());

// Copies checkpoint weights into the model; names and shapes must match exactly.
template <typename T>
void restore(diffusion::CompositionModel<T>& model, const ModelCheckpoint& checkpoint);

template <typename T>
std::unique_ptr<diffusion::CompositionModel<T>> instantiate(const ModelCheckpoint& checkpoint) {
    auto model = std::make_unique<diffusion::CompositionModel<T>>(checkpoint.model);
    restore(*model, checkpoint);
    return model;
}

// Layout: 8-byte magic, u32 version, u64 header length, JSON header (config
// snapshot, schedule, step, tensor names and shapes), then each tensor's
// data as little-endian float32 in header order.
void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

// Plain SGD or Adam over the parameters that currently require gradients.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, std::vector<nn::Var<float>> params);
    void step();

private:
    OptimizerKind kind_;
    double lr_;
    std::vector<nn::Var<float>> params_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t t_ = 0;
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    std::int64_t step = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

struct TrainResult {
    ModelCheckpoint checkpoint;
    std::vector<double> epoch_losses;
};

// Freezes parameter groups outside the scope. Returns the trainable set.
std::vector<nn::Var<float>> apply_scope(diffusion::CompositionModel<float>& model, FinetuneScope scope);

// Trains all weights on every object directory of a synthetic corpus.
// `resume` continues from its weights and step counter.
TrainResult pretrain_toy(const std::filesystem::path& corpus, const diffusion::ModelConfig& model_config,
                         const TrainConfig& config, const dataprep::PerturbConfig& perturb,
                         const ModelCheckpoint* resume = nullptr, const EpochCallback& on_epoch = {});

TrainResult finetune_object(const ModelCheckpoint& base, const std::filesystem::path& object_dir,
                            const TrainConfig& config, const dataprep::PerturbConfig& perturb,
                            const EpochCallback& on_epoch = {});

// In-memory variant: N annotated images of one object.
TrainResult finetune_object(const ModelCheckpoint& base, const std::vector<dataprep::AnnotatedImage>& images,
                            const TrainConfig& config, const dataprep::PerturbConfig& perturb,
                            const EpochCallback& on_epoch = {});

}  // namespace murestitch::finetune
