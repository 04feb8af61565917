#include "murestitch/encoder.hpp"

#include "murestitch/convert.hpp"
#include "murestitch/errors.hpp"

namespace murestitch::encoder {

using nn::ParamGroup;

void EncoderConfig::validate() const {
    if (resolution < 1 || patch < 1) throw ConfigError("encoder resolution and patch size must be positive");
    if (resolution % patch != 0) {
        throw ConfigError("reference resolution " + std::to_string(resolution) + " is not divisible by patch size " +
                          std::to_string(patch));
    }
    if (embed_dim < 1 || cond_dim < 1 || blocks < 0 || mlp_ratio < 1) throw ConfigError("encoder widths invalid");
}

template <typename T>
ReferenceEncoder<T>::ReferenceEncoder(nn::ParameterSet<T>& params, const EncoderConfig& config) : config_(config) {
    config_.validate();
    const int feat = 3 * config.patch * config.patch;
    const int width = config.embed_dim;
    const auto backbone = ParamGroup::EncoderBackbone;
    patch_embed_ = nn::Linear<T>(params, "encoder.backbone.patch_embed", feat, width, backbone);
    position_ = params.uniform("encoder.backbone.position", {config.local_tokens(), width}, T(0.02), backbone);
    for (int b = 0; b < config.blocks; ++b) {
        const std::string name = "encoder.backbone.block" + std::to_string(b);
        Block block;
        block.norm1 = nn::LayerNorm<T>(params, name + ".norm1", width, backbone);
        block.attn = nn::Attention<T>(params, name + ".attn", width, width, width, backbone);
        block.norm2 = nn::LayerNorm<T>(params, name + ".norm2", width, backbone);
        block.fc1 = nn::Linear<T>(params, name + ".fc1", width, width * config.mlp_ratio, backbone);
        block.fc2 = nn::Linear<T>(params, name + ".fc2", width * config.mlp_ratio, width, backbone);
        blocks_.push_back(std::move(block));
    }
    final_norm_ = nn::LayerNorm<T>(params, "encoder.backbone.final_norm", width, backbone);
    adaptor_ = nn::Linear<T>(params, "encoder.adaptor", width, config.cond_dim, ParamGroup::Adaptor);
}

template <typename T>
ReferenceTokens<T> ReferenceEncoder<T>::encode(const dataprep::ReferenceImage& ref, int index) const {
    if (ref.pixels.height != config_.resolution || ref.pixels.width != config_.resolution || ref.pixels.channels != 3) {
        throw ConfigError("reference image is " + std::to_string(ref.pixels.width) + "x" +
                          std::to_string(ref.pixels.height) + ", encoder expects " +
                          std::to_string(config_.resolution) + "x" + std::to_string(config_.resolution) + " RGB");
    }
    return encode(nn::constant(to_signed_tensor<T>(ref.pixels)), index);
}

template <typename T>
ReferenceTokens<T> ReferenceEncoder<T>::encode(const nn::Var<T>& image, int index) const {
    const auto& s = image->value.shape;
    if (s.size() != 3 || s[0] != 3 || s[1] != config_.resolution || s[2] != config_.resolution) {
        throw ConfigError("reference tensor " + nn::shape_string(s) + " does not match encoder resolution " +
                          std::to_string(config_.resolution));
    }
    auto x = nn::add(patch_embed_(nn::patchify(image, config_.patch)), position_);
    for (const auto& b : blocks_) {
        auto h = b.norm1(x);
        x = nn::add(x, b.attn(h, h));
        x = nn::add(x, b.fc2(nn::silu(b.fc1(b.norm2(x)))));
    }
    x = final_norm_(x);
    ReferenceTokens<T> out;
    out.global = adaptor_(nn::mean_rows(x));
    out.locals = adaptor_(x);
    out.source_ref_index = index;
    return out;
}

template <typename T>
ConditioningTokens<T> concat_references(const std::vector<ReferenceTokens<T>>& token_sets) {
    if (token_sets.empty()) throw ValidationError("no references");
    const int dim = token_sets.front().dim();
    const int locals = token_sets.front().local_count();
    std::vector<nn::Var<T>> rows;
    rows.reserve(token_sets.size() * 2);
    for (const auto& t : token_sets) {
        if (t.dim() != dim || t.locals->value.dim(1) != dim)
            throw ValidationError("reference token width mismatch: " + std::to_string(t.dim()) + " vs " +
                                  std::to_string(dim));
        if (t.local_count() != locals)
            throw ValidationError("reference local token count mismatch: " + std::to_string(t.local_count()) +
                                  " vs " + std::to_string(locals));
        rows.push_back(t.global);
        rows.push_back(t.locals);
    }
    return {nn::concat(rows), static_cast<int>(token_sets.size())};
}

template class ReferenceEncoder<float>;
template class ReferenceEncoder<double>;
template ConditioningTokens<float> concat_references(const std::vector<ReferenceTokens<float>>&);
template ConditioningTokens<double> concat_references(const std::vector<ReferenceTokens<double>>&);

}  // namespace murestitch::encoder
