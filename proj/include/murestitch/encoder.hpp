#pragma once

#include <vector>

#include "murestitch/dataprep.hpp"
#include "murestitch/nn/layers.hpp"

namespace murestitch::encoder {

struct EncoderConfig {
    int resolution = 64;  // R, reference canvas side
    int patch = 8;        // P
    int embed_dim = 128;  // backbone width
    int cond_dim = 128;   // D, adaptor output = denoiser cross-attention context width
    int blocks = 2;
    int mlp_ratio = 2;

    int local_tokens() const { return (resolution / patch) * (resolution / patch); }
    int tokens_per_reference() const { return 1 + local_tokens(); }
    void validate() const;
};

// Conditioning features of one reference: one global row and L local rows.
template <typename T>
struct ReferenceTokens {
    nn::Var<T> global;  // [1, D]
    nn::Var<T> locals;  // [L, D]
    int source_ref_index = 0;

    int dim() const { return global->value.dim(1); }
    int local_count() const { return locals->value.dim(0); }
};

// K reference token sets joined into one [K (1 + L), D] key/value sequence.
template <typename T>
struct ConditioningTokens {
    nn::Var<T> tokens;
    int ref_count = 0;

    int length() const { return tokens->value.dim(0); }
    int dim() const { return tokens->value.dim(1); }
};

// Patchify -> linear embed (+ per-patch position) -> pre-norm self-attention
// blocks -> shared linear adaptor. The global token is the adaptor applied to
// the mean-pooled backbone output.
template <typename T>
class ReferenceEncoder {
public:
    ReferenceEncoder() = default;
    ReferenceEncoder(nn::ParameterSet<T>& params, const EncoderConfig& config);

    ReferenceTokens<T> encode(const dataprep::ReferenceImage& ref, int index = 0) const;
    // image: [3, R, R] in [-1, 1]
    ReferenceTokens<T> encode(const nn::Var<T>& image, int index = 0) const;

    const EncoderConfig& config() const { return config_; }

private:
    struct Block {
        nn::LayerNorm<T> norm1, norm2;
        nn::Attention<T> attn;
        nn::Linear<T> fc1, fc2;
    };

    EncoderConfig config_;
    nn::Linear<T> patch_embed_;
    nn::Var<T> position_;
    std::vector<Block> blocks_;
    nn::LayerNorm<T> final_norm_;
    nn::Linear<T> adaptor_;
};

// Throws ValidationError("no references") on an empty list and on
// mismatched widths or token counts.
template <typename T>
ConditioningTokens<T> concat_references(const std::vector<ReferenceTokens<T>>& token_sets);

}  // namespace murestitch::encoder
