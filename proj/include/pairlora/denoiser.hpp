#pragma once

// A small conditional noise-prediction network: 4-level conv encoder/decoder
// with skip connections, a learned timestep-embedding table added per level,
// and a mean-pooled token embedding concatenated at the bottleneck. Discrete
// token ids stand in for text prompts.

#include <string>
#include <vector>

#include "pairlora/adapters.hpp"
#include "pairlora/optim.hpp"
#include "pairlora/tensor.hpp"

namespace pairlora {

// reserved token ids; category ids are a dataset convention (see pairgen)
inline constexpr int kTokenNull = 0;   // padding / unconditional
inline constexpr int kTokenVStar = 1;  // rare content-binding token
inline constexpr int kTokenStyleBase = 2;
inline constexpr int kNumStyleSlots = 8;

int style_token(int slot);

struct PromptTokens {
    std::vector<int> ids;  // fixed length, NULL-padded

    bool operator==(const PromptTokens&) const = default;
};

PromptTokens make_prompt(int len, const std::vector<int>& ids);
PromptTokens null_prompt(int len);
// writes id into the first NULL slot (the "appended by suffix" convention)
PromptTokens append_token(const PromptTokens& p, int id);
bool is_null_prompt(const PromptTokens& p);
std::string prompt_to_string(const PromptTokens& p);
PromptTokens prompt_from_string(const std::string& s);

struct DenoiserConfig {
    int img_res = 32;
    int img_channels = 3;
    int base_channels = 12;  // level widths: c, 2c, 3c, 4c
    int time_embed_dim = 16;
    int prompt_embed_dim = 16;
    int schedule_T = 1000;  // time table rows = T+1
    int vocab_size = 64;
    int prompt_len = 8;

    std::string arch_tag() const;
};

struct AttachmentPoint {
    std::string layer_id;
    int m = 0;  // weight rows (outputs)
    int n = 0;  // weight cols (inputs; conv kernels flattened)
};

// interface guidance works against, so stub denoisers can drive tests
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Tensor predict(const Tensor& x_t, const PromptTokens& prompt, int t,
                           const CompositionSpec& comp) const = 0;
};

class Denoiser : public NoisePredictor {
public:
    Denoiser(DenoiserConfig cfg, uint64_t seed);
    Denoiser(const Denoiser&) = delete;
    Denoiser& operator=(const Denoiser&) = delete;

    // batched forward: x [N,C,H,W], one prompt and timestep per sample
    Tensor forward(const Tensor& x, const std::vector<PromptTokens>& prompts,
                   const std::vector<int>& ts, const CompositionSpec& comp = {}) const;

    Tensor predict(const Tensor& x_t, const PromptTokens& prompt, int t,
                   const CompositionSpec& comp) const override;

    // deterministic mean-of-token-embeddings pooling -> [1, prompt_embed_dim]
    Tensor embed_prompt(const PromptTokens& tokens) const;

    const DenoiserConfig& config() const { return cfg_; }
    std::vector<AttachmentPoint> attachment_points() const;

    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    std::vector<Param*> trainable_params();
    Param& param(const std::string& name);
    const Param& param(const std::string& name) const;
    int64_t param_count() const;

    void set_trainable(bool trainable);  // freeze/unfreeze the base weights

private:
    DenoiserConfig cfg_;
    std::vector<Param> params_;
    std::vector<int> level_channels_;

    Param& p(const std::string& name) { return param(name); }
    const Param& p(const std::string& name) const { return param(name); }
    Tensor conv(const std::string& id, const Tensor& x, const CompositionSpec& comp) const;
    Tensor proj(const std::string& id, const Tensor& v, const CompositionSpec& comp) const;
};

// eps_hat for a single sample; validates shapes/timestep
Tensor predict_noise(const Denoiser& model, const Tensor& x_t, const PromptTokens& prompt,
                     int t, const CompositionSpec& comp = {});

}  // namespace pairlora
