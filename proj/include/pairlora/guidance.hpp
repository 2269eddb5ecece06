#pragma once

// Classifier-free guidance, style guidance, multi-style blending and the
// scheduled plain-CFG warm start. All combinations run through one
// coefficient-form combiner over shared sub-evaluations, so the reduction
// identities (empty styles == CFG, lambda_style=0 == CFG, single-style blend
// == style guidance, lambda_style=lambda_cfg cancellation) hold as exact
// floating-point equalities.

#include <span>
#include <vector>

#include "pairlora/adapters.hpp"
#include "pairlora/denoiser.hpp"
#include "pairlora/schedule.hpp"

namespace pairlora {

struct StyleTerm {
    const AdapterSet* adapter = nullptr;
    PromptTokens style_prompt;
    float lambda_style = 3.0f;
};

struct GuidanceConfig {
    float lambda_cfg = 5.0f;       // Fig. 5 defaults: cfg 5, style 3
    std::vector<StyleTerm> styles;
    int switch_step = 10;          // plain CFG for the first k of N steps
    PromptTokens content_prompt;
};

// sub-evaluations shared across guidance terms for one (x_t, t)
struct GuidanceTerms {
    Tensor e_uncond;               // base model, null prompt
    Tensor e_cond;                 // base model, content prompt
    std::vector<Tensor> e_style;   // style model i, style prompt i
};

GuidanceTerms evaluate_guidance_terms(const NoisePredictor& model, const Tensor& x_t, int t,
                                      const PromptTokens& c,
                                      std::span<const StyleTerm> styles);

// (1-lcfg)*e_uncond + (lcfg-sum(ls))*e_cond + sum_i ls_i*e_style_i; the style
// contribution is accumulated separately and added once
Tensor combine_guidance(const GuidanceTerms& terms, float lambda_cfg,
                        std::span<const float> lambda_styles);

Tensor cfg_predict(const NoisePredictor& model, const Tensor& x_t, const PromptTokens& c, int t,
                   float lambda_cfg);

Tensor style_guidance_predict(const NoisePredictor& model, const AdapterSet& style_adapter,
                              const Tensor& x_t, const PromptTokens& c,
                              const PromptTokens& c_style, int t, float lambda_cfg,
                              float lambda_style);

Tensor blend_predict(const NoisePredictor& model, const GuidanceConfig& g, const Tensor& x_t,
                     int t);

// cfg_predict for step_index < switch_step, blend_predict after
Tensor scheduled_predict(int step_index, int num_steps, const NoisePredictor& model,
                         const GuidanceConfig& g, const Tensor& x_t, int t);

// the conventional LoRA-scale alternative: CFG with the adapter applied at
// weight-scale alpha on both legs, style prompt conditioning
Tensor lora_scale_predict(const NoisePredictor& model, const AdapterSet& adapter, float alpha,
                          const Tensor& x_t, const PromptTokens& c_style, int t,
                          float lambda_cfg);

// sampler glue
GuidedPredictor make_style_guidance_predictor(const NoisePredictor& model,
                                              const GuidanceConfig& g);
GuidedPredictor make_lora_scale_predictor(const NoisePredictor& model, const AdapterSet& adapter,
                                          float alpha, const PromptTokens& c,
                                          const PromptTokens& c_style, float lambda_cfg,
                                          int switch_step);

}  // namespace pairlora
