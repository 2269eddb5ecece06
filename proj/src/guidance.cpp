#include "pairlora/guidance.hpp"

namespace pairlora {

GuidanceTerms evaluate_guidance_terms(const NoisePredictor& model, const Tensor& x_t, int t,
                                      const PromptTokens& c,
                                      std::span<const StyleTerm> styles) {
    NoGradGuard ng;
    GuidanceTerms terms;
    PromptTokens null_c = null_prompt(int(c.ids.size()));
    terms.e_uncond = model.predict(x_t, null_c, t, {});
    terms.e_cond = model.predict(x_t, c, t, {});
    for (const auto& s : styles) {
        if (!s.adapter) tensor_fail("guidance: style term without an adapter");
        CompositionSpec comp = {{s.adapter, 1.0f, false}};
        terms.e_style.push_back(model.predict(x_t, s.style_prompt, t, comp));
    }
    return terms;
}

Tensor combine_guidance(const GuidanceTerms& terms, float lambda_cfg,
                        std::span<const float> lambda_styles) {
    if (lambda_styles.size() != terms.e_style.size())
        tensor_fail("combine_guidance: " + std::to_string(lambda_styles.size()) +
                    " strengths for " + std::to_string(terms.e_style.size()) + " style terms");
    check_same_shape("combine_guidance", terms.e_uncond, terms.e_cond);

    float sum_ls = 0.0f;
    for (float l : lambda_styles) sum_ls += l;
    float cu = 1.0f - lambda_cfg;
    float cc = lambda_cfg - sum_ls;

    auto eu = terms.e_uncond.data();
    auto ec = terms.e_cond.data();
    Tensor out = Tensor::zeros(terms.e_uncond.shape());
    auto od = out.data();
    for (size_t j = 0; j < od.size(); ++j) od[j] = cu * eu[j] + cc * ec[j];

    if (!terms.e_style.empty()) {
        std::vector<float> ss(od.size(), 0.0f);
        for (size_t i = 0; i < terms.e_style.size(); ++i) {
            check_same_shape("combine_guidance", terms.e_uncond, terms.e_style[i]);
            float ls = lambda_styles[i];
            auto es = terms.e_style[i].data();
            for (size_t j = 0; j < ss.size(); ++j) ss[j] += ls * es[j];
        }
        for (size_t j = 0; j < od.size(); ++j) od[j] += ss[j];
    }
    return out;
}

Tensor cfg_predict(const NoisePredictor& model, const Tensor& x_t, const PromptTokens& c, int t,
                   float lambda_cfg) {
    auto terms = evaluate_guidance_terms(model, x_t, t, c, {});
    return combine_guidance(terms, lambda_cfg, {});
}

Tensor style_guidance_predict(const NoisePredictor& model, const AdapterSet& style_adapter,
                              const Tensor& x_t, const PromptTokens& c,
                              const PromptTokens& c_style, int t, float lambda_cfg,
                              float lambda_style) {
    GuidanceConfig g;
    g.lambda_cfg = lambda_cfg;
    g.content_prompt = c;
    g.styles.push_back({&style_adapter, c_style, lambda_style});
    return blend_predict(model, g, x_t, t);
}

Tensor blend_predict(const NoisePredictor& model, const GuidanceConfig& g, const Tensor& x_t,
                     int t) {
    auto terms = evaluate_guidance_terms(model, x_t, t, g.content_prompt, g.styles);
    std::vector<float> ls;
    ls.reserve(g.styles.size());
    for (const auto& s : g.styles) ls.push_back(s.lambda_style);
    return combine_guidance(terms, g.lambda_cfg, ls);
}

Tensor scheduled_predict(int step_index, int num_steps, const NoisePredictor& model,
                         const GuidanceConfig& g, const Tensor& x_t, int t) {
    if (step_index < 0 || step_index >= num_steps)
        tensor_fail("scheduled_predict: step index " + std::to_string(step_index) +
                    " outside [0," + std::to_string(num_steps) + ")");
    if (step_index < g.switch_step)
        return cfg_predict(model, x_t, g.content_prompt, t, g.lambda_cfg);
    return blend_predict(model, g, x_t, t);
}

Tensor lora_scale_predict(const NoisePredictor& model, const AdapterSet& adapter, float alpha,
                          const Tensor& x_t, const PromptTokens& c_style, int t,
                          float lambda_cfg) {
    NoGradGuard ng;
    CompositionSpec comp = {{&adapter, alpha, false}};
    GuidanceTerms terms;
    terms.e_uncond = model.predict(x_t, null_prompt(int(c_style.ids.size())), t, comp);
    terms.e_cond = model.predict(x_t, c_style, t, comp);
    return combine_guidance(terms, lambda_cfg, {});
}

GuidedPredictor make_style_guidance_predictor(const NoisePredictor& model,
                                              const GuidanceConfig& g) {
    return [&model, g](const Tensor& x, int t, int step_index, int num_steps) {
        return scheduled_predict(step_index, num_steps, model, g, x, t);
    };
}

GuidedPredictor make_lora_scale_predictor(const NoisePredictor& model, const AdapterSet& adapter,
                                          float alpha, const PromptTokens& c,
                                          const PromptTokens& c_style, float lambda_cfg,
                                          int switch_step) {
    return [&model, &adapter, alpha, c, c_style, lambda_cfg, switch_step](
               const Tensor& x, int t, int step_index, int) {
        if (step_index < switch_step) return cfg_predict(model, x, c, t, lambda_cfg);
        return lora_scale_predict(model, adapter, alpha, x, c_style, t, lambda_cfg);
    };
}

}  // namespace pairlora
