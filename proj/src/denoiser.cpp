#include "pairlora/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pairlora {

int style_token(int slot) {
    if (slot < 0 || slot >= kNumStyleSlots)
        tensor_fail("style_token: slot " + std::to_string(slot) + " outside [0," +
                    std::to_string(kNumStyleSlots - 1) + "]");
    return kTokenStyleBase + slot;
}

PromptTokens make_prompt(int len, const std::vector<int>& ids) {
    if (int(ids.size()) > len)
        tensor_fail("make_prompt: " + std::to_string(ids.size()) + " ids exceed prompt length " +
                    std::to_string(len));
    PromptTokens p;
    p.ids.assign(size_t(len), kTokenNull);
    std::copy(ids.begin(), ids.end(), p.ids.begin());
    return p;
}

PromptTokens null_prompt(int len) { return make_prompt(len, {}); }

PromptTokens append_token(const PromptTokens& p, int id) {
    PromptTokens out = p;
    for (int& v : out.ids)
        if (v == kTokenNull) {
            v = id;
            return out;
        }
    tensor_fail("append_token: prompt has no free slot");
}

bool is_null_prompt(const PromptTokens& p) {
    return std::all_of(p.ids.begin(), p.ids.end(), [](int v) { return v == kTokenNull; });
}

std::string prompt_to_string(const PromptTokens& p) {
    std::ostringstream os;
    for (size_t i = 0; i < p.ids.size(); ++i) os << (i ? "," : "") << p.ids[i];
    return os.str();
}

PromptTokens prompt_from_string(const std::string& s) {
    PromptTokens p;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) p.ids.push_back(std::stoi(tok));
    return p;
}

std::string DenoiserConfig::arch_tag() const {
    std::ostringstream os;
    os << "unet" << img_res << "x" << img_channels << "_c" << base_channels << "_t"
       << time_embed_dim << "_p" << prompt_embed_dim << "_T" << schedule_T << "_v" << vocab_size
       << "_l" << prompt_len;
    return os.str();
}

namespace {

Tensor init_weight(int m, int n, Rng& rng) {
    return Tensor::randn({m, n}, rng, float(std::sqrt(2.0 / double(n))));
}

}  // namespace

Denoiser::Denoiser(DenoiserConfig cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg_.img_res < 16 || cfg_.img_res % 8 != 0)
        tensor_fail("denoiser: img_res must be a multiple of 8 and >= 16, got " +
                    std::to_string(cfg_.img_res));
    if (cfg_.vocab_size < kTokenStyleBase + kNumStyleSlots)
        tensor_fail("denoiser: vocab too small for reserved tokens");
    int c = cfg_.base_channels;
    level_channels_ = {c, 2 * c, 3 * c, 4 * c};

    Rng rng(seed);
    params_.reserve(64);
    auto add_conv = [&](const std::string& id, int cin, int cout) {
        params_.emplace_back(id + ".w", init_weight(cout, cin * 9, rng), true);
        params_.emplace_back(id + ".b", Tensor::zeros({cout}), true);
    };
    auto add_linear = [&](const std::string& id, int in, int out) {
        params_.emplace_back(id + ".w", init_weight(out, in, rng), true);
        params_.emplace_back(id + ".b", Tensor::zeros({out}), true);
    };
    auto add_ln = [&](const std::string& id, int ch) {
        params_.emplace_back(id + ".g", Tensor::filled({ch}, 1.0f), true);
        params_.emplace_back(id + ".b", Tensor::zeros({ch}), true);
    };

    int prev = cfg_.img_channels;
    for (int L = 0; L < 4; ++L) {
        int ch = level_channels_[size_t(L)];
        add_conv("enc" + std::to_string(L) + "a", prev, ch);
        add_linear("tproj_enc" + std::to_string(L), cfg_.time_embed_dim, ch);
        add_ln("ln_enc" + std::to_string(L), ch);
        add_conv("enc" + std::to_string(L) + "b", ch, ch);
        prev = ch;
    }
    add_conv("mid", level_channels_[3] + cfg_.prompt_embed_dim, level_channels_[3]);
    add_linear("tproj_mid", cfg_.time_embed_dim, level_channels_[3]);
    add_ln("ln_mid", level_channels_[3]);
    for (int L = 2; L >= 0; --L) {
        int ch = level_channels_[size_t(L)];
        int above = level_channels_[size_t(L) + 1];
        add_conv("dec" + std::to_string(L) + "a", above + ch, ch);
        add_linear("tproj_dec" + std::to_string(L), cfg_.time_embed_dim, ch);
        add_ln("ln_dec" + std::to_string(L), ch);
        add_conv("dec" + std::to_string(L) + "b", ch, ch);
    }
    add_conv("out", level_channels_[0], cfg_.img_channels);

    params_.emplace_back("time_table",
                         Tensor::randn({cfg_.schedule_T + 1, cfg_.time_embed_dim}, rng, 0.2f),
                         true);
    params_.emplace_back("token_table",
                         Tensor::randn({cfg_.vocab_size, cfg_.prompt_embed_dim}, rng, 0.2f),
                         true);
}

Param& Denoiser::param(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    tensor_fail("denoiser: no parameter named '" + name + "'");
}

const Param& Denoiser::param(const std::string& name) const {
    return const_cast<Denoiser*>(this)->param(name);
}

std::vector<Param*> Denoiser::params() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Param*> Denoiser::params() const {
    std::vector<const Param*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<Param*> Denoiser::trainable_params() {
    std::vector<Param*> out;
    for (auto& p : params_)
        if (p.trainable) out.push_back(&p);
    return out;
}

int64_t Denoiser::param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void Denoiser::set_trainable(bool trainable) {
    for (auto& p : params_) {
        p.trainable = trainable;
        p.value.set_requires_grad(trainable);
    }
}

std::vector<AttachmentPoint> Denoiser::attachment_points() const {
    std::vector<AttachmentPoint> pts;
    for (const auto& p : params_) {
        if (p.name.size() > 2 && p.name.substr(p.name.size() - 2) == ".w") {
            pts.push_back({p.name.substr(0, p.name.size() - 2), p.value.shape()[0],
                           p.value.shape()[1]});
        }
    }
    return pts;
}

Tensor Denoiser::conv(const std::string& id, const Tensor& x, const CompositionSpec& comp) const {
    Tensor w = effective_weight(p(id + ".w").value, id, comp);
    return conv2d_3x3(x, w, p(id + ".b").value);
}

Tensor Denoiser::proj(const std::string& id, const Tensor& v, const CompositionSpec& comp) const {
    Tensor w = effective_weight(p(id + ".w").value, id, comp);
    return linear(v, w, p(id + ".b").value);
}

Tensor Denoiser::forward(const Tensor& x, const std::vector<PromptTokens>& prompts,
                         const std::vector<int>& ts, const CompositionSpec& comp) const {
    if (x.shape().size() != 4 || x.shape()[1] != cfg_.img_channels ||
        x.shape()[2] != cfg_.img_res || x.shape()[3] != cfg_.img_res)
        tensor_fail("denoiser: input shape " + shape_str(x.shape()) + " does not match config " +
                    cfg_.arch_tag());
    int N = x.shape()[0];
    if (int(prompts.size()) != N || int(ts.size()) != N)
        tensor_fail("denoiser: need one prompt and timestep per sample");
    std::vector<int> prompt_ids;
    prompt_ids.reserve(size_t(N) * cfg_.prompt_len);
    for (const auto& pr : prompts) {
        if (int(pr.ids.size()) != cfg_.prompt_len)
            tensor_fail("denoiser: prompt length " + std::to_string(pr.ids.size()) +
                        " != configured " + std::to_string(cfg_.prompt_len));
        prompt_ids.insert(prompt_ids.end(), pr.ids.begin(), pr.ids.end());
    }
    for (int t : ts)
        if (t < 0 || t > cfg_.schedule_T)
            tensor_fail("denoiser: timestep " + std::to_string(t) + " outside [0," +
                        std::to_string(cfg_.schedule_T) + "]");

    Tensor temb = embed_mean(p("time_table").value, ts, 1);
    Tensor temb_act = silu(temb);
    Tensor pemb = embed_mean(p("token_table").value, prompt_ids, cfg_.prompt_len);

    auto block = [&](const Tensor& in, const std::string& conv_a, const std::string& tproj,
                     const std::string& ln, const std::string& conv_b) {
        Tensor h = conv(conv_a, in, comp);
        h = add_channel_vec(h, proj(tproj, temb_act, comp));
        h = silu(layernorm_channels(h, p(ln + ".g").value, p(ln + ".b").value));
        if (!conv_b.empty()) h = conv(conv_b, h, comp);
        return h;
    };

    std::vector<Tensor> skips;
    Tensor h = x;
    for (int L = 0; L < 4; ++L) {
        if (L > 0) h = avg_pool2(h);
        std::string l = std::to_string(L);
        h = block(h, "enc" + l + "a", "tproj_enc" + l, "ln_enc" + l, "enc" + l + "b");
        skips.push_back(h);
    }

    int bres = cfg_.img_res / 8;
    h = concat_channels(skips[3], broadcast_spatial(pemb, bres, bres));
    h = block(h, "mid", "tproj_mid", "ln_mid", "");

    for (int L = 2; L >= 0; --L) {
        std::string l = std::to_string(L);
        h = upsample_nearest2(h);
        h = concat_channels(h, skips[size_t(L)]);
        h = block(h, "dec" + l + "a", "tproj_dec" + l, "ln_dec" + l, "dec" + l + "b");
    }
    return conv("out", h, comp);
}

Tensor Denoiser::predict(const Tensor& x_t, const PromptTokens& prompt, int t,
                         const CompositionSpec& comp) const {
    return forward(x_t, {prompt}, {t}, comp);
}

Tensor Denoiser::embed_prompt(const PromptTokens& tokens) const {
    if (int(tokens.ids.size()) != cfg_.prompt_len)
        tensor_fail("embed_prompt: prompt length mismatch");
    return embed_mean(p("token_table").value, tokens.ids, cfg_.prompt_len);
}

Tensor predict_noise(const Denoiser& model, const Tensor& x_t, const PromptTokens& prompt,
                     int t, const CompositionSpec& comp) {
    return model.predict(x_t, prompt, t, comp);
}

}  // namespace pairlora
