#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>

#include "pairlora/adapters.hpp"
#include "pairlora/denoiser.hpp"
#include "pairlora/optim.hpp"
#include "pairlora/schedule.hpp"

using namespace pairlora;

namespace {

DenoiserConfig tiny_cfg() {
    DenoiserConfig cfg;
    cfg.img_res = 16;
    cfg.base_channels = 4;
    cfg.time_embed_dim = 8;
    cfg.prompt_embed_dim = 8;
    cfg.schedule_T = 50;
    return cfg;
}

}  // namespace

TEST_CASE("prompt helpers: append writes the first NULL slot, order-sensitive") {
    auto c = make_prompt(8, {10, kTokenVStar});
    auto cs = append_token(c, style_token(0));
    CHECK(cs.ids == std::vector<int>{10, kTokenVStar, 2, 0, 0, 0, 0, 0});
    CHECK(is_null_prompt(null_prompt(8)));
    CHECK_FALSE(is_null_prompt(c));
    auto full = make_prompt(2, {3, 4});
    CHECK_THROWS_AS(append_token(full, 5), std::runtime_error);
    CHECK(prompt_from_string(prompt_to_string(cs)) == cs);
}

TEST_CASE("forward: output shape equals input shape for all valid t") {
    auto cfg = tiny_cfg();
    Denoiser model(cfg, 7);
    NoGradGuard ng;
    Rng rng(3);
    auto x = Tensor::randn({2, 3, 16, 16}, rng);
    for (int t : {0, 25, 50}) {
        auto out = model.forward(x, {null_prompt(8), make_prompt(8, {10})}, {t, t});
        CHECK(out.shape() == x.shape());
        CHECK(out.all_finite());
    }
}

TEST_CASE("forward: zero-scale adapters are exact no-ops (bitwise)") {
    auto cfg = tiny_cfg();
    Denoiser model(cfg, 7);
    auto [content, style] = make_orthogonal_adapter_pair(model, 2, 5);
    Rng rng(9);
    for (auto& [id, layer] : style.layers)
        for (auto& v : layer.B.value.data()) v = float(rng.normal());

    NoGradGuard ng;
    auto x = Tensor::randn({1, 3, 16, 16}, rng);
    auto prompt = make_prompt(8, {11});
    auto base = model.predict(x, prompt, 10, {});
    CompositionSpec zero = {{&style, 0.0f, false}, {&content, 0.0f, false}};
    auto with_zero = model.predict(x, prompt, 10, zero);
    for (int64_t i = 0; i < base.numel(); ++i)
        CHECK(base.data()[size_t(i)] == with_zero.data()[size_t(i)]);

    // nonzero scale changes the output
    CompositionSpec one = {{&style, 1.0f, false}};
    auto with_one = model.predict(x, prompt, 10, one);
    double diff = 0.0;
    for (int64_t i = 0; i < base.numel(); ++i)
        diff += std::abs(double(base.data()[size_t(i)]) - double(with_one.data()[size_t(i)]));
    CHECK(diff > 0.0);
}

TEST_CASE("forward: unknown token id and bad timestep are errors") {
    auto cfg = tiny_cfg();
    Denoiser model(cfg, 7);
    NoGradGuard ng;
    Rng rng(11);
    auto x = Tensor::randn({1, 3, 16, 16}, rng);
    CHECK_THROWS_AS(model.predict(x, make_prompt(8, {cfg.vocab_size}), 5, {}),
                    std::runtime_error);
    CHECK_THROWS_AS(model.predict(x, null_prompt(8), cfg.schedule_T + 1, {}),
                    std::runtime_error);
}

TEST_CASE("embed_prompt: NULL-only prompt gives the null embedding row") {
    auto cfg = tiny_cfg();
    Denoiser model(cfg, 7);
    NoGradGuard ng;
    auto e = model.embed_prompt(null_prompt(8));
    const auto& table = model.param("token_table").value;
    for (int d = 0; d < cfg.prompt_embed_dim; ++d)
        CHECK(e.data()[size_t(d)] ==
              doctest::Approx(table.data()[size_t(kTokenNull) * cfg.prompt_embed_dim + d])
                  .epsilon(1e-6));
}

TEST_CASE("embed_prompt: mean pooling computed by hand; c vs c_style differ by the style row") {
    auto cfg = tiny_cfg();
    Denoiser model(cfg, 7);
    NoGradGuard ng;
    auto c = make_prompt(8, {10, kTokenVStar});
    auto cs = append_token(c, style_token(2));
    auto ec = model.embed_prompt(c);
    auto ecs = model.embed_prompt(cs);
    const auto& table = model.param("token_table").value;
    int D = cfg.prompt_embed_dim;

    // hand-computed pools
    for (int d = 0; d < D; ++d) {
        double pool_c = 0.0, pool_cs = 0.0;
        for (int slot = 0; slot < 8; ++slot) {
            pool_c += table.data()[size_t(c.ids[size_t(slot)]) * D + d];
            pool_cs += table.data()[size_t(cs.ids[size_t(slot)]) * D + d];
        }
        CHECK(ec.data()[size_t(d)] == doctest::Approx(pool_c / 8.0).epsilon(1e-5));
        CHECK(ecs.data()[size_t(d)] == doctest::Approx(pool_cs / 8.0).epsilon(1e-5));
        // difference is exactly the STYLE_k-for-NULL swap contribution
        double want = (table.data()[size_t(style_token(2)) * D + d] -
                       table.data()[size_t(kTokenNull) * D + d]) /
                      8.0;
        CHECK(double(ecs.data()[size_t(d)]) - double(ec.data()[size_t(d)]) ==
              doctest::Approx(want).epsilon(1e-5));
    }

    // mean pooling is order-insensitive for the same multiset of ids
    auto swapped = make_prompt(8, {kTokenVStar, 10});
    auto es = model.embed_prompt(swapped);
    for (int d = 0; d < D; ++d)
        CHECK(es.data()[size_t(d)] == doctest::Approx(ec.data()[size_t(d)]).epsilon(1e-7));
}

TEST_CASE("default config stays under ~200k params and predicts in < 20 ms") {
    DenoiserConfig cfg;  // defaults: 32x32, c=12
    Denoiser model(cfg, 1);
    CHECK(model.param_count() <= 200000);
    INFO("param count ", model.param_count());

    NoGradGuard ng;
    Rng rng(2);
    auto x = Tensor::randn({1, 3, 32, 32}, rng);
    auto prompt = make_prompt(8, {10});
    model.predict(x, prompt, 500, {});  // warm up

    const int reps = 20;
    std::vector<double> times;
    for (int i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        auto out = model.predict(x, prompt, 500, {});
        auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    double median = times[times.size() / 2];
    INFO("median predict_noise ms: ", median);
    CHECK(median < 20.0);
}

TEST_CASE("trained-ish model: changing the prompt changes the output") {
    // a few optimization steps are enough to make conditioning matter
    auto cfg = tiny_cfg();
    Denoiser model(cfg, 7);
    auto s = make_schedule(cfg.schedule_T, ScheduleKind::linear_beta);
    Rng rng(13);
    auto opt_params = model.trainable_params();
    AdamW opt(opt_params, {.lr = 1e-3f});
    auto x0a = Tensor::randn({1, 3, 16, 16}, rng, 0.5f);
    auto x0b = scalar_mul(x0a, -1.0f);
    for (int step = 0; step < 30; ++step) {
        opt.zero_grad();
        int t = rng.uniform_int(1, cfg.schedule_T);
        auto eps = Tensor::randn({1, 3, 16, 16}, rng);
        bool pick_a = step % 2 == 0;
        auto xt = forward_diffuse(pick_a ? x0a : x0b, t, eps, s);
        auto pred = model.predict(xt, make_prompt(8, {pick_a ? 10 : 11}), t, {});
        backward(mse(pred, eps));
        opt.step();
    }
    NoGradGuard ng;
    auto xt = forward_diffuse(x0a, 25, Tensor::randn({1, 3, 16, 16}, rng), s);
    auto pa = model.predict(xt, make_prompt(8, {10}), 25, {});
    auto pb = model.predict(xt, make_prompt(8, {11}), 25, {});
    double l2 = 0.0;
    for (int64_t i = 0; i < pa.numel(); ++i) {
        double d = double(pa.data()[size_t(i)]) - double(pb.data()[size_t(i)]);
        l2 += d * d;
    }
    CHECK(l2 > 0.0);
}
