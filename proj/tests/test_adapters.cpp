#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pairlora/adapters.hpp"
#include "pairlora/denoiser.hpp"

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

// AAt entries computed in f64 from stored f32 values
double max_ortho_dev(const Tensor& a, const Tensor& b, bool expect_identity) {
    int ra = a.shape()[0], rb = b.shape()[0], n = a.shape()[1];
    double worst = 0.0;
    for (int i = 0; i < ra; ++i)
        for (int j = 0; j < rb; ++j) {
            double dot = 0.0;
            for (int k = 0; k < n; ++k)
                dot += double(a.data()[size_t(i) * n + k]) * double(b.data()[size_t(j) * n + k]);
            double want = (expect_identity && i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(dot - want));
        }
    return worst;
}

}  // namespace

TEST_CASE("init_orthogonal_pair: AAt = I and cross products vanish, < 1e-6") {
    for (auto [m, n, r] : {std::tuple{12, 108, 4}, {3, 27, 4}, {48, 576, 8}}) {
        auto [content, style] = init_orthogonal_pair(m, n, r, 1234, "layer");
        CHECK(max_ortho_dev(content.A.value, content.A.value, true) < 1e-6);
        CHECK(max_ortho_dev(style.A.value, style.A.value, true) < 1e-6);
        CHECK(max_ortho_dev(content.A.value, style.A.value, false) < 1e-6);
        for (float v : content.B.value.data()) CHECK(v == 0.0f);
        for (float v : style.B.value.data()) CHECK(v == 0.0f);
        CHECK_FALSE(content.A.trainable);
        CHECK_FALSE(style.A.trainable);
    }
}

TEST_CASE("init_orthogonal_pair: 2r > n is an error") {
    CHECK_THROWS_AS(init_orthogonal_pair(4, 6, 4, 1, "x"), std::runtime_error);
}

TEST_CASE("init_orthogonal_pair: deterministic in the seed") {
    auto [c1, s1] = init_orthogonal_pair(6, 30, 3, 77, "x");
    auto [c2, s2] = init_orthogonal_pair(6, 30, 3, 77, "x");
    for (int64_t i = 0; i < c1.A.value.numel(); ++i)
        CHECK(c1.A.value.data()[size_t(i)] == c2.A.value.data()[size_t(i)]);
    for (int64_t i = 0; i < s1.A.value.numel(); ++i)
        CHECK(s1.A.value.data()[size_t(i)] == s2.A.value.data()[size_t(i)]);
}

TEST_CASE("effective_weight: all-zero scales return W0 bitwise (same node)") {
    Rng rng(5);
    auto w0 = Tensor::randn({6, 20}, rng);
    auto [content, style] = init_orthogonal_pair(6, 20, 2, 9, "L");
    AdapterSet set;
    set.layers.emplace("L", std::move(content));
    CompositionSpec comp = {{&set, 0.0f, false}};
    Tensor w = effective_weight(w0, "L", comp);
    CHECK(w.node() == w0.node());
}

TEST_CASE("effective_weight: single adapter at scale 1 equals W0 + BA") {
    Rng rng(7);
    auto w0 = Tensor::randn({6, 20}, rng);
    auto [content, style] = init_orthogonal_pair(6, 20, 2, 11, "L");
    // nonzero B
    for (auto& v : content.B.value.data()) v = float(rng.normal()) * 0.3f;
    AdapterSet set;
    set.layers.emplace("L", std::move(content));
    CompositionSpec comp = {{&set, 1.0f, false}};
    Tensor w = effective_weight(w0, "L", comp);

    const LoraLayer& l = set.layers.at("L");
    auto delta = matmul(l.B.value, l.A.value);
    for (int64_t i = 0; i < w.numel(); ++i)
        CHECK(w.data()[size_t(i)] ==
              doctest::Approx(w0.data()[size_t(i)] + delta.data()[size_t(i)]).epsilon(1e-6));
}

TEST_CASE("effective_weight: linear in alpha (three-point collinearity)") {
    Rng rng(13);
    auto w0 = Tensor::randn({4, 16}, rng);
    auto [content, style] = init_orthogonal_pair(4, 16, 2, 21, "L");
    for (auto& v : style.B.value.data()) v = float(rng.normal());
    AdapterSet set;
    set.layers.emplace("L", std::move(style));
    auto at = [&](float a) {
        CompositionSpec comp = {{&set, a, false}};
        return effective_weight(w0, "L", comp);
    };
    auto w_0 = at(0.0f), w_h = at(0.5f), w_1 = at(1.0f);
    for (int64_t i = 0; i < w0.numel(); ++i) {
        float mid = 0.5f * (w_0.data()[size_t(i)] + w_1.data()[size_t(i)]);
        CHECK(w_h.data()[size_t(i)] == doctest::Approx(mid).epsilon(1e-5));
    }
}

TEST_CASE("effective_weight: stopgrad keeps the forward value, kills the gradient") {
    Rng rng(17);
    auto w0 = Tensor::randn({4, 16}, rng);
    auto [content, style] = init_orthogonal_pair(4, 16, 2, 23, "L");
    for (auto& v : content.B.value.data()) v = float(rng.normal()) * 0.5f;
    for (auto& v : style.B.value.data()) v = float(rng.normal()) * 0.5f;
    AdapterSet cset, sset;
    cset.layers.emplace("L", std::move(content));
    sset.layers.emplace("L", std::move(style));

    CompositionSpec plain = {{&cset, 1.0f, false}, {&sset, 1.0f, false}};
    CompositionSpec sg = {{&cset, 1.0f, true}, {&sset, 1.0f, false}};
    auto w_plain = effective_weight(w0, "L", plain);
    auto w_sg = effective_weight(w0, "L", sg);
    for (int64_t i = 0; i < w0.numel(); ++i)
        CHECK(w_plain.data()[size_t(i)] == w_sg.data()[size_t(i)]);

    // autodiff gradient of a loss through the stopgrad weight w.r.t. B_content is 0,
    // while finite differences see nonzero sensitivity of the forward value
    auto x = Tensor::randn({16, 3}, rng);
    auto target = Tensor::randn({4, 3}, rng);
    auto loss = mse(matmul(w_sg, x), target);
    backward(loss);
    LoraLayer& lc = cset.layers.at("L");
    for (float g : lc.B.grad()) CHECK(g == 0.0f);
    LoraLayer& ls = sset.layers.at("L");
    bool any_nonzero = false;
    for (float g : ls.B.grad()) any_nonzero |= (g != 0.0f);
    CHECK(any_nonzero);

    // finite-difference sensitivity of the loss to B_content is NOT zero
    float h = 1e-2f;
    auto loss_at = [&] {
        return mse(matmul(effective_weight(w0, "L", sg), x), target).item();
    };
    float base = loss_at();
    lc.B.value.data()[0] += h;
    float bumped = loss_at();
    lc.B.value.data()[0] -= h;
    CHECK(std::abs(bumped - base) > 1e-6f);
}

TEST_CASE("effective_weight: dim mismatch names the layer") {
    Rng rng(19);
    auto w0 = Tensor::randn({5, 16}, rng);  // adapter built for m=4
    auto [content, style] = init_orthogonal_pair(4, 16, 2, 25, "badlayer");
    AdapterSet set;
    set.layers.emplace("badlayer", std::move(content));
    CompositionSpec comp = {{&set, 1.0f, false}};
    try {
        effective_weight(w0, "badlayer", comp);
        FAIL("expected throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("badlayer") != std::string::npos);
    }
}

TEST_CASE("delta_w annihilates vectors orthogonal to rowspace(A)") {
    Rng rng(29);
    int m = 6, n = 24, r = 3;
    auto [content, style] = init_orthogonal_pair(m, n, r, 31, "L");
    for (auto& v : content.B.value.data()) v = float(rng.normal());
    auto delta = matmul(content.B.value, content.A.value);
    // v orthogonal to rowspace(A_content): any row of A_style qualifies
    for (int row = 0; row < r; ++row) {
        for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
                acc += double(delta.data()[size_t(i) * n + j]) *
                       double(style.A.value.data()[size_t(row) * n + j]);
            CHECK(std::abs(acc) < 1e-5);
        }
    }
}

TEST_CASE("adapter save/load round trip is bit-identical") {
    DenoiserConfig cfg = tiny_cfg();
    Denoiser model(cfg, 42);
    auto [content, style] = make_orthogonal_adapter_pair(model, 2, 99);
    Rng rng(31);
    for (auto& [id, layer] : style.layers)
        for (auto& v : layer.B.value.data()) v = float(rng.normal());
    style.style_slot = 1;
    style.style_kind = "posterize";
    style.category = "face";

    auto path = std::filesystem::temp_directory_path() / "pairlora_test_adapter.bin";
    save_adapter_set(style, path.string());
    AdapterSet loaded = load_adapter_set(path.string());

    CHECK(loaded.role == style.role);
    CHECK(loaded.style_slot == 1);
    CHECK(loaded.style_kind == "posterize");
    REQUIRE(loaded.layers.size() == style.layers.size());
    for (const auto& [id, layer] : style.layers) {
        const auto& l2 = loaded.layers.at(id);
        CHECK_FALSE(l2.A.trainable);
        for (int64_t i = 0; i < layer.A.value.numel(); ++i)
            CHECK(l2.A.value.data()[size_t(i)] == layer.A.value.data()[size_t(i)]);
        for (int64_t i = 0; i < layer.B.value.numel(); ++i)
            CHECK(l2.B.value.data()[size_t(i)] == layer.B.value.data()[size_t(i)]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("adapter load: mismatched architecture errors naming the layer") {
    DenoiserConfig cfg = tiny_cfg();
    Denoiser model(cfg, 42);
    auto [content, style] = make_orthogonal_adapter_pair(model, 2, 99);

    DenoiserConfig other = tiny_cfg();
    other.base_channels = 6;
    Denoiser model2(other, 43);
    try {
        check_adapter_compatible(model2, style);
        FAIL("expected throw");
    } catch (const std::runtime_error& e) {
        // must name the offending layer (first mismatch in map order)
        CHECK(std::string(e.what()).find("layer 'dec0a'") != std::string::npos);
    }
}

TEST_CASE("adapter load: truncated file errors, no partial state") {
    DenoiserConfig cfg = tiny_cfg();
    Denoiser model(cfg, 42);
    auto [content, style] = make_orthogonal_adapter_pair(model, 2, 7);
    auto path = std::filesystem::temp_directory_path() / "pairlora_test_trunc.bin";
    save_adapter_set(content, path.string());

    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_adapter_set(path.string()), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("make_orthogonal_adapter_pair covers every attachment point") {
    DenoiserConfig cfg = tiny_cfg();
    Denoiser model(cfg, 1);
    auto [content, style] = make_orthogonal_adapter_pair(model, 2, 2);
    auto pts = model.attachment_points();
    CHECK(content.layers.size() == pts.size());
    CHECK(style.layers.size() == pts.size());
    for (const auto& pt : pts) {
        CHECK(content.layers.count(pt.layer_id) == 1);
        CHECK(style.layers.count(pt.layer_id) == 1);
    }
    check_adapter_compatible(model, content);
    check_adapter_compatible(model, style);
}
