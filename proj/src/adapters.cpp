#include "pairlora/adapters.hpp"

#include <cmath>

#include "pairlora/checkpoint.hpp"
#include "pairlora/denoiser.hpp"

namespace pairlora {

const char* adapter_role_name(AdapterRole role) {
    return role == AdapterRole::content ? "content" : "style";
}

AdapterRole adapter_role_from_string(const std::string& s) {
    if (s == "content") return AdapterRole::content;
    if (s == "style") return AdapterRole::style;
    tensor_fail("unknown adapter role '" + s + "'");
}

std::vector<Param*> AdapterSet::trainable_params() {
    std::vector<Param*> out;
    for (auto& [id, layer] : layers) {
        if (layer.A.trainable) out.push_back(&layer.A);
        if (layer.B.trainable) out.push_back(&layer.B);
    }
    return out;
}

std::vector<Param*> AdapterSet::all_params() {
    std::vector<Param*> out;
    for (auto& [id, layer] : layers) {
        out.push_back(&layer.A);
        out.push_back(&layer.B);
    }
    return out;
}

namespace {

uint64_t fnv_layer_tag(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= uint8_t(c);
        h *= 1099511628211ULL;
    }
    return h;
}

// 2r orthonormal rows of R^n via twice-iterated modified Gram-Schmidt on
// seeded gaussian draws, computed at f64 and cast to f32
std::vector<std::vector<double>> orthonormal_rows(int count, int n, Rng& rng) {
    std::vector<std::vector<double>> q;
    q.reserve(size_t(count));
    while (int(q.size()) < count) {
        std::vector<double> v(size_t(n), 0.0);
        for (double& x : v) x = rng.normal();
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& u : q) {
                double dot = 0.0;
                for (int i = 0; i < n; ++i) dot += v[size_t(i)] * u[size_t(i)];
                for (int i = 0; i < n; ++i) v[size_t(i)] -= dot * u[size_t(i)];
            }
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-6) continue;  // astronomically unlikely; redraw
        for (double& x : v) x /= norm;
        q.push_back(std::move(v));
    }
    return q;
}

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows, int from, int count, int n) {
    Tensor t = Tensor::zeros({count, n});
    auto d = t.data();
    for (int r = 0; r < count; ++r)
        for (int i = 0; i < n; ++i)
            d[size_t(r) * n + i] = float(rows[size_t(from + r)][size_t(i)]);
    return t;
}

}  // namespace

std::pair<LoraLayer, LoraLayer> init_orthogonal_pair(int m, int n, int r, uint64_t seed,
                                                     const std::string& layer_id) {
    if (r < 1) tensor_fail("init_orthogonal_pair: rank must be >= 1");
    if (2 * r > n)
        tensor_fail("init_orthogonal_pair: layer '" + layer_id + "' needs 2r <= n, got r=" +
                    std::to_string(r) + " n=" + std::to_string(n));
    Rng rng(seed);
    auto rows = orthonormal_rows(2 * r, n, rng);

    LoraLayer content;
    content.layer_id = layer_id;
    content.rank = r;
    content.A = Param(layer_id + ".A", rows_to_tensor(rows, 0, r, n), false);
    content.B = Param(layer_id + ".B", Tensor::zeros({m, r}), true);

    LoraLayer style;
    style.layer_id = layer_id;
    style.rank = r;
    style.A = Param(layer_id + ".A", rows_to_tensor(rows, r, r, n), false);
    style.B = Param(layer_id + ".B", Tensor::zeros({m, r}), true);
    return {std::move(content), std::move(style)};
}

Tensor effective_weight(const Tensor& w0, const std::string& layer_id,
                        const CompositionSpec& comp) {
    Tensor w = w0;
    for (const auto& entry : comp) {
        if (!entry.set || entry.scale == 0.0f) continue;
        auto it = entry.set->layers.find(layer_id);
        if (it == entry.set->layers.end()) continue;
        const LoraLayer& layer = it->second;
        if (layer.B.value.shape()[0] != w0.shape()[0] ||
            layer.A.value.shape()[1] != w0.shape()[1])
            tensor_fail("effective_weight: adapter for layer '" + layer_id + "' has B " +
                        shape_str(layer.B.value.shape()) + " A " +
                        shape_str(layer.A.value.shape()) + " incompatible with weight " +
                        shape_str(w0.shape()));
        Tensor delta = matmul(layer.B.value, layer.A.value);
        if (entry.stopgrad) delta = detach(delta);
        w = add(w, scalar_mul(delta, entry.scale));
    }
    return w;
}

std::pair<AdapterSet, AdapterSet> make_orthogonal_adapter_pair(const Denoiser& model, int rank,
                                                               uint64_t seed) {
    AdapterSet content, style;
    content.role = AdapterRole::content;
    style.role = AdapterRole::style;
    for (const auto& pt : model.attachment_points()) {
        uint64_t layer_seed = splitmix64(seed ^ fnv_layer_tag(pt.layer_id));
        auto [c, s] = init_orthogonal_pair(pt.m, pt.n, rank, layer_seed, pt.layer_id);
        content.layers.emplace(pt.layer_id, std::move(c));
        style.layers.emplace(pt.layer_id, std::move(s));
    }
    return {std::move(content), std::move(style)};
}

AdapterSet make_baseline_adapter(const Denoiser& model, int rank, uint64_t seed) {
    AdapterSet set;
    set.role = AdapterRole::style;
    for (const auto& pt : model.attachment_points()) {
        Rng rng(splitmix64(seed ^ fnv_layer_tag(pt.layer_id)));
        LoraLayer layer;
        layer.layer_id = pt.layer_id;
        layer.rank = rank;
        layer.A = Param(pt.layer_id + ".A",
                        Tensor::randn({rank, pt.n}, rng, float(1.0 / std::sqrt(double(pt.n)))),
                        true);
        layer.B = Param(pt.layer_id + ".B", Tensor::zeros({pt.m, rank}), true);
        set.layers.emplace(pt.layer_id, std::move(layer));
    }
    return set;
}

void check_adapter_compatible(const Denoiser& model, const AdapterSet& set) {
    auto pts = model.attachment_points();
    for (const auto& [id, layer] : set.layers) {
        const AttachmentPoint* match = nullptr;
        for (const auto& pt : pts)
            if (pt.layer_id == id) { match = &pt; break; }
        if (!match)
            tensor_fail("adapter: model has no attachment point '" + id + "'");
        if (layer.B.value.shape()[0] != match->m || layer.A.value.shape()[1] != match->n)
            tensor_fail("adapter: layer '" + id + "' dims B " + shape_str(layer.B.value.shape()) +
                        " A " + shape_str(layer.A.value.shape()) + " do not match model [" +
                        std::to_string(match->m) + "," + std::to_string(match->n) + "]");
    }
}

void save_adapter_set(const AdapterSet& set, const std::string& path) {
    Checkpoint ckpt;
    ckpt.kind = kCheckpointKindAdapter;
    ckpt.meta.strings["role"] = adapter_role_name(set.role);
    ckpt.meta.floats["default_scale"] = set.default_scale;
    ckpt.meta.ints["style_slot"] = set.style_slot;
    ckpt.meta.strings["style_kind"] = set.style_kind;
    ckpt.meta.strings["category"] = set.category;
    ckpt.meta.ints["n_layers"] = int64_t(set.layers.size());
    for (const auto& [id, layer] : set.layers) {
        ckpt.meta.ints["rank." + id] = layer.rank;
        ckpt.meta.ints["trainA." + id] = layer.A.trainable ? 1 : 0;
        for (const Param* p : {&layer.A, &layer.B}) {
            CheckpointTensor t;
            t.name = p->name;
            t.shape = p->value.shape();
            t.data.assign(p->value.data().begin(), p->value.data().end());
            ckpt.tensors.push_back(std::move(t));
        }
    }
    save_checkpoint(path, ckpt);
}

AdapterSet load_adapter_set(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.kind != kCheckpointKindAdapter)
        tensor_fail("checkpoint: '" + path + "' is not an adapter checkpoint");
    AdapterSet set;
    set.role = adapter_role_from_string(ckpt.meta.gets("role"));
    set.default_scale = float(ckpt.meta.getf("default_scale"));
    set.style_slot = int(ckpt.meta.geti("style_slot"));
    set.style_kind = ckpt.meta.gets("style_kind");
    set.category = ckpt.meta.gets("category");
    for (const auto& t : ckpt.tensors) {
        if (t.shape.size() != 2) tensor_fail("adapter: tensor '" + t.name + "' is not a matrix");
        if (t.name.size() < 3) tensor_fail("adapter: bad tensor name '" + t.name + "'");
        std::string suffix = t.name.substr(t.name.size() - 2);
        std::string id = t.name.substr(0, t.name.size() - 2);
        LoraLayer& layer = set.layers[id];
        layer.layer_id = id;
        layer.rank = int(ckpt.meta.geti("rank." + id));
        bool trainA = ckpt.meta.geti("trainA." + id) != 0;
        Tensor v = Tensor::from_data(t.shape, t.data);
        if (suffix == ".A")
            layer.A = Param(t.name, v, trainA);
        else if (suffix == ".B")
            layer.B = Param(t.name, v, true);
        else
            tensor_fail("adapter: unexpected tensor '" + t.name + "'");
    }
    if (int64_t(set.layers.size()) != ckpt.meta.geti("n_layers"))
        tensor_fail("adapter: layer count mismatch in '" + path + "'");
    return set;
}

}  // namespace pairlora
