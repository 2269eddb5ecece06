#pragma once

// Low-rank adapters: orthogonal A-row initialization, scaled application and
// stop-gradient composition. A matrices are frozen; only B trains (the
// baseline trainer opts out of freezing explicitly).

#include <map>
#include <string>
#include <vector>

#include "pairlora/optim.hpp"
#include "pairlora/tensor.hpp"

namespace pairlora {

class Denoiser;

struct LoraLayer {
    Param A;  // [r, n], frozen
    Param B;  // [m, r], trainable
    int rank = 0;
    std::string layer_id;
};

enum class AdapterRole { content, style };

const char* adapter_role_name(AdapterRole role);
AdapterRole adapter_role_from_string(const std::string& s);

struct AdapterSet {
    AdapterRole role = AdapterRole::style;
    float default_scale = 1.0f;
    std::map<std::string, LoraLayer> layers;  // keyed by target layer id
    // provenance carried into checkpoints (style slot binds the prompt token)
    int style_slot = -1;
    std::string style_kind;
    std::string category;

    std::vector<Param*> trainable_params();
    std::vector<Param*> all_params();
};

struct CompositionEntry {
    const AdapterSet* set = nullptr;
    float scale = 1.0f;
    bool stopgrad = false;
};
using CompositionSpec = std::vector<CompositionEntry>;

// the 2r rows of [A_content; A_style] are drawn from one seeded orthonormal
// basis of R^n; both B matrices start at zero
std::pair<LoraLayer, LoraLayer> init_orthogonal_pair(int m, int n, int r, uint64_t seed,
                                                     const std::string& layer_id);

// W0 + sum_i scale_i * B_i A_i with stop-gradient entries detached. Entries
// whose set lacks this layer or whose scale is exactly 0 contribute nothing
// (zero scales return W0's own node so zero-scale application is a bitwise
// no-op).
Tensor effective_weight(const Tensor& w0, const std::string& layer_id,
                        const CompositionSpec& comp);

// orthogonal content/style pair covering every attachment point of a model
std::pair<AdapterSet, AdapterSet> make_orthogonal_adapter_pair(const Denoiser& model, int rank,
                                                               uint64_t seed);

// standard LoRA init for the single-image baseline: A gaussian (trainable), B zero
AdapterSet make_baseline_adapter(const Denoiser& model, int rank, uint64_t seed);

void save_adapter_set(const AdapterSet& set, const std::string& path);
AdapterSet load_adapter_set(const std::string& path);

// verifies every adapter layer matches a model attachment point, error names
// the offending layer
void check_adapter_compatible(const Denoiser& model, const AdapterSet& set);

}  // namespace pairlora
