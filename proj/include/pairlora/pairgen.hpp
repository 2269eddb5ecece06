#pragma once

// Procedural content images and deterministic style transforms. Everything
// is a pure function of its seeds, so ground-truth styled counterparts are
// exactly reproducible.
//
// Token convention (the dataset side of the prompt vocabulary):
//   0 = NULL, 1 = V*, 2..9 = STYLE_0..STYLE_7, 10 = face, 11 = animal,
//   12 = landscape. Prompts are length 8, NULL-padded.
//   pretrain prompt:   [category]
//   content prompt:    [category, V*]
//   style prompt:      [category, V*, STYLE_k]   (training pair)
//                      [category, STYLE_k]       (novel generation)

#include <string>
#include <vector>

#include "pairlora/denoiser.hpp"
#include "pairlora/tensor.hpp"

namespace pairlora {

inline constexpr int kPromptLen = 8;

enum class Category { face, animal, landscape };

const std::vector<Category>& all_categories();
const char* category_name(Category c);
Category category_from_string(const std::string& s);
int category_token(Category c);  // face=10, animal=11, landscape=12

struct ContentSpec {
    Category category = Category::face;
    uint64_t variant_seed = 0;
    uint64_t palette_seed = 0;
    int res = 32;  // [3, res, res], values in [-1, 1]
};

// seeded procedural image: face = ellipse head + features, animal = blob +
// ears/tail, landscape = horizon gradient + shapes
Tensor gen_content(const ContentSpec& spec);

enum class StyleKind { posterize, flatten_background, outline_overlay };

struct StyleTransform {
    StyleKind kind = StyleKind::posterize;
    double param = 8.0;  // posterize N / flatten hue / outline threshold

    Tensor apply(const Tensor& img) const;
    std::string to_string() const;  // e.g. "posterize:8"
    static StyleTransform from_string(const std::string& s);
};

// each channel quantized to N evenly spaced levels over [-1,1]; idempotent
Tensor posterize(const Tensor& img, int n_levels);
// pixels matching the corner-sampled background references are replaced by a
// flat color of the given hue
Tensor flatten_background(const Tensor& img, double hue);
// dark outline drawn where the local (sobel) gradient magnitude exceeds the
// threshold
Tensor outline_overlay(const Tensor& img, double threshold);

struct PairMeta {
    Category category = Category::face;
    std::string style_kind;
    int style_slot = 0;
    uint64_t variant_seed = 0;
    uint64_t palette_seed = 0;
};

struct TrainingPair {
    Tensor x_content;
    Tensor x_style;
    PromptTokens c_content;  // [category, V*]
    PromptTokens c_style;    // c_content + STYLE_k
    PairMeta meta;
};

TrainingPair make_pair(const ContentSpec& spec, const StyleTransform& transform, int style_slot);

struct EvalSet {
    std::vector<TrainingPair> same_category;
    std::vector<TrainingPair> diff_category;
};

// held-out pairs: fresh variant/palette seeds (never the training spec); the
// different-category split cycles the other categories
EvalSet gen_eval_set(const ContentSpec& train_spec, const StyleTransform& transform,
                     int style_slot, int n_same, int n_diff);

// ------------------------------------------------------------------
// manifest (line-oriented plain text)
// ------------------------------------------------------------------

struct PairRecord {
    std::string section;  // pretrain | train | eval_same | eval_diff
    std::string content_path;
    std::string style_path;  // empty for pretrain records
    std::string category;
    std::string style_kind;  // transform string, empty for pretrain
    int style_slot = -1;
    uint64_t variant_seed = 0;
    uint64_t palette_seed = 0;
    std::string prompt_content;
    std::string prompt_style;
};

struct Manifest {
    int res = 32;
    uint64_t seed = 0;
    std::vector<PairRecord> records;
};

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

}  // namespace pairlora
