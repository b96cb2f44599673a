#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cola/backbone.hpp"
#include "cola/nn.hpp"
#include "cola/params.hpp"

namespace cola {

enum class FusionVariant {
    LINEAR,
    PROMPT_TUNE,
    FT_LATE,
    MM_PRED,
    MM_ADAPTER,
    FLAVA_STYLE,
    ALBEF_STYLE,
    FIBER_STYLE,
    FIBER_MM,
};

// The two ways a fused CLS becomes a score: PRED maps it through an affine
// head; ADAPTER takes the mean cosine against the frozen query token rows
// (for FIBER_STYLE/FIBER_MM, the cosine of the two CLS outputs instead).
enum class HeadMode { ADAPTER, PRED };

inline const std::vector<FusionVariant> kAllVariants = {
    FusionVariant::LINEAR,      FusionVariant::PROMPT_TUNE, FusionVariant::FT_LATE,
    FusionVariant::MM_PRED,     FusionVariant::MM_ADAPTER,  FusionVariant::FLAVA_STYLE,
    FusionVariant::ALBEF_STYLE, FusionVariant::FIBER_STYLE, FusionVariant::FIBER_MM,
};

std::string to_string(FusionVariant v);
FusionVariant variant_from_string(const std::string& s);

struct FusionConfig {
    FusionVariant variant = FusionVariant::MM_ADAPTER;
    std::size_t d_model = 32;
    int encoder_layers = 2;  // 0 permitted for degenerate-wiring tests
    int heads = 4;
    int cls_count = 1;
    double logit_scale = 10.0;
    std::uint64_t init_seed = 1;
    bool positional = true;      // learned position embeddings on patch/token rows
    HeadMode head_mode = HeadMode::ADAPTER;  // zoo variants only
    bool tune_projection = false;            // FT_LATE only: the FT-all analog
    std::size_t max_patches = 16;
    std::size_t max_tokens = 11;

    void validate() const;
    // Variant label for reports: FT_LATE with tune_projection reads FT_ALL_ANALOG.
    std::string report_label() const;
};

std::string fusion_config_to_json(const FusionConfig& c);
FusionConfig fusion_config_from_json(const std::string& text);

// One strategy's trainable head over the frozen backbone. The backbone is
// borrowed (may be null for hand-built tests; PROMPT_TUNE requires it). A
// model is immutable during scoring; training mutates params between graphs.
class FusionModel {
  public:
    FusionModel(FusionConfig config, const SyntheticBackbone* backbone);

    const FusionConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    const SyntheticBackbone* backbone() const { return backbone_; }
    std::size_t parameter_count() const { return params_.scalar_count(); }

    // Scalar score f(I,Q) as an autodiff graph over the current parameters.
    Tensor score_graph(const FeatureBundle& image, const FeatureBundle& query) const;
    Tensor score_graph(const FeatureBundle& paired) const { return score_graph(paired, paired); }
    double score_value(const FeatureBundle& image, const FeatureBundle& query) const;

    // Entry (i,j) = score of image i against query j. Equals the individual
    // score calls bit for bit; unimodal sub-graphs are shared across pairs
    // where the variant allows it.
    Tensor score_matrix_graph(const std::vector<const FeatureBundle*>& images,
                              const std::vector<const FeatureBundle*>& queries) const;
    Mat score_matrix_values(const std::vector<const FeatureBundle*>& images,
                            const std::vector<const FeatureBundle*>& queries) const;

    // All fused CLS rows for the observational multi-CLS check. Only valid
    // for variants with a CLS bank (everything except LINEAR/PROMPT_TUNE/
    // FT_LATE).
    Mat fused_cls_values(const FeatureBundle& image, const FeatureBundle& query) const;

  private:
    FusionConfig cfg_;
    const SyntheticBackbone* backbone_;
    ParameterSet params_;

    struct Sides;
    Tensor encode_image_side(const FeatureBundle& image) const;
    Tensor encode_text_side(const FeatureBundle& query) const;
    Tensor pair_score(const Tensor& img_enc, const Tensor& txt_enc, const FeatureBundle& image,
                      const FeatureBundle& query) const;
    Tensor image_rows(const FeatureBundle& image) const;  // patches (+pre-map) + positions
    Tensor text_rows(const FeatureBundle& query) const;   // tokens + positions
    Tensor fused_cls(const FeatureBundle& image, const FeatureBundle& query) const;
    Tensor head_score(const Tensor& cls_row, const FeatureBundle& query) const;
};

// Spec-surface wrappers: each checks the model's variant and scores the
// paired bundle (patch and token side of the same FeatureBundle).
Tensor score_mm_adapter(const FusionModel& model, const FeatureBundle& bundle);
Tensor score_mm_pred(const FusionModel& model, const FeatureBundle& bundle);
Tensor score_disjoint(const FusionModel& model, const FeatureBundle& bundle);
Tensor score_variant_zoo(const FusionModel& model, const FeatureBundle& bundle);

// The MM-Adapter head in isolation: mean over query tokens of
// cosine(out_mm, token row). Plain doubles, usable as a test oracle.
double adapter_head_score(const std::vector<double>& out_mm, const Mat& frozen_tokens);

// ---- checkpoints -----------------------------------------------------

// Binary checkpoint, little-endian: magic "COLAMODL", u32 version = 1,
// u32 length + canonical JSON header, u32 param count, then per parameter
// (sorted by name): u32 name length + name, u32 rows, u32 cols, f64 values.
// Round-trips are bit-exact.
struct CheckpointMeta {
    std::string tool_version = kToolVersion;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string data_manifest_hash;
    std::string backbone_json;  // BackboneConfig + vocabulary, for rescoring
};

void save_checkpoint(const std::string& path, const FusionModel& model, const CheckpointMeta& meta);
struct LoadedCheckpoint {
    FusionConfig config;
    CheckpointMeta meta;
    std::map<std::string, Mat> tensors;
};
LoadedCheckpoint read_checkpoint(const std::string& path);
// Restores parameter values into a freshly constructed model; shapes must match.
void restore_params(FusionModel& model, const LoadedCheckpoint& ckpt);

}  // namespace cola
