#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cola/data.hpp"

namespace cola {

// Row-major dense matrix of plain doubles (frozen data, no autodiff).
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    bool empty() const { return data.empty(); }
};

// Frozen features for one scene (patch side), one query (token side), or a
// paired scene+query. Pooled vectors are the exact arithmetic means of the
// corresponding matrices.
struct FeatureBundle {
    std::string id;
    Mat patches;                       // p x d
    Mat tokens;                        // n_q x d
    std::vector<double> pooled_image;  // d (empty when no patch side)
    std::vector<double> pooled_text;   // d (empty when no token side)
    // Surface tokens behind the token rows. Not part of the feature file
    // format; only prompt-tuned scoring needs them (to index its learned
    // table), so bundles loaded from feature files leave this empty.
    std::vector<std::string> token_names;

    bool has_image() const { return !patches.empty(); }
    bool has_text() const { return !tokens.empty(); }
};

FeatureBundle combine_bundles(const FeatureBundle& image_side, const FeatureBundle& text_side);

struct BackboneConfig {
    std::uint64_t seed = 5489;
    std::size_t d_model = 32;
    std::size_t grid = 4;
    double sigma = 0.05;
    std::size_t max_query_tokens = 11;
};

// Deterministic frozen feature extractor over symbolic scenes and queries.
//
// Every concept (object, attribute, background, relation token) gets a row of
// an orthonormal basis, and patch features are a fixed orthogonal projection
// of the per-cell concept sums. All table and projection entries are snapped
// to the 2^-14 dyadic grid, which keeps every concept addition and every
// projection dot product exact in double arithmetic. Exactness is what makes
// the module's core property hold bit-for-bit: swapping attributes between
// two objects changes individual patch rows but leaves the patch sum - and
// hence the mean-pooled image vector - identical, so any pooled-only scorer
// is structurally blind to attribute-object binding at sigma = 0.
class SyntheticBackbone {
  public:
    SyntheticBackbone(BackboneConfig config, Vocabulary vocab);

    const BackboneConfig& config() const { return cfg_; }
    const Vocabulary& vocabulary() const { return vocab_; }
    std::size_t d_model() const { return cfg_.d_model; }
    std::size_t patch_count() const { return cfg_.grid * cfg_.grid; }

    // Occupied cell -> projection * (object + sum of attributes + sigma*noise);
    // empty cell -> projection * (background + sigma*noise). Pure function of
    // (config.seed, scene, noise_seed).
    FeatureBundle encode_scene(const Scene& scene, std::uint64_t noise_seed) const;
    // Row i = token embedding of token i; no noise.
    FeatureBundle encode_query(const Query& query) const;

    // Frozen tables, exposed read-only so tests can audit the freeze
    // discipline and PROMPT_TUNE can clone the token table.
    const Mat& token_table() const { return token_table_; }
    const std::vector<std::string>& token_names() const { return token_names_; }
    std::size_t token_index(const std::string& token) const;
    const Mat& projection() const { return projection_; }
    std::vector<double> concept_vector(const std::string& name) const;

    // Per-scene noise stream convention used by the pipeline: features are a
    // pure function of (backbone seed, scene), stable across reruns.
    static std::uint64_t noise_seed_for(const std::string& scene_id) { return fnv1a64(scene_id); }

    struct CellReadout {
        std::optional<std::string> object;  // nullopt = background
        std::vector<std::string> attributes;
    };
    // Diagnostic oracle: unprojects each patch row and thresholds inner
    // products against the concept tables. Exact at sigma = 0.
    std::vector<CellReadout> probe_patches(const Mat& patches) const;

  private:
    BackboneConfig cfg_;
    Vocabulary vocab_;
    std::map<std::string, std::size_t> concept_index_;  // name -> row in concepts_
    Mat concepts_;                                      // objects, attrs, background, REL
    std::vector<std::string> token_names_;
    std::map<std::string, std::size_t> token_index_;
    Mat token_table_;  // token rows in token_names_ order
    Mat projection_;   // d x d orthogonal (quantized)
    std::size_t background_row_;
};

// Memoized encodings keyed by id. Scene noise streams follow
// SyntheticBackbone::noise_seed_for.
class BundleCache {
  public:
    explicit BundleCache(const SyntheticBackbone& backbone) : backbone_(backbone) {}

    const FeatureBundle& scene(const Scene& s) {
        auto it = scenes_.find(s.scene_id);
        if (it != scenes_.end()) return it->second;
        return scenes_.emplace(s.scene_id,
                               backbone_.encode_scene(s, SyntheticBackbone::noise_seed_for(s.scene_id)))
            .first->second;
    }
    const FeatureBundle& query(const Query& q) {
        auto it = queries_.find(q.query_id);
        if (it != queries_.end()) return it->second;
        return queries_.emplace(q.query_id, backbone_.encode_query(q)).first->second;
    }
    const SyntheticBackbone& backbone() const { return backbone_; }

  private:
    const SyntheticBackbone& backbone_;
    std::map<std::string, FeatureBundle> scenes_, queries_;
};

}  // namespace cola
