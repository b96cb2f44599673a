#include "cola/backbone.hpp"

#include <cmath>

namespace cola {

namespace {

constexpr double kQuantum = 16384.0;  // 2^14

double quantize(double x) { return std::nearbyint(x * kQuantum) / kQuantum; }

// Orthonormal rows via modified Gram-Schmidt on a seeded Gaussian matrix,
// then snapped to the dyadic grid. Rows stay unit-length to ~1e-3.
Mat orthonormal_rows(std::size_t n, std::size_t d, Rng& rng) {
    if (n > d)
        throw ConfigError("backbone: " + std::to_string(n) + " concepts need d_model >= " +
                          std::to_string(n) + ", have " + std::to_string(d));
    Mat m(n, d);
    for (auto& x : m.data) x = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        double* ri = m.data.data() + i * d;
        for (std::size_t j = 0; j < i; ++j) {
            const double* rj = m.data.data() + j * d;
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += ri[k] * rj[k];
            for (std::size_t k = 0; k < d; ++k) ri[k] -= dot * rj[k];
        }
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) norm += ri[k] * ri[k];
        norm = std::sqrt(norm);
        if (norm < 1e-8) throw ContractError("backbone: degenerate basis draw");
        for (std::size_t k = 0; k < d; ++k) ri[k] /= norm;
    }
    for (auto& x : m.data) x = quantize(x);
    return m;
}

}  // namespace

FeatureBundle combine_bundles(const FeatureBundle& image_side, const FeatureBundle& text_side) {
    if (!image_side.has_image()) throw ContractError("combine_bundles: missing patch features");
    if (!text_side.has_text()) throw ContractError("combine_bundles: missing token features");
    FeatureBundle b;
    b.id = image_side.id + "|" + text_side.id;
    b.patches = image_side.patches;
    b.pooled_image = image_side.pooled_image;
    b.tokens = text_side.tokens;
    b.pooled_text = text_side.pooled_text;
    b.token_names = text_side.token_names;
    return b;
}

SyntheticBackbone::SyntheticBackbone(BackboneConfig config, Vocabulary vocab)
    : cfg_(config), vocab_(std::move(vocab)) {
    vocab_.validate();
    if (cfg_.d_model == 0 || cfg_.grid == 0) throw ConfigError("backbone: d_model and grid must be positive");
    if (cfg_.sigma < 0) throw ConfigError("backbone: sigma must be non-negative");

    // Concept rows: objects, then attributes (family order), then background,
    // then the relation token. One shared orthonormal basis.
    std::vector<std::string> names = vocab_.objects;
    const auto attrs = vocab_.all_attributes();
    names.insert(names.end(), attrs.begin(), attrs.end());
    const std::string background_name = "<background>";
    names.push_back(background_name);
    names.push_back(kRelationToken);

    Rng rng(mix_seed(cfg_.seed, "backbone-tables"));
    concepts_ = orthonormal_rows(names.size(), cfg_.d_model, rng);
    for (std::size_t i = 0; i < names.size(); ++i) concept_index_[names[i]] = i;
    background_row_ = concept_index_.at(background_name);

    // Token table = object + attribute + REL rows of the same basis, so the
    // text side lives in the unprojected concept space.
    token_names_ = vocab_.token_list();
    token_table_ = Mat(token_names_.size(), cfg_.d_model);
    for (std::size_t t = 0; t < token_names_.size(); ++t) {
        const std::size_t src = concept_index_.at(token_names_[t]);
        for (std::size_t k = 0; k < cfg_.d_model; ++k)
            token_table_.at(t, k) = concepts_.at(src, k);
        token_index_[token_names_[t]] = t;
    }

    Rng proj_rng(mix_seed(cfg_.seed, "backbone-projection"));
    projection_ = orthonormal_rows(cfg_.d_model, cfg_.d_model, proj_rng);
}

std::size_t SyntheticBackbone::token_index(const std::string& token) const {
    auto it = token_index_.find(token);
    if (it == token_index_.end()) throw VocabError("unknown token '" + token + "'");
    return it->second;
}

std::vector<double> SyntheticBackbone::concept_vector(const std::string& name) const {
    auto it = concept_index_.find(name);
    if (it == concept_index_.end()) throw VocabError("unknown concept '" + name + "'");
    return std::vector<double>(concepts_.row(it->second), concepts_.row(it->second) + cfg_.d_model);
}

FeatureBundle SyntheticBackbone::encode_scene(const Scene& scene, std::uint64_t noise_seed) const {
    validate_scene(vocab_, scene);
    if (scene.grid != cfg_.grid)
        throw DataError("scene '" + scene.scene_id + "': grid " + std::to_string(scene.grid) +
                        " does not match backbone grid " + std::to_string(cfg_.grid));
    const std::size_t d = cfg_.d_model;
    const std::size_t p = patch_count();

    std::vector<const Placement*> by_cell(p, nullptr);
    for (const auto& pl : scene.placements) by_cell[pl.cell] = &pl;

    Rng noise_rng(mix_seed(cfg_.seed ^ noise_seed, "scene-noise"));

    FeatureBundle b;
    b.id = scene.scene_id;
    b.patches = Mat(p, d);
    b.pooled_image.assign(d, 0.0);

    std::vector<double> cell(d);
    for (std::size_t c = 0; c < p; ++c) {
        if (by_cell[c] == nullptr) {
            for (std::size_t k = 0; k < d; ++k) cell[k] = concepts_.at(background_row_, k);
        } else {
            const auto& pl = *by_cell[c];
            const std::size_t orow = concept_index_.at(pl.object);
            for (std::size_t k = 0; k < d; ++k) cell[k] = concepts_.at(orow, k);
            for (const auto& a : canonical_attribute_order(vocab_, pl.attributes)) {
                const std::size_t arow = concept_index_.at(a);
                for (std::size_t k = 0; k < d; ++k) cell[k] += concepts_.at(arow, k);
            }
        }
        if (cfg_.sigma > 0) {
            for (std::size_t k = 0; k < d; ++k) cell[k] += cfg_.sigma * noise_rng.normal();
        }
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            const double* prow = projection_.row(i);
            for (std::size_t k = 0; k < d; ++k) acc += prow[k] * cell[k];
            b.patches.at(c, i) = acc;
            b.pooled_image[i] += acc;
        }
    }
    for (std::size_t i = 0; i < d; ++i) b.pooled_image[i] /= double(p);
    return b;
}

FeatureBundle SyntheticBackbone::encode_query(const Query& query) const {
    validate_query(vocab_, query);
    if (query.tokens.size() > cfg_.max_query_tokens)
        throw DataError("query '" + query.query_id + "': " + std::to_string(query.tokens.size()) +
                        " tokens exceed budget " + std::to_string(cfg_.max_query_tokens));
    const std::size_t d = cfg_.d_model;
    const std::size_t n = query.tokens.size();

    FeatureBundle b;
    b.id = query.query_id;
    b.token_names = query.tokens;
    b.tokens = Mat(n, d);
    b.pooled_text.assign(d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t row = token_index(query.tokens[t]);
        for (std::size_t k = 0; k < d; ++k) {
            b.tokens.at(t, k) = token_table_.at(row, k);
            b.pooled_text[k] += token_table_.at(row, k);
        }
    }
    for (std::size_t k = 0; k < d; ++k) b.pooled_text[k] /= double(n);
    return b;
}

std::vector<SyntheticBackbone::CellReadout> SyntheticBackbone::probe_patches(const Mat& patches) const {
    if (patches.cols != cfg_.d_model)
        throw ShapeError("probe_patches: feature dim " + std::to_string(patches.cols) +
                         " does not match d_model " + std::to_string(cfg_.d_model));
    const std::size_t d = cfg_.d_model;
    std::vector<CellReadout> out(patches.rows);
    std::vector<double> x(d);
    for (std::size_t c = 0; c < patches.rows; ++c) {
        // Unproject: the projection is orthogonal, so its transpose inverts it
        // (up to quantization crosstalk ~1e-3).
        for (std::size_t k = 0; k < d; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i) acc += projection_.at(i, k) * patches.at(c, i);
            x[k] = acc;
        }
        auto score_of = [&](const std::string& name) {
            const std::size_t row = concept_index_.at(name);
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += concepts_.at(row, k) * x[k];
            return acc;
        };
        double best = score_of("<background>");
        std::optional<std::string> best_obj;
        for (const auto& o : vocab_.objects) {
            const double s = score_of(o);
            if (s > best) {
                best = s;
                best_obj = o;
            }
        }
        out[c].object = best_obj;
        if (best_obj.has_value()) {
            for (const auto& a : vocab_.all_attributes())
                if (score_of(a) > 0.5) out[c].attributes.push_back(a);
        }
    }
    return out;
}

}  // namespace cola
