#include "cola/fusion.hpp"

#include <cctype>
#include <cmath>

#include "json.hpp"

using nlohmann::json;

namespace cola {

std::string to_string(FusionVariant v) {
    switch (v) {
        case FusionVariant::LINEAR: return "LINEAR";
        case FusionVariant::PROMPT_TUNE: return "PROMPT_TUNE";
        case FusionVariant::FT_LATE: return "FT_LATE";
        case FusionVariant::MM_PRED: return "MM_PRED";
        case FusionVariant::MM_ADAPTER: return "MM_ADAPTER";
        case FusionVariant::FLAVA_STYLE: return "FLAVA_STYLE";
        case FusionVariant::ALBEF_STYLE: return "ALBEF_STYLE";
        case FusionVariant::FIBER_STYLE: return "FIBER_STYLE";
        case FusionVariant::FIBER_MM: return "FIBER_MM";
    }
    return "?";
}

FusionVariant variant_from_string(const std::string& s) {
    std::string up;
    for (char c : s) up += char(std::toupper(static_cast<unsigned char>(c)));
    for (auto v : kAllVariants)
        if (to_string(v) == up) return v;
    throw ConfigError("unknown fusion variant '" + s + "'");
}

void FusionConfig::validate() const {
    if (d_model == 0) throw ConfigError("fusion: d_model must be positive");
    if (heads <= 0 || d_model % std::size_t(heads) != 0)
        throw ConfigError("fusion: heads=" + std::to_string(heads) + " must divide d_model=" +
                          std::to_string(d_model));
    if (encoder_layers < 0) throw ConfigError("fusion: encoder_layers must be >= 0");
    if (cls_count < 1) throw ConfigError("fusion: cls_count must be >= 1");
    if (logit_scale <= 0) throw ConfigError("fusion: logit_scale must be positive");
    if (tune_projection && variant != FusionVariant::FT_LATE)
        throw ConfigError("fusion: tune_projection is only valid with FT_LATE");
    if (max_patches == 0 || max_tokens == 0)
        throw ConfigError("fusion: max_patches/max_tokens must be positive");
}

std::string FusionConfig::report_label() const {
    if (variant == FusionVariant::FT_LATE && tune_projection) return "FT_ALL_ANALOG";
    std::string label = to_string(variant);
    const bool zoo = variant == FusionVariant::FLAVA_STYLE || variant == FusionVariant::ALBEF_STYLE ||
                     variant == FusionVariant::FIBER_STYLE || variant == FusionVariant::FIBER_MM;
    if (zoo && head_mode == HeadMode::PRED) label += "_PRED";
    return label;
}

std::string fusion_config_to_json(const FusionConfig& c) {
    const json j = {{"variant", to_string(c.variant)},
                    {"d_model", c.d_model},
                    {"encoder_layers", c.encoder_layers},
                    {"heads", c.heads},
                    {"cls_count", c.cls_count},
                    {"logit_scale", c.logit_scale},
                    {"init_seed", c.init_seed},
                    {"positional", c.positional},
                    {"head_mode", c.head_mode == HeadMode::PRED ? "pred" : "adapter"},
                    {"tune_projection", c.tune_projection},
                    {"max_patches", c.max_patches},
                    {"max_tokens", c.max_tokens}};
    return j.dump();
}

FusionConfig fusion_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    FusionConfig c;
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.d_model = j.at("d_model").get<std::size_t>();
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.cls_count = j.at("cls_count").get<int>();
    c.logit_scale = j.at("logit_scale").get<double>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.positional = j.at("positional").get<bool>();
    c.head_mode = j.at("head_mode").get<std::string>() == "pred" ? HeadMode::PRED : HeadMode::ADAPTER;
    c.tune_projection = j.at("tune_projection").get<bool>();
    c.max_patches = j.at("max_patches").get<std::size_t>();
    c.max_tokens = j.at("max_tokens").get<std::size_t>();
    c.validate();
    return c;
}

namespace {
bool is_zoo(FusionVariant v) {
    return v == FusionVariant::FLAVA_STYLE || v == FusionVariant::ALBEF_STYLE ||
           v == FusionVariant::FIBER_STYLE || v == FusionVariant::FIBER_MM;
}
Tensor const_tensor(const Mat& m) {
    return Tensor::from(m.rows, m.cols, m.data);
}
Tensor const_row(const std::vector<double>& v) {
    return Tensor::from(1, v.size(), v);
}
}  // namespace

FusionModel::FusionModel(FusionConfig config, const SyntheticBackbone* backbone)
    : cfg_(config), backbone_(backbone) {
    cfg_.validate();
    if (backbone_ && backbone_->d_model() != cfg_.d_model)
        throw ConfigError("fusion: d_model " + std::to_string(cfg_.d_model) +
                          " does not match backbone d_model " + std::to_string(backbone_->d_model()));

    const std::size_t d = cfg_.d_model;
    Rng rng(mix_seed(cfg_.init_seed, "fusion-init"));
    const double cls_std = 1.0 / std::sqrt(double(d));

    auto add_positional = [&] {
        if (!cfg_.positional) return;
        params_.add("pos_img", Tensor::randn(cfg_.max_patches, d, rng, 0.02));
        params_.add("pos_txt", Tensor::randn(cfg_.max_tokens, d, rng, 0.02));
    };
    auto add_cls = [&](const std::string& name) {
        params_.add(name, Tensor::randn(std::size_t(cfg_.cls_count), d, rng, cls_std));
    };

    switch (cfg_.variant) {
        case FusionVariant::LINEAR:
            register_linear(params_, "img_map.", d, d, rng);
            register_linear(params_, "txt_map.", d, d, rng);
            break;
        case FusionVariant::PROMPT_TUNE: {
            if (!backbone_) throw ConfigError("fusion: PROMPT_TUNE requires a backbone");
            const Mat& table = backbone_->token_table();
            params_.add("token_table", Tensor::from(table.rows, table.cols, table.data));
            break;
        }
        case FusionVariant::FT_LATE: {
            add_positional();
            if (cfg_.tune_projection) {
                std::vector<double> eye(d * d, 0.0);
                for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
                params_.add("pre.w", Tensor::from(d, d, std::move(eye)));
            }
            register_encoder_stack(params_, "img.", cfg_.encoder_layers, d, rng);
            register_encoder_stack(params_, "txt.", cfg_.encoder_layers, d, rng);
            break;
        }
        case FusionVariant::MM_PRED:
        case FusionVariant::MM_ADAPTER:
            add_positional();
            register_encoder_stack(params_, "joint.", cfg_.encoder_layers, d, rng);
            register_cross_block(params_, "cross.", d, rng);
            add_cls("cls");
            if (cfg_.variant == FusionVariant::MM_PRED) register_linear(params_, "head.", d, 1, rng, 0.05);
            break;
        case FusionVariant::FLAVA_STYLE:
            add_positional();
            register_encoder_stack(params_, "joint.", cfg_.encoder_layers, d, rng);
            add_cls("cls");
            if (cfg_.head_mode == HeadMode::PRED) register_linear(params_, "head.", d, 1, rng, 0.05);
            break;
        case FusionVariant::ALBEF_STYLE:
            add_positional();
            register_encoder_stack(params_, "img.", cfg_.encoder_layers, d, rng);
            register_encoder_stack(params_, "txt.", cfg_.encoder_layers, d, rng);
            register_cross_block(params_, "cross.", d, rng);
            add_cls("cls");
            if (cfg_.head_mode == HeadMode::PRED) register_linear(params_, "head.", d, 1, rng, 0.05);
            break;
        case FusionVariant::FIBER_STYLE:
            add_positional();
            register_encoder_stack(params_, "img.", cfg_.encoder_layers, d, rng);
            register_encoder_stack(params_, "txt.", cfg_.encoder_layers, d, rng);
            register_cross_block(params_, "cross_t.", d, rng);
            register_cross_block(params_, "cross_i.", d, rng);
            add_cls("cls_t");
            add_cls("cls_i");
            if (cfg_.head_mode == HeadMode::PRED) register_linear(params_, "head.", 2 * d, 1, rng, 0.05);
            break;
        case FusionVariant::FIBER_MM:
            add_positional();
            register_encoder_stack(params_, "joint.", cfg_.encoder_layers, d, rng);
            register_cross_block(params_, "cross_t.", d, rng);
            register_cross_block(params_, "cross_i.", d, rng);
            add_cls("cls_t");
            add_cls("cls_i");
            if (cfg_.head_mode == HeadMode::PRED) register_linear(params_, "head.", 2 * d, 1, rng, 0.05);
            break;
    }
}

Tensor FusionModel::image_rows(const FeatureBundle& image) const {
    if (!image.has_image())
        throw ContractError("fusion: bundle '" + image.id + "' has no patch features");
    Tensor x = const_tensor(image.patches);
    if (cfg_.variant == FusionVariant::FT_LATE && cfg_.tune_projection)
        x = matmul(x, params_.at("pre.w"));
    if (cfg_.positional) {
        if (image.patches.rows > cfg_.max_patches)
            throw ContractError("fusion: " + std::to_string(image.patches.rows) +
                                " patches exceed max_patches " + std::to_string(cfg_.max_patches));
        x = add(x, slice_rows(params_.at("pos_img"), 0, image.patches.rows));
    }
    return x;
}

Tensor FusionModel::text_rows(const FeatureBundle& query) const {
    if (!query.has_text())
        throw ContractError("fusion: bundle '" + query.id + "' has no token features");
    Tensor x = const_tensor(query.tokens);
    if (cfg_.positional) {
        if (query.tokens.rows > cfg_.max_tokens)
            throw ContractError("fusion: " + std::to_string(query.tokens.rows) +
                                " tokens exceed max_tokens " + std::to_string(cfg_.max_tokens));
        x = add(x, slice_rows(params_.at("pos_txt"), 0, query.tokens.rows));
    }
    return x;
}

Tensor FusionModel::encode_image_side(const FeatureBundle& image) const {
    switch (cfg_.variant) {
        case FusionVariant::LINEAR:
            return linear_forward(const_row(image.pooled_image), params_, "img_map.");
        case FusionVariant::PROMPT_TUNE:
            return const_row(image.pooled_image);
        case FusionVariant::FT_LATE:
            return mean_rows(encoder_stack_forward(image_rows(image), params_, cfg_.encoder_layers,
                                                   cfg_.heads, "img."));
        case FusionVariant::ALBEF_STYLE:
        case FusionVariant::FIBER_STYLE:
            return encoder_stack_forward(image_rows(image), params_, cfg_.encoder_layers, cfg_.heads,
                                         "img.");
        default:
            return Tensor();  // joint variants fuse per pair
    }
}

Tensor FusionModel::encode_text_side(const FeatureBundle& query) const {
    switch (cfg_.variant) {
        case FusionVariant::LINEAR:
            return linear_forward(const_row(query.pooled_text), params_, "txt_map.");
        case FusionVariant::PROMPT_TUNE: {
            if (!backbone_) throw ConfigError("fusion: PROMPT_TUNE requires a backbone");
            if (query.token_names.empty())
                throw ContractError("fusion: bundle '" + query.id +
                                    "' carries no token names; prompt-tuned scoring needs them");
            std::vector<std::size_t> ids;
            ids.reserve(query.token_names.size());
            for (const auto& t : query.token_names) ids.push_back(backbone_->token_index(t));
            return mean_rows(select_rows(params_.at("token_table"), ids));
        }
        case FusionVariant::FT_LATE:
            return mean_rows(encoder_stack_forward(text_rows(query), params_, cfg_.encoder_layers,
                                                   cfg_.heads, "txt."));
        case FusionVariant::ALBEF_STYLE:
        case FusionVariant::FIBER_STYLE:
            return encoder_stack_forward(text_rows(query), params_, cfg_.encoder_layers, cfg_.heads,
                                         "txt.");
        default:
            return Tensor();
    }
}

Tensor FusionModel::head_score(const Tensor& cls_row, const FeatureBundle& query) const {
    const bool pred = cfg_.variant == FusionVariant::MM_PRED ||
                      (is_zoo(cfg_.variant) && cfg_.head_mode == HeadMode::PRED);
    if (pred) return linear_forward(cls_row, params_, "head.");
    // Adapter head: mean cosine between the fused CLS and the frozen token
    // rows (no positional offsets - the alignment target is the raw backbone
    // output).
    const Tensor frozen = const_tensor(query.tokens);
    const std::size_t n = query.tokens.rows;
    Tensor total;
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor c = cosine(cls_row, slice_rows(frozen, i, 1));
        total = i == 0 ? c : add(total, c);
    }
    return scale(total, 1.0 / double(n));
}

Tensor FusionModel::pair_score(const Tensor& img_enc, const Tensor& txt_enc,
                               const FeatureBundle& image, const FeatureBundle& query) const {
    switch (cfg_.variant) {
        case FusionVariant::LINEAR:
        case FusionVariant::PROMPT_TUNE:
        case FusionVariant::FT_LATE:
            return cosine(img_enc, txt_enc);

        case FusionVariant::MM_PRED:
        case FusionVariant::MM_ADAPTER: {
            const Tensor fused = encoder_stack_forward(concat_rows(image_rows(image), text_rows(query)),
                                                       params_, cfg_.encoder_layers, cfg_.heads, "joint.");
            const Tensor out = cross_block_forward(params_.at("cls"), fused, params_, cfg_.heads, "cross.");
            return head_score(slice_rows(out, 0, 1), query);
        }
        case FusionVariant::FLAVA_STYLE: {
            const Tensor seq = concat_rows(params_.at("cls"),
                                           concat_rows(image_rows(image), text_rows(query)));
            const Tensor fused = encoder_stack_forward(seq, params_, cfg_.encoder_layers, cfg_.heads,
                                                       "joint.");
            return head_score(slice_rows(fused, 0, 1), query);
        }
        case FusionVariant::ALBEF_STYLE: {
            const Tensor q = concat_rows(params_.at("cls"), txt_enc);
            const Tensor out = cross_block_forward(q, img_enc, params_, cfg_.heads, "cross.");
            return head_score(slice_rows(out, 0, 1), query);
        }
        case FusionVariant::FIBER_STYLE:
        case FusionVariant::FIBER_MM: {
            Tensor u_img = img_enc, u_txt = txt_enc;
            if (cfg_.variant == FusionVariant::FIBER_MM) {
                const Tensor x_img = image_rows(image);
                const std::size_t p = x_img.rows();
                const Tensor fused = encoder_stack_forward(concat_rows(x_img, text_rows(query)), params_,
                                                           cfg_.encoder_layers, cfg_.heads, "joint.");
                u_img = slice_rows(fused, 0, p);
                u_txt = slice_rows(fused, p, fused.rows() - p);
            }
            const Tensor t_out = cross_block_forward(concat_rows(params_.at("cls_t"), u_txt), u_img,
                                                     params_, cfg_.heads, "cross_t.");
            const Tensor i_out = cross_block_forward(concat_rows(params_.at("cls_i"), u_img), u_txt,
                                                     params_, cfg_.heads, "cross_i.");
            const Tensor t0 = slice_rows(t_out, 0, 1);
            const Tensor i0 = slice_rows(i_out, 0, 1);
            if (cfg_.head_mode == HeadMode::PRED)
                return linear_forward(concat_cols({t0, i0}), params_, "head.");
            return cosine(t0, i0);
        }
    }
    throw ContractError("fusion: unhandled variant");
}

Tensor FusionModel::score_graph(const FeatureBundle& image, const FeatureBundle& query) const {
    return pair_score(encode_image_side(image), encode_text_side(query), image, query);
}

double FusionModel::score_value(const FeatureBundle& image, const FeatureBundle& query) const {
    NoGradGuard ng;
    return score_graph(image, query).item();
}

Tensor FusionModel::score_matrix_graph(const std::vector<const FeatureBundle*>& images,
                                       const std::vector<const FeatureBundle*>& queries) const {
    if (images.empty() || queries.empty())
        throw ContractError("score_matrix: empty image or query set");
    std::vector<Tensor> img_encs, txt_encs;
    img_encs.reserve(images.size());
    txt_encs.reserve(queries.size());
    for (const auto* b : images) img_encs.push_back(encode_image_side(*b));
    for (const auto* b : queries) txt_encs.push_back(encode_text_side(*b));

    std::vector<Tensor> entries;
    entries.reserve(images.size() * queries.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t j = 0; j < queries.size(); ++j)
            entries.push_back(pair_score(img_encs[i], txt_encs[j], *images[i], *queries[j]));
    return stack_scalars(entries, images.size(), queries.size());
}

Mat FusionModel::score_matrix_values(const std::vector<const FeatureBundle*>& images,
                                     const std::vector<const FeatureBundle*>& queries) const {
    NoGradGuard ng;
    const Tensor t = score_matrix_graph(images, queries);
    Mat m(t.rows(), t.cols());
    m.data = t.values();
    return m;
}

Tensor FusionModel::fused_cls(const FeatureBundle& image, const FeatureBundle& query) const {
    const std::size_t cls_n = std::size_t(cfg_.cls_count);
    switch (cfg_.variant) {
        case FusionVariant::MM_PRED:
        case FusionVariant::MM_ADAPTER: {
            const Tensor fused = encoder_stack_forward(concat_rows(image_rows(image), text_rows(query)),
                                                       params_, cfg_.encoder_layers, cfg_.heads, "joint.");
            return cross_block_forward(params_.at("cls"), fused, params_, cfg_.heads, "cross.");
        }
        case FusionVariant::FLAVA_STYLE: {
            const Tensor seq = concat_rows(params_.at("cls"),
                                           concat_rows(image_rows(image), text_rows(query)));
            return slice_rows(encoder_stack_forward(seq, params_, cfg_.encoder_layers, cfg_.heads,
                                                    "joint."), 0, cls_n);
        }
        case FusionVariant::ALBEF_STYLE: {
            const Tensor q = concat_rows(params_.at("cls"), encode_text_side(query));
            return slice_rows(cross_block_forward(q, encode_image_side(image), params_, cfg_.heads,
                                                  "cross."), 0, cls_n);
        }
        case FusionVariant::FIBER_STYLE:
        case FusionVariant::FIBER_MM: {
            Tensor u_img, u_txt;
            if (cfg_.variant == FusionVariant::FIBER_MM) {
                const Tensor x_img = image_rows(image);
                const std::size_t p = x_img.rows();
                const Tensor fused = encoder_stack_forward(concat_rows(x_img, text_rows(query)), params_,
                                                           cfg_.encoder_layers, cfg_.heads, "joint.");
                u_img = slice_rows(fused, 0, p);
                u_txt = slice_rows(fused, p, fused.rows() - p);
            } else {
                u_img = encode_image_side(image);
                u_txt = encode_text_side(query);
            }
            return slice_rows(cross_block_forward(concat_rows(params_.at("cls_t"), u_txt), u_img,
                                                  params_, cfg_.heads, "cross_t."), 0, cls_n);
        }
        default:
            throw ContractError("fused_cls: variant " + to_string(cfg_.variant) + " has no CLS bank");
    }
}

Mat FusionModel::fused_cls_values(const FeatureBundle& image, const FeatureBundle& query) const {
    NoGradGuard ng;
    const Tensor t = fused_cls(image, query);
    Mat m(t.rows(), t.cols());
    m.data = t.values();
    return m;
}

namespace {
void require_variant(const FusionModel& model, FusionVariant want, const char* op) {
    if (model.config().variant != want)
        throw ContractError(std::string(op) + ": model variant is " + to_string(model.config().variant) +
                            ", expected " + to_string(want));
}
}  // namespace

Tensor score_mm_adapter(const FusionModel& model, const FeatureBundle& bundle) {
    require_variant(model, FusionVariant::MM_ADAPTER, "score_mm_adapter");
    return model.score_graph(bundle);
}

Tensor score_mm_pred(const FusionModel& model, const FeatureBundle& bundle) {
    require_variant(model, FusionVariant::MM_PRED, "score_mm_pred");
    return model.score_graph(bundle);
}

Tensor score_disjoint(const FusionModel& model, const FeatureBundle& bundle) {
    const auto v = model.config().variant;
    if (v != FusionVariant::LINEAR && v != FusionVariant::PROMPT_TUNE && v != FusionVariant::FT_LATE)
        throw ContractError("score_disjoint: model variant is " + to_string(v));
    return model.score_graph(bundle);
}

Tensor score_variant_zoo(const FusionModel& model, const FeatureBundle& bundle) {
    if (!is_zoo(model.config().variant))
        throw ContractError("score_variant_zoo: model variant is " + to_string(model.config().variant));
    return model.score_graph(bundle);
}

double adapter_head_score(const std::vector<double>& out_mm, const Mat& frozen_tokens) {
    if (frozen_tokens.cols != out_mm.size())
        throw ShapeError("adapter_head_score: dim mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < frozen_tokens.rows; ++i) {
        double dot = 0.0, nu = 0.0, nv = 0.0;
        for (std::size_t k = 0; k < frozen_tokens.cols; ++k) {
            dot += out_mm[k] * frozen_tokens.at(i, k);
            nu += out_mm[k] * out_mm[k];
            nv += frozen_tokens.at(i, k) * frozen_tokens.at(i, k);
        }
        const double den = std::sqrt(nu) * std::sqrt(nv);
        total += (std::sqrt(nu) < 1e-12 || std::sqrt(nv) < 1e-12) ? 0.0 : dot / den;
    }
    return total * (1.0 / double(frozen_tokens.rows));
}

}  // namespace cola
