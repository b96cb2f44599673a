#include "cola/train.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

using nlohmann::json;

namespace cola {

BatchMode batch_mode_from_string(const std::string& s) {
    if (s == "single_obj") return BatchMode::SINGLE_OBJ;
    if (s == "multi_obj") return BatchMode::MULTI_OBJ;
    if (s == "hard_neg") return BatchMode::HARD_NEG;
    if (s == "combined") return BatchMode::COMBINED;
    throw ConfigError("unknown batch mode '" + s + "'");
}

std::string to_string(BatchMode m) {
    switch (m) {
        case BatchMode::SINGLE_OBJ: return "single_obj";
        case BatchMode::MULTI_OBJ: return "multi_obj";
        case BatchMode::HARD_NEG: return "hard_neg";
        case BatchMode::COMBINED: return "combined";
    }
    return "?";
}

LossKind loss_from_string(const std::string& s) {
    if (s == "bce") return LossKind::SIGMOID_BCE;
    if (s == "nce") return LossKind::NCE;
    throw ConfigError("unknown loss '" + s + "' (expected bce|nce)");
}

std::string to_string(LossKind k) { return k == LossKind::SIGMOID_BCE ? "bce" : "nce"; }

const Scene& TrainData::scene(const std::string& id) const {
    auto it = scenes.find(id);
    if (it == scenes.end()) throw DataError("train data: unknown scene '" + id + "'");
    return it->second;
}

const Query& TrainData::query(const std::string& id) const {
    auto it = queries.find(id);
    if (it == queries.end()) throw DataError("train data: unknown query '" + id + "'");
    return it->second;
}

TrainData TrainData::build(const std::vector<Scene>& train_scenes,
                           const std::vector<Query>& realized_queries,
                           const std::vector<Quadruplet>& train_quads, const Vocabulary& vocab) {
    TrainData d;
    for (const auto& s : train_scenes) d.scenes[s.scene_id] = s;

    // Single-object positives: every (train scene, realized compound) pair.
    // Compounds with fewer than two attributes are not queries, matching the
    // benchmark's query definition.
    std::map<std::string, Query> compounds;
    for (const auto& s : train_scenes) {
        for (const auto& p : s.placements) {
            if (p.attributes.size() < 2) continue;
            Query q = make_query(vocab, {QueryPart{p.object, p.attributes}});
            compounds.emplace(q.query_id, q);
        }
    }
    for (const auto& q : realized_queries) compounds.emplace(q.query_id, q);
    for (const auto& [qid, q] : compounds) {
        if (q.parts.size() != 1) continue;
        for (const auto& s : train_scenes)
            if (query_true_of_scene(q, s)) d.single_pairs.push_back({s.scene_id, qid});
        d.queries.emplace(qid, q);
    }

    // Multi-object positives are exactly the quadruplets' pairs.
    d.quadruplets = train_quads;
    for (const auto& quad : train_quads) {
        d.scenes[quad.image.scene_id] = quad.image;
        d.scenes[quad.distractor.scene_id] = quad.distractor;
        d.queries.emplace(quad.caption.query_id, quad.caption);
        d.queries.emplace(quad.swapped_caption.query_id, quad.swapped_caption);
        d.multi_pairs.push_back({quad.image.scene_id, quad.caption.query_id});
        d.multi_pairs.push_back({quad.distractor.scene_id, quad.swapped_caption.query_id});
    }
    return d;
}

namespace {
TrainItem draw_pair(const std::vector<TrainItem>& pool, Rng& rng) {
    return pool[std::size_t(rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
}
}  // namespace

Batch sample_batch(const BatchStrategy& strategy, const TrainData& data, Rng& rng) {
    if (strategy.batch_size == 0) throw ConfigError("sample_batch: batch size must be positive");
    Batch b;
    switch (strategy.mode) {
        case BatchMode::SINGLE_OBJ: {
            if (data.single_pairs.empty())
                throw DataError("sample_batch: SINGLE_OBJ mode has no single-object pairs");
            for (std::size_t i = 0; i < strategy.batch_size; ++i)
                b.items.push_back(draw_pair(data.single_pairs, rng));
            break;
        }
        case BatchMode::MULTI_OBJ: {
            if (data.multi_pairs.empty())
                throw DataError("sample_batch: MULTI_OBJ mode has no multi-object pairs");
            for (std::size_t i = 0; i < strategy.batch_size; ++i)
                b.items.push_back(draw_pair(data.multi_pairs, rng));
            break;
        }
        case BatchMode::HARD_NEG: {
            if (data.quadruplets.empty())
                throw DataError("sample_batch: HARD_NEG mode has no quadruplets");
            if (strategy.batch_size % 2 != 0)
                throw ConfigError("sample_batch: HARD_NEG needs an even batch size");
            for (std::size_t i = 0; i < strategy.batch_size / 2; ++i) {
                const auto& q = data.quadruplets[std::size_t(
                    rng.uniform_int(0, std::int64_t(data.quadruplets.size()) - 1))];
                b.items.push_back({q.image.scene_id, q.caption.query_id});
                b.items.push_back({q.distractor.scene_id, q.swapped_caption.query_id});
            }
            break;
        }
        case BatchMode::COMBINED: {
            if (strategy.hard_ratio < 0 || strategy.hard_ratio > 1)
                throw ConfigError("sample_batch: hard_ratio must lie in [0,1]");
            const bool has_uniform = !data.single_pairs.empty() || !data.multi_pairs.empty();
            if (!has_uniform && data.quadruplets.empty())
                throw DataError("sample_batch: COMBINED mode has no data");
            // One Bernoulli(hard_ratio) per potential pair slot keeps the
            // expected hard-slot fraction at exactly hard_ratio.
            std::size_t hard_pairs = 0;
            if (!data.quadruplets.empty()) {
                for (std::size_t i = 0; i < strategy.batch_size / 2; ++i)
                    if (rng.uniform01() < strategy.hard_ratio) ++hard_pairs;
            }
            for (std::size_t i = 0; i < hard_pairs; ++i) {
                const auto& q = data.quadruplets[std::size_t(
                    rng.uniform_int(0, std::int64_t(data.quadruplets.size()) - 1))];
                b.items.push_back({q.image.scene_id, q.caption.query_id});
                b.items.push_back({q.distractor.scene_id, q.swapped_caption.query_id});
            }
            std::vector<TrainItem> uniform = data.single_pairs;
            uniform.insert(uniform.end(), data.multi_pairs.begin(), data.multi_pairs.end());
            if (uniform.empty() && b.items.size() < strategy.batch_size)
                throw DataError("sample_batch: COMBINED mode lacks single/multi pairs to fill the batch");
            while (b.items.size() < strategy.batch_size) b.items.push_back(draw_pair(uniform, rng));
            break;
        }
    }
    return b;
}

Mat label_matrix(const std::vector<const Scene*>& images, const std::vector<const Query*>& queries) {
    Mat m(images.size(), queries.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t j = 0; j < queries.size(); ++j)
            m.at(i, j) = query_true_of_scene(*queries[j], *images[i]) ? 1.0 : 0.0;
    return m;
}

std::string history_to_jsonl(const TrainHistory& h) {
    std::string out;
    for (const auto& e : h.epochs) {
        const json j = {{"epoch", e.epoch},
                        {"loss", e.loss},
                        {"val_metrics", e.val_metrics},
                        {"seconds", e.seconds}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

QuadScoreFn model_quad_scorer(const FusionModel& model, BundleCache& cache) {
    return [&model, &cache](const Quadruplet& q) {
        const FeatureBundle& bi = cache.scene(q.image);
        const FeatureBundle& bip = cache.scene(q.distractor);
        const FeatureBundle& bm = cache.query(q.caption);
        const FeatureBundle& bmp = cache.query(q.swapped_caption);
        QuadScores s;
        s.i_m = model.score_value(bi, bm);
        s.i_mp = model.score_value(bi, bmp);
        s.ip_m = model.score_value(bip, bm);
        s.ip_mp = model.score_value(bip, bmp);
        return s;
    };
}

TrainHistory train(FusionModel& model, const TrainConfig& config, const TrainData& data,
                   BundleCache& cache, const ValidationSet& validation) {
    if (config.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (config.learning_rate <= 0) throw ConfigError("train: learning rate must be positive");

    std::size_t available = 0;
    switch (config.strategy.mode) {
        case BatchMode::SINGLE_OBJ: available = data.single_pairs.size(); break;
        case BatchMode::MULTI_OBJ: available = data.multi_pairs.size(); break;
        case BatchMode::HARD_NEG: available = data.multi_pairs.size(); break;
        case BatchMode::COMBINED:
            available = data.single_pairs.size() + data.multi_pairs.size();
            break;
    }
    const int steps = config.steps_per_epoch > 0
                          ? config.steps_per_epoch
                          : int((available + config.strategy.batch_size - 1) / config.strategy.batch_size);

    Rng rng(mix_seed(config.seed, "train"));
    TrainHistory history;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        for (int step = 0; step < steps; ++step) {
            const Batch batch = sample_batch(config.strategy, data, rng);

            std::vector<const FeatureBundle*> img_bundles, qry_bundles;
            std::vector<const Scene*> scenes;
            std::vector<const Query*> queries;
            for (const auto& item : batch.items) {
                const Scene& s = data.scene(item.scene_id);
                const Query& q = data.query(item.query_id);
                scenes.push_back(&s);
                queries.push_back(&q);
                img_bundles.push_back(&cache.scene(s));
                qry_bundles.push_back(&cache.query(q));
            }

            const Tensor scores = model.score_matrix_graph(img_bundles, qry_bundles);
            const Mat labels = label_matrix(scenes, queries);
            const Tensor label_t = Tensor::from(labels.rows, labels.cols, labels.data);
            const Tensor loss = config.loss == LossKind::SIGMOID_BCE
                                    ? sigmoid_bce_with_logits(scores, label_t, config.logit_scale)
                                    : nce_loss(scores, label_t, config.logit_scale);
            if (!std::isfinite(loss.item()))
                throw ContractError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(step));
            model.params().zero_grad();
            backward(loss);
            adamw_step(model.params(), config.learning_rate, config.weight_decay);
            loss_sum += loss.item();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = steps > 0 ? loss_sum / double(steps) : 0.0;
        if (!validation.quads.empty()) {
            const auto scorer = model_quad_scorer(model, cache);
            rec.val_metrics["t2i"] = multiobj_t2i_accuracy(validation.quads, scorer);
            rec.val_metrics["i2t"] = multiobj_i2t_accuracy(validation.quads, scorer);
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(std::move(rec));
    }
    return history;
}

}  // namespace cola
