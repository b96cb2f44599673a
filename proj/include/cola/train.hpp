#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cola/bench.hpp"
#include "cola/fusion.hpp"
#include "cola/metrics.hpp"

namespace cola {

enum class BatchMode { SINGLE_OBJ, MULTI_OBJ, HARD_NEG, COMBINED };
enum class LossKind { SIGMOID_BCE, NCE };

BatchMode batch_mode_from_string(const std::string& s);
std::string to_string(BatchMode m);
LossKind loss_from_string(const std::string& s);
std::string to_string(LossKind k);

struct BatchStrategy {
    BatchMode mode = BatchMode::COMBINED;
    std::size_t batch_size = 8;
    // COMBINED only: expected fraction of batch slots filled by hard
    // quadruplet pairs. 0 degenerates to a uniform single/multi mix.
    double hard_ratio = 0.5;
};

struct TrainConfig {
    LossKind loss = LossKind::SIGMOID_BCE;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 8;
    int steps_per_epoch = 0;  // 0 = ceil(available pairs / batch size)
    BatchStrategy strategy;
    std::uint64_t seed = 0;
    double logit_scale = 10.0;
};

// One positive (image, caption) pair.
struct TrainItem {
    std::string scene_id;
    std::string query_id;
};

// Pair stores plus the quadruplets that HARD_NEG batching groups. multi_pairs
// is by construction the flattening of the quadruplets' (I,M) / (I',M')
// pairs: MULTI_OBJ and HARD_NEG train on identical data and differ only in
// batch composition.
struct TrainData {
    std::vector<TrainItem> single_pairs;
    std::vector<TrainItem> multi_pairs;
    std::vector<Quadruplet> quadruplets;
    std::map<std::string, Scene> scenes;
    std::map<std::string, Query> queries;

    const Scene& scene(const std::string& id) const;
    const Query& query(const std::string& id) const;
    static TrainData build(const std::vector<Scene>& train_scenes,
                           const std::vector<Query>& realized_queries,
                           const std::vector<Quadruplet>& train_quads, const Vocabulary& vocab);
};

struct Batch {
    std::vector<TrainItem> items;
};

// SINGLE_OBJ / MULTI_OBJ draw uniformly from the respective pair stores;
// HARD_NEG draws whole quadruplets (both scenes, both captions, adjacent);
// COMBINED mixes hard pairs at the configured ratio with a uniform
// single+multi mix.
Batch sample_batch(const BatchStrategy& strategy, const TrainData& data, Rng& rng);

// Entry (i,j) = 1 iff query j is true of scene i under the binding
// predicate; multiple positives per row/column allowed.
Mat label_matrix(const std::vector<const Scene*>& images, const std::vector<const Query*>& queries);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    std::map<std::string, double> val_metrics;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

std::string history_to_jsonl(const TrainHistory& h);

struct ValidationSet {
    std::vector<Quadruplet> quads;  // T2I/I2T snapshots; may be empty
};

// Epochs of sample -> score_matrix -> loss -> backward -> adamw. Deterministic
// given (config.seed, model init, data). Aborts with epoch/batch coordinates
// if the loss goes non-finite.
TrainHistory train(FusionModel& model, const TrainConfig& config, const TrainData& data,
                   BundleCache& cache, const ValidationSet& validation);

// Validation snapshot helper shared by train and eval: scores the four
// pairings of each quadruplet with the model.
QuadScoreFn model_quad_scorer(const FusionModel& model, BundleCache& cache);

}  // namespace cola
