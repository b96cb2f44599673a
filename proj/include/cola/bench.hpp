#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cola/data.hpp"

namespace cola {

// A hard-distractor pair: I' is I with the designated attributes of its two
// target objects exchanged; M and M' are the captions rendered from I and I'.
struct Quadruplet {
    std::string quad_id;
    Scene image;             // I
    Scene distractor;        // I'
    Query caption;           // M, true of I only
    Query swapped_caption;   // M', true of I' only
};

enum class PoolMode { OR, AND, ALL };

PoolMode pool_mode_from_string(const std::string& s);
std::string to_string(PoolMode m);

struct RetrievalPool {
    Query query;
    PoolMode mode = PoolMode::OR;
    std::vector<std::string> candidate_ids;  // sorted ascending
    std::vector<int> relevance;              // parallel to candidate_ids
};

struct SplitSpec {
    std::vector<std::string> seen_queries;
    std::vector<std::string> unseen_queries;
    std::vector<std::string> train_scenes;
    std::vector<std::string> test_scenes;
};

struct GenParams {
    std::size_t n_train_scenes = 64;
    std::size_t n_test_scenes = 40;
    std::pair<std::size_t, std::size_t> attrs_per_object = {2, 3};
    std::pair<std::size_t, std::size_t> objects_per_scene = {2, 4};
    std::size_t grid = 4;
};

struct SingleObjDataset {
    std::vector<Scene> train_scenes;
    std::vector<Scene> test_scenes;
    std::vector<Query> queries;  // all >=2-attribute compounds realized in test scenes
};

// Scenes sampled uniformly under the constraints; queries are every
// attribute-object compound with at least two attributes realized in the
// test scenes, sorted by id.
SingleObjDataset gen_single_obj_dataset(const Vocabulary& vocab, const GenParams& params,
                                        std::uint64_t seed);

struct QuadParams {
    std::pair<std::size_t, std::size_t> attrs_per_object = {1, 2};
    std::size_t grid = 4;
    std::string id_prefix = "mq";
};

// Each quadruplet swaps attributes of the same family between two distinct
// objects (o1 != o2, a1 != a2), so both scenes carry identical object and
// attribute multisets and only the binding differs.
std::vector<Quadruplet> gen_multi_obj_quadruplets(const Vocabulary& vocab, std::size_t n,
                                                  const QuadParams& params, std::uint64_t seed);

// Throws DataError describing the first violated quadruplet invariant.
void validate_quadruplet(const Vocabulary& vocab, const Quadruplet& q);

// Membership: OR = scene contains at least one query word; AND = scene
// contains the object and every query attribute somewhere; ALL = every
// scene. Relevance everywhere: some instance binds all attributes of each
// part. Candidates are sorted by scene id, so pools are independent of the
// order scenes are supplied in.
RetrievalPool build_pool(const Query& query, const std::vector<Scene>& scenes, PoolMode mode);

// Picks the k compounds realized least often in the train scenes (ties by
// ascending query id) as unseen, then drops every train scene realizing any
// of them. `seed` is reserved for future stochastic tie-breaking.
SplitSpec split_seen_unseen(const std::vector<Query>& queries, std::vector<Scene> train_scenes,
                            const std::vector<Scene>& test_scenes, std::size_t k_unseen,
                            std::uint64_t seed);

std::string splits_to_json(const SplitSpec& s);
SplitSpec splits_from_json(const std::string& text);

// quadruplets.jsonl stores id references; scenes and captions live in the
// scene/query files.
std::string quadruplet_ref_to_json(const Quadruplet& q);
Quadruplet quadruplet_from_json(const std::string& line, const std::map<std::string, Scene>& scenes,
                                const std::map<std::string, Query>& queries);

}  // namespace cola
