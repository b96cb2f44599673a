#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cola/bench.hpp"

namespace cola {

// Callback handing the evaluator a relevance score for (scene, query). All
// metrics below are pure functions of these scores and the supplied pools:
// recomputation is bit-stable whenever the callback is.
using ScoreFn = std::function<double(const std::string& scene_id, const Query& query)>;

// Candidates ordered by descending score; ties broken by ascending candidate
// id (pool candidates arrive id-sorted, so a stable sort suffices).
struct Ranking {
    std::string query_id;
    std::vector<std::string> candidate_ids;
    std::vector<int> relevance;
    std::vector<double> scores;
};

Ranking rank_pool(const RetrievalPool& pool, const ScoreFn& score);

// Mean over relevant positions k (1-based) of precision@k. At least one
// relevant entry required.
double average_precision(const std::vector<int>& relevance_in_rank_order);

struct GroupedMap {
    double all = 0.0, seen = 0.0, unseen = 0.0;
    std::size_t n_all = 0, n_seen = 0, n_unseen = 0;
    std::map<std::string, double> per_query_ap;
};

// Unweighted mean of per-query AP, overall and split by seen/unseen. All
// pools must share one mode and every query must be labeled by the split.
GroupedMap map_over_pools(const std::vector<RetrievalPool>& pools, const SplitSpec& split,
                          const ScoreFn& score);

// 1-based ranks of relevant / irrelevant candidates, averaged separately,
// pooled across queries. Intended for AND-mode pools.
std::pair<double, double> mean_ranks(const std::vector<RetrievalPool>& pools, const ScoreFn& score);

// Scores of the four image-caption pairings of one quadruplet.
struct QuadScores {
    double i_m, i_mp, ip_m, ip_mp;  // f(I,M), f(I,M'), f(I',M), f(I',M')
};
using QuadScoreFn = std::function<QuadScores(const Quadruplet&)>;

// Percent of quadruplets with f(I,M) > f(I',M) and f(I',M') > f(I,M'), both
// strict; ties count as incorrect.
double multiobj_t2i_accuracy(const std::vector<Quadruplet>& quads, const QuadScoreFn& score);
// Per image, correct iff its own caption strictly outscores the swapped one;
// percent over both images of every quadruplet.
double multiobj_i2t_accuracy(const std::vector<Quadruplet>& quads, const QuadScoreFn& score);

struct AttributeCountPoint {
    std::size_t attribute_count = 0;
    double map = 0.0;
    std::size_t n_queries = 0;
};
// MAP per query-attribute-count bucket; empty buckets are omitted.
std::vector<AttributeCountPoint> map_by_attribute_count(const std::vector<RetrievalPool>& pools,
                                                        const ScoreFn& score);

// ---- report ---------------------------------------------------------------

struct MetricReport {
    struct Row {
        std::string metric;
        std::string group;
        double value = 0.0;
    };
    std::vector<Row> rows;
    std::map<std::string, std::size_t> group_sizes;
    std::map<std::string, std::string> meta;  // tool version, seeds, hashes
};

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);
std::string report_to_csv(const MetricReport& report);

}  // namespace cola
