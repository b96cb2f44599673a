#include "cola/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "json.hpp"

using nlohmann::json;

namespace cola {

Ranking rank_pool(const RetrievalPool& pool, const ScoreFn& score) {
    const std::size_t n = pool.candidate_ids.size();
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = score(pool.candidate_ids[i], pool.query);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // Candidates arrive sorted by id, so a stable sort on descending score
    // leaves ties in ascending-id order.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    Ranking r;
    r.query_id = pool.query.query_id;
    for (auto i : order) {
        r.candidate_ids.push_back(pool.candidate_ids[i]);
        r.relevance.push_back(pool.relevance[i]);
        r.scores.push_back(scores[i]);
    }
    return r;
}

double average_precision(const std::vector<int>& relevance_in_rank_order) {
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t k = 0; k < relevance_in_rank_order.size(); ++k) {
        if (relevance_in_rank_order[k] != 1) continue;
        ++hits;
        sum += double(hits) / double(k + 1);
    }
    if (hits == 0) throw MetricError("average_precision: no relevant candidate");
    return sum / double(hits);
}

GroupedMap map_over_pools(const std::vector<RetrievalPool>& pools, const SplitSpec& split,
                          const ScoreFn& score) {
    if (pools.empty()) throw MetricError("map_over_pools: group 'all' is empty");
    for (const auto& p : pools)
        if (p.mode != pools.front().mode)
            throw MetricError("map_over_pools: pools mix modes " + to_string(pools.front().mode) +
                              " and " + to_string(p.mode));

    std::set<std::string> seen(split.seen_queries.begin(), split.seen_queries.end());
    std::set<std::string> unseen(split.unseen_queries.begin(), split.unseen_queries.end());

    GroupedMap out;
    double sum_all = 0, sum_seen = 0, sum_unseen = 0;
    for (const auto& pool : pools) {
        const Ranking r = rank_pool(pool, score);
        const double ap = average_precision(r.relevance);
        out.per_query_ap[pool.query.query_id] = ap;
        sum_all += ap;
        ++out.n_all;
        if (seen.count(pool.query.query_id)) {
            sum_seen += ap;
            ++out.n_seen;
        } else if (unseen.count(pool.query.query_id)) {
            sum_unseen += ap;
            ++out.n_unseen;
        } else {
            throw MetricError("map_over_pools: query '" + pool.query.query_id +
                              "' is neither seen nor unseen in the split");
        }
    }
    if (out.n_seen == 0) throw MetricError("map_over_pools: group 'seen' is empty");
    if (out.n_unseen == 0) throw MetricError("map_over_pools: group 'unseen' is empty");
    out.all = sum_all / double(out.n_all);
    out.seen = sum_seen / double(out.n_seen);
    out.unseen = sum_unseen / double(out.n_unseen);
    return out;
}

std::pair<double, double> mean_ranks(const std::vector<RetrievalPool>& pools, const ScoreFn& score) {
    if (pools.empty()) throw MetricError("mean_ranks: no pools");
    double rel_sum = 0, irr_sum = 0;
    std::size_t rel_n = 0, irr_n = 0;
    for (const auto& pool : pools) {
        const Ranking r = rank_pool(pool, score);
        for (std::size_t k = 0; k < r.relevance.size(); ++k) {
            if (r.relevance[k] == 1) {
                rel_sum += double(k + 1);
                ++rel_n;
            } else {
                irr_sum += double(k + 1);
                ++irr_n;
            }
        }
    }
    if (rel_n == 0) throw MetricError("mean_ranks: no relevant candidates");
    return {rel_sum / double(rel_n), irr_n == 0 ? 0.0 : irr_sum / double(irr_n)};
}

double multiobj_t2i_accuracy(const std::vector<Quadruplet>& quads, const QuadScoreFn& score) {
    if (quads.empty()) throw MetricError("multiobj_t2i_accuracy: no quadruplets");
    std::size_t correct = 0;
    for (const auto& q : quads) {
        const QuadScores s = score(q);
        if (s.i_m > s.ip_m && s.ip_mp > s.i_mp) ++correct;
    }
    return 100.0 * double(correct) / double(quads.size());
}

double multiobj_i2t_accuracy(const std::vector<Quadruplet>& quads, const QuadScoreFn& score) {
    if (quads.empty()) throw MetricError("multiobj_i2t_accuracy: no quadruplets");
    std::size_t correct = 0;
    for (const auto& q : quads) {
        const QuadScores s = score(q);
        if (s.i_m > s.i_mp) ++correct;    // image I: true caption M
        if (s.ip_mp > s.ip_m) ++correct;  // image I': true caption M'
    }
    return 100.0 * double(correct) / double(2 * quads.size());
}

std::vector<AttributeCountPoint> map_by_attribute_count(const std::vector<RetrievalPool>& pools,
                                                        const ScoreFn& score) {
    std::map<std::size_t, std::pair<double, std::size_t>> buckets;  // count -> (ap sum, n)
    for (const auto& pool : pools) {
        const Ranking r = rank_pool(pool, score);
        const double ap = average_precision(r.relevance);
        auto& b = buckets[pool.query.attribute_count()];
        b.first += ap;
        b.second += 1;
    }
    std::vector<AttributeCountPoint> out;
    for (const auto& [count, sums] : buckets)
        out.push_back({count, sums.first / double(sums.second), sums.second});
    return out;
}

// ---- report -----------------------------------------------------------------

std::string report_to_json(const MetricReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows) rows.push_back({{"metric", r.metric}, {"group", r.group}, {"value", r.value}});
    const json j = {{"schema_version", 1},
                    {"rows", rows},
                    {"group_sizes", report.group_sizes},
                    {"meta", report.meta}};
    return j.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text) {
    const json j = json::parse(text);
    MetricReport report;
    for (const auto& rj : j.at("rows"))
        report.rows.push_back({rj.at("metric").get<std::string>(), rj.at("group").get<std::string>(),
                               rj.at("value").get<double>()});
    report.group_sizes = j.at("group_sizes").get<std::map<std::string, std::size_t>>();
    report.meta = j.at("meta").get<std::map<std::string, std::string>>();
    return report;
}

std::string report_to_csv(const MetricReport& report) {
    std::string out = "metric,group,value\n";
    char buf[64];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%.12g", r.value);
        out += r.metric + "," + r.group + "," + buf + "\n";
    }
    return out;
}

}  // namespace cola
