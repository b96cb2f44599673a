#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>

#include "cola/metrics.hpp"
#include "doctest.h"

using namespace cola;

namespace {

// Brute-force AP: for each relevant item, count relevant items at its rank
// or better, divide by the rank, average. Positions via exhaustive scan.
double ap_oracle(const std::vector<int>& rel) {
    std::size_t n_rel = 0;
    double total = 0.0;
    for (std::size_t k = 0; k < rel.size(); ++k) {
        if (rel[k] != 1) continue;
        ++n_rel;
        std::size_t in_top = 0;
        for (std::size_t j = 0; j <= k; ++j) in_top += rel[j] == 1 ? 1u : 0u;
        total += double(in_top) / double(k + 1);
    }
    return total / double(n_rel);
}

// A little synthetic pool world with controllable scores.
struct PoolWorld {
    Vocabulary vocab = Vocabulary::default_vocabulary();
    std::vector<Scene> scenes;
    std::vector<Query> queries;
    std::vector<RetrievalPool> pools;
    SplitSpec split;

    static PoolWorld make(std::size_t n_scenes, std::uint64_t seed) {
        PoolWorld w;
        GenParams p;
        p.n_train_scenes = 0;
        p.n_test_scenes = n_scenes;
        auto ds = gen_single_obj_dataset(w.vocab, p, seed);
        w.scenes = ds.test_scenes;
        w.queries = ds.queries;
        for (const auto& q : w.queries) w.pools.push_back(build_pool(q, w.scenes, PoolMode::OR));
        // alternate seen/unseen
        for (std::size_t i = 0; i < w.queries.size(); ++i) {
            if (i % 2 == 0)
                w.split.seen_queries.push_back(w.queries[i].query_id);
            else
                w.split.unseen_queries.push_back(w.queries[i].query_id);
        }
        return w;
    }
};

ScoreFn hash_scorer(std::uint64_t salt) {
    return [salt](const std::string& scene_id, const Query& q) {
        const auto h = fnv1a64(scene_id + "|" + q.query_id, salt ^ 0xabcdef1234567890ull);
        return double(h % 100000) / 100000.0;
    };
}

Quadruplet tiny_quad(double base) {
    // contents are irrelevant for score-driven tests; ids only
    Quadruplet q;
    q.quad_id = "q" + std::to_string(base);
    q.image.scene_id = "i";
    q.distractor.scene_id = "ip";
    q.caption.query_id = "m";
    q.swapped_caption.query_id = "mp";
    return q;
}

}  // namespace

TEST_CASE("average precision: frozen examples") {
    CHECK(average_precision({1, 1, 0, 0}) == 1.0);
    CHECK(average_precision({1, 0, 1}) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
    CHECK(average_precision({0, 1}) == 0.5);
    CHECK_THROWS_AS(average_precision({0, 0, 0}), MetricError);
}

TEST_CASE("average precision matches the brute-force oracle on 100 instances") {
    Rng rng(5);
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n = 1 + std::size_t(rng.uniform_int(1, 30));
        std::vector<int> rel(n);
        bool any = false;
        for (auto& r : rel) {
            r = rng.uniform01() < 0.3 ? 1 : 0;
            any = any || r == 1;
        }
        if (!any) rel[std::size_t(rng.uniform_int(0, std::int64_t(n) - 1))] = 1;
        CHECK(std::abs(average_precision(rel) - ap_oracle(rel)) < 1e-12);
    }
}

TEST_CASE("ranking breaks ties by ascending candidate id") {
    RetrievalPool pool;
    pool.query.query_id = "q";
    pool.candidate_ids = {"a", "b", "c", "d"};
    pool.relevance = {0, 1, 0, 1};
    const auto score = [](const std::string&, const Query&) { return 0.25; };
    const Ranking r = rank_pool(pool, score);
    CHECK(r.candidate_ids == std::vector<std::string>{"a", "b", "c", "d"});
}

TEST_CASE("map_over_pools: perfect scorer, constant scorer, oracle equality") {
    const PoolWorld w = PoolWorld::make(40, 11);
    REQUIRE(w.pools.size() >= 20);

    // oracle-as-scorer gives MAP 1.0 in every mode
    const ScoreFn perfect = [&](const std::string& scene_id, const Query& q) {
        for (const auto& s : w.scenes)
            if (s.scene_id == scene_id) return query_true_of_scene(q, s) ? 1.0 : 0.0;
        return 0.0;
    };
    for (auto mode : {PoolMode::OR, PoolMode::AND, PoolMode::ALL}) {
        std::vector<RetrievalPool> pools;
        for (const auto& q : w.queries) pools.push_back(build_pool(q, w.scenes, mode));
        const GroupedMap gm = map_over_pools(pools, w.split, perfect);
        CHECK(gm.all == 1.0);
        CHECK(gm.seen == 1.0);
        CHECK(gm.unseen == 1.0);
    }

    // constant scorer: deterministic under the id tie-break, bit-stable
    const ScoreFn flat = [](const std::string&, const Query&) { return 0.5; };
    const GroupedMap a = map_over_pools(w.pools, w.split, flat);
    const GroupedMap b = map_over_pools(w.pools, w.split, flat);
    CHECK(a.all == b.all);
    CHECK(a.seen == b.seen);
    CHECK(a.unseen == b.unseen);

    // random instance matches an independent mean-of-AP computation
    const ScoreFn rnd = hash_scorer(17);
    const GroupedMap gm = map_over_pools(w.pools, w.split, rnd);
    double sum = 0.0;
    for (const auto& pool : w.pools) {
        // independent: sort (score desc, id asc) with plain pairs
        std::vector<std::pair<double, std::string>> order;
        std::map<std::string, int> rel;
        for (std::size_t i = 0; i < pool.candidate_ids.size(); ++i) {
            order.push_back({-rnd(pool.candidate_ids[i], pool.query), pool.candidate_ids[i]});
            rel[pool.candidate_ids[i]] = pool.relevance[i];
        }
        std::sort(order.begin(), order.end());
        std::vector<int> bits;
        for (const auto& [neg, id] : order) bits.push_back(rel[id]);
        sum += ap_oracle(bits);
    }
    CHECK(std::abs(gm.all - sum / double(w.pools.size())) < 1e-12);

    // empty group is an error
    SplitSpec all_seen;
    for (const auto& q : w.queries) all_seen.seen_queries.push_back(q.query_id);
    CHECK_THROWS_WITH_AS(map_over_pools(w.pools, all_seen, flat), doctest::Contains("unseen"),
                         MetricError);
}

TEST_CASE("mean ranks: perfect and inverted scorers on a 1+9 pool") {
    RetrievalPool pool;
    pool.query.query_id = "q";
    for (int i = 0; i < 10; ++i) {
        pool.candidate_ids.push_back("c" + std::to_string(i));
        pool.relevance.push_back(i == 0 ? 1 : 0);
    }
    pool.mode = PoolMode::AND;
    const ScoreFn perfect = [](const std::string& id, const Query&) {
        return id == "c0" ? 1.0 : 0.0;
    };
    // relevant at rank 1; irrelevant at ranks 2..10, mean 6
    auto [r1, x1] = mean_ranks({pool}, perfect);
    CHECK(r1 == 1.0);
    CHECK(x1 == 6.0);

    const ScoreFn inverted = [](const std::string& id, const Query&) {
        return id == "c0" ? 0.0 : 1.0;
    };
    // relevant last; irrelevant at ranks 1..9, mean 5
    auto [r2, x2] = mean_ranks({pool}, inverted);
    CHECK(r2 == 10.0);
    CHECK(x2 == 5.0);
}

TEST_CASE("mean ranks match a brute-force recomputation on random instances") {
    const PoolWorld w = PoolWorld::make(30, 13);
    std::vector<RetrievalPool> and_pools;
    for (const auto& q : w.queries) {
        try {
            and_pools.push_back(build_pool(q, w.scenes, PoolMode::AND));
        } catch (const DataError&) {
        }
    }
    REQUIRE(!and_pools.empty());
    const ScoreFn rnd = hash_scorer(29);
    const auto [rel_rank, irr_rank] = mean_ranks(and_pools, rnd);

    double rs = 0, is = 0;
    std::size_t rn = 0, in = 0;
    for (const auto& pool : and_pools) {
        std::vector<std::pair<double, std::string>> order;
        std::map<std::string, int> rel;
        for (std::size_t i = 0; i < pool.candidate_ids.size(); ++i) {
            order.push_back({-rnd(pool.candidate_ids[i], pool.query), pool.candidate_ids[i]});
            rel[pool.candidate_ids[i]] = pool.relevance[i];
        }
        std::sort(order.begin(), order.end());
        for (std::size_t k = 0; k < order.size(); ++k) {
            if (rel[order[k].second] == 1) {
                rs += double(k + 1);
                ++rn;
            } else {
                is += double(k + 1);
                ++in;
            }
        }
    }
    CHECK(std::abs(rel_rank - rs / double(rn)) < 1e-12);
    CHECK(std::abs(irr_rank - is / double(in)) < 1e-12);
}

TEST_CASE("multi-object T2I: the quoted example, the tie rule") {
    std::vector<Quadruplet> quads = {tiny_quad(1)};
    const QuadScoreFn good = [](const Quadruplet&) {
        return QuadScores{0.9, 0.1, 0.2, 0.8};  // f(I,M)=.9 f(I,M')=.1 f(I',M)=.2 f(I',M')=.8
    };
    CHECK(multiobj_t2i_accuracy(quads, good) == 100.0);
    const QuadScoreFn tied = [](const Quadruplet&) { return QuadScores{0.5, 0.5, 0.5, 0.5}; };
    CHECK(multiobj_t2i_accuracy(quads, tied) == 0.0);
    CHECK(multiobj_i2t_accuracy(quads, tied) == 0.0);
    CHECK(multiobj_i2t_accuracy(quads, good) == 100.0);
}

TEST_CASE("multi-object accuracies on a hand-evaluated 4-quadruplet set") {
    std::vector<Quadruplet> quads;
    for (int i = 0; i < 4; ++i) {
        auto q = tiny_quad(i);
        q.quad_id = "q" + std::to_string(i);
        quads.push_back(q);
    }
    const QuadScoreFn fn = [](const Quadruplet& q) {
        if (q.quad_id == "q0") return QuadScores{1.0, 0.0, 0.0, 1.0};  // both right
        if (q.quad_id == "q1") return QuadScores{0.0, 1.0, 1.0, 0.0};  // both wrong
        if (q.quad_id == "q2") return QuadScores{1.0, 0.8, 0.0, 0.6};  // t2i ok, I i2t ok, I' i2t wrong
        return QuadScores{0.3, 0.6, 0.4, 0.5};                         // t2i fails first leg
    };
    // t2i: q0 yes, q1 no, q2 yes (1>0 and 0.6>0.8? no!) -> recompute:
    // q2: i_m=1 > ip_m=0 ok; ip_mp=0.6 > i_mp=0.8 false -> incorrect.
    // q3: 0.3 > 0.4 false -> incorrect. So t2i = 25%.
    CHECK(multiobj_t2i_accuracy(quads, fn) == 25.0);
    // i2t per image: q0: I 1>0 ok, I' 1>0 ok; q1: both wrong; q2: I 1>0.8 ok,
    // I' 0.6>0? wait ip_mp=0.6 > ip_m=0.0 ok; q3: I 0.3>0.6 no, I' 0.5>0.4 ok.
    // correct = 2 + 0 + 2 + 1 = 5 of 8 -> 62.5%
    CHECK(multiobj_i2t_accuracy(quads, fn) == 62.5);
}

TEST_CASE("map_by_attribute_count: partition and filter-oracle equality") {
    const PoolWorld w = PoolWorld::make(40, 19);
    const ScoreFn rnd = hash_scorer(31);
    const auto curve = map_by_attribute_count(w.pools, rnd);
    REQUIRE(!curve.empty());
    std::size_t total = 0;
    for (const auto& pt : curve) total += pt.n_queries;
    CHECK(total == w.pools.size());

    for (const auto& pt : curve) {
        // filter then plain mean-of-AP
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& pool : w.pools) {
            if (pool.query.attribute_count() != pt.attribute_count) continue;
            const Ranking r = rank_pool(pool, rnd);
            sum += average_precision(r.relevance);
            ++n;
        }
        REQUIRE(n == pt.n_queries);
        CHECK(std::abs(pt.map - sum / double(n)) < 1e-12);
    }
}

TEST_CASE("single-bucket curve equals overall MAP") {
    const PoolWorld w = [] {
        PoolWorld base;
        GenParams p;
        p.n_train_scenes = 0;
        p.n_test_scenes = 30;
        p.attrs_per_object = {2, 2};  // every query gets exactly 2 attributes
        auto ds = gen_single_obj_dataset(base.vocab, p, 23);
        base.scenes = ds.test_scenes;
        base.queries = ds.queries;
        for (const auto& q : base.queries) base.pools.push_back(build_pool(q, base.scenes, PoolMode::OR));
        for (std::size_t i = 0; i < base.queries.size(); ++i)
            (i % 2 ? base.split.unseen_queries : base.split.seen_queries)
                .push_back(base.queries[i].query_id);
        return base;
    }();
    const ScoreFn rnd = hash_scorer(37);
    const auto curve = map_by_attribute_count(w.pools, rnd);
    REQUIRE(curve.size() == 1);
    CHECK(curve[0].attribute_count == 2);
    const GroupedMap gm = map_over_pools(w.pools, w.split, rnd);
    CHECK(std::abs(curve[0].map - gm.all) < 1e-12);
}

TEST_CASE("AP is invariant under positive monotone score transforms") {
    const PoolWorld w = PoolWorld::make(25, 41);
    const ScoreFn raw = hash_scorer(43);
    const ScoreFn warped = [&raw](const std::string& id, const Query& q) {
        return std::exp(3.0 * raw(id, q)) + 7.0;  // strictly increasing
    };
    for (const auto& pool : w.pools) {
        const Ranking a = rank_pool(pool, raw);
        const Ranking b = rank_pool(pool, warped);
        CHECK(a.candidate_ids == b.candidate_ids);
        CHECK(average_precision(a.relevance) == average_precision(b.relevance));
    }
}

TEST_CASE("report serializes to versioned JSON and CSV") {
    MetricReport r;
    r.rows = {{"cola_map", "all", 0.75}, {"cola_map", "seen", 0.8}, {"t2i_accuracy", "all", 62.5}};
    r.group_sizes = {{"seen", 10}, {"unseen", 5}, {"all", 15}};
    r.meta = {{"tool_version", kToolVersion}, {"seed", "7"}};
    const std::string js = report_to_json(r);
    const MetricReport rt = report_from_json(js);
    REQUIRE(rt.rows.size() == 3);
    CHECK(rt.rows[0].metric == "cola_map");
    CHECK(rt.rows[2].value == 62.5);
    CHECK(rt.group_sizes.at("unseen") == 5);
    CHECK(rt.meta.at("seed") == "7");

    const std::string csv = report_to_csv(r);
    CHECK(csv.find("metric,group,value\n") == 0);
    CHECK(csv.find("t2i_accuracy,all,62.5\n") != std::string::npos);
    // byte-stable across calls
    CHECK(report_to_json(r) == js);
    CHECK(report_to_csv(r) == csv);
}
