#include "cola/bench.hpp"

#include <algorithm>

#include "json.hpp"

using nlohmann::json;

namespace cola {

PoolMode pool_mode_from_string(const std::string& s) {
    if (s == "or") return PoolMode::OR;
    if (s == "and") return PoolMode::AND;
    if (s == "all") return PoolMode::ALL;
    throw ConfigError("unknown pool mode '" + s + "' (expected or|and|all)");
}

std::string to_string(PoolMode m) {
    switch (m) {
        case PoolMode::OR: return "or";
        case PoolMode::AND: return "and";
        case PoolMode::ALL: return "all";
    }
    return "?";
}

namespace {

Scene sample_scene(const Vocabulary& vocab, const GenParams& params, const std::string& scene_id,
                   Rng& rng) {
    Scene s;
    s.scene_id = scene_id;
    s.grid = params.grid;
    const std::size_t cells = params.grid * params.grid;
    const std::size_t n_obj = std::size_t(
        rng.uniform_int(std::int64_t(params.objects_per_scene.first),
                        std::int64_t(params.objects_per_scene.second)));
    if (n_obj > cells) throw DataError("gen: more objects than grid cells");

    const auto cell_idx = rng.sample_indices(cells, n_obj);
    std::vector<std::string> families;
    for (const auto& [fam, attrs] : vocab.attributes)
        if (!attrs.empty()) families.push_back(fam);
    std::sort(families.begin(), families.end());

    for (std::size_t i = 0; i < n_obj; ++i) {
        Placement p;
        p.cell = cell_idx[i];
        p.object = vocab.objects[std::size_t(rng.uniform_int(0, std::int64_t(vocab.objects.size()) - 1))];
        const std::size_t n_attr = std::size_t(
            rng.uniform_int(std::int64_t(params.attrs_per_object.first),
                            std::int64_t(params.attrs_per_object.second)));
        if (n_attr > families.size())
            throw DataError("gen: attrs_per_object exceeds family count " +
                            std::to_string(families.size()));
        const auto fam_idx = rng.sample_indices(families.size(), n_attr);
        std::vector<std::string> attrs;
        for (auto fi : fam_idx) {
            const auto& pool = vocab.attributes.at(families[fi]);
            attrs.push_back(pool[std::size_t(rng.uniform_int(0, std::int64_t(pool.size()) - 1))]);
        }
        p.attributes = canonical_attribute_order(vocab, attrs);
        s.placements.push_back(std::move(p));
    }
    std::sort(s.placements.begin(), s.placements.end(),
              [](const Placement& a, const Placement& b) { return a.cell < b.cell; });
    return s;
}

std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (int(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

SingleObjDataset gen_single_obj_dataset(const Vocabulary& vocab, const GenParams& params,
                                        std::uint64_t seed) {
    vocab.validate();
    if (params.attrs_per_object.first < 1 || params.attrs_per_object.first > params.attrs_per_object.second)
        throw DataError("gen: bad attrs_per_object range");
    if (params.objects_per_scene.first < 1 ||
        params.objects_per_scene.first > params.objects_per_scene.second)
        throw DataError("gen: bad objects_per_scene range");
    if (params.objects_per_scene.second > params.grid * params.grid)
        throw DataError("gen: objects_per_scene exceeds grid capacity");
    std::size_t n_families = 0;
    for (const auto& [fam, attrs] : vocab.attributes)
        if (!attrs.empty()) ++n_families;
    if (params.attrs_per_object.second > n_families)
        throw DataError("gen: attrs_per_object " + std::to_string(params.attrs_per_object.second) +
                        " exceeds " + std::to_string(n_families) + " attribute families");

    Rng rng(mix_seed(seed, "single-obj"));
    SingleObjDataset out;
    for (std::size_t i = 0; i < params.n_train_scenes; ++i)
        out.train_scenes.push_back(sample_scene(vocab, params, "tr" + zero_pad(i, 4), rng));
    for (std::size_t i = 0; i < params.n_test_scenes; ++i)
        out.test_scenes.push_back(sample_scene(vocab, params, "te" + zero_pad(i, 4), rng));

    // Every realized (object, full attribute set) compound with >= 2
    // attributes becomes a query; ids are canonical so the set dedupes.
    std::set<std::string> seen_ids;
    std::vector<Query> queries;
    for (const auto& s : out.test_scenes) {
        for (const auto& p : s.placements) {
            if (p.attributes.size() < 2) continue;
            Query q = make_query(vocab, {QueryPart{p.object, p.attributes}});
            if (seen_ids.insert(q.query_id).second) queries.push_back(std::move(q));
        }
    }
    std::sort(queries.begin(), queries.end(),
              [](const Query& a, const Query& b) { return a.query_id < b.query_id; });
    out.queries = std::move(queries);
    return out;
}

std::vector<Quadruplet> gen_multi_obj_quadruplets(const Vocabulary& vocab, std::size_t n,
                                                  const QuadParams& params, std::uint64_t seed) {
    vocab.validate();
    if (vocab.objects.size() < 2)
        throw DataError("gen: quadruplets need at least two objects in the vocabulary");
    std::vector<std::string> swap_families;
    for (const auto& [fam, attrs] : vocab.attributes)
        if (attrs.size() >= 2) swap_families.push_back(fam);
    std::sort(swap_families.begin(), swap_families.end());
    if (swap_families.empty())
        throw DataError("gen: quadruplets need a family with at least two attributes");
    std::vector<std::string> all_families;
    for (const auto& [fam, attrs] : vocab.attributes)
        if (!attrs.empty()) all_families.push_back(fam);
    std::sort(all_families.begin(), all_families.end());
    if (params.attrs_per_object.second > all_families.size())
        throw DataError("gen: quad attrs_per_object exceeds family count");

    Rng rng(mix_seed(seed, "multi-obj"));
    std::vector<Quadruplet> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Two distinct objects.
        const auto oi = rng.sample_indices(vocab.objects.size(), 2);
        const std::string o1 = vocab.objects[oi[0]], o2 = vocab.objects[oi[1]];
        // One shared family with two distinct attributes: the designated swap.
        const auto& fam = swap_families[std::size_t(
            rng.uniform_int(0, std::int64_t(swap_families.size()) - 1))];
        const auto& fam_attrs = vocab.attributes.at(fam);
        const auto ai = rng.sample_indices(fam_attrs.size(), 2);
        const std::string a1 = fam_attrs[ai[0]], a2 = fam_attrs[ai[1]];

        // Extra attributes come from the other families, so the swap can
        // never collide with them.
        auto draw_extras = [&](std::size_t count) {
            std::vector<std::string> extras;
            std::vector<std::string> other_families;
            for (const auto& f : all_families)
                if (f != fam) other_families.push_back(f);
            const auto fi = rng.sample_indices(other_families.size(), count);
            for (auto k : fi) {
                const auto& pool = vocab.attributes.at(other_families[k]);
                extras.push_back(pool[std::size_t(rng.uniform_int(0, std::int64_t(pool.size()) - 1))]);
            }
            return extras;
        };
        const std::size_t total1 = std::size_t(rng.uniform_int(
            std::int64_t(params.attrs_per_object.first), std::int64_t(params.attrs_per_object.second)));
        const std::size_t total2 = std::size_t(rng.uniform_int(
            std::int64_t(params.attrs_per_object.first), std::int64_t(params.attrs_per_object.second)));
        const auto extras1 = draw_extras(total1 > 0 ? total1 - 1 : 0);
        const auto extras2 = draw_extras(total2 > 0 ? total2 - 1 : 0);

        auto attrs_with = [&](const std::string& designated, const std::vector<std::string>& extras) {
            std::vector<std::string> a = extras;
            a.push_back(designated);
            return canonical_attribute_order(vocab, a);
        };

        const auto cells = rng.sample_indices(params.grid * params.grid, 2);

        Quadruplet q;
        q.quad_id = params.id_prefix + zero_pad(i, 4);
        q.image.scene_id = q.quad_id + "_a";
        q.image.grid = params.grid;
        q.image.placements = {{cells[0], o1, attrs_with(a1, extras1)},
                              {cells[1], o2, attrs_with(a2, extras2)}};
        q.distractor.scene_id = q.quad_id + "_b";
        q.distractor.grid = params.grid;
        q.distractor.placements = {{cells[0], o1, attrs_with(a2, extras1)},
                                   {cells[1], o2, attrs_with(a1, extras2)}};
        q.caption = make_query(vocab, {QueryPart{o1, attrs_with(a1, extras1)},
                                       QueryPart{o2, attrs_with(a2, extras2)}});
        q.swapped_caption = make_query(vocab, {QueryPart{o1, attrs_with(a2, extras1)},
                                               QueryPart{o2, attrs_with(a1, extras2)}});
        validate_quadruplet(vocab, q);
        out.push_back(std::move(q));
    }
    return out;
}

void validate_quadruplet(const Vocabulary& vocab, const Quadruplet& q) {
    validate_scene(vocab, q.image);
    validate_scene(vocab, q.distractor);
    validate_query(vocab, q.caption);
    validate_query(vocab, q.swapped_caption);

    if (q.image.placements.size() < 2 || q.image.placements.size() != q.distractor.placements.size())
        throw DataError("quadruplet '" + q.quad_id + "': scene pair must place the same objects");

    // Same cells, same objects, attribute sets exchanged between exactly two
    // placements; everything else identical.
    std::size_t changed = 0;
    std::vector<std::pair<std::size_t, std::size_t>> diff;
    for (std::size_t i = 0; i < q.image.placements.size(); ++i) {
        const auto& a = q.image.placements[i];
        const auto& b = q.distractor.placements[i];
        if (a.cell != b.cell || a.object != b.object)
            throw DataError("quadruplet '" + q.quad_id + "': cells/objects differ between I and I'");
        if (a.attributes != b.attributes) {
            ++changed;
            diff.push_back({i, i});
        }
    }
    if (changed != 2)
        throw DataError("quadruplet '" + q.quad_id + "': swap must touch exactly two placements, touched " +
                        std::to_string(changed));
    const auto& p1 = q.image.placements[diff[0].first];
    const auto& p2 = q.image.placements[diff[1].first];
    const auto& d1 = q.distractor.placements[diff[0].first];
    const auto& d2 = q.distractor.placements[diff[1].first];
    if (p1.object == p2.object)
        throw DataError("quadruplet '" + q.quad_id + "': swap objects must differ (o1 != o2)");

    // The exchanged attributes must be a same-family pair, distinct.
    auto sym_diff = [](const std::vector<std::string>& x, const std::vector<std::string>& y) {
        std::vector<std::string> only;
        for (const auto& v : x)
            if (std::find(y.begin(), y.end(), v) == y.end()) only.push_back(v);
        return only;
    };
    const auto a1v = sym_diff(p1.attributes, d1.attributes);
    const auto a2v = sym_diff(p2.attributes, d2.attributes);
    if (a1v.size() != 1 || a2v.size() != 1)
        throw DataError("quadruplet '" + q.quad_id + "': swap must exchange exactly one attribute per object");
    const std::string& a1 = a1v[0];
    const std::string& a2 = a2v[0];
    if (a1 == a2) throw DataError("quadruplet '" + q.quad_id + "': swapped attributes must differ (a1 != a2)");
    if (vocab.family_of(a1) != vocab.family_of(a2))
        throw DataError("quadruplet '" + q.quad_id + "': swapped attributes must share a family");
    const auto d1_gains = sym_diff(d1.attributes, p1.attributes);
    const auto d2_gains = sym_diff(d2.attributes, p2.attributes);
    if (d1_gains != std::vector<std::string>{a2} || d2_gains != std::vector<std::string>{a1})
        throw DataError("quadruplet '" + q.quad_id + "': I' does not exchange the designated attributes");

    // Captions must match their scenes - and only their scenes.
    if (!query_true_of_scene(q.caption, q.image) || !query_true_of_scene(q.swapped_caption, q.distractor))
        throw DataError("quadruplet '" + q.quad_id + "': caption does not match its scene");
    if (query_true_of_scene(q.caption, q.distractor) || query_true_of_scene(q.swapped_caption, q.image))
        throw DataError("quadruplet '" + q.quad_id + "': caption also matches the wrong scene");

    // Identical object and attribute multisets across the pair.
    auto multisets = [](const Scene& s) {
        std::multiset<std::string> objs, attrs;
        for (const auto& p : s.placements) {
            objs.insert(p.object);
            for (const auto& a : p.attributes) attrs.insert(a);
        }
        return std::make_pair(objs, attrs);
    };
    if (multisets(q.image) != multisets(q.distractor))
        throw DataError("quadruplet '" + q.quad_id + "': object/attribute multisets differ between I and I'");
}

RetrievalPool build_pool(const Query& query, const std::vector<Scene>& scenes, PoolMode mode) {
    const auto words = query.words();
    RetrievalPool pool;
    pool.query = query;
    pool.mode = mode;

    std::vector<const Scene*> sorted;
    sorted.reserve(scenes.size());
    for (const auto& s : scenes) sorted.push_back(&s);
    std::sort(sorted.begin(), sorted.end(),
              [](const Scene* a, const Scene* b) { return a->scene_id < b->scene_id; });

    for (const Scene* s : sorted) {
        bool member = false;
        switch (mode) {
            case PoolMode::ALL: member = true; break;
            case PoolMode::OR: {
                for (const auto& w : words) member = member || scene_contains_word(*s, w);
                break;
            }
            case PoolMode::AND: {
                member = true;
                for (const auto& w : words) member = member && scene_contains_word(*s, w);
                break;
            }
        }
        if (!member) continue;
        pool.candidate_ids.push_back(s->scene_id);
        pool.relevance.push_back(query_true_of_scene(query, *s) ? 1 : 0);
    }
    bool any_relevant = false;
    for (int r : pool.relevance) any_relevant = any_relevant || r == 1;
    if (!any_relevant)
        throw DataError("pool for query '" + query.query_id + "' (" + to_string(mode) +
                        ") has no relevant scene");
    return pool;
}

SplitSpec split_seen_unseen(const std::vector<Query>& queries, std::vector<Scene> train_scenes,
                            const std::vector<Scene>& test_scenes, std::size_t k_unseen,
                            std::uint64_t seed) {
    (void)seed;
    if (k_unseen > queries.size())
        throw DataError("split: k_unseen " + std::to_string(k_unseen) + " exceeds " +
                        std::to_string(queries.size()) + " queries");

    std::vector<std::pair<std::size_t, std::string>> freq;  // (train occurrences, query id)
    std::map<std::string, const Query*> by_id;
    for (const auto& q : queries) {
        std::size_t count = 0;
        for (const auto& s : train_scenes)
            if (query_true_of_scene(q, s)) ++count;
        freq.push_back({count, q.query_id});
        by_id[q.query_id] = &q;
    }
    std::sort(freq.begin(), freq.end());

    SplitSpec spec;
    std::set<std::string> unseen_set;
    for (std::size_t i = 0; i < freq.size(); ++i) {
        if (i < k_unseen) {
            spec.unseen_queries.push_back(freq[i].second);
            unseen_set.insert(freq[i].second);
        } else {
            spec.seen_queries.push_back(freq[i].second);
        }
    }
    std::sort(spec.seen_queries.begin(), spec.seen_queries.end());
    std::sort(spec.unseen_queries.begin(), spec.unseen_queries.end());

    std::vector<Scene> kept;
    for (auto& s : train_scenes) {
        bool realizes_unseen = false;
        for (const auto& qid : spec.unseen_queries)
            realizes_unseen = realizes_unseen || query_true_of_scene(*by_id.at(qid), s);
        if (!realizes_unseen) kept.push_back(std::move(s));
    }
    if (kept.empty() && !train_scenes.empty())
        throw DataError("split: removing unseen compounds would empty the train set");
    for (const auto& s : kept) spec.train_scenes.push_back(s.scene_id);
    for (const auto& s : test_scenes) spec.test_scenes.push_back(s.scene_id);
    return spec;
}

std::string splits_to_json(const SplitSpec& s) {
    const json j = {{"schema_version", 1},
                    {"seen_queries", s.seen_queries},
                    {"unseen_queries", s.unseen_queries},
                    {"train_scenes", s.train_scenes},
                    {"test_scenes", s.test_scenes}};
    return j.dump(2) + "\n";
}

SplitSpec splits_from_json(const std::string& text) {
    const json j = json::parse(text);
    SplitSpec s;
    s.seen_queries = j.at("seen_queries").get<std::vector<std::string>>();
    s.unseen_queries = j.at("unseen_queries").get<std::vector<std::string>>();
    s.train_scenes = j.at("train_scenes").get<std::vector<std::string>>();
    s.test_scenes = j.at("test_scenes").get<std::vector<std::string>>();
    return s;
}

std::string quadruplet_ref_to_json(const Quadruplet& q) {
    const json j = {{"quad_id", q.quad_id},
                    {"image", q.image.scene_id},
                    {"distractor", q.distractor.scene_id},
                    {"caption", q.caption.query_id},
                    {"swapped_caption", q.swapped_caption.query_id}};
    return j.dump();
}

Quadruplet quadruplet_from_json(const std::string& line, const std::map<std::string, Scene>& scenes,
                                const std::map<std::string, Query>& queries) {
    const json j = json::parse(line);
    auto scene_of = [&](const std::string& id) {
        auto it = scenes.find(id);
        if (it == scenes.end()) throw DataError("quadruplet references unknown scene '" + id + "'");
        return it->second;
    };
    auto query_of = [&](const std::string& id) {
        auto it = queries.find(id);
        if (it == queries.end()) throw DataError("quadruplet references unknown query '" + id + "'");
        return it->second;
    };
    Quadruplet q;
    q.quad_id = j.at("quad_id").get<std::string>();
    q.image = scene_of(j.at("image").get<std::string>());
    q.distractor = scene_of(j.at("distractor").get<std::string>());
    q.caption = query_of(j.at("caption").get<std::string>());
    q.swapped_caption = query_of(j.at("swapped_caption").get<std::string>());
    return q;
}

}  // namespace cola
