#include "cola/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "cola/feature_file.hpp"
#include "cola/train.hpp"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace cola::cli {

namespace {

// ---- experiment configuration ---------------------------------------------

struct ExperimentConfig {
    std::uint64_t seed = 7;
    std::string data_dir = "data";
    std::string out_dir = "out";

    Vocabulary vocab = Vocabulary::default_vocabulary();
    BackboneConfig backbone;  // seed is derived from the global seed

    struct Gen {
        std::size_t train_scenes = 64;
        std::size_t test_scenes = 40;
        std::pair<std::size_t, std::size_t> attrs_per_object = {2, 3};
        std::pair<std::size_t, std::size_t> objects_per_scene = {2, 4};
        std::size_t train_quadruplets = 48;
        std::size_t test_quadruplets = 210;
        std::size_t val_quadruplets = 24;
        std::pair<std::size_t, std::size_t> quad_attrs_per_object = {1, 2};
        std::size_t k_unseen = 0;  // 0 = a quarter of the query set
    } gen;

    struct Fusion {
        int encoder_layers = 2;
        int heads = 4;
        int cls_count = 1;
        double logit_scale = 10.0;
        bool positional = true;
        std::string head_mode = "adapter";
    } fusion;

    struct Train {
        std::string loss = "bce";
        double learning_rate = 1e-3;
        double weight_decay = 1e-4;
        int epochs = 10;
        int steps_per_epoch = 0;
        std::size_t batch_size = 8;
        std::string strategy = "combined";
        double hard_ratio = 0.5;
    } train;

    std::string canonical_json() const;
    std::string config_hash() const { return hex64(fnv1a64(canonical_json())); }
};

std::pair<std::size_t, std::size_t> pair_from_json(const json& j) {
    return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
}

std::string ExperimentConfig::canonical_json() const {
    const json j = {
        {"seed", seed},
        {"vocab", json::parse(vocabulary_to_json(vocab))},
        {"backbone",
         {{"d_model", backbone.d_model},
          {"grid", backbone.grid},
          {"sigma", backbone.sigma},
          {"max_query_tokens", backbone.max_query_tokens}}},
        {"gen",
         {{"train_scenes", gen.train_scenes},
          {"test_scenes", gen.test_scenes},
          {"attrs_per_object", {gen.attrs_per_object.first, gen.attrs_per_object.second}},
          {"objects_per_scene", {gen.objects_per_scene.first, gen.objects_per_scene.second}},
          {"train_quadruplets", gen.train_quadruplets},
          {"test_quadruplets", gen.test_quadruplets},
          {"val_quadruplets", gen.val_quadruplets},
          {"quad_attrs_per_object", {gen.quad_attrs_per_object.first, gen.quad_attrs_per_object.second}},
          {"k_unseen", gen.k_unseen}}},
        {"fusion",
         {{"encoder_layers", fusion.encoder_layers},
          {"heads", fusion.heads},
          {"cls_count", fusion.cls_count},
          {"logit_scale", fusion.logit_scale},
          {"positional", fusion.positional},
          {"head_mode", fusion.head_mode}}},
        {"train",
         {{"loss", train.loss},
          {"learning_rate", train.learning_rate},
          {"weight_decay", train.weight_decay},
          {"epochs", train.epochs},
          {"steps_per_epoch", train.steps_per_epoch},
          {"batch_size", train.batch_size},
          {"strategy", train.strategy},
          {"hard_ratio", train.hard_ratio}}},
    };
    return j.dump();
}

void apply_config_json(ExperimentConfig& c, const json& j) {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("vocab")) c.vocab = vocabulary_from_json(j.at("vocab").dump());
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        if (b.contains("d_model")) c.backbone.d_model = b.at("d_model").get<std::size_t>();
        if (b.contains("grid")) c.backbone.grid = b.at("grid").get<std::size_t>();
        if (b.contains("sigma")) c.backbone.sigma = b.at("sigma").get<double>();
        if (b.contains("max_query_tokens"))
            c.backbone.max_query_tokens = b.at("max_query_tokens").get<std::size_t>();
    }
    if (j.contains("gen")) {
        const auto& g = j.at("gen");
        if (g.contains("train_scenes")) c.gen.train_scenes = g.at("train_scenes").get<std::size_t>();
        if (g.contains("test_scenes")) c.gen.test_scenes = g.at("test_scenes").get<std::size_t>();
        if (g.contains("attrs_per_object")) c.gen.attrs_per_object = pair_from_json(g.at("attrs_per_object"));
        if (g.contains("objects_per_scene"))
            c.gen.objects_per_scene = pair_from_json(g.at("objects_per_scene"));
        if (g.contains("train_quadruplets"))
            c.gen.train_quadruplets = g.at("train_quadruplets").get<std::size_t>();
        if (g.contains("test_quadruplets"))
            c.gen.test_quadruplets = g.at("test_quadruplets").get<std::size_t>();
        if (g.contains("val_quadruplets"))
            c.gen.val_quadruplets = g.at("val_quadruplets").get<std::size_t>();
        if (g.contains("quad_attrs_per_object"))
            c.gen.quad_attrs_per_object = pair_from_json(g.at("quad_attrs_per_object"));
        if (g.contains("k_unseen")) c.gen.k_unseen = g.at("k_unseen").get<std::size_t>();
    }
    if (j.contains("fusion")) {
        const auto& f = j.at("fusion");
        if (f.contains("encoder_layers")) c.fusion.encoder_layers = f.at("encoder_layers").get<int>();
        if (f.contains("heads")) c.fusion.heads = f.at("heads").get<int>();
        if (f.contains("cls_count")) c.fusion.cls_count = f.at("cls_count").get<int>();
        if (f.contains("logit_scale")) c.fusion.logit_scale = f.at("logit_scale").get<double>();
        if (f.contains("positional")) c.fusion.positional = f.at("positional").get<bool>();
        if (f.contains("head_mode")) c.fusion.head_mode = f.at("head_mode").get<std::string>();
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        if (t.contains("loss")) c.train.loss = t.at("loss").get<std::string>();
        if (t.contains("learning_rate")) c.train.learning_rate = t.at("learning_rate").get<double>();
        if (t.contains("weight_decay")) c.train.weight_decay = t.at("weight_decay").get<double>();
        if (t.contains("epochs")) c.train.epochs = t.at("epochs").get<int>();
        if (t.contains("steps_per_epoch")) c.train.steps_per_epoch = t.at("steps_per_epoch").get<int>();
        if (t.contains("batch_size")) c.train.batch_size = t.at("batch_size").get<std::size_t>();
        if (t.contains("strategy")) c.train.strategy = t.at("strategy").get<std::string>();
        if (t.contains("hard_ratio")) c.train.hard_ratio = t.at("hard_ratio").get<double>();
    }
}

// ---- flags -----------------------------------------------------------------

struct Flags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string variant;
    std::string out;
    std::string data;
    std::string pool;
    std::string loss;
    std::string strategy;
    std::optional<int> epochs;
    std::optional<int> steps;
    bool oracle = false;
    bool frozen = false;
    bool zoo = false;
    std::string corrupt;
    std::string sort_by = "cola_map";
    std::vector<std::string> positional;
};

Flags parse_flags(const std::vector<std::string>& args, std::size_t start) {
    Flags f;
    auto need_value = [&](std::size_t& i, const std::string& flag) -> const std::string& {
        if (i + 1 >= args.size()) throw ConfigError("flag " + flag + " needs a value");
        return args[++i];
    };
    for (std::size_t i = start; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--config") f.config_path = need_value(i, a);
        else if (a == "--seed") f.seed = std::stoull(need_value(i, a));
        else if (a == "--variant") f.variant = need_value(i, a);
        else if (a == "--out") f.out = need_value(i, a);
        else if (a == "--data") f.data = need_value(i, a);
        else if (a == "--pool") f.pool = need_value(i, a);
        else if (a == "--loss") f.loss = need_value(i, a);
        else if (a == "--strategy") f.strategy = need_value(i, a);
        else if (a == "--epochs") f.epochs = std::stoi(need_value(i, a));
        else if (a == "--steps") f.steps = std::stoi(need_value(i, a));
        else if (a == "--sort-by") f.sort_by = need_value(i, a);
        else if (a == "--corrupt") f.corrupt = need_value(i, a);
        else if (a == "--oracle") f.oracle = true;
        else if (a == "--frozen") f.frozen = true;
        else if (a == "--zoo") f.zoo = true;
        else if (a.rfind("--", 0) == 0) throw ConfigError("unknown flag '" + a + "'");
        else f.positional.push_back(a);
    }
    return f;
}

ExperimentConfig resolve_config(const Flags& f) {
    ExperimentConfig cfg;
    if (const char* env = std::getenv("COLA_DATA_DIR"); env && *env) cfg.data_dir = env;
    if (!f.config_path.empty()) apply_config_json(cfg, json::parse(read_text_file(f.config_path)));
    // flags win over config keys
    if (f.seed) cfg.seed = *f.seed;
    if (!f.data.empty()) cfg.data_dir = f.data;
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (!f.loss.empty()) cfg.train.loss = f.loss;
    if (!f.strategy.empty()) cfg.train.strategy = f.strategy;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.steps) cfg.train.steps_per_epoch = *f.steps;
    return cfg;
}

// ---- shared pipeline pieces --------------------------------------------

BackboneConfig backbone_config_of(const ExperimentConfig& cfg) {
    BackboneConfig b = cfg.backbone;
    b.seed = mix_seed(cfg.seed, "backbone");
    return b;
}

// Variant labels: the nine enum names plus ft_all_analog (FT_LATE with the
// trainable projection pre-map).
FusionConfig fusion_config_of(const ExperimentConfig& cfg, const std::string& label) {
    FusionConfig fc;
    std::string name = label;
    for (auto& ch : name) ch = char(std::tolower(static_cast<unsigned char>(ch)));
    if (name == "ft_all_analog") {
        fc.variant = FusionVariant::FT_LATE;
        fc.tune_projection = true;
    } else {
        fc.variant = variant_from_string(name);
    }
    fc.d_model = cfg.backbone.d_model;
    fc.encoder_layers = cfg.fusion.encoder_layers;
    fc.heads = cfg.fusion.heads;
    fc.cls_count = cfg.fusion.cls_count;
    fc.logit_scale = cfg.fusion.logit_scale;
    fc.positional = cfg.fusion.positional;
    fc.head_mode = cfg.fusion.head_mode == "pred" ? HeadMode::PRED : HeadMode::ADAPTER;
    fc.init_seed = mix_seed(cfg.seed, "init-" + name);
    fc.max_patches = cfg.backbone.grid * cfg.backbone.grid;
    fc.max_tokens = cfg.backbone.max_query_tokens;
    fc.validate();
    return fc;
}

struct DataBundle {
    std::map<std::string, Scene> scenes;
    std::map<std::string, Query> queries;
    std::vector<Scene> train_scenes, test_scenes;
    std::vector<Query> test_queries;
    std::vector<Quadruplet> train_quads, test_quads, val_quads;
    SplitSpec split;
    std::string manifest_hash;
};

std::string path_join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

DataBundle load_data(const ExperimentConfig& cfg) {
    DataBundle d;
    const std::string dir = cfg.data_dir;
    const auto scenes = read_scenes_jsonl(path_join(dir, "scenes.jsonl"));
    const auto queries = read_queries_jsonl(path_join(dir, "queries.jsonl"));
    for (const auto& s : scenes) d.scenes[s.scene_id] = s;
    for (const auto& q : queries) d.queries[q.query_id] = q;
    d.split = splits_from_json(read_text_file(path_join(dir, "splits.json")));
    for (const auto& id : d.split.train_scenes) d.train_scenes.push_back(d.scenes.at(id));
    for (const auto& id : d.split.test_scenes) d.test_scenes.push_back(d.scenes.at(id));
    std::set<std::string> test_query_ids(d.split.seen_queries.begin(), d.split.seen_queries.end());
    test_query_ids.insert(d.split.unseen_queries.begin(), d.split.unseen_queries.end());
    for (const auto& id : test_query_ids) d.test_queries.push_back(d.queries.at(id));

    const std::string quads_text = read_text_file(path_join(dir, "quadruplets.jsonl"));
    std::size_t pos = 0;
    while (pos < quads_text.size()) {
        std::size_t end = quads_text.find('\n', pos);
        if (end == std::string::npos) end = quads_text.size();
        if (end > pos) {
            const std::string line = quads_text.substr(pos, end - pos);
            const json j = json::parse(line);
            const std::string role = j.at("role").get<std::string>();
            Quadruplet q = quadruplet_from_json(line, d.scenes, d.queries);
            if (role == "train") d.train_quads.push_back(std::move(q));
            else if (role == "test") d.test_quads.push_back(std::move(q));
            else if (role == "val") d.val_quads.push_back(std::move(q));
            else throw DataError("quadruplet '" + q.quad_id + "' has unknown role '" + role + "'");
        }
        pos = end + 1;
    }
    d.manifest_hash = file_content_hash(path_join(dir, "manifest.json"));
    return d;
}

// Scorers for eval: a trained model, the frozen pooled cosine, or the
// relevance oracle.
struct Scorer {
    std::string label;
    std::function<double(const FeatureBundle& img, const FeatureBundle& qry)> pair;
    std::function<bool()> is_oracle = [] { return false; };
};

double frozen_pooled_cosine(const FeatureBundle& img, const FeatureBundle& qry) {
    NoGradGuard ng;
    return cosine(Tensor::from(1, img.pooled_image.size(), img.pooled_image),
                  Tensor::from(1, qry.pooled_text.size(), qry.pooled_text))
        .item();
}

int run_or_report(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

// ---- gen -------------------------------------------------------------------

void do_gen(const ExperimentConfig& cfg) {
    cfg.vocab.validate();
    GenParams gp;
    gp.n_train_scenes = cfg.gen.train_scenes;
    gp.n_test_scenes = cfg.gen.test_scenes;
    gp.attrs_per_object = cfg.gen.attrs_per_object;
    gp.objects_per_scene = cfg.gen.objects_per_scene;
    gp.grid = cfg.backbone.grid;
    auto ds = gen_single_obj_dataset(cfg.vocab, gp, mix_seed(cfg.seed, "gen-single"));

    QuadParams qp;
    qp.attrs_per_object = cfg.gen.quad_attrs_per_object;
    qp.grid = cfg.backbone.grid;
    qp.id_prefix = "tq";
    auto train_quads =
        gen_multi_obj_quadruplets(cfg.vocab, cfg.gen.train_quadruplets, qp, mix_seed(cfg.seed, "gen-tq"));
    qp.id_prefix = "eq";
    auto test_quads =
        gen_multi_obj_quadruplets(cfg.vocab, cfg.gen.test_quadruplets, qp, mix_seed(cfg.seed, "gen-eq"));
    qp.id_prefix = "vq";
    auto val_quads =
        gen_multi_obj_quadruplets(cfg.vocab, cfg.gen.val_quadruplets, qp, mix_seed(cfg.seed, "gen-vq"));

    const std::size_t k_unseen =
        cfg.gen.k_unseen > 0 ? cfg.gen.k_unseen : std::max<std::size_t>(1, ds.queries.size() / 4);
    SplitSpec split = split_seen_unseen(ds.queries, ds.train_scenes, ds.test_scenes, k_unseen,
                                        mix_seed(cfg.seed, "split"));

    fs::create_directories(cfg.data_dir);

    std::vector<Scene> all_scenes;
    std::set<std::string> kept_train(split.train_scenes.begin(), split.train_scenes.end());
    for (const auto& s : ds.train_scenes)
        if (kept_train.count(s.scene_id)) all_scenes.push_back(s);
    all_scenes.insert(all_scenes.end(), ds.test_scenes.begin(), ds.test_scenes.end());
    std::vector<Query> all_queries = ds.queries;
    for (const auto* quads : {&train_quads, &test_quads, &val_quads}) {
        for (const auto& q : *quads) {
            all_scenes.push_back(q.image);
            all_scenes.push_back(q.distractor);
            all_queries.push_back(q.caption);
            all_queries.push_back(q.swapped_caption);
        }
    }
    // captions repeat across quadruplets; keep first occurrence
    std::set<std::string> seen_q;
    std::vector<Query> unique_queries;
    for (const auto& q : all_queries)
        if (seen_q.insert(q.query_id).second) unique_queries.push_back(q);

    write_scenes_jsonl(path_join(cfg.data_dir, "scenes.jsonl"), all_scenes);
    write_queries_jsonl(path_join(cfg.data_dir, "queries.jsonl"), unique_queries);

    std::string quads_text;
    auto emit_quads = [&](const std::vector<Quadruplet>& quads, const char* role) {
        for (const auto& q : quads) {
            json j = json::parse(quadruplet_ref_to_json(q));
            j["role"] = role;
            quads_text += j.dump();
            quads_text += '\n';
        }
    };
    emit_quads(train_quads, "train");
    emit_quads(test_quads, "test");
    emit_quads(val_quads, "val");
    write_text_file(path_join(cfg.data_dir, "quadruplets.jsonl"), quads_text);
    write_text_file(path_join(cfg.data_dir, "splits.json"), splits_to_json(split));

    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["seed"] = cfg.seed;
    manifest["config_hash"] = cfg.config_hash();
    json files = json::object();
    for (const char* name : {"scenes.jsonl", "queries.jsonl", "quadruplets.jsonl", "splits.json"})
        files[name] = file_content_hash(path_join(cfg.data_dir, name));
    manifest["files"] = files;
    write_text_file(path_join(cfg.data_dir, "manifest.json"), manifest.dump(2) + "\n");

    std::cout << "gen: " << all_scenes.size() << " scenes, " << unique_queries.size() << " queries, "
              << train_quads.size() + test_quads.size() + val_quads.size() << " quadruplets -> "
              << cfg.data_dir << "\n";
}

// ---- train -----------------------------------------------------------------

void do_train(const ExperimentConfig& cfg, const std::string& variant_label) {
    if (variant_label.empty()) throw ConfigError("train: --variant is required");
    const DataBundle data = load_data(cfg);
    SyntheticBackbone backbone(backbone_config_of(cfg), cfg.vocab);
    FusionModel model(fusion_config_of(cfg, variant_label), &backbone);
    std::cout << "train " << model.config().report_label() << ": " << model.parameter_count()
              << " trainable parameters\n";

    TrainData td = TrainData::build(data.train_scenes, {}, data.train_quads, cfg.vocab);
    TrainConfig tc;
    tc.loss = loss_from_string(cfg.train.loss);
    tc.learning_rate = cfg.train.learning_rate;
    tc.weight_decay = cfg.train.weight_decay;
    tc.epochs = cfg.train.epochs;
    tc.steps_per_epoch = cfg.train.steps_per_epoch;
    tc.strategy.mode = batch_mode_from_string(cfg.train.strategy);
    tc.strategy.batch_size = cfg.train.batch_size;
    tc.strategy.hard_ratio = cfg.train.hard_ratio;
    tc.seed = mix_seed(cfg.seed, "train-" + variant_label);
    tc.logit_scale = cfg.fusion.logit_scale;

    BundleCache cache(backbone);
    ValidationSet val{data.val_quads};
    const TrainHistory history = train(model, tc, td, cache, val);

    fs::create_directories(cfg.out_dir);
    CheckpointMeta meta;
    meta.seed = cfg.seed;
    meta.config_hash = cfg.config_hash();
    meta.data_manifest_hash = data.manifest_hash;
    const json bb_json = {{"seed", backbone.config().seed},
                          {"d_model", backbone.config().d_model},
                          {"grid", backbone.config().grid},
                          {"sigma", backbone.config().sigma}};
    meta.backbone_json = bb_json.dump();
    std::string label = variant_label;
    for (auto& ch : label) ch = char(std::tolower(static_cast<unsigned char>(ch)));
    save_checkpoint(path_join(cfg.out_dir, label + ".ckpt"), model, meta);

    const json log_meta = {{"meta",
                            {{"tool_version", kToolVersion},
                             {"config_hash", cfg.config_hash()},
                             {"seed", cfg.seed},
                             {"variant", model.config().report_label()},
                             {"data_manifest_hash", data.manifest_hash}}}};
    write_text_file(path_join(cfg.out_dir, label + ".train.jsonl"),
                    log_meta.dump() + "\n" + history_to_jsonl(history));
    if (!history.epochs.empty()) {
        const auto& last = history.epochs.back();
        std::cout << "train " << label << ": epochs=" << history.epochs.size()
                  << " final_loss=" << last.loss;
        if (last.val_metrics.count("t2i")) std::cout << " val_t2i=" << last.val_metrics.at("t2i");
        std::cout << "\n";
    }
}

// ---- eval ------------------------------------------------------------------

MetricReport evaluate_scorer(const ExperimentConfig& cfg, const DataBundle& data,
                             const SyntheticBackbone& backbone, const Scorer& scorer) {
    BundleCache cache(backbone);

    const ScoreFn score_fn = [&](const std::string& scene_id, const Query& q) {
        return scorer.pair(cache.scene(data.scenes.at(scene_id)), cache.query(q));
    };
    const QuadScoreFn quad_fn = [&](const Quadruplet& quad) {
        QuadScores s;
        s.i_m = scorer.pair(cache.scene(quad.image), cache.query(quad.caption));
        s.i_mp = scorer.pair(cache.scene(quad.image), cache.query(quad.swapped_caption));
        s.ip_m = scorer.pair(cache.scene(quad.distractor), cache.query(quad.caption));
        s.ip_mp = scorer.pair(cache.scene(quad.distractor), cache.query(quad.swapped_caption));
        return s;
    };

    MetricReport report;
    report.meta["tool_version"] = kToolVersion;
    report.meta["config_hash"] = cfg.config_hash();
    report.meta["seed"] = std::to_string(cfg.seed);
    report.meta["data_manifest_hash"] = data.manifest_hash;
    report.meta["scorer"] = scorer.label;

    struct PoolSet {
        const char* metric;
        PoolMode mode;
    };
    const PoolSet pool_sets[] = {{"cola_map", PoolMode::OR},
                                 {"queryall_map", PoolMode::AND},
                                 {"overall_map", PoolMode::ALL}};
    std::vector<RetrievalPool> and_pools, or_pools;
    for (const auto& ps : pool_sets) {
        std::vector<RetrievalPool> pools;
        for (const auto& q : data.test_queries) pools.push_back(build_pool(q, data.test_scenes, ps.mode));
        const GroupedMap gm = map_over_pools(pools, data.split, score_fn);
        report.rows.push_back({ps.metric, "all", gm.all});
        report.rows.push_back({ps.metric, "seen", gm.seen});
        report.rows.push_back({ps.metric, "unseen", gm.unseen});
        if (ps.mode == PoolMode::AND) and_pools = pools;
        if (ps.mode == PoolMode::OR) or_pools = std::move(pools);
        report.group_sizes["queries_all"] = gm.n_all;
        report.group_sizes["queries_seen"] = gm.n_seen;
        report.group_sizes["queries_unseen"] = gm.n_unseen;
    }

    const auto [rank_rel, rank_irr] = mean_ranks(and_pools, score_fn);
    report.rows.push_back({"mean_rank_relevant", "and_pool", rank_rel});
    report.rows.push_back({"mean_rank_distractor", "and_pool", rank_irr});

    report.rows.push_back({"t2i_accuracy", "multiobj", multiobj_t2i_accuracy(data.test_quads, quad_fn)});
    report.rows.push_back({"i2t_accuracy", "multiobj", multiobj_i2t_accuracy(data.test_quads, quad_fn)});
    report.group_sizes["test_quadruplets"] = data.test_quads.size();

    for (const auto& pt : map_by_attribute_count(or_pools, score_fn)) {
        report.rows.push_back({"cola_map_by_attrs", std::to_string(pt.attribute_count), pt.map});
        report.group_sizes["queries_attrs_" + std::to_string(pt.attribute_count)] = pt.n_queries;
    }
    return report;
}

void do_eval(const ExperimentConfig& cfg, const Flags& flags) {
    const DataBundle data = load_data(cfg);
    SyntheticBackbone backbone(backbone_config_of(cfg), cfg.vocab);

    Scorer scorer;
    std::optional<FusionModel> model;
    if (flags.oracle) {
        scorer.label = "oracle";
        // relevance as score: needs the scene/query objects, so capture data
        scorer.pair = [&data](const FeatureBundle& img, const FeatureBundle& qry) {
            const Scene& s = data.scenes.at(img.id);
            const Query& q = data.queries.at(qry.id);
            return query_true_of_scene(q, s) ? 1.0 : 0.0;
        };
    } else if (flags.frozen || (!flags.positional.empty() && flags.positional[0] == "frozen")) {
        scorer.label = "frozen";
        scorer.pair = frozen_pooled_cosine;
    } else if (!flags.positional.empty()) {
        const LoadedCheckpoint ckpt = read_checkpoint(flags.positional[0]);
        if (ckpt.meta.data_manifest_hash != data.manifest_hash)
            throw DataError("eval: checkpoint was trained on manifest " + ckpt.meta.data_manifest_hash +
                            " but the data directory has " + data.manifest_hash);
        model.emplace(ckpt.config, &backbone);
        restore_params(*model, ckpt);
        scorer.label = model->config().report_label();
        scorer.pair = [&m = *model](const FeatureBundle& img, const FeatureBundle& qry) {
            return m.score_value(img, qry);
        };
    } else {
        throw ConfigError("eval: pass a checkpoint path, 'frozen', or --oracle");
    }

    const MetricReport report = evaluate_scorer(cfg, data, backbone, scorer);
    fs::create_directories(cfg.out_dir);
    std::string label = scorer.label;
    for (auto& ch : label) ch = char(std::tolower(static_cast<unsigned char>(ch)));
    write_text_file(path_join(cfg.out_dir, label + ".report.json"), report_to_json(report));
    write_text_file(path_join(cfg.out_dir, label + ".report.csv"), report_to_csv(report));

    for (const auto& row : report.rows)
        if (row.metric == "cola_map" || row.metric == "t2i_accuracy")
            std::cout << "eval " << label << ": " << row.metric << "/" << row.group << " = "
                      << row.value << "\n";
}

// ---- compare ---------------------------------------------------------------

void do_compare(const ExperimentConfig& cfg, const Flags& flags) {
    if (flags.positional.empty()) throw ConfigError("compare: pass at least one report path");
    std::vector<MetricReport> reports;
    for (const auto& path : flags.positional) reports.push_back(report_from_json(read_text_file(path)));

    const std::string& base_hash = reports[0].meta.at("data_manifest_hash");
    for (std::size_t i = 1; i < reports.size(); ++i) {
        const std::string& h = reports[i].meta.at("data_manifest_hash");
        if (h != base_hash)
            throw DataError("compare: report '" + flags.positional[i] + "' was evaluated on manifest " +
                            h + " but '" + flags.positional[0] + "' used " + base_hash +
                            "; refusing to merge runs over different data");
    }

    const std::vector<std::pair<std::string, std::string>> columns = {
        {"cola_map", "all"},     {"cola_map", "seen"},      {"cola_map", "unseen"},
        {"queryall_map", "all"}, {"overall_map", "all"},    {"t2i_accuracy", "multiobj"},
        {"i2t_accuracy", "multiobj"}, {"mean_rank_relevant", "and_pool"}};

    auto value_of = [](const MetricReport& r, const std::string& metric,
                       const std::string& group) -> std::optional<double> {
        for (const auto& row : r.rows)
            if (row.metric == metric && row.group == group) return row.value;
        return std::nullopt;
    };

    std::vector<std::size_t> order(reports.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::string sort_metric = flags.sort_by;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto va = value_of(reports[a], sort_metric, "all");
        const auto vb = value_of(reports[b], sort_metric, "all");
        return va.value_or(-1e300) > vb.value_or(-1e300);
    });

    std::string md = "| run |";
    std::string csv = "run";
    for (const auto& [m, g] : columns) {
        md += " " + m + "/" + g + " |";
        csv += "," + m + "/" + g;
    }
    md += "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) md += "---|";
    md += "\n";
    csv += "\n";
    char buf[64];
    for (auto idx : order) {
        const auto& r = reports[idx];
        md += "| " + r.meta.at("scorer") + " |";
        csv += r.meta.at("scorer");
        for (const auto& [m, g] : columns) {
            const auto v = value_of(r, m, g);
            if (v) {
                std::snprintf(buf, sizeof(buf), "%.4f", *v);
                md += std::string(" ") + buf + " |";
                std::snprintf(buf, sizeof(buf), "%.12g", *v);
                csv += std::string(",") + buf;
            } else {
                md += " - |";
                csv += ",";
            }
        }
        md += "\n";
        csv += "\n";
    }

    fs::create_directories(cfg.out_dir);
    write_text_file(path_join(cfg.out_dir, "comparison.md"), md);
    write_text_file(path_join(cfg.out_dir, "comparison.csv"), csv);
    std::cout << md;
}

// ---- gradcheck ---------------------------------------------------------

// Tiny world sized for d_model = 8: 2 objects + 4 attributes + background +
// REL = 8 concepts; the probe query covers the full token budget so every
// positional row participates.
struct GradcheckWorld {
    Vocabulary vocab;
    SyntheticBackbone backbone;
    std::vector<FeatureBundle> images, queries;

    static GradcheckWorld make(std::uint64_t seed) {
        Vocabulary v;
        v.objects = {"cube", "ball"};
        v.attributes = {{"color", {"red", "blue"}}, {"size", {"small", "large"}}};
        BackboneConfig bc;
        bc.seed = seed;
        bc.d_model = 8;
        bc.grid = 2;
        bc.sigma = 0.0;
        bc.max_query_tokens = 7;
        SyntheticBackbone bb(bc, v);

        // Distinct token/object multisets keep every scorer's inputs generic:
        // with attribute-swapped pairs the pooled features coincide and the
        // pooled-only variants would be legitimately flat.
        Scene s1;
        s1.scene_id = "g1";
        s1.grid = 2;
        s1.placements = {{0, "cube", {"small", "red"}}, {3, "ball", {"large", "blue"}}};
        Scene s2;
        s2.scene_id = "g2";
        s2.grid = 2;
        s2.placements = {{1, "ball", {"large", "blue"}}, {2, "cube", {"large", "red"}}};
        // 7 tokens: every positional row is exercised
        const Query q1 = make_query(v, {QueryPart{"cube", {"small", "red"}},
                                        QueryPart{"ball", {"large", "blue"}}});
        const Query q2 = make_query(v, {QueryPart{"ball", {"large", "blue"}},
                                        QueryPart{"cube", {"large", "red"}}});
        std::vector<FeatureBundle> images = {bb.encode_scene(s1, 1), bb.encode_scene(s2, 2)};
        std::vector<FeatureBundle> queries = {bb.encode_query(q1), bb.encode_query(q2)};
        return GradcheckWorld{std::move(v), std::move(bb), std::move(images), std::move(queries)};
    }
};

int do_gradcheck(const ExperimentConfig& cfg, const Flags& flags) {
    const GradcheckWorld w = GradcheckWorld::make(mix_seed(cfg.seed, "gradcheck"));
    const std::vector<std::string> labels = {"linear",      "prompt_tune", "ft_late",
                                             "mm_pred",     "mm_adapter",  "flava_style",
                                             "albef_style", "fiber_style", "fiber_mm"};
    bool all_pass = true;
    for (const auto& label : labels) {
        FusionConfig fc = fusion_config_of(cfg, label);
        fc.d_model = 8;
        fc.encoder_layers = std::min(cfg.fusion.encoder_layers, 2);
        fc.heads = 2;
        fc.max_patches = 4;
        fc.max_tokens = 7;
        for (const char* loss_name : {"bce", "nce"}) {
            FusionModel model(fc, &w.backbone);
            std::vector<const FeatureBundle*> imgs = {&w.images[0], &w.images[1]};
            std::vector<const FeatureBundle*> qrys = {&w.queries[0], &w.queries[1]};
            const Tensor labels_t = Tensor::from(2, 2, {1, 0, 0, 1});
            const bool corrupt = flags.corrupt == label;
            // moderate scale: the chain rule being checked is
            // scale-independent, and a saturated softmax would push true
            // gradients below what h=1e-5 central differences can resolve
            const double check_scale = 2.0;
            auto forward = [&]() {
                Tensor scores = model.score_matrix_graph(imgs, qrys);
                Tensor loss = std::string(loss_name) == "bce"
                                  ? sigmoid_bce_with_logits(scores, labels_t, check_scale)
                                  : nce_loss(scores, labels_t, check_scale);
                if (corrupt) {
                    // fault-injection hook: adds a value-dependent term the
                    // graph cannot see, so the analytic gradient goes stale
                    const double leak = 1e-2 * model.params().at("pos_img").values()[0];
                    loss = add(loss, Tensor::scalar(leak));
                }
                return loss;
            };
            const double err = finite_difference_check(model.params(), forward, 1e-5);
            const bool pass = err < 1e-4;
            all_pass = all_pass && pass;
            std::printf("gradcheck %-13s %-3s max_rel_err=%.3e %s\n", label.c_str(), loss_name, err,
                        pass ? "PASS" : "FAIL");
        }
    }
    return all_pass ? 0 : 1;
}

// ---- validate ----------------------------------------------------------

void do_validate(const ExperimentConfig& cfg) {
    const DataBundle data = load_data(cfg);
    for (const auto& [id, s] : data.scenes) validate_scene(cfg.vocab, s);
    for (const auto& [id, q] : data.queries) validate_query(cfg.vocab, q);
    for (const auto* quads : {&data.train_quads, &data.test_quads, &data.val_quads})
        for (const auto& q : *quads) validate_quadruplet(cfg.vocab, q);

    // split invariants
    std::map<std::string, const Query*> by_id;
    for (const auto& [id, q] : data.queries) by_id[id] = &q;
    for (const auto& sid : data.split.train_scenes)
        for (const auto& uid : data.split.unseen_queries)
            if (query_true_of_scene(*by_id.at(uid), data.scenes.at(sid)))
                throw DataError("validate: train scene '" + sid + "' realizes unseen compound '" + uid +
                                "'");
    std::set<std::string> seen(data.split.seen_queries.begin(), data.split.seen_queries.end());
    for (const auto& uid : data.split.unseen_queries)
        if (seen.count(uid)) throw DataError("validate: query '" + uid + "' is both seen and unseen");

    // manifest hashes still match the files
    const json manifest = json::parse(read_text_file(path_join(cfg.data_dir, "manifest.json")));
    for (const auto& [name, hash] : manifest.at("files").items())
        if (file_content_hash(path_join(cfg.data_dir, name)) != hash.get<std::string>())
            throw DataError("validate: '" + name + "' does not match its manifest hash");

    std::cout << "validate: " << data.scenes.size() << " scenes, " << data.queries.size()
              << " queries, " << data.train_quads.size() + data.test_quads.size() + data.val_quads.size()
              << " quadruplets OK\n";
}

// ---- repro ---------------------------------------------------------------

int do_repro(ExperimentConfig cfg, const Flags& flags) {
    const auto t0 = std::chrono::steady_clock::now();
    do_gen(cfg);

    std::vector<std::string> variants = {"linear",  "prompt_tune", "ft_late",
                                         "ft_all_analog", "mm_pred", "mm_adapter"};
    if (flags.zoo) {
        variants.push_back("flava_style");
        variants.push_back("albef_style");
        variants.push_back("fiber_style");
        variants.push_back("fiber_mm");
    }
    for (const auto& v : variants) do_train(cfg, v);

    const DataBundle data = load_data(cfg);
    SyntheticBackbone backbone(backbone_config_of(cfg), cfg.vocab);
    std::vector<std::string> report_paths;
    {
        Scorer frozen{"frozen", frozen_pooled_cosine};
        const MetricReport r = evaluate_scorer(cfg, data, backbone, frozen);
        fs::create_directories(cfg.out_dir);
        write_text_file(path_join(cfg.out_dir, "frozen.report.json"), report_to_json(r));
        write_text_file(path_join(cfg.out_dir, "frozen.report.csv"), report_to_csv(r));
        report_paths.push_back(path_join(cfg.out_dir, "frozen.report.json"));
    }
    for (const auto& v : variants) {
        const LoadedCheckpoint ckpt = read_checkpoint(path_join(cfg.out_dir, v + ".ckpt"));
        FusionModel model(ckpt.config, &backbone);
        restore_params(model, ckpt);
        Scorer s;
        s.label = model.config().report_label();
        s.pair = [&model](const FeatureBundle& a, const FeatureBundle& b) {
            return model.score_value(a, b);
        };
        const MetricReport r = evaluate_scorer(cfg, data, backbone, s);
        write_text_file(path_join(cfg.out_dir, v + ".report.json"), report_to_json(r));
        write_text_file(path_join(cfg.out_dir, v + ".report.csv"), report_to_csv(r));
        report_paths.push_back(path_join(cfg.out_dir, v + ".report.json"));
    }
    Flags cmp_flags = flags;
    cmp_flags.positional = report_paths;
    do_compare(cfg, cmp_flags);

    // data-type ablation on the adapter (equal step budget per run)
    const int ablation_steps = cfg.train.steps_per_epoch > 0 ? cfg.train.steps_per_epoch : 0;
    std::vector<std::string> ablation_reports;
    for (const std::string strategy : {"single_obj", "multi_obj", "hard_neg", "combined"}) {
        ExperimentConfig acfg = cfg;
        acfg.train.strategy = strategy;
        acfg.train.steps_per_epoch = ablation_steps > 0 ? ablation_steps : 12;
        acfg.out_dir = path_join(cfg.out_dir, "ablation_" + strategy);
        do_train(acfg, "mm_adapter");
        const LoadedCheckpoint ckpt = read_checkpoint(path_join(acfg.out_dir, "mm_adapter.ckpt"));
        FusionModel model(ckpt.config, &backbone);
        restore_params(model, ckpt);
        Scorer s;
        s.label = "mm_adapter+" + strategy;
        s.pair = [&model](const FeatureBundle& a, const FeatureBundle& b) {
            return model.score_value(a, b);
        };
        const MetricReport r = evaluate_scorer(cfg, data, backbone, s);
        const std::string rp = path_join(acfg.out_dir, "mm_adapter.report.json");
        write_text_file(rp, report_to_json(r));
        ablation_reports.push_back(rp);
    }
    {
        ExperimentConfig acfg = cfg;
        acfg.out_dir = path_join(cfg.out_dir, "ablation");
        fs::create_directories(acfg.out_dir);
        Flags abl_flags = flags;
        abl_flags.positional = ablation_reports;
        abl_flags.sort_by = "t2i_accuracy";
        do_compare(acfg, abl_flags);
    }

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "repro: completed in " << seconds << " s\n";
    return 0;
}

void print_usage() {
    std::cout <<
        "usage: cola <command> [flags]\n"
        "commands:\n"
        "  gen        generate the synthetic benchmark into --data\n"
        "  train      train one strategy (--variant) on the generated data\n"
        "  eval       evaluate a checkpoint path, 'frozen', or --oracle\n"
        "  compare    merge report JSONs into a comparison table\n"
        "  gradcheck  finite-difference check every variant x both losses\n"
        "  validate   re-check all invariants on a generated data directory\n"
        "  repro      gen + train all strategies + eval + compare\n"
        "flags: --config PATH --seed N --variant NAME --out DIR --data DIR\n"
        "       --pool {or,and,all} --loss {bce,nce} --strategy NAME\n"
        "       --epochs N --steps N --oracle --frozen --zoo --sort-by METRIC\n"
        "environment: COLA_DATA_DIR sets the default data root\n";
}

}  // namespace

int run(const std::vector<std::string>& args) {
    if (args.empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
        print_usage();
        return args.empty() ? 1 : 0;
    }
    const std::string& cmd = args[0];
    try {
        const Flags flags = parse_flags(args, 1);
        const ExperimentConfig cfg = resolve_config(flags);
        if (cmd == "gen") return run_or_report([&] { do_gen(cfg); });
        if (cmd == "train") return run_or_report([&] { do_train(cfg, flags.variant); });
        if (cmd == "eval") return run_or_report([&] { do_eval(cfg, flags); });
        if (cmd == "compare") return run_or_report([&] { do_compare(cfg, flags); });
        if (cmd == "gradcheck") return do_gradcheck(cfg, flags);
        if (cmd == "validate") return run_or_report([&] { do_validate(cfg); });
        if (cmd == "repro") return do_repro(cfg, flags);
        std::cerr << "error: unknown command '" << cmd << "'\n";
        print_usage();
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cola::cli
