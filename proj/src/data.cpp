#include "cola/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

using nlohmann::json;

namespace cola {

bool Vocabulary::has_object(const std::string& name) const {
    return std::find(objects.begin(), objects.end(), name) != objects.end();
}

bool Vocabulary::has_attribute(const std::string& name) const {
    for (const auto& [fam, attrs] : attributes)
        if (std::find(attrs.begin(), attrs.end(), name) != attrs.end()) return true;
    return false;
}

const std::string& Vocabulary::family_of(const std::string& attribute) const {
    for (const auto& [fam, attrs] : attributes)
        if (std::find(attrs.begin(), attrs.end(), attribute) != attrs.end()) return fam;
    throw VocabError("unknown attribute '" + attribute + "'");
}

std::vector<std::string> Vocabulary::all_attributes() const {
    std::vector<std::string> out;
    for (const auto& fam : kFamilyOrder) {
        auto it = attributes.find(fam);
        if (it == attributes.end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    // Families outside the canonical list come last, in map (sorted) order.
    for (const auto& [fam, attrs] : attributes) {
        if (std::find(kFamilyOrder.begin(), kFamilyOrder.end(), fam) != kFamilyOrder.end()) continue;
        out.insert(out.end(), attrs.begin(), attrs.end());
    }
    return out;
}

std::vector<std::string> Vocabulary::token_list() const {
    std::vector<std::string> out = objects;
    const auto attrs = all_attributes();
    out.insert(out.end(), attrs.begin(), attrs.end());
    out.push_back(kRelationToken);
    return out;
}

void Vocabulary::validate() const {
    std::set<std::string> seen;
    for (const auto& o : objects)
        if (!seen.insert(o).second) throw VocabError("duplicate name '" + o + "'");
    for (const auto& [fam, attrs] : attributes)
        for (const auto& a : attrs)
            if (!seen.insert(a).second) throw VocabError("duplicate name '" + a + "'");
    if (seen.count(kRelationToken)) throw VocabError("name collides with relation token");
}

Vocabulary Vocabulary::default_vocabulary() {
    Vocabulary v;
    v.objects = {"cube", "ball",  "cylinder", "pyramid", "table", "chair",
                 "plate", "bowl", "bottle",   "lamp",    "box",   "mug"};
    v.attributes = {
        {"size", {"small", "medium", "large"}},
        {"color", {"red", "green", "blue"}},
        {"material", {"metal", "rubber", "wood"}},
        {"shape", {"round", "square", "flat"}},
    };
    return v;
}

std::vector<std::string> canonical_attribute_order(const Vocabulary& vocab,
                                                   std::vector<std::string> attrs) {
    const auto ordered = vocab.all_attributes();
    auto rank = [&](const std::string& a) {
        const auto it = std::find(ordered.begin(), ordered.end(), a);
        if (it == ordered.end()) throw VocabError("unknown attribute '" + a + "'");
        return std::distance(ordered.begin(), it);
    };
    std::sort(attrs.begin(), attrs.end(),
              [&](const std::string& a, const std::string& b) { return rank(a) < rank(b); });
    return attrs;
}

std::vector<std::string> render_tokens(const std::vector<QueryPart>& parts) {
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) tokens.push_back(kRelationToken);
        tokens.insert(tokens.end(), parts[i].attributes.begin(), parts[i].attributes.end());
        tokens.push_back(parts[i].object);
    }
    return tokens;
}

std::string query_id_from_parts(const std::vector<QueryPart>& parts) {
    const auto tokens = render_tokens(parts);
    std::string id;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) id += '_';
        id += tokens[i];
    }
    return id;
}

Query make_query(const Vocabulary& vocab, std::vector<QueryPart> parts, std::size_t max_tokens) {
    if (parts.empty() || parts.size() > 2)
        throw DataError("query must have 1 or 2 parts, got " + std::to_string(parts.size()));
    for (auto& p : parts) p.attributes = canonical_attribute_order(vocab, p.attributes);
    Query q;
    q.parts = std::move(parts);
    q.tokens = render_tokens(q.parts);
    q.query_id = query_id_from_parts(q.parts);
    if (max_tokens > 0 && q.tokens.size() > max_tokens)
        throw DataError("query '" + q.query_id + "' exceeds token budget of " +
                        std::to_string(max_tokens));
    validate_query(vocab, q);
    return q;
}

std::size_t Query::attribute_count() const {
    std::size_t n = 0;
    for (const auto& p : parts) n += p.attributes.size();
    return n;
}

std::vector<std::string> Query::words() const {
    std::vector<std::string> out;
    for (const auto& p : parts) {
        out.insert(out.end(), p.attributes.begin(), p.attributes.end());
        out.push_back(p.object);
    }
    return out;
}

void validate_scene(const Vocabulary& vocab, const Scene& scene) {
    std::set<std::size_t> used_cells;
    for (const auto& p : scene.placements) {
        if (p.cell >= scene.grid * scene.grid)
            throw DataError("scene '" + scene.scene_id + "': cell " + std::to_string(p.cell) +
                            " outside " + std::to_string(scene.grid) + "x" + std::to_string(scene.grid) +
                            " grid");
        if (!used_cells.insert(p.cell).second)
            throw DataError("scene '" + scene.scene_id + "': cell " + std::to_string(p.cell) +
                            " occupied twice");
        if (!vocab.has_object(p.object))
            throw VocabError("scene '" + scene.scene_id + "': unknown object '" + p.object + "'");
        std::set<std::string> families;
        for (const auto& a : p.attributes) {
            if (!vocab.has_attribute(a))
                throw VocabError("scene '" + scene.scene_id + "': unknown attribute '" + a + "'");
            if (!families.insert(vocab.family_of(a)).second)
                throw DataError("scene '" + scene.scene_id + "': two attributes from family '" +
                                vocab.family_of(a) + "' on one object");
        }
    }
}

void validate_query(const Vocabulary& vocab, const Query& query) {
    for (const auto& p : query.parts) {
        if (!vocab.has_object(p.object))
            throw VocabError("query '" + query.query_id + "': unknown object '" + p.object + "'");
        std::set<std::string> families;
        for (const auto& a : p.attributes) {
            if (!vocab.has_attribute(a))
                throw VocabError("query '" + query.query_id + "': unknown attribute '" + a + "'");
            if (!families.insert(vocab.family_of(a)).second)
                throw DataError("query '" + query.query_id + "': two attributes from family '" +
                                vocab.family_of(a) + "'");
        }
    }
    if (query.tokens != render_tokens(query.parts))
        throw DataError("query '" + query.query_id + "': tokens do not match parts");
}

bool part_true_of_scene(const QueryPart& part, const Scene& scene) {
    for (const auto& p : scene.placements) {
        if (p.object != part.object) continue;
        bool all = true;
        for (const auto& a : part.attributes)
            all = all && std::find(p.attributes.begin(), p.attributes.end(), a) != p.attributes.end();
        if (all) return true;
    }
    return false;
}

bool query_true_of_scene(const Query& query, const Scene& scene) {
    for (const auto& part : query.parts)
        if (!part_true_of_scene(part, scene)) return false;
    return true;
}

bool scene_contains_word(const Scene& scene, const std::string& word) {
    for (const auto& p : scene.placements) {
        if (p.object == word) return true;
        if (std::find(p.attributes.begin(), p.attributes.end(), word) != p.attributes.end())
            return true;
    }
    return false;
}

// ---- JSON ------------------------------------------------------------------

std::string scene_to_json(const Scene& s) {
    json placements = json::array();
    for (const auto& p : s.placements)
        placements.push_back({{"cell", p.cell}, {"object", p.object}, {"attributes", p.attributes}});
    const json j = {{"scene_id", s.scene_id}, {"grid", s.grid}, {"placements", placements}};
    return j.dump();
}

Scene scene_from_json(const std::string& line) {
    const json j = json::parse(line);
    Scene s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.grid = j.at("grid").get<std::size_t>();
    for (const auto& pj : j.at("placements")) {
        Placement p;
        p.cell = pj.at("cell").get<std::size_t>();
        p.object = pj.at("object").get<std::string>();
        p.attributes = pj.at("attributes").get<std::vector<std::string>>();
        s.placements.push_back(std::move(p));
    }
    return s;
}

std::string query_to_json(const Query& q) {
    json parts = json::array();
    for (const auto& p : q.parts) parts.push_back({{"object", p.object}, {"attributes", p.attributes}});
    const json j = {{"query_id", q.query_id}, {"parts", parts}, {"tokens", q.tokens}};
    return j.dump();
}

Query query_from_json(const std::string& line) {
    const json j = json::parse(line);
    Query q;
    q.query_id = j.at("query_id").get<std::string>();
    for (const auto& pj : j.at("parts")) {
        QueryPart p;
        p.object = pj.at("object").get<std::string>();
        p.attributes = pj.at("attributes").get<std::vector<std::string>>();
        q.parts.push_back(std::move(p));
    }
    q.tokens = j.at("tokens").get<std::vector<std::string>>();
    return q;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << content;
    if (!out) throw DataError("write failed for '" + path + "'");
}

namespace {
std::vector<std::string> read_lines(const std::string& path) {
    const std::string text = read_text_file(path);
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start) lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}
}  // namespace

std::vector<Scene> read_scenes_jsonl(const std::string& path) {
    std::vector<Scene> out;
    for (const auto& line : read_lines(path)) out.push_back(scene_from_json(line));
    return out;
}

std::vector<Query> read_queries_jsonl(const std::string& path) {
    std::vector<Query> out;
    for (const auto& line : read_lines(path)) out.push_back(query_from_json(line));
    return out;
}

void write_scenes_jsonl(const std::string& path, const std::vector<Scene>& scenes) {
    std::string text;
    for (const auto& s : scenes) {
        text += scene_to_json(s);
        text += '\n';
    }
    write_text_file(path, text);
}

void write_queries_jsonl(const std::string& path, const std::vector<Query>& queries) {
    std::string text;
    for (const auto& q : queries) {
        text += query_to_json(q);
        text += '\n';
    }
    write_text_file(path, text);
}

std::string vocabulary_to_json(const Vocabulary& v) {
    const json j = {{"objects", v.objects}, {"attributes", v.attributes}};
    return j.dump();
}

Vocabulary vocabulary_from_json(const std::string& text) {
    const json j = json::parse(text);
    Vocabulary v;
    v.objects = j.at("objects").get<std::vector<std::string>>();
    v.attributes = j.at("attributes").get<std::map<std::string, std::vector<std::string>>>();
    v.validate();
    return v;
}

std::string file_content_hash(const std::string& path) {
    return hex64(fnv1a64(read_text_file(path)));
}

}  // namespace cola
