#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cola/common.hpp"

namespace cola {

// The relation token joining the two parts of a multi-object query. It is
// semantically inert: it carries no information about spatial arrangement.
inline constexpr const char* kRelationToken = "REL";

// Rendering order for attribute families inside a caption; keeps
// tokenization canonical ("small red metal round mug").
inline const std::vector<std::string> kFamilyOrder = {"size", "color", "material", "shape"};

struct Vocabulary {
    std::vector<std::string> objects;
    // family -> attribute names; every attribute belongs to exactly one family.
    std::map<std::string, std::vector<std::string>> attributes;

    bool has_object(const std::string& name) const;
    bool has_attribute(const std::string& name) const;
    const std::string& family_of(const std::string& attribute) const;
    std::vector<std::string> all_attributes() const;  // family order, then in-family order
    // objects + attributes + REL, the token universe in table order.
    std::vector<std::string> token_list() const;
    void validate() const;

    static Vocabulary default_vocabulary();
};

struct Placement {
    std::size_t cell = 0;
    std::string object;
    std::vector<std::string> attributes;  // canonical family order
};

struct Scene {
    std::string scene_id;
    std::size_t grid = 4;  // g; the scene has g*g cells
    std::vector<Placement> placements;
};

// One (object, ordered attribute sequence) component of a query.
struct QueryPart {
    std::string object;
    std::vector<std::string> attributes;
};

struct Query {
    std::string query_id;
    std::vector<QueryPart> parts;  // 1 = single-object, 2 = multi-object
    std::vector<std::string> tokens;

    std::size_t attribute_count() const;
    // All object and attribute words, no relation token.
    std::vector<std::string> words() const;
};

// Sorts attributes into the canonical family order (size, color, material,
// shape); within a family the vocabulary order decides (at most one per
// family in valid data anyway).
std::vector<std::string> canonical_attribute_order(const Vocabulary& vocab,
                                                   std::vector<std::string> attrs);

// Canonical surface form: per part the attributes then the object, parts
// joined by the relation token.
std::vector<std::string> render_tokens(const std::vector<QueryPart>& parts);
// Canonical id: tokens joined by '_'.
std::string query_id_from_parts(const std::vector<QueryPart>& parts);
Query make_query(const Vocabulary& vocab, std::vector<QueryPart> parts,
                 std::size_t max_tokens = 0);

void validate_scene(const Vocabulary& vocab, const Scene& scene);
void validate_query(const Vocabulary& vocab, const Query& query);

// The binding predicate: true iff every part of the query is realized by
// some placement whose object matches and whose attribute set contains all
// of the part's attributes.
bool query_true_of_scene(const Query& query, const Scene& scene);
bool part_true_of_scene(const QueryPart& part, const Scene& scene);

// Bag-of-words tests used for pool membership.
bool scene_contains_word(const Scene& scene, const std::string& word);

// ---- JSON lines ----------------------------------------------------------

std::string scene_to_json(const Scene& s);
Scene scene_from_json(const std::string& line);
std::string query_to_json(const Query& q);
Query query_from_json(const std::string& line);

std::vector<Scene> read_scenes_jsonl(const std::string& path);
std::vector<Query> read_queries_jsonl(const std::string& path);
void write_scenes_jsonl(const std::string& path, const std::vector<Scene>& scenes);
void write_queries_jsonl(const std::string& path, const std::vector<Query>& queries);

std::string vocabulary_to_json(const Vocabulary& v);
Vocabulary vocabulary_from_json(const std::string& text);

// Whole-file FNV-1a content hash as 16 hex chars; throws DataError if the
// file cannot be read.
std::string file_content_hash(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace cola
