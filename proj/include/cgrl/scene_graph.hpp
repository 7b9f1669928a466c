#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cgrl/autodiff.hpp"
#include "cgrl/error.hpp"
#include "cgrl/rng.hpp"

namespace cgrl {

// Token table with fixed reserved entries. Lookups of unseen tokens map to
// the unknown id rather than failing.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary() {
    for (const char* w : {"<pad>", "<s>", "</s>", "<unk>"}) add(w);
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(token);
    ids_[token] = id;
    return id;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
      throw DataError("vocabulary id out of range: " + std::to_string(id));
    }
    return words_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// Typed scene graph: object label list, (object index, attribute label)
// pairs, directed <subject - relation - object> triplets. Exists in a visual
// and a language variant; label spaces are shared across domains.
struct SceneGraph {
  enum class Domain { kVisual, kLanguage };

  struct Triplet {
    int subject;
    int relation;
    int object;
    bool operator==(const Triplet&) const = default;
  };

  std::vector<int> objects;
  std::vector<std::pair<int, int>> attribute_pairs;
  std::vector<Triplet> relation_triplets;
  Domain domain = Domain::kVisual;
};

inline void validate(const SceneGraph& sg) {
  const int n = static_cast<int>(sg.objects.size());
  for (std::size_t i = 0; i < sg.objects.size(); ++i) {
    if (sg.objects[i] < 0) throw DataError("objects[" + std::to_string(i) + "]: negative label");
  }
  for (std::size_t i = 0; i < sg.attribute_pairs.size(); ++i) {
    const auto& [obj, attr] = sg.attribute_pairs[i];
    if (obj < 0 || obj >= n) {
      throw DataError("attribute_pairs[" + std::to_string(i) + "]: object index " +
                      std::to_string(obj) + " out of range [0," + std::to_string(n) + ")");
    }
    if (attr < 0) throw DataError("attribute_pairs[" + std::to_string(i) + "]: negative label");
  }
  for (std::size_t i = 0; i < sg.relation_triplets.size(); ++i) {
    const auto& tr = sg.relation_triplets[i];
    if (tr.subject < 0 || tr.subject >= n || tr.object < 0 || tr.object >= n) {
      throw DataError("relation_triplets[" + std::to_string(i) + "]: object index out of range");
    }
    if (tr.subject == tr.object) {
      throw DataError("relation_triplets[" + std::to_string(i) + "]: subject equals object");
    }
    if (tr.relation < 0) throw DataError("relation_triplets[" + std::to_string(i) + "]: negative label");
    for (std::size_t j = 0; j < i; ++j) {
      if (sg.relation_triplets[j] == tr) {
        throw DataError("relation_triplets[" + std::to_string(i) + "]: duplicate triplet");
      }
    }
  }
}

inline nlohmann::json scene_graph_json(const SceneGraph& sg) {
  nlohmann::json doc;
  doc["objects"] = sg.objects;
  auto& attrs = doc["attribute_pairs"] = nlohmann::json::array();
  for (const auto& [obj, attr] : sg.attribute_pairs) attrs.push_back({obj, attr});
  auto& rels = doc["relation_triplets"] = nlohmann::json::array();
  for (const auto& tr : sg.relation_triplets) rels.push_back({tr.subject, tr.relation, tr.object});
  return doc;
}

inline SceneGraph parse_scene_graph(const nlohmann::json& doc, SceneGraph::Domain domain) {
  SceneGraph sg;
  sg.domain = domain;
  try {
    sg.objects = doc.at("objects").get<std::vector<int>>();
    for (const auto& pair : doc.at("attribute_pairs")) {
      if (!pair.is_array() || pair.size() != 2) throw DataError("attribute_pairs: expected [object, attribute]");
      sg.attribute_pairs.emplace_back(pair[0].get<int>(), pair[1].get<int>());
    }
    for (const auto& tr : doc.at("relation_triplets")) {
      if (!tr.is_array() || tr.size() != 3) throw DataError("relation_triplets: expected [subject, relation, object]");
      sg.relation_triplets.push_back({tr[0].get<int>(), tr[1].get<int>(), tr[2].get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scene graph schema violation: ") + e.what());
  }
  validate(sg);
  return sg;
}

// Triplet indices where object i acts as the subject / as the object.
inline std::vector<int> triplets_with_subject(const SceneGraph& sg, int i) {
  if (i < 0 || static_cast<std::size_t>(i) >= sg.objects.size()) {
    throw DataError("object index out of range: " + std::to_string(i));
  }
  std::vector<int> out;
  for (std::size_t t = 0; t < sg.relation_triplets.size(); ++t) {
    if (sg.relation_triplets[t].subject == i) out.push_back(static_cast<int>(t));
  }
  return out;
}

inline std::vector<int> triplets_with_object(const SceneGraph& sg, int i) {
  if (i < 0 || static_cast<std::size_t>(i) >= sg.objects.size()) {
    throw DataError("object index out of range: " + std::to_string(i));
  }
  std::vector<int> out;
  for (std::size_t t = 0; t < sg.relation_triplets.size(); ++t) {
    if (sg.relation_triplets[t].object == i) out.push_back(static_cast<int>(t));
  }
  return out;
}

// One label-embedding matrix per node type, shared by both domains.
struct EmbeddingTable {
  Parameter* objects = nullptr;
  Parameter* attributes = nullptr;
  Parameter* relations = nullptr;
  int dim = 0;
};

inline EmbeddingTable make_embedding_table(ParamStore& store, const std::string& prefix,
                                           int n_object_labels, int n_attribute_labels,
                                           int n_relation_labels, int dim, Rng& rng) {
  EmbeddingTable table;
  table.dim = dim;
  table.objects = &store.add(prefix + "/object",
                             random_matrix(n_object_labels, dim, rng, 0.1));
  table.attributes = &store.add(prefix + "/attribute",
                                random_matrix(n_attribute_labels, dim, rng, 0.1));
  table.relations = &store.add(prefix + "/relation",
                               random_matrix(n_relation_labels, dim, rng, 0.1));
  return table;
}

// Per-occurrence label embeddings, aligned with the graph's node lists.
struct GraphEmbeddings {
  std::vector<Var> objects;     // one per sg.objects entry
  std::vector<Var> attributes;  // one per sg.attribute_pairs entry
  std::vector<Var> relations;   // one per sg.relation_triplets entry
};

inline GraphEmbeddings embed_labels(Tape& tape, const SceneGraph& sg, const EmbeddingTable& table) {
  GraphEmbeddings out;
  Var obj_table = tape.param(*table.objects);
  for (int label : sg.objects) out.objects.push_back(row(obj_table, static_cast<std::size_t>(label)));
  if (!sg.attribute_pairs.empty()) {
    Var attr_table = tape.param(*table.attributes);
    for (const auto& [obj, attr] : sg.attribute_pairs) {
      out.attributes.push_back(row(attr_table, static_cast<std::size_t>(attr)));
    }
  }
  if (!sg.relation_triplets.empty()) {
    Var rel_table = tape.param(*table.relations);
    for (const auto& tr : sg.relation_triplets) {
      out.relations.push_back(row(rel_table, static_cast<std::size_t>(tr.relation)));
    }
  }
  return out;
}

}  // namespace cgrl
