#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cgrl/autodiff.hpp"
#include "cgrl/scene_graph.hpp"

namespace cgrl {

// Graph-convolution maps for one domain. Each E_* is an affine map over the
// concatenated argument embeddings followed by a rectified-linear activation;
// isolated objects fall back to a plain affine self map. Attention heads are
// score vectors applied as head . tanh(item).
struct GcnParams {
  Parameter *w_subject = nullptr, *b_subject = nullptr;            // 3e -> u
  Parameter *w_object = nullptr, *b_object = nullptr;              // 3e -> u
  Parameter *w_attribute = nullptr, *b_attribute = nullptr;        // 2e -> u
  Parameter *w_relationship = nullptr, *b_relationship = nullptr;  // 3e -> u
  Parameter *w_self = nullptr, *b_self = nullptr;                  // e -> u
  Parameter *attn_objects = nullptr;
  Parameter *attn_attributes = nullptr;
  Parameter *attn_relationships = nullptr;
};

inline GcnParams make_gcn_params(ParamStore& store, const std::string& prefix, int e, int u,
                                 Rng& rng) {
  auto affine_params = [&](const std::string& name, int in_dim, Parameter*& w, Parameter*& b) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in_dim));
    w = &store.add(prefix + "/" + name + "/w",
                   random_matrix(static_cast<std::size_t>(u), static_cast<std::size_t>(in_dim),
                                 rng, stddev));
    b = &store.add(prefix + "/" + name + "/b", Tensor::zeros({static_cast<std::size_t>(u)}));
  };
  GcnParams p;
  affine_params("subject", 3 * e, p.w_subject, p.b_subject);
  affine_params("object", 3 * e, p.w_object, p.b_object);
  affine_params("attribute", 2 * e, p.w_attribute, p.b_attribute);
  affine_params("relationship", 3 * e, p.w_relationship, p.b_relationship);
  affine_params("self", e, p.w_self, p.b_self);
  p.attn_objects = &store.add(prefix + "/attn_objects",
                              random_vector(static_cast<std::size_t>(u), rng, 0.1));
  p.attn_attributes = &store.add(prefix + "/attn_attributes",
                                 random_vector(static_cast<std::size_t>(u), rng, 0.1));
  p.attn_relationships = &store.add(prefix + "/attn_relationships",
                                    random_vector(static_cast<std::size_t>(u), rng, 0.1));
  return p;
}

// u_o, u_a, u_r for one graph, on a live tape.
struct UnifiedVars {
  Var u_o, u_a, u_r;
  SceneGraph::Domain domain = SceneGraph::Domain::kVisual;
};

// Softmax weights over item scores, score(x) = head . tanh(x). Returns [n].
inline Var soft_attention(Tape& tape, const std::vector<Var>& items, Parameter& head) {
  if (items.empty()) throw ShapeError("soft_attention: empty item list");
  Var head_vec = tape.param(head);
  std::vector<Var> scores;
  scores.reserve(items.size());
  for (Var item : items) scores.push_back(dot(head_vec, tanh(item)));
  return softmax(concat(scores));
}

inline Var attention_weighted_sum(Tape& tape, Var weights, const std::vector<Var>& items) {
  Var acc = mul(element(weights, 0), items[0]);
  for (std::size_t i = 1; i < items.size(); ++i) {
    acc = add(acc, mul(element(weights, i), items[i]));
  }
  (void)tape;
  return acc;
}

// Object encoding: per object, the mean over its incident triplets of the
// role-specific maps (E_subject where it is the subject, E_object where it is
// the object), attention-combined across objects. Objects with no incident
// triplet contribute the affine self map of their label embedding.
inline Var encode_objects(Tape& tape, const SceneGraph& sg, const GraphEmbeddings& emb,
                          const GcnParams& p) {
  if (sg.objects.empty()) throw DataError("encode_objects: empty object list");
  std::vector<Var> encodings;
  encodings.reserve(sg.objects.size());
  for (std::size_t i = 0; i < sg.objects.size(); ++i) {
    const auto as_subject = triplets_with_subject(sg, static_cast<int>(i));
    const auto as_object = triplets_with_object(sg, static_cast<int>(i));
    const std::size_t n_inc = as_subject.size() + as_object.size();
    if (n_inc == 0) {
      encodings.push_back(affine(tape, *p.w_self, *p.b_self, emb.objects[i]));
      continue;
    }
    std::vector<Var> terms;
    terms.reserve(n_inc);
    for (int t : as_subject) {
      const auto& tr = sg.relation_triplets[static_cast<std::size_t>(t)];
      Var in = concat({emb.objects[static_cast<std::size_t>(tr.subject)],
                       emb.relations[static_cast<std::size_t>(t)],
                       emb.objects[static_cast<std::size_t>(tr.object)]});
      terms.push_back(affine_relu(tape, *p.w_subject, *p.b_subject, in));
    }
    for (int t : as_object) {
      const auto& tr = sg.relation_triplets[static_cast<std::size_t>(t)];
      Var in = concat({emb.objects[static_cast<std::size_t>(tr.subject)],
                       emb.relations[static_cast<std::size_t>(t)],
                       emb.objects[static_cast<std::size_t>(tr.object)]});
      terms.push_back(affine_relu(tape, *p.w_object, *p.b_object, in));
    }
    Var acc = terms[0];
    for (std::size_t k = 1; k < terms.size(); ++k) acc = add(acc, terms[k]);
    encodings.push_back(scale(acc, 1.0 / static_cast<double>(n_inc)));
  }
  Var weights = soft_attention(tape, encodings, *p.attn_objects);
  return attention_weighted_sum(tape, weights, encodings);
}

// Attribute encoding: per attributed object, the mean of E_attribute over its
// attributes, attention-combined. No attributes at all yields the zero vector.
inline Var encode_attributes(Tape& tape, const SceneGraph& sg, const GraphEmbeddings& emb,
                             const GcnParams& p) {
  const std::size_t u_dim = p.b_attribute->value.size();
  if (sg.attribute_pairs.empty()) return tape.constant(Tensor::zeros({u_dim}));
  // Group attribute pairs by object, in first-appearance order.
  std::vector<int> owners;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < sg.attribute_pairs.size(); ++k) {
    const int obj = sg.attribute_pairs[k].first;
    std::size_t g = 0;
    for (; g < owners.size(); ++g)
      if (owners[g] == obj) break;
    if (g == owners.size()) {
      owners.push_back(obj);
      groups.emplace_back();
    }
    groups[g].push_back(k);
  }
  std::vector<Var> encodings;
  encodings.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<Var> terms;
    for (std::size_t k : groups[g]) {
      Var in = concat({emb.objects[static_cast<std::size_t>(owners[g])], emb.attributes[k]});
      terms.push_back(affine_relu(tape, *p.w_attribute, *p.b_attribute, in));
    }
    Var acc = terms[0];
    for (std::size_t k = 1; k < terms.size(); ++k) acc = add(acc, terms[k]);
    encodings.push_back(scale(acc, 1.0 / static_cast<double>(terms.size())));
  }
  Var weights = soft_attention(tape, encodings, *p.attn_attributes);
  return attention_weighted_sum(tape, weights, encodings);
}

// Relationship encoding: attention-weighted sum over triplet encodings.
inline Var encode_relationships(Tape& tape, const SceneGraph& sg, const GraphEmbeddings& emb,
                                const GcnParams& p) {
  const std::size_t u_dim = p.b_relationship->value.size();
  if (sg.relation_triplets.empty()) return tape.constant(Tensor::zeros({u_dim}));
  std::vector<Var> encodings;
  encodings.reserve(sg.relation_triplets.size());
  for (std::size_t t = 0; t < sg.relation_triplets.size(); ++t) {
    const auto& tr = sg.relation_triplets[t];
    Var in = concat({emb.objects[static_cast<std::size_t>(tr.subject)], emb.relations[t],
                     emb.objects[static_cast<std::size_t>(tr.object)]});
    encodings.push_back(affine_relu(tape, *p.w_relationship, *p.b_relationship, in));
  }
  Var weights = soft_attention(tape, encodings, *p.attn_relationships);
  return attention_weighted_sum(tape, weights, encodings);
}

inline UnifiedVars encode_graph(Tape& tape, const SceneGraph& sg, const EmbeddingTable& table,
                                const GcnParams& p) {
  GraphEmbeddings emb = embed_labels(tape, sg, table);
  UnifiedVars out;
  out.u_o = encode_objects(tape, sg, emb, p);
  out.u_a = encode_attributes(tape, sg, emb, p);
  out.u_r = encode_relationships(tape, sg, emb, p);
  out.domain = sg.domain;
  return out;
}

}  // namespace cgrl
