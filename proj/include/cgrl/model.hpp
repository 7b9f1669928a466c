#pragma once

#include <string>

#include "cgrl/caption_decoder.hpp"
#include "cgrl/config.hpp"
#include "cgrl/consensus.hpp"
#include "cgrl/graph_encoder.hpp"
#include "cgrl/grounding.hpp"
#include "cgrl/region_graph.hpp"
#include "cgrl/scene_graph.hpp"

namespace cgrl {

// The full CGRL parameter set. Label embeddings are shared across domains;
// the two GCN encoders have the same structure but independent parameters.
struct CgrlModel {
  TrainConfig config;
  Vocabulary vocab;
  ObjectLexicon lexicon;

  ParamStore store;
  EmbeddingTable labels;
  GcnParams gcn_visual;
  GcnParams gcn_language;
  TranslatorParams translator;
  DiscriminatorParams disc_node;
  DiscriminatorParams disc_edge;
  RegionGcnParams region_gcn;
  DecoderParams decoder;
  Parameter* w_s = nullptr;

  int consensus_dim() const { return 2 * config.node_dim; }
};

inline CgrlModel build_model(const TrainConfig& config) {
  validate(config);
  CgrlModel m;
  m.config = config;
  m.vocab = build_vocabulary(config.world);
  m.lexicon = build_lexicon(config.world, m.vocab);

  Rng rng(child_seed(config.seed, 0x30de1));
  const int e = config.embed_dim;
  const int u = config.node_dim;
  const int d_r = config.world.feature_dim;

  m.labels = make_embedding_table(m.store, "emb", config.world.n_object_classes,
                                  config.world.n_attribute_classes,
                                  config.world.n_relation_classes, e, rng);
  m.gcn_visual = make_gcn_params(m.store, "gcn/visual", e, u, rng);
  m.gcn_language = make_gcn_params(m.store, "gcn/language", e, u, rng);
  m.translator = make_translator(m.store, "gasn/translator", u, rng);
  m.disc_node = make_discriminator(m.store, "gasn/disc_node", 3 * u, config.disc_hidden, rng);
  m.disc_edge = make_discriminator(m.store, "gasn/disc_edge", 3, config.disc_hidden, rng);
  m.region_gcn = make_region_gcn(m.store, "region/gcn", d_r, rng);
  m.decoder = make_decoder(m.store, "decoder", static_cast<int>(m.vocab.size()), config.word_dim,
                           config.decoder_hidden, d_r, 2 * u, d_r, config.attn_dim, rng);
  m.w_s = &m.store.add("grounding/w_s",
                       random_matrix(static_cast<std::size_t>(config.world.n_object_classes),
                                     static_cast<std::size_t>(d_r), rng,
                                     1.0 / std::sqrt(static_cast<double>(d_r))));
  return m;
}

// Plain SGD with optional momentum over an explicit parameter subset.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Parameter*> params, double lr, double momentum)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    velocities_.reserve(params_.size());
    for (Parameter* p : params_) velocities_.push_back(Tensor::zeros(p->value.shape));
  }

  void zero_grads() {
    for (Parameter* p : params_) p->zero_grad();
  }

  // Gradient-descent step on the accumulated gradients; pass a negative
  // learning-rate sign via `ascend` for discriminator ascent.
  void step(bool ascend = false) {
    const double sign = ascend ? -1.0 : 1.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter* p = params_[i];
      Tensor& v = velocities_[i];
      for (std::size_t k = 0; k < p->value.size(); ++k) {
        v.data[k] = momentum_ * v.data[k] - lr_ * sign * p->grad.data[k];
        p->value.data[k] += v.data[k];
      }
    }
  }

  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocities_;
  double lr_;
  double momentum_;
};

namespace paramsets {

inline void append(std::vector<Parameter*>& out, std::initializer_list<Parameter*> ps) {
  for (Parameter* p : ps) out.push_back(p);
}

inline std::vector<Parameter*> embeddings(CgrlModel& m) {
  return {m.labels.objects, m.labels.attributes, m.labels.relations};
}

inline std::vector<Parameter*> gcn(const GcnParams& g) {
  return {g.w_subject, g.b_subject, g.w_object,       g.b_object,
          g.w_attribute, g.b_attribute, g.w_relationship, g.b_relationship,
          g.w_self, g.b_self, g.attn_objects, g.attn_attributes, g.attn_relationships};
}

inline std::vector<Parameter*> translator(const TranslatorParams& t) {
  return {t.w1, t.b1, t.w2, t.b2};
}

inline std::vector<Parameter*> discriminators(CgrlModel& m) {
  return {m.disc_node.w1, m.disc_node.b1, m.disc_node.w2, m.disc_node.b2,
          m.disc_edge.w1, m.disc_edge.b1, m.disc_edge.w2, m.disc_edge.b2};
}

inline std::vector<Parameter*> decoder(CgrlModel& m) {
  std::vector<Parameter*> out;
  append(out, {m.decoder.word_emb, m.decoder.attn_cell.w, m.decoder.attn_cell.b,
               m.decoder.lang_cell.w, m.decoder.lang_cell.b, m.decoder.consensus_att.w_query,
               m.decoder.consensus_att.w_item, m.decoder.consensus_att.v,
               m.decoder.consensus_att.b, m.decoder.region_att.w_query,
               m.decoder.region_att.w_item, m.decoder.region_att.v, m.decoder.region_att.b,
               m.decoder.w_out, m.decoder.b_out});
  return out;
}

inline std::vector<Parameter*> region_gcn(CgrlModel& m) {
  return {m.region_gcn.w, m.region_gcn.b};
}

}  // namespace paramsets

}  // namespace cgrl
