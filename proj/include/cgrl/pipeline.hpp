#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cgrl/checkpoint.hpp"
#include "cgrl/metrics.hpp"
#include "cgrl/model.hpp"
#include "cgrl/synthetic_world.hpp"

namespace cgrl {

struct Dataset {
  WorldConfig world;
  Vocabulary vocab;
  ObjectLexicon lexicon;
  std::vector<ScenePair> train;
  std::vector<ScenePair> test;
};

inline Dataset make_dataset(const WorldConfig& world) {
  Dataset d;
  d.world = world;
  d.vocab = build_vocabulary(world);
  d.lexicon = build_lexicon(world, d.vocab);
  std::vector<ScenePair> all = generate_world(world);
  d.train.assign(all.begin(), all.begin() + world.n_train);
  d.test.assign(all.begin() + world.n_train, all.end());
  return d;
}

inline nlohmann::ordered_json world_json(const WorldConfig& w) {
  nlohmann::ordered_json doc;
  doc["n_object_classes"] = w.n_object_classes;
  doc["n_attribute_classes"] = w.n_attribute_classes;
  doc["n_relation_classes"] = w.n_relation_classes;
  doc["min_objects"] = w.min_objects;
  doc["max_objects"] = w.max_objects;
  doc["proposals_per_scene"] = w.proposals_per_scene;
  doc["feature_dim"] = w.feature_dim;
  doc["feature_noise"] = w.feature_noise;
  doc["inconsistency_rate"] = w.inconsistency_rate;
  doc["n_train"] = w.n_train;
  doc["n_test"] = w.n_test;
  doc["seed"] = w.seed;
  doc["canvas"] = w.canvas;
  doc["attribute_prob"] = w.attribute_prob;
  return doc;
}

inline WorldConfig parse_world_json(const nlohmann::json& doc) {
  WorldConfig w;
  try {
    w.n_object_classes = doc.at("n_object_classes").get<int>();
    w.n_attribute_classes = doc.at("n_attribute_classes").get<int>();
    w.n_relation_classes = doc.at("n_relation_classes").get<int>();
    w.min_objects = doc.at("min_objects").get<int>();
    w.max_objects = doc.at("max_objects").get<int>();
    w.proposals_per_scene = doc.at("proposals_per_scene").get<int>();
    w.feature_dim = doc.at("feature_dim").get<int>();
    w.feature_noise = doc.at("feature_noise").get<double>();
    w.inconsistency_rate = doc.at("inconsistency_rate").get<double>();
    w.n_train = doc.at("n_train").get<int>();
    w.n_test = doc.at("n_test").get<int>();
    w.seed = doc.at("seed").get<std::uint64_t>();
    w.canvas = doc.at("canvas").get<double>();
    w.attribute_prob = doc.at("attribute_prob").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset meta schema violation: ") + e.what());
  }
  return w;
}

inline void save_dataset(const Dataset& d, const std::string& dir) {
  std::filesystem::create_directories(dir);
  serialize(d.train, dir + "/train.jsonl");
  serialize(d.test, dir + "/test.jsonl");
  nlohmann::ordered_json meta;
  meta["world"] = world_json(d.world);
  meta["vocab"] = d.vocab.words();
  std::ofstream out(dir + "/meta.json");
  if (!out) throw DataError("cannot write dataset meta: " + dir);
  out << meta.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
  std::ifstream meta_in(dir + "/meta.json");
  if (!meta_in) throw DataError("missing dataset meta: " + dir + "/meta.json");
  nlohmann::json meta = nlohmann::json::parse(meta_in, nullptr, false);
  if (meta.is_discarded()) throw DataError("dataset meta is not valid JSON");
  Dataset d;
  d.world = parse_world_json(meta.at("world"));
  d.vocab = build_vocabulary(d.world);
  d.lexicon = build_lexicon(d.world, d.vocab);
  if (meta.at("vocab").get<std::vector<std::string>>() != d.vocab.words()) {
    throw DataError("dataset vocabulary does not match its world configuration");
  }
  d.train = load(dir + "/train.jsonl");
  d.test = load(dir + "/test.jsonl");
  return d;
}

// ---- per-scene forward passes ----

struct SceneForward {
  std::vector<Var> raw_features;
  std::vector<Var> regions;  // augmented unless the w/o-ARP ablation is active
  Var global_feature;        // mean of raw appearance features
};

inline SceneForward build_scene_forward(Tape& tape, CgrlModel& m, const ScenePair& pair) {
  SceneForward f;
  f.raw_features.reserve(pair.regions.size());
  for (const auto& r : pair.regions) {
    f.raw_features.push_back(tape.constant(Tensor::vec(r.feature)));
  }
  Var acc = f.raw_features[0];
  for (std::size_t i = 1; i < f.raw_features.size(); ++i) acc = add(acc, f.raw_features[i]);
  f.global_feature = scale(acc, 1.0 / static_cast<double>(f.raw_features.size()));
  if (m.config.no_arp) {
    f.regions = f.raw_features;
  } else {
    SpatialGraph graph = link_regions(pair.regions);
    f.regions = augment_regions(tape, f.raw_features, graph, m.region_gcn,
                                m.config.region_self_term);
  }
  return f;
}

inline ConsensusVars consensus_from_language(Tape& tape, CgrlModel& m, const ScenePair& pair) {
  UnifiedVars u = encode_graph(tape, pair.language, m.labels, m.gcn_language);
  return extract_consensus(tape, build_complete_graph(tape, u));
}

inline ConsensusVars consensus_from_visual(Tape& tape, CgrlModel& m, const ScenePair& pair) {
  UnifiedVars u = encode_graph(tape, pair.visual, m.labels, m.gcn_visual);
  CompleteGraphVars aligned = translate(tape, build_complete_graph(tape, u), m.translator);
  return extract_consensus(tape, aligned);
}

// Teacher-forced pass over the gold caption plus end token. Returns the task
// loss (caption + grounding per the active ablation) and bookkeeping values.
struct TeacherForced {
  Var loss;
  double caption_value = 0.0;
  double region_attn_value = 0.0;
  double localization_value = 0.0;
  int correct_tokens = 0;
  int total_tokens = 0;
  std::vector<Tensor> region_attention;  // one row per step
};

inline TeacherForced teacher_forced_pass(Tape& tape, CgrlModel& m, const ScenePair& pair,
                                         const std::optional<ConsensusVars>& consensus,
                                         const SceneForward& f) {
  std::vector<int> targets = pair.caption;
  targets.push_back(Vocabulary::kEos);

  DecoderState state = initial_decoder_state(tape, m.decoder);
  std::vector<Var> distributions;
  std::vector<Var> attention_rows;
  distributions.reserve(targets.size());
  TeacherForced out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int prev = t == 0 ? Vocabulary::kBos : targets[t - 1];
    Var h_attn = attention_step(tape, m.decoder, state, f.global_feature, prev);
    DualAttention att = dual_attention(tape, m.decoder, h_attn, consensus, f.regions);
    auto [h_lang, dist] = language_step(tape, m.decoder, state, h_attn, att.attended_consensus,
                                        att.attended_regions);
    (void)h_lang;
    distributions.push_back(dist);
    attention_rows.push_back(att.region_weights);
    out.region_attention.push_back(tape.val(att.region_weights));
    if (argmax_index(tape.val(dist)) == targets[t]) ++out.correct_tokens;
    ++out.total_tokens;
  }

  Var loss = caption_loss(tape, distributions, targets, m.config.lambda_caption,
                          m.decoder.vocab);
  out.caption_value = tape.val(loss)[0];

  if (!m.config.no_og) {
    std::vector<Indicators> indicators;
    indicators.reserve(pair.grounding.size());
    std::vector<std::pair<Var, const Indicators*>> attn_steps;
    for (const auto& g : pair.grounding) {
      indicators.push_back(region_indicators(pair.regions, g.box));
    }
    for (std::size_t k = 0; k < pair.grounding.size(); ++k) {
      attn_steps.emplace_back(attention_rows[static_cast<std::size_t>(pair.grounding[k].t)],
                              &indicators[k]);
    }
    Var region_loss = region_attention_loss(tape, attn_steps, m.config.lambda_region_attn);
    out.region_attn_value = tape.val(region_loss)[0];
    loss = add(loss, region_loss);
    for (std::size_t k = 0; k < pair.grounding.size(); ++k) {
      if (!indicators[k].any) continue;
      Var loc = localization_loss(tape, f.regions,
                                  attention_rows[static_cast<std::size_t>(pair.grounding[k].t)],
                                  indicators[k], pair.grounding[k].cls, *m.w_s,
                                  m.config.lambda_localization);
      out.localization_value += tape.val(loc)[0];
      loss = add(loss, loc);
    }
  }
  out.loss = loss;
  return out;
}

// ---- detached graph latents (for discriminator steps and diagnostics) ----

struct CompleteGraphValues {
  Tensor node_o, node_a, node_r;
  Tensor edge_oa, edge_or, edge_ar;
};

inline CompleteGraphValues language_graph_values(CgrlModel& m, const ScenePair& pair) {
  Tape tape;
  UnifiedVars u = encode_graph(tape, pair.language, m.labels, m.gcn_language);
  CompleteGraphVars g = build_complete_graph(tape, u);
  return {tape.val(g.node_o), tape.val(g.node_a), tape.val(g.node_r),
          tape.val(g.edge_oa), tape.val(g.edge_or), tape.val(g.edge_ar)};
}

inline CompleteGraphValues translated_visual_values(CgrlModel& m, const ScenePair& pair) {
  Tape tape;
  UnifiedVars u = encode_graph(tape, pair.visual, m.labels, m.gcn_visual);
  CompleteGraphVars g = translate(tape, build_complete_graph(tape, u), m.translator);
  return {tape.val(g.node_o), tape.val(g.node_a), tape.val(g.node_r),
          tape.val(g.edge_oa), tape.val(g.edge_or), tape.val(g.edge_ar)};
}

inline CompleteGraphVars as_constants(Tape& tape, const CompleteGraphValues& v) {
  CompleteGraphVars g;
  g.node_o = tape.constant(v.node_o);
  g.node_a = tape.constant(v.node_a);
  g.node_r = tape.constant(v.node_r);
  g.edge_oa = tape.constant(v.edge_oa);
  g.edge_or = tape.constant(v.edge_or);
  g.edge_ar = tape.constant(v.edge_ar);
  return g;
}

inline double plain_cosine(const Tensor& a, const Tensor& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a.data[i] * b.data[i];
    na += a.data[i] * a.data[i];
    nb += b.data[i] * b.data[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Mean over pairs and node types of (1 - cos) between translated visual and
// paired language nodes.
inline double alignment_cosine_distance(CgrlModel& m, const std::vector<ScenePair>& pairs) {
  double total = 0.0;
  for (const ScenePair& pair : pairs) {
    CompleteGraphValues lang = language_graph_values(m, pair);
    CompleteGraphValues vis = translated_visual_values(m, pair);
    total += 1.0 - plain_cosine(vis.node_o, lang.node_o);
    total += 1.0 - plain_cosine(vis.node_a, lang.node_a);
    total += 1.0 - plain_cosine(vis.node_r, lang.node_r);
  }
  return total / (3.0 * static_cast<double>(pairs.size()));
}

// Node-discriminator accuracy at threshold 0.5: paired language graphs are
// the real class, translated visual graphs the fake class.
inline double discriminator_holdout_accuracy(CgrlModel& m, const std::vector<ScenePair>& pairs) {
  std::size_t correct = 0;
  for (const ScenePair& pair : pairs) {
    {
      Tape tape;
      CompleteGraphVars lang = as_constants(tape, language_graph_values(m, pair));
      if (tape.val(discriminate(tape, node_concat(lang), m.disc_node))[0] > 0.5) ++correct;
    }
    {
      Tape tape;
      CompleteGraphVars vis = as_constants(tape, translated_visual_values(m, pair));
      if (tape.val(discriminate(tape, node_concat(vis), m.disc_node))[0] <= 0.5) ++correct;
    }
  }
  return static_cast<double>(correct) / (2.0 * static_cast<double>(pairs.size()));
}

// ---- training stages ----

namespace detail {

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, Rng rng) : n_(n), batch_(batch), rng_(rng) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0u);
    shuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    for (std::size_t k = 0; k < batch_; ++k) {
      if (pos_ == n_) {
        shuffle();
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

  Rng& rng() { return rng_; }

 private:
  void shuffle() {
    for (std::size_t i = n_; i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng_.bits() % i);
      std::swap(order_[i - 1], order_[j]);
    }
  }

  std::size_t n_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline void guard_finite(double loss, const char* stage) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string(stage) + ": loss became non-finite");
  }
}

}  // namespace detail

struct StageStats {
  double final_loss = 0.0;
  int steps = 0;
};

// Stage 1: pretrain the language route. The consensus is extracted directly
// from the language complete graph and the decoder reconstructs the sentence
// with grounding supervision; loss = L(S) + L(R) + L(L).
inline StageStats stage1_pretrain_language(CgrlModel& m, const Dataset& data,
                                           std::ostream* log = nullptr) {
  const TrainConfig& c = m.config;
  std::vector<Parameter*> params;
  for (auto* p : paramsets::embeddings(m)) params.push_back(p);
  for (auto* p : paramsets::gcn(m.gcn_language)) params.push_back(p);
  for (auto* p : paramsets::decoder(m)) params.push_back(p);
  if (!c.no_arp) {
    for (auto* p : paramsets::region_gcn(m)) params.push_back(p);
  }
  if (!c.no_og) params.push_back(m.w_s);
  SgdOptimizer opt(params, c.stage1_lr, c.momentum);

  detail::BatchSampler sampler(data.train.size(), static_cast<std::size_t>(c.batch_size),
                               Rng(child_seed(c.seed, 101)));
  StageStats stats;
  for (int step = 0; step < c.stage1_steps; ++step) {
    m.store.zero_grads();
    double batch_loss = 0.0;
    const auto batch = sampler.next();
    for (std::size_t idx : batch) {
      const ScenePair& pair = data.train[idx];
      Tape tape;
      SceneForward f = build_scene_forward(tape, m, pair);
      std::optional<ConsensusVars> consensus;
      if (!c.no_cr) consensus = consensus_from_language(tape, m, pair);
      TeacherForced tf = teacher_forced_pass(tape, m, pair, consensus, f);
      Var scaled = scale(tf.loss, 1.0 / static_cast<double>(batch.size()));
      tape.backward(scaled);
      batch_loss += tape.val(tf.loss)[0] / static_cast<double>(batch.size());
    }
    detail::guard_finite(batch_loss, "stage1");
    opt.step();
    stats.final_loss = batch_loss;
    ++stats.steps;
    if (log && (step + 1) % 50 == 0) {
      *log << "stage1 step " << (step + 1) << "/" << c.stage1_steps << " loss " << batch_loss
           << "\n";
    }
  }
  return stats;
}

struct AlignStats {
  double initial_cos_distance = 0.0;
  double final_cos_distance = 0.0;
  double disc_holdout_accuracy = 0.0;
  double final_disc_loss = 0.0;
};

// Stage 2: freeze the language side (embeddings, language GCN, decoder,
// grounding) and align the visual route adversarially. Discriminators ascend
// L_G; the visual GCN and translator descend the non-saturating generator
// objective.
inline AlignStats stage2_align(CgrlModel& m, const Dataset& data, std::ostream* log = nullptr) {
  const TrainConfig& c = m.config;
  // Momentum stays off in the adversarial loop; it oscillates under the
  // alternating min-max updates.
  std::vector<Parameter*> gen_params;
  for (auto* p : paramsets::gcn(m.gcn_visual)) gen_params.push_back(p);
  for (auto* p : paramsets::translator(m.translator)) gen_params.push_back(p);
  SgdOptimizer opt_gen(gen_params, c.stage2_lr_generator, 0.0);
  SgdOptimizer opt_disc(paramsets::discriminators(m), c.stage2_lr_discriminator, 0.0);

  const double lambda_n = c.no_na ? 0.0 : c.lambda_node;
  const double lambda_e = c.no_ea ? 0.0 : c.lambda_edge;

  AlignStats stats;
  stats.initial_cos_distance = alignment_cosine_distance(m, data.test);

  detail::BatchSampler sampler(data.train.size(), static_cast<std::size_t>(c.batch_size),
                               Rng(child_seed(c.seed, 202)));
  for (int step = 0; step < c.stage2_steps; ++step) {
    const auto batch = sampler.next();
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    // Discriminator ascent on L_G with detached generator outputs.
    if (lambda_n > 0.0 || lambda_e > 0.0) {
      m.store.zero_grads();
      double disc_loss = 0.0;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        std::size_t neg = batch[k];
        if (batch.size() >= 2) {
          const auto offset =
              1 + static_cast<std::size_t>(sampler.rng().bits() % (batch.size() - 1));
          neg = batch[(k + offset) % batch.size()];
        }
        Tape tape;
        CompleteGraphVars lang = as_constants(tape, language_graph_values(m, data.train[batch[k]]));
        CompleteGraphVars lang_neg = as_constants(tape, language_graph_values(m, data.train[neg]));
        CompleteGraphVars trans = as_constants(tape, translated_visual_values(m, data.train[batch[k]]));
        Var loss_n = node_alignment_loss(tape, lang, lang_neg, trans, m.disc_node, c.phi_node,
                                         c.psi_node);
        Var loss_e = edge_alignment_loss(tape, lang, lang_neg, trans, m.disc_edge, c.phi_edge,
                                         c.psi_edge);
        Var total = gasn_loss(loss_n, loss_e, lambda_n, lambda_e);
        tape.backward(scale(total, inv_b));
        disc_loss += tape.val(total)[0] * inv_b;
      }
      detail::guard_finite(disc_loss, "stage2");
      opt_disc.step(/*ascend=*/true);
      stats.final_disc_loss = disc_loss;
    }

    // Generator descent: maximize log D(T(.)) on nodes and edges, plus the
    // paired latent-alignment term (the frozen language latents acting as
    // supervised signals for the visual GCN).
    if (lambda_n > 0.0 || lambda_e > 0.0 || c.stage2_supervised_weight > 0.0) {
      m.store.zero_grads();
      double gen_loss = 0.0;
      for (std::size_t idx : batch) {
        Tape tape;
        UnifiedVars u = encode_graph(tape, data.train[idx].visual, m.labels, m.gcn_visual);
        CompleteGraphVars trans = translate(tape, build_complete_graph(tape, u), m.translator);
        Var loss = tape.constant(Tensor::scalar(0.0));
        if (lambda_n > 0.0 && c.psi_node > 0.0) {
          Var log_d = log_prob(discriminate(tape, node_concat(trans), m.disc_node));
          loss = add(loss, scale(log_d, -lambda_n * c.psi_node));
        }
        if (lambda_e > 0.0 && c.psi_edge > 0.0) {
          Var h = edge_logistic(tape, edges_vector(trans));
          Var log_d = log_prob(discriminate(tape, h, m.disc_edge));
          loss = add(loss, scale(log_d, -lambda_e * c.psi_edge));
        }
        if (c.stage2_supervised_weight > 0.0) {
          CompleteGraphVars lang = as_constants(tape, language_graph_values(m, data.train[idx]));
          Var sup = add(add(cosine_similarity(trans.node_o, lang.node_o),
                            cosine_similarity(trans.node_a, lang.node_a)),
                        cosine_similarity(trans.node_r, lang.node_r));
          // Minimize the mean cosine distance (1 - cos) over the three nodes.
          loss = add(loss, scale(sup, -c.stage2_supervised_weight / 3.0));
        }
        tape.backward(scale(loss, inv_b));
        gen_loss += tape.val(loss)[0] * inv_b;
      }
      detail::guard_finite(gen_loss, "stage2");
      opt_gen.step();
    }

    if (log && (step + 1) % 50 == 0) {
      *log << "stage2 step " << (step + 1) << "/" << c.stage2_steps << " disc_loss "
           << stats.final_disc_loss << "\n";
    }
  }
  stats.final_cos_distance = alignment_cosine_distance(m, data.test);
  stats.disc_holdout_accuracy = discriminator_holdout_accuracy(m, data.test);
  return stats;
}

// Stage 3: joint training of the captioner on translated visual consensus,
// with GASN terms continued at a reduced weight.
inline StageStats stage3_train_captioner(CgrlModel& m, const Dataset& data,
                                         std::ostream* log = nullptr) {
  const TrainConfig& c = m.config;
  std::vector<Parameter*> task_params;
  for (auto* p : paramsets::decoder(m)) task_params.push_back(p);
  if (!c.no_arp) {
    for (auto* p : paramsets::region_gcn(m)) task_params.push_back(p);
  }
  if (!c.no_og) task_params.push_back(m.w_s);
  if (!c.no_cr) {
    for (auto* p : paramsets::embeddings(m)) task_params.push_back(p);
    for (auto* p : paramsets::gcn(m.gcn_visual)) task_params.push_back(p);
    for (auto* p : paramsets::translator(m.translator)) task_params.push_back(p);
  }
  SgdOptimizer opt_task(task_params, c.stage3_lr, c.momentum);
  SgdOptimizer opt_disc(paramsets::discriminators(m), c.stage2_lr_discriminator, 0.0);

  const double lambda_n = c.no_na ? 0.0 : c.lambda_node;
  const double lambda_e = c.no_ea ? 0.0 : c.lambda_edge;
  const bool gasn_active =
      !c.no_cr && c.stage3_gasn_weight > 0.0 && (lambda_n > 0.0 || lambda_e > 0.0);

  detail::BatchSampler sampler(data.train.size(), static_cast<std::size_t>(c.batch_size),
                               Rng(child_seed(c.seed, 303)));
  StageStats stats;
  for (int step = 0; step < c.stage3_steps; ++step) {
    const auto batch = sampler.next();
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    m.store.zero_grads();
    double task_loss = 0.0;
    for (std::size_t idx : batch) {
      const ScenePair& pair = data.train[idx];
      Tape tape;
      SceneForward f = build_scene_forward(tape, m, pair);
      std::optional<ConsensusVars> consensus;
      CompleteGraphVars translated;
      if (!c.no_cr) {
        UnifiedVars u = encode_graph(tape, pair.visual, m.labels, m.gcn_visual);
        translated = translate(tape, build_complete_graph(tape, u), m.translator);
        consensus = extract_consensus(tape, translated);
      }
      TeacherForced tf = teacher_forced_pass(tape, m, pair, consensus, f);
      Var loss = tf.loss;
      if (gasn_active) {
        // Non-saturating generator terms, pushing translated graphs toward
        // the language-graph distribution while the captioner trains.
        if (lambda_n > 0.0 && c.psi_node > 0.0) {
          Var log_d = log_prob(discriminate(tape, node_concat(translated), m.disc_node));
          loss = add(loss, scale(log_d, -c.stage3_gasn_weight * lambda_n * c.psi_node));
        }
        if (lambda_e > 0.0 && c.psi_edge > 0.0) {
          Var h = edge_logistic(tape, edges_vector(translated));
          Var log_d = log_prob(discriminate(tape, h, m.disc_edge));
          loss = add(loss, scale(log_d, -c.stage3_gasn_weight * lambda_e * c.psi_edge));
        }
      }
      tape.backward(scale(loss, inv_b));
      task_loss += tape.val(tf.loss)[0] * inv_b;
    }
    detail::guard_finite(task_loss, "stage3");
    opt_task.step();
    stats.final_loss = task_loss;

    if (gasn_active) {
      m.store.zero_grads();
      double disc_loss = 0.0;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        std::size_t neg = batch[k];
        if (batch.size() >= 2) {
          const auto offset =
              1 + static_cast<std::size_t>(sampler.rng().bits() % (batch.size() - 1));
          neg = batch[(k + offset) % batch.size()];
        }
        Tape tape;
        CompleteGraphVars lang = as_constants(tape, language_graph_values(m, data.train[batch[k]]));
        CompleteGraphVars lang_neg = as_constants(tape, language_graph_values(m, data.train[neg]));
        CompleteGraphVars trans =
            as_constants(tape, translated_visual_values(m, data.train[batch[k]]));
        Var loss_n = node_alignment_loss(tape, lang, lang_neg, trans, m.disc_node, c.phi_node,
                                         c.psi_node);
        Var loss_e = edge_alignment_loss(tape, lang, lang_neg, trans, m.disc_edge, c.phi_edge,
                                         c.psi_edge);
        Var total = gasn_loss(loss_n, loss_e, lambda_n, lambda_e);
        tape.backward(scale(total, inv_b));
        disc_loss += tape.val(total)[0] * inv_b;
      }
      detail::guard_finite(disc_loss, "stage3");
      opt_disc.step(/*ascend=*/true);
    }

    ++stats.steps;
    if (log && (step + 1) % 50 == 0) {
      *log << "stage3 step " << (step + 1) << "/" << c.stage3_steps << " task_loss " << task_loss
           << "\n";
    }
  }
  return stats;
}

// Teacher-forced argmax token accuracy, language-route consensus; the stage-1
// reconstruction diagnostic.
inline double reconstruction_token_accuracy(CgrlModel& m, const std::vector<ScenePair>& pairs) {
  int correct = 0, total = 0;
  for (const ScenePair& pair : pairs) {
    Tape tape;
    SceneForward f = build_scene_forward(tape, m, pair);
    std::optional<ConsensusVars> consensus;
    if (!m.config.no_cr) consensus = consensus_from_language(tape, m, pair);
    TeacherForced tf = teacher_forced_pass(tape, m, pair, consensus, f);
    correct += tf.correct_tokens;
    total += tf.total_tokens;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---- evaluation ----

struct EvalOutput {
  MetricsReport report;
  std::vector<EvalRecord> records;
  nlohmann::ordered_json predictions;  // JSONL-ready array, one entry per scene
};

inline EvalOutput evaluate(CgrlModel& m, const Dataset& data, std::ostream* log = nullptr) {
  if (m.vocab.size() != data.vocab.size() || m.vocab.words() != data.vocab.words()) {
    throw DataError("vocabulary mismatch between checkpoint and dataset");
  }
  EvalOutput out;
  out.predictions = nlohmann::ordered_json::array();
  for (const ScenePair& pair : data.test) {
    Tape tape;
    SceneForward f = build_scene_forward(tape, m, pair);
    std::optional<ConsensusVars> consensus;
    if (!m.config.no_cr) consensus = consensus_from_visual(tape, m, pair);
    DecodeResult decoded =
        decode(tape, m.decoder, f.global_feature, consensus, f.regions, m.config.max_decode_len);

    std::vector<Tensor> region_features;
    region_features.reserve(f.regions.size());
    for (Var r : f.regions) region_features.push_back(tape.val(r));

    EvalRecord rec;
    rec.scene_id = pair.scene_id;
    rec.tokens = decoded.tokens;
    rec.references = {pair.caption};
    for (const auto& g : gold_objects(pair)) rec.gold_objects.push_back({g.cls, g.box});
    rec.gold_grounded = pair.grounding;
    for (const auto& r : pair.regions) rec.region_boxes.push_back(r.box);

    nlohmann::ordered_json pred;
    pred["scene_id"] = pair.scene_id;
    pred["tokens"] = decoded.tokens;
    auto& steps_json = pred["steps"] = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < decoded.tokens.size(); ++t) {
      EvalRecord::Step step;
      step.t = static_cast<int>(t);
      step.region_attention = decoded.region_attention[t].data;
      const int token = decoded.tokens[t];
      if (m.lexicon.is_object(token)) {
        step.word_class = m.lexicon.class_of(token);
        step.localized_region = localize_word(*step.word_class, region_features,
                                              decoded.region_attention[t], m.w_s->value);
      } else {
        std::size_t best = 0;
        const Tensor& attn = decoded.region_attention[t];
        for (std::size_t i = 1; i < attn.size(); ++i)
          if (attn.data[i] > attn.data[best]) best = i;
        step.localized_region = static_cast<int>(best);
      }
      nlohmann::ordered_json sj;
      sj["t"] = step.t;
      sj["region_attention"] = step.region_attention;
      sj["localized_region"] = step.localized_region;
      if (step.word_class) {
        sj["word_class"] = *step.word_class;
      } else {
        sj["word_class"] = nullptr;
      }
      steps_json.push_back(std::move(sj));
      rec.steps.push_back(std::move(step));
    }
    out.predictions.push_back(std::move(pred));

    // Teacher-forced trace over the gold caption for the ATT metric.
    TeacherForced tf = teacher_forced_pass(tape, m, pair, consensus, f);
    for (std::size_t t = 0; t < tf.region_attention.size(); ++t) {
      EvalRecord::Step step;
      step.t = static_cast<int>(t);
      step.region_attention = tf.region_attention[t].data;
      rec.gold_steps.push_back(std::move(step));
    }
    out.records.push_back(std::move(rec));
  }
  out.report = compute_metrics(out.records, data.lexicon, /*include_grounding_f1=*/!m.config.no_og,
                               m.config.ablation_tag());
  if (log) {
    *log << "evaluate: " << out.records.size() << " scenes, chair_i " << out.report.chair_i
         << ", recall_o " << out.report.recall_o << "\n";
  }
  return out;
}

inline void write_predictions(const nlohmann::ordered_json& predictions, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open predictions file for writing: " + path);
  for (const auto& entry : predictions) out << entry.dump() << "\n";
}

inline void write_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open report file for writing: " + path);
  out << report_json(report).dump(2) << "\n";
}

}  // namespace cgrl
