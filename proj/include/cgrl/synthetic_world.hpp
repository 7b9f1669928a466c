#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgrl/metrics.hpp"
#include "cgrl/region_graph.hpp"
#include "cgrl/rng.hpp"
#include "cgrl/scene_graph.hpp"

namespace cgrl {

struct WorldConfig {
  int n_object_classes = 20;
  int n_attribute_classes = 8;
  int n_relation_classes = 6;
  int min_objects = 2;
  int max_objects = 3;
  int proposals_per_scene = 7;
  int feature_dim = 64;
  double feature_noise = 0.35;
  double inconsistency_rate = 0.3;
  int n_train = 500;
  int n_test = 100;
  std::uint64_t seed = 2024;

  double canvas = 100.0;
  double attribute_prob = 0.6;
};

inline void validate(const WorldConfig& c) {
  if (c.n_object_classes < 1 || c.n_attribute_classes < 1 || c.n_relation_classes < 1) {
    throw ConfigError("world: class counts must be at least 1");
  }
  if (c.min_objects < 1 || c.max_objects < c.min_objects) {
    throw ConfigError("world: invalid objects-per-scene range");
  }
  if (c.n_object_classes < c.max_objects) {
    throw ConfigError("world: need at least max_objects distinct object classes");
  }
  if (c.proposals_per_scene < c.max_objects) {
    throw ConfigError("world: proposals_per_scene must cover one region per object");
  }
  if (c.feature_dim < 1) throw ConfigError("world: feature_dim must be positive");
  if (c.inconsistency_rate < 0.0 || c.inconsistency_rate > 1.0) {
    throw ConfigError("world: inconsistency_rate must lie in [0, 1]");
  }
  if (c.feature_noise < 0.0) throw ConfigError("world: feature_noise must be non-negative");
  if (c.n_train < 0 || c.n_test < 0) throw ConfigError("world: negative dataset size");
}

// One paired training example: region proposals, visual graph, gold caption,
// language graph, grounding annotations.
struct ScenePair {
  int scene_id = 0;
  std::vector<RegionProposal> regions;
  SceneGraph visual;
  std::vector<int> caption;
  SceneGraph language;
  std::vector<GroundingAnnotation> grounding;
  bool perturbed = false;

  bool operator==(const ScenePair& o) const {
    auto regions_eq = [&] {
      if (regions.size() != o.regions.size()) return false;
      for (std::size_t i = 0; i < regions.size(); ++i) {
        if (!(regions[i].box == o.regions[i].box) || regions[i].feature != o.regions[i].feature ||
            regions[i].cls != o.regions[i].cls) {
          return false;
        }
      }
      return true;
    };
    auto graph_eq = [](const SceneGraph& a, const SceneGraph& b) {
      return a.objects == b.objects && a.attribute_pairs == b.attribute_pairs &&
             a.relation_triplets == b.relation_triplets && a.domain == b.domain;
    };
    auto grounding_eq = [&] {
      if (grounding.size() != o.grounding.size()) return false;
      for (std::size_t i = 0; i < grounding.size(); ++i) {
        if (grounding[i].t != o.grounding[i].t || grounding[i].cls != o.grounding[i].cls ||
            !(grounding[i].box == o.grounding[i].box)) {
          return false;
        }
      }
      return true;
    };
    return scene_id == o.scene_id && regions_eq() && graph_eq(visual, o.visual) &&
           caption == o.caption && graph_eq(language, o.language) && grounding_eq() &&
           perturbed == o.perturbed;
  }
};

namespace words {

inline const std::vector<std::string>& nouns() {
  static const std::vector<std::string> v = {
      "dog",  "cat",  "car",   "tree", "ball", "chair", "bird", "horse", "cup",  "book",
      "hat",  "fish", "lamp",  "shoe", "bear", "kite",  "duck", "sofa",  "cake", "bike"};
  return v;
}

inline const std::vector<std::string>& adjectives() {
  static const std::vector<std::string> v = {"red",     "blue",  "small", "large",
                                             "striped", "shiny", "old",   "round"};
  return v;
}

inline const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v = {"holds", "rides", "chases", "touches", "carries",
                                             "faces"};
  return v;
}

inline std::string object_word(int cls) {
  const auto& list = nouns();
  if (cls < static_cast<int>(list.size())) return list[static_cast<std::size_t>(cls)];
  return "object" + std::to_string(cls);
}

inline std::string attribute_word(int cls) {
  const auto& list = adjectives();
  if (cls < static_cast<int>(list.size())) return list[static_cast<std::size_t>(cls)];
  return "attr" + std::to_string(cls);
}

inline std::string relation_word(int cls) {
  const auto& list = verbs();
  if (cls < static_cast<int>(list.size())) return list[static_cast<std::size_t>(cls)];
  return "rel" + std::to_string(cls);
}

}  // namespace words

// Shared token table: reserved ids, "the", then object, attribute and
// relation words in class order.
inline Vocabulary build_vocabulary(const WorldConfig& c) {
  Vocabulary vocab;
  vocab.add("the");
  for (int i = 0; i < c.n_object_classes; ++i) vocab.add(words::object_word(i));
  for (int i = 0; i < c.n_attribute_classes; ++i) vocab.add(words::attribute_word(i));
  for (int i = 0; i < c.n_relation_classes; ++i) vocab.add(words::relation_word(i));
  return vocab;
}

inline ObjectLexicon build_lexicon(const WorldConfig& c, const Vocabulary& vocab) {
  ObjectLexicon lex;
  for (int i = 0; i < c.n_object_classes; ++i) {
    lex.token_to_class[vocab.id(words::object_word(i))] = i;
  }
  return lex;
}

// Class prototype features: unit-normalized Gaussian vectors drawn once per
// world seed.
inline std::vector<std::vector<double>> class_prototypes(const WorldConfig& c) {
  Rng rng(child_seed(c.seed, 0xfea7));
  std::vector<std::vector<double>> protos;
  protos.reserve(static_cast<std::size_t>(c.n_object_classes));
  for (int cls = 0; cls < c.n_object_classes; ++cls) {
    std::vector<double> v(static_cast<std::size_t>(c.feature_dim));
    double norm2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    protos.push_back(std::move(v));
  }
  return protos;
}

namespace detail {

inline std::vector<double> noisy_feature(const std::vector<double>& proto, double sigma,
                                         Rng& rng) {
  std::vector<double> f = proto;
  for (double& x : f) x += sigma * rng.normal();
  return f;
}

inline Box random_box(const WorldConfig& c, Rng& rng) {
  const double w = rng.uniform(18.0, 30.0);
  const double h = rng.uniform(18.0, 30.0);
  return {rng.uniform(0.0, c.canvas - w), rng.uniform(0.0, c.canvas - h), w, h};
}

// A box overlapping every listed box below the threshold.
inline Box place_clear_box(const WorldConfig& c, const std::vector<Box>& taken, double max_iou,
                           Rng& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Box b = random_box(c, rng);
    bool ok = true;
    for (const Box& t : taken) {
      if (iou(b, t) >= max_iou) {
        ok = false;
        break;
      }
    }
    if (ok) return b;
  }
  throw DataError("impossible geometry: cannot place enough non-overlapping boxes");
}

// Jittered copy with IoU above 0.55 against the original.
inline Box jitter_box(const WorldConfig& c, const Box& b, Rng& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Box j = b;
    j.x += rng.uniform(-0.12, 0.12) * b.w;
    j.y += rng.uniform(-0.12, 0.12) * b.h;
    j.w *= rng.uniform(0.9, 1.1);
    j.h *= rng.uniform(0.9, 1.1);
    j.x = std::clamp(j.x, 0.0, c.canvas - j.w);
    j.y = std::clamp(j.y, 0.0, c.canvas - j.h);
    if (iou(j, b) > 0.55) return j;
  }
  throw DataError("impossible geometry: jittered proposal never overlaps enough");
}

}  // namespace detail

// Latent scene -> paired example. Proposal layout: the exact gold box of each
// object first (carrying its class), then one jittered near-duplicate per
// object, then one far same-class confuser and background baits while slots
// remain; only detections of real objects carry a class label.
inline ScenePair generate_scene(const WorldConfig& c,
                                const std::vector<std::vector<double>>& protos,
                                const Vocabulary& vocab, int scene_id) {
  Rng rng(child_seed(c.seed, 0x5ce0 + static_cast<std::uint64_t>(scene_id)));
  ScenePair pair;
  pair.scene_id = scene_id;

  const int n_obj = rng.uniform_int(c.min_objects, c.max_objects);
  std::vector<int> classes;
  while (static_cast<int>(classes.size()) < n_obj) {
    const int cls = rng.uniform_int(0, c.n_object_classes - 1);
    if (std::find(classes.begin(), classes.end(), cls) == classes.end()) classes.push_back(cls);
  }
  std::vector<Box> gold_boxes;
  for (int i = 0; i < n_obj; ++i) {
    gold_boxes.push_back(detail::place_clear_box(c, gold_boxes, 0.25, rng));
  }
  std::vector<std::optional<int>> attrs(static_cast<std::size_t>(n_obj));
  for (auto& a : attrs) {
    if (rng.bernoulli(c.attribute_prob)) a = rng.uniform_int(0, c.n_attribute_classes - 1);
  }

  // Latent relations: a chain over scene objects with random directions.
  pair.visual.domain = SceneGraph::Domain::kVisual;
  pair.visual.objects = classes;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (attrs[i]) pair.visual.attribute_pairs.emplace_back(static_cast<int>(i), *attrs[i]);
  }
  std::vector<SceneGraph::Triplet> relations;
  for (int i = 0; i + 1 < n_obj; ++i) {
    SceneGraph::Triplet tr;
    const bool forward = rng.bernoulli(0.5);
    tr.subject = forward ? i : i + 1;
    tr.object = forward ? i + 1 : i;
    tr.relation = rng.uniform_int(0, c.n_relation_classes - 1);
    relations.push_back(tr);
  }
  pair.visual.relation_triplets = relations;

  // Proposals.
  for (int i = 0; i < n_obj; ++i) {
    pair.regions.push_back({gold_boxes[static_cast<std::size_t>(i)],
                            detail::noisy_feature(protos[static_cast<std::size_t>(classes[static_cast<std::size_t>(i)])],
                                                  c.feature_noise, rng),
                            classes[static_cast<std::size_t>(i)]});
  }
  int extras = c.proposals_per_scene - n_obj;
  for (int i = 0; i < n_obj && extras > 0; ++i, --extras) {
    Box near = detail::jitter_box(c, gold_boxes[static_cast<std::size_t>(i)], rng);
    pair.regions.push_back({near,
                            detail::noisy_feature(protos[static_cast<std::size_t>(classes[static_cast<std::size_t>(i)])],
                                                  c.feature_noise, rng),
                            classes[static_cast<std::size_t>(i)]});
  }
  if (extras > 0) {
    // Far confuser: the feature of a real object somewhere it is not.
    const int target = rng.uniform_int(0, n_obj - 1);
    Box far_box = detail::place_clear_box(c, gold_boxes, 0.3, rng);
    pair.regions.push_back({far_box,
                            detail::noisy_feature(protos[static_cast<std::size_t>(classes[static_cast<std::size_t>(target)])],
                                                  c.feature_noise, rng),
                            std::nullopt});
    --extras;
  }
  while (extras > 0) {
    // Background bait: a plausible-looking feature of a class not in the scene.
    int bait_cls = rng.uniform_int(0, c.n_object_classes - 1);
    while (std::find(classes.begin(), classes.end(), bait_cls) != classes.end()) {
      bait_cls = rng.uniform_int(0, c.n_object_classes - 1);
    }
    Box bait_box = detail::place_clear_box(c, gold_boxes, 0.3, rng);
    pair.regions.push_back({bait_box,
                            detail::noisy_feature(protos[static_cast<std::size_t>(bait_cls)],
                                                  c.feature_noise, rng),
                            std::nullopt});
    --extras;
  }

  // Caption verbalizes the first relation:
  //   the [attr] <subject> <relation> the [attr] <object>
  const SceneGraph::Triplet& spoken = relations.front();
  auto push_np = [&](int obj_index) {
    pair.caption.push_back(vocab.id("the"));
    if (attrs[static_cast<std::size_t>(obj_index)]) {
      pair.caption.push_back(
          vocab.id(words::attribute_word(*attrs[static_cast<std::size_t>(obj_index)])));
    }
    const int t = static_cast<int>(pair.caption.size());
    pair.caption.push_back(
        vocab.id(words::object_word(classes[static_cast<std::size_t>(obj_index)])));
    pair.grounding.push_back({t, classes[static_cast<std::size_t>(obj_index)],
                              gold_boxes[static_cast<std::size_t>(obj_index)]});
  };
  push_np(spoken.subject);
  pair.caption.push_back(vocab.id(words::relation_word(spoken.relation)));
  push_np(spoken.object);

  // Language graph: exactly the caption's facts, mention order.
  pair.language.domain = SceneGraph::Domain::kLanguage;
  pair.language.objects = {classes[static_cast<std::size_t>(spoken.subject)],
                           classes[static_cast<std::size_t>(spoken.object)]};
  if (attrs[static_cast<std::size_t>(spoken.subject)]) {
    pair.language.attribute_pairs.emplace_back(0, *attrs[static_cast<std::size_t>(spoken.subject)]);
  }
  if (attrs[static_cast<std::size_t>(spoken.object)]) {
    pair.language.attribute_pairs.emplace_back(1, *attrs[static_cast<std::size_t>(spoken.object)]);
  }
  pair.language.relation_triplets.push_back({0, spoken.relation, 1});

  validate(pair.visual);
  validate(pair.language);
  return pair;
}

// With probability `rate`, perturb the visual side of the pair: swap a
// relation label, drop an attribute, or add a distractor object with a
// region. The caption, gold boxes and grounding stay untouched.
inline ScenePair inject_inconsistency(ScenePair pair, const WorldConfig& c, double rate,
                                      std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("inconsistency rate must lie in [0, 1]");
  Rng rng(child_seed(seed, 0xd15c + static_cast<std::uint64_t>(pair.scene_id)));
  if (!rng.bernoulli(rate)) return pair;

  enum Kind { kSwapRelation = 0, kDropAttribute = 1, kAddDistractor = 2 };
  int kind = rng.uniform_int(0, 2);
  if (kind == kSwapRelation && pair.visual.relation_triplets.empty()) kind = kAddDistractor;
  if (kind == kDropAttribute && pair.visual.attribute_pairs.empty()) kind = kAddDistractor;

  if (kind == kSwapRelation) {
    auto& tr = pair.visual.relation_triplets[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(pair.visual.relation_triplets.size()) - 1))];
    int label = rng.uniform_int(0, c.n_relation_classes - 1);
    if (c.n_relation_classes > 1) {
      while (label == tr.relation) label = rng.uniform_int(0, c.n_relation_classes - 1);
    }
    tr.relation = label;
  } else if (kind == kDropAttribute) {
    const int victim =
        rng.uniform_int(0, static_cast<int>(pair.visual.attribute_pairs.size()) - 1);
    pair.visual.attribute_pairs.erase(pair.visual.attribute_pairs.begin() + victim);
  } else {
    int distractor = rng.uniform_int(0, c.n_object_classes - 1);
    for (int attempt = 0; attempt < c.n_object_classes; ++attempt) {
      if (std::find(pair.visual.objects.begin(), pair.visual.objects.end(), distractor) ==
          pair.visual.objects.end()) {
        break;
      }
      distractor = rng.uniform_int(0, c.n_object_classes - 1);
    }
    pair.visual.objects.push_back(distractor);
    std::vector<Box> taken;
    for (const auto& r : pair.regions) taken.push_back(r.box);
    const auto protos = class_prototypes(c);
    pair.regions.push_back({detail::place_clear_box(c, taken, 0.3, rng),
                            detail::noisy_feature(protos[static_cast<std::size_t>(distractor)],
                                                  c.feature_noise, rng),
                            std::nullopt});
  }
  pair.perturbed = true;
  validate(pair.visual);
  return pair;
}

// Gold object set: distinct classes of labeled detections, keyed to the first
// (exact) region box of each class.
inline std::vector<EvalRecord::GoldObject> gold_objects(const ScenePair& pair) {
  std::vector<EvalRecord::GoldObject> out;
  std::set<int> seen;
  for (const auto& r : pair.regions) {
    if (r.cls && !seen.count(*r.cls)) {
      out.push_back({*r.cls, r.box});
      seen.insert(*r.cls);
    }
  }
  return out;
}

// Generation-time audit: every caption object word names a class present in
// the scene's labeled detections, so a perfect model could reach CHAIR_i = 0.
inline void audit_pair(const ScenePair& pair, const ObjectLexicon& lexicon) {
  std::set<int> detected;
  for (const auto& r : pair.regions) {
    if (r.cls) detected.insert(*r.cls);
  }
  for (int tok : pair.caption) {
    if (lexicon.is_object(tok) && !detected.count(lexicon.class_of(tok))) {
      throw DataError("audit: caption names class " +
                      std::to_string(lexicon.class_of(tok)) + " absent from scene " +
                      std::to_string(pair.scene_id));
    }
  }
  for (const auto& g : pair.grounding) {
    check_box(g.box);
    if (g.t < 0 || static_cast<std::size_t>(g.t) >= pair.caption.size()) {
      throw DataError("audit: grounding timestep out of caption range");
    }
  }
}

inline std::vector<ScenePair> generate_world(const WorldConfig& c) {
  validate(c);
  const auto protos = class_prototypes(c);
  const Vocabulary vocab = build_vocabulary(c);
  const ObjectLexicon lexicon = build_lexicon(c, vocab);
  std::vector<ScenePair> out;
  const int total = c.n_train + c.n_test;
  out.reserve(static_cast<std::size_t>(total));
  for (int id = 0; id < total; ++id) {
    ScenePair pair = generate_scene(c, protos, vocab, id);
    pair = inject_inconsistency(std::move(pair), c, c.inconsistency_rate, c.seed);
    audit_pair(pair, lexicon);
    out.push_back(std::move(pair));
  }
  return out;
}

// ---- JSONL round trip ----

inline nlohmann::json scene_pair_json(const ScenePair& pair) {
  nlohmann::json doc;
  doc["scene_id"] = pair.scene_id;
  auto& regions = doc["regions"] = nlohmann::json::array();
  for (const auto& r : pair.regions) {
    nlohmann::json rj;
    rj["box"] = {r.box.x, r.box.y, r.box.w, r.box.h};
    rj["feature"] = r.feature;
    if (r.cls) {
      rj["class"] = *r.cls;
    } else {
      rj["class"] = nullptr;
    }
    regions.push_back(std::move(rj));
  }
  doc["visual_graph"] = scene_graph_json(pair.visual);
  doc["caption"] = pair.caption;
  doc["language_graph"] = scene_graph_json(pair.language);
  auto& grounding = doc["grounding"] = nlohmann::json::array();
  for (const auto& g : pair.grounding) {
    grounding.push_back({{"t", g.t},
                         {"class", g.cls},
                         {"box", {g.box.x, g.box.y, g.box.w, g.box.h}}});
  }
  doc["perturbed"] = pair.perturbed;
  return doc;
}

inline ScenePair parse_scene_pair(const nlohmann::json& doc) {
  ScenePair pair;
  try {
    pair.scene_id = doc.at("scene_id").get<int>();
    for (const auto& rj : doc.at("regions")) {
      RegionProposal r;
      const auto& b = rj.at("box");
      r.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
               b.at(3).get<double>()};
      r.feature = rj.at("feature").get<std::vector<double>>();
      if (!rj.at("class").is_null()) r.cls = rj.at("class").get<int>();
      check_box(r.box);
      pair.regions.push_back(std::move(r));
    }
    pair.visual = parse_scene_graph(doc.at("visual_graph"), SceneGraph::Domain::kVisual);
    pair.caption = doc.at("caption").get<std::vector<int>>();
    pair.language = parse_scene_graph(doc.at("language_graph"), SceneGraph::Domain::kLanguage);
    for (const auto& gj : doc.at("grounding")) {
      GroundingAnnotation g;
      g.t = gj.at("t").get<int>();
      g.cls = gj.at("class").get<int>();
      const auto& b = gj.at("box");
      g.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
               b.at(3).get<double>()};
      pair.grounding.push_back(g);
    }
    pair.perturbed = doc.at("perturbed").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scene pair schema violation: ") + e.what());
  }
  return pair;
}

inline void serialize(const std::vector<ScenePair>& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& pair : dataset) {
    out << scene_pair_json(pair).dump() << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

inline std::vector<ScenePair> load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open for reading: " + path);
  std::vector<ScenePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON line");
    }
    try {
      out.push_back(parse_scene_pair(doc));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace cgrl
