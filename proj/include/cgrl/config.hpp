#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "cgrl/error.hpp"
#include "cgrl/synthetic_world.hpp"

namespace cgrl {

// Flat configuration for the whole pipeline: world generation, model
// dimensions, GASN weights, loss weights, per-stage schedules, ablations.
struct TrainConfig {
  WorldConfig world;

  int embed_dim = 32;      // label embedding size e
  int node_dim = 64;       // unified representation size u
  int decoder_hidden = 128;
  int word_dim = 64;
  int attn_dim = 64;
  int disc_hidden = 32;

  double lambda_node = 1.0;
  double lambda_edge = 1.0;
  double phi_node = 1.0;
  double psi_node = 1.0;
  double phi_edge = 1.0;
  double psi_edge = 1.0;

  double lambda_caption = 1.0;       // Eq 9 weight
  double lambda_region_attn = 1.0;   // Eq 10 weight
  double lambda_localization = 1.0;  // Eq 12 weight

  int stage1_steps = 300;
  double stage1_lr = 0.05;
  int stage2_steps = 600;
  double stage2_lr_generator = 0.1;
  double stage2_lr_discriminator = 0.05;
  double stage2_supervised_weight = 1.0;  // paired latent alignment strength
  int stage3_steps = 350;
  double stage3_lr = 0.05;
  double stage3_gasn_weight = 0.1;

  int batch_size = 16;
  double momentum = 0.9;
  int max_decode_len = 20;
  std::uint64_t seed = 7;
  bool region_self_term = true;

  bool no_cr = false;
  bool no_arp = false;
  bool no_og = false;
  bool no_na = false;
  bool no_ea = false;

  std::string ablation_tag() const {
    if (no_cr) return "no_cr";
    if (no_arp) return "no_arp";
    if (no_og) return "no_og";
    if (no_na) return "no_na";
    if (no_ea) return "no_ea";
    return "full";
  }
};

inline void validate(const TrainConfig& c) {
  validate(c.world);
  if (c.embed_dim < 1 || c.node_dim < 1 || c.decoder_hidden < 1 || c.word_dim < 1 ||
      c.attn_dim < 1 || c.disc_hidden < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (c.lambda_node < 0 || c.lambda_edge < 0 || c.phi_node < 0 || c.psi_node < 0 ||
      c.phi_edge < 0 || c.psi_edge < 0) {
    throw ConfigError("GASN weights must be non-negative");
  }
  if (c.stage1_lr <= 0 || c.stage2_lr_generator <= 0 || c.stage2_lr_discriminator <= 0 ||
      c.stage3_lr <= 0) {
    throw ConfigError("learning rates must be positive");
  }
  if (c.stage1_steps < 0 || c.stage2_steps < 0 || c.stage3_steps < 0) {
    throw ConfigError("step counts must be non-negative");
  }
  if (c.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (c.momentum < 0 || c.momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (c.max_decode_len < 1) throw ConfigError("max_decode_len must be positive");
  if (c.stage3_gasn_weight < 0) throw ConfigError("stage3_gasn_weight must be non-negative");
  if (c.stage2_supervised_weight < 0) {
    throw ConfigError("stage2_supervised_weight must be non-negative");
  }
}

namespace detail {

template <class T>
void read_field(const nlohmann::json& doc, const char* key, T& out) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::ordered_json config_json(const TrainConfig& c) {
  nlohmann::ordered_json doc;
  doc["n_object_classes"] = c.world.n_object_classes;
  doc["n_attribute_classes"] = c.world.n_attribute_classes;
  doc["n_relation_classes"] = c.world.n_relation_classes;
  doc["min_objects"] = c.world.min_objects;
  doc["max_objects"] = c.world.max_objects;
  doc["proposals_per_scene"] = c.world.proposals_per_scene;
  doc["feature_dim"] = c.world.feature_dim;
  doc["feature_noise"] = c.world.feature_noise;
  doc["inconsistency_rate"] = c.world.inconsistency_rate;
  doc["n_train"] = c.world.n_train;
  doc["n_test"] = c.world.n_test;
  doc["world_seed"] = c.world.seed;
  doc["attribute_prob"] = c.world.attribute_prob;
  doc["embed_dim"] = c.embed_dim;
  doc["node_dim"] = c.node_dim;
  doc["decoder_hidden"] = c.decoder_hidden;
  doc["word_dim"] = c.word_dim;
  doc["attn_dim"] = c.attn_dim;
  doc["disc_hidden"] = c.disc_hidden;
  doc["lambda_node"] = c.lambda_node;
  doc["lambda_edge"] = c.lambda_edge;
  doc["phi_node"] = c.phi_node;
  doc["psi_node"] = c.psi_node;
  doc["phi_edge"] = c.phi_edge;
  doc["psi_edge"] = c.psi_edge;
  doc["lambda_caption"] = c.lambda_caption;
  doc["lambda_region_attn"] = c.lambda_region_attn;
  doc["lambda_localization"] = c.lambda_localization;
  doc["stage1_steps"] = c.stage1_steps;
  doc["stage1_lr"] = c.stage1_lr;
  doc["stage2_steps"] = c.stage2_steps;
  doc["stage2_lr_generator"] = c.stage2_lr_generator;
  doc["stage2_lr_discriminator"] = c.stage2_lr_discriminator;
  doc["stage2_supervised_weight"] = c.stage2_supervised_weight;
  doc["stage3_steps"] = c.stage3_steps;
  doc["stage3_lr"] = c.stage3_lr;
  doc["stage3_gasn_weight"] = c.stage3_gasn_weight;
  doc["batch_size"] = c.batch_size;
  doc["momentum"] = c.momentum;
  doc["max_decode_len"] = c.max_decode_len;
  doc["seed"] = c.seed;
  doc["region_self_term"] = c.region_self_term;
  doc["no_cr"] = c.no_cr;
  doc["no_arp"] = c.no_arp;
  doc["no_og"] = c.no_og;
  doc["no_na"] = c.no_na;
  doc["no_ea"] = c.no_ea;
  return doc;
}

inline TrainConfig parse_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = [] {
    std::set<std::string> k;
    const nlohmann::ordered_json defaults = config_json(TrainConfig{});
    for (const auto& [key, value] : defaults.items()) k.insert(key);
    return k;
  }();
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key: " + key);
  }
  TrainConfig c;
  detail::read_field(doc, "n_object_classes", c.world.n_object_classes);
  detail::read_field(doc, "n_attribute_classes", c.world.n_attribute_classes);
  detail::read_field(doc, "n_relation_classes", c.world.n_relation_classes);
  detail::read_field(doc, "min_objects", c.world.min_objects);
  detail::read_field(doc, "max_objects", c.world.max_objects);
  detail::read_field(doc, "proposals_per_scene", c.world.proposals_per_scene);
  detail::read_field(doc, "feature_dim", c.world.feature_dim);
  detail::read_field(doc, "feature_noise", c.world.feature_noise);
  detail::read_field(doc, "inconsistency_rate", c.world.inconsistency_rate);
  detail::read_field(doc, "n_train", c.world.n_train);
  detail::read_field(doc, "n_test", c.world.n_test);
  detail::read_field(doc, "world_seed", c.world.seed);
  detail::read_field(doc, "attribute_prob", c.world.attribute_prob);
  detail::read_field(doc, "embed_dim", c.embed_dim);
  detail::read_field(doc, "node_dim", c.node_dim);
  detail::read_field(doc, "decoder_hidden", c.decoder_hidden);
  detail::read_field(doc, "word_dim", c.word_dim);
  detail::read_field(doc, "attn_dim", c.attn_dim);
  detail::read_field(doc, "disc_hidden", c.disc_hidden);
  detail::read_field(doc, "lambda_node", c.lambda_node);
  detail::read_field(doc, "lambda_edge", c.lambda_edge);
  detail::read_field(doc, "phi_node", c.phi_node);
  detail::read_field(doc, "psi_node", c.psi_node);
  detail::read_field(doc, "phi_edge", c.phi_edge);
  detail::read_field(doc, "psi_edge", c.psi_edge);
  detail::read_field(doc, "lambda_caption", c.lambda_caption);
  detail::read_field(doc, "lambda_region_attn", c.lambda_region_attn);
  detail::read_field(doc, "lambda_localization", c.lambda_localization);
  detail::read_field(doc, "stage1_steps", c.stage1_steps);
  detail::read_field(doc, "stage1_lr", c.stage1_lr);
  detail::read_field(doc, "stage2_steps", c.stage2_steps);
  detail::read_field(doc, "stage2_lr_generator", c.stage2_lr_generator);
  detail::read_field(doc, "stage2_lr_discriminator", c.stage2_lr_discriminator);
  detail::read_field(doc, "stage2_supervised_weight", c.stage2_supervised_weight);
  detail::read_field(doc, "stage3_steps", c.stage3_steps);
  detail::read_field(doc, "stage3_lr", c.stage3_lr);
  detail::read_field(doc, "stage3_gasn_weight", c.stage3_gasn_weight);
  detail::read_field(doc, "batch_size", c.batch_size);
  detail::read_field(doc, "momentum", c.momentum);
  detail::read_field(doc, "max_decode_len", c.max_decode_len);
  detail::read_field(doc, "seed", c.seed);
  detail::read_field(doc, "region_self_term", c.region_self_term);
  detail::read_field(doc, "no_cr", c.no_cr);
  detail::read_field(doc, "no_arp", c.no_arp);
  detail::read_field(doc, "no_og", c.no_og);
  detail::read_field(doc, "no_na", c.no_na);
  detail::read_field(doc, "no_ea", c.no_ea);
  validate(c);
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
  return parse_config(doc);
}

}  // namespace cgrl
