#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "cgrl/autodiff.hpp"
#include "cgrl/consensus.hpp"
#include "cgrl/region_graph.hpp"

namespace cgrl {

// One grounded word of a gold caption: decoding timestep, object class,
// gold box.
struct GroundingAnnotation {
  int t = 0;
  int cls = 0;
  Box box;
};

// Positive-region indicators for one grounded timestep. rho_i = 1 iff the
// region overlaps the gold box with IoU strictly over 0.5; gamma is rho
// normalized to sum to 1. No positive region at all leaves gamma empty and
// the timestep is skipped by the losses.
struct Indicators {
  std::vector<double> gamma;
  bool any = false;
};

inline Indicators region_indicators(std::span<const RegionProposal> regions, const Box& gold) {
  Indicators ind;
  ind.gamma.assign(regions.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (iou(regions[i].box, gold) > 0.5) {
      ind.gamma[i] = 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0) {
    for (double& g : ind.gamma) g /= total;
    ind.any = true;
  } else {
    ind.gamma.clear();
  }
  return ind;
}

// L(R) = -lambda_R * sum over grounded timesteps of sum_i gamma_i log a_i.
inline Var region_attention_loss(Tape& tape,
                                 const std::vector<std::pair<Var, const Indicators*>>& steps,
                                 double lambda_region) {
  std::optional<Var> acc;
  for (const auto& [attn, ind] : steps) {
    if (!ind->any) continue;
    Var log_attn = log(clamp(attn, kLogClamp, 1.0));
    Var gamma = tape.constant(Tensor::vec(ind->gamma));
    Var term = sum(mul(gamma, log_attn));
    acc = acc ? add(*acc, term) : term;
  }
  if (!acc) return tape.constant(Tensor::scalar(0.0));
  return scale(*acc, -lambda_region);
}

// p^s(r, a^r) = softmax(W_s r + a^r), the treating attention entering as a
// per-region scalar bias on every class logit.
inline Var region_class_similarity(Tape& tape, Var region_feature, Var attention_scalar,
                                   Parameter& w_s) {
  Var logits = matmul(tape.param(w_s), region_feature);
  return softmax(add(logits, attention_scalar));
}

// L(L) = -lambda * sum_i gamma_i log p^s(r_i)[cls].
inline Var localization_loss(Tape& tape, const std::vector<Var>& region_features,
                             Var attention_row, const Indicators& ind, int cls, Parameter& w_s,
                             double lambda_localization) {
  if (!ind.any) return tape.constant(Tensor::scalar(0.0));
  const int n_classes = static_cast<int>(w_s.value.shape[0]);
  if (cls < 0 || cls >= n_classes) {
    throw DataError("localization_loss: class " + std::to_string(cls) + " out of range");
  }
  std::optional<Var> acc;
  for (std::size_t i = 0; i < region_features.size(); ++i) {
    if (ind.gamma[i] == 0.0) continue;
    Var probs = region_class_similarity(tape, region_features[i], element(attention_row, i), w_s);
    Var log_p = log(clamp(element(probs, static_cast<std::size_t>(cls)), kLogClamp, 1.0));
    Var term = scale(log_p, ind.gamma[i]);
    acc = acc ? add(*acc, term) : term;
  }
  return scale(*acc, -lambda_localization);
}

// Plain-value decode-time localization: argmax over regions of the gold-class
// probability, ties to the lowest index.
inline int localize_word(int cls, const std::vector<Tensor>& region_features,
                         const Tensor& attention_row, const Tensor& w_s) {
  if (region_features.empty()) throw DataError("localize_word: empty region list");
  const std::size_t n_classes = w_s.shape[0];
  const std::size_t d = w_s.shape[1];
  if (cls < 0 || static_cast<std::size_t>(cls) >= n_classes) {
    throw DataError("localize_word: class " + std::to_string(cls) + " out of range");
  }
  int best = 0;
  double best_p = -1.0;
  for (std::size_t i = 0; i < region_features.size(); ++i) {
    const Tensor& f = region_features[i];
    double mx = -1e300;
    std::vector<double> logits(n_classes, 0.0);
    for (std::size_t c = 0; c < n_classes; ++c) {
      double z = 0.0;
      for (std::size_t k = 0; k < d; ++k) z += w_s.at2(c, k) * f[k];
      z += attention_row[i];
      logits[c] = z;
      mx = std::max(mx, z);
    }
    double denom = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) denom += std::exp(logits[c] - mx);
    const double p = std::exp(logits[static_cast<std::size_t>(cls)] - mx) / denom;
    if (p > best_p) {
      best_p = p;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace cgrl
