#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cgrl/autodiff.hpp"
#include "cgrl/graph_encoder.hpp"

namespace cgrl {

constexpr double kLogClamp = 1e-12;

// Three-node complete graph over the unified representation. Edge scalars
// are exp(-cos) of the endpoint nodes, hence always inside [e^-1, e].
struct CompleteGraphVars {
  Var node_o, node_a, node_r;
  Var edge_oa, edge_or, edge_ar;
};

inline Var exp_neg_cos_edge(Tape& tape, Var a, Var b) {
  (void)tape;
  return exp(neg(cosine_similarity(a, b)));
}

inline CompleteGraphVars build_complete_graph(Tape& tape, const UnifiedVars& u) {
  CompleteGraphVars g;
  g.node_o = u.u_o;
  g.node_a = u.u_a;
  g.node_r = u.u_r;
  g.edge_oa = exp_neg_cos_edge(tape, u.u_o, u.u_a);
  g.edge_or = exp_neg_cos_edge(tape, u.u_o, u.u_r);
  g.edge_ar = exp_neg_cos_edge(tape, u.u_a, u.u_r);
  return g;
}

inline Var edges_vector(const CompleteGraphVars& g) {
  return concat({g.edge_oa, g.edge_or, g.edge_ar});
}

// H(E, mu) = sigmoid(E - mu) with mu the mean of the graph's own edges.
inline Var edge_logistic(Tape& tape, Var edges) {
  (void)tape;
  return sigmoid(sub(edges, mean(edges)));
}

// Node translator V -> L. A residual two-layer tanh map:
//   T(x) = x + w2 . tanh(w1 . x + b1) + b2
// so exact-identity initialization (w2 = 0, b = 0) is the identity function.
struct TranslatorParams {
  Parameter *w1 = nullptr, *b1 = nullptr;
  Parameter *w2 = nullptr, *b2 = nullptr;
};

inline TranslatorParams make_translator(ParamStore& store, const std::string& prefix, int u,
                                        Rng& rng, double noise = 0.01) {
  const auto n = static_cast<std::size_t>(u);
  Tensor w1 = random_matrix(n, n, rng, noise);
  for (std::size_t i = 0; i < n; ++i) w1.at2(i, i) += 1.0;
  TranslatorParams p;
  p.w1 = &store.add(prefix + "/w1", std::move(w1));
  p.b1 = &store.add(prefix + "/b1", Tensor::zeros({n}));
  p.w2 = &store.add(prefix + "/w2", random_matrix(n, n, rng, noise));
  p.b2 = &store.add(prefix + "/b2", Tensor::zeros({n}));
  return p;
}

// Exact identity: the residual branch is zeroed.
inline TranslatorParams make_identity_translator(ParamStore& store, const std::string& prefix,
                                                 int u) {
  const auto n = static_cast<std::size_t>(u);
  Tensor w1 = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) w1.at2(i, i) = 1.0;
  TranslatorParams p;
  p.w1 = &store.add(prefix + "/w1", std::move(w1));
  p.b1 = &store.add(prefix + "/b1", Tensor::zeros({n}));
  p.w2 = &store.add(prefix + "/w2", Tensor::zeros({n, n}));
  p.b2 = &store.add(prefix + "/b2", Tensor::zeros({n}));
  return p;
}

inline Var translate_node(Tape& tape, Var x, const TranslatorParams& p) {
  Var hidden = tanh(add(matmul(tape.param(*p.w1), x), tape.param(*p.b1)));
  Var residual = add(matmul(tape.param(*p.w2), hidden), tape.param(*p.b2));
  return add(x, residual);
}

// Translate all three nodes and recompute edges from the translated nodes,
// preserving the exp(-cos) edge invariant on the aligned graph.
inline CompleteGraphVars translate(Tape& tape, const CompleteGraphVars& g,
                                   const TranslatorParams& p) {
  UnifiedVars u;
  u.u_o = translate_node(tape, g.node_o, p);
  u.u_a = translate_node(tape, g.node_a, p);
  u.u_r = translate_node(tape, g.node_r, p);
  u.domain = SceneGraph::Domain::kLanguage;
  return build_complete_graph(tape, u);
}

// Two-layer discriminator: affine + relu, affine, sigmoid.
struct DiscriminatorParams {
  Parameter *w1 = nullptr, *b1 = nullptr;
  Parameter *w2 = nullptr, *b2 = nullptr;
};

inline DiscriminatorParams make_discriminator(ParamStore& store, const std::string& prefix,
                                              int in_dim, int hidden, Rng& rng) {
  DiscriminatorParams p;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.w1 = &store.add(prefix + "/w1",
                    random_matrix(static_cast<std::size_t>(hidden),
                                  static_cast<std::size_t>(in_dim), rng, s1));
  p.b1 = &store.add(prefix + "/b1", Tensor::zeros({static_cast<std::size_t>(hidden)}));
  p.w2 = &store.add(prefix + "/w2", random_matrix(1, static_cast<std::size_t>(hidden), rng, s2));
  p.b2 = &store.add(prefix + "/b2", Tensor::zeros({1}));
  return p;
}

inline Var discriminate(Tape& tape, Var input, const DiscriminatorParams& p) {
  Var hidden = relu(add(matmul(tape.param(*p.w1), input), tape.param(*p.b1)));
  Var logit = add(matmul(tape.param(*p.w2), hidden), tape.param(*p.b2));
  return sigmoid(logit);
}

inline Var node_concat(const CompleteGraphVars& g) {
  return concat({g.node_o, g.node_a, g.node_r});
}

inline Var log_prob(Var p) { return log(clamp(p, kLogClamp, 1.0 - kLogClamp)); }
inline Var log_one_minus(Var p) {
  return log(clamp(sub(p.tape->constant(Tensor::scalar(1.0)), p), kLogClamp, 1.0 - kLogClamp));
}

// L(N) = log D(real) + phi * log(1 - D(corpus negative)) + psi * log(1 - D(translated)).
// Discriminators ascend this; the translator side descends the psi term.
inline Var node_alignment_loss(Tape& tape, const CompleteGraphVars& paired_language,
                               const CompleteGraphVars& negative_language,
                               const CompleteGraphVars& translated_visual,
                               const DiscriminatorParams& d_node, double phi, double psi) {
  Var term_real = log_prob(discriminate(tape, node_concat(paired_language), d_node));
  Var term_neg = log_one_minus(discriminate(tape, node_concat(negative_language), d_node));
  Var term_trans = log_one_minus(discriminate(tape, node_concat(translated_visual), d_node));
  return add(term_real, add(scale(term_neg, phi), scale(term_trans, psi)));
}

// L(E): same structure over logistic-transformed edges; every graph is
// transformed with its own mean as the midpoint.
inline Var edge_alignment_loss(Tape& tape, const CompleteGraphVars& paired_language,
                               const CompleteGraphVars& negative_language,
                               const CompleteGraphVars& translated_visual,
                               const DiscriminatorParams& d_edge, double phi, double psi) {
  Var h_real = edge_logistic(tape, edges_vector(paired_language));
  Var h_neg = edge_logistic(tape, edges_vector(negative_language));
  Var h_trans = edge_logistic(tape, edges_vector(translated_visual));
  Var term_real = log_prob(discriminate(tape, h_real, d_edge));
  Var term_neg = log_one_minus(discriminate(tape, h_neg, d_edge));
  Var term_trans = log_one_minus(discriminate(tape, h_trans, d_edge));
  return add(term_real, add(scale(term_neg, phi), scale(term_trans, psi)));
}

inline Var gasn_loss(Var loss_nodes, Var loss_edges, double lambda_n, double lambda_e) {
  return add(scale(loss_nodes, lambda_n), scale(loss_edges, lambda_e));
}

// Consensus vectors: each node concatenated with the sum of edge-weighted
// neighbours, 2u per node.
struct ConsensusVars {
  Var u_o, u_a, u_r;
};

inline ConsensusVars extract_consensus(Tape& tape, const CompleteGraphVars& g) {
  (void)tape;
  ConsensusVars c;
  c.u_o = concat({g.node_o, add(mul(g.edge_oa, g.node_a), mul(g.edge_or, g.node_r))});
  c.u_a = concat({g.node_a, add(mul(g.edge_oa, g.node_o), mul(g.edge_ar, g.node_r))});
  c.u_r = concat({g.node_r, add(mul(g.edge_or, g.node_o), mul(g.edge_ar, g.node_a))});
  return c;
}

}  // namespace cgrl
