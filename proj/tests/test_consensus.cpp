#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cgrl/consensus.hpp"
#include "cgrl/rng.hpp"

using namespace cgrl;

namespace {

constexpr int kU = 4;

UnifiedVars toy_unified(Tape& tape, const std::vector<double>& o, const std::vector<double>& a,
                        const std::vector<double>& r) {
  UnifiedVars u;
  u.u_o = tape.constant(Tensor::vec(o));
  u.u_a = tape.constant(Tensor::vec(a));
  u.u_r = tape.constant(Tensor::vec(r));
  return u;
}

// Plain-double oracle pieces.
double oracle_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> oracle_translate(const TranslatorParams& p, const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> hidden(n, 0.0), out = x;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = p.b1->value[i];
    for (std::size_t j = 0; j < n; ++j) acc += p.w1->value.at2(i, j) * x[j];
    hidden[i] = std::tanh(acc);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double acc = p.b2->value[i];
    for (std::size_t j = 0; j < n; ++j) acc += p.w2->value.at2(i, j) * hidden[j];
    out[i] += acc;
  }
  return out;
}

double oracle_discriminate(const DiscriminatorParams& d, const std::vector<double>& x) {
  const std::size_t h = d.b1->value.size();
  std::vector<double> hidden(h, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    double acc = d.b1->value[i];
    for (std::size_t j = 0; j < x.size(); ++j) acc += d.w1->value.at2(i, j) * x[j];
    hidden[i] = std::max(0.0, acc);
  }
  double logit = d.b2->value[0];
  for (std::size_t j = 0; j < h; ++j) logit += d.w2->value.at2(0, j) * hidden[j];
  return 1.0 / (1.0 + std::exp(-logit));
}

}  // namespace

TEST_CASE("complete-graph edge spot values") {
  Tape tape;
  const std::vector<double> v = {0.4, -0.2, 0.9, 0.0};
  const std::vector<double> ortho_a = {1.0, 0.0, 0.0, 0.0};
  const std::vector<double> ortho_b = {0.0, 1.0, 0.0, 0.0};
  std::vector<double> neg = v;
  for (double& x : neg) x = -x;

  // Identical nodes: cos = 1 so the edge is exp(-1).
  UnifiedVars same = toy_unified(tape, v, v, v);
  CompleteGraphVars g1 = build_complete_graph(tape, same);
  REQUIRE(tape.val(g1.edge_oa)[0] == Catch::Approx(std::exp(-1.0)).margin(1e-9));

  // Orthogonal nodes: edge is exactly 1.
  UnifiedVars orth = toy_unified(tape, ortho_a, ortho_b, v);
  REQUIRE(tape.val(build_complete_graph(tape, orth).edge_oa)[0] ==
          Catch::Approx(1.0).margin(1e-12));

  // Opposite nodes: edge is e.
  UnifiedVars opp = toy_unified(tape, v, neg, v);
  REQUIRE(tape.val(build_complete_graph(tape, opp).edge_oa)[0] ==
          Catch::Approx(std::exp(1.0)).margin(1e-9));
}

TEST_CASE("edge values always lie in [1/e, e]") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    Tape tape;
    UnifiedVars u = toy_unified(tape, random_vector(kU, rng, 3.0).data,
                                random_vector(kU, rng, 3.0).data,
                                random_vector(kU, rng, 3.0).data);
    CompleteGraphVars g = build_complete_graph(tape, u);
    for (Var e : {g.edge_oa, g.edge_or, g.edge_ar}) {
      REQUIRE(tape.val(e)[0] >= std::exp(-1.0) - 1e-12);
      REQUIRE(tape.val(e)[0] <= std::exp(1.0) + 1e-12);
    }
  }
}

TEST_CASE("edge logistic midpoint identities") {
  Tape tape;
  // Uniform edges transform to exactly one half.
  Var uniform = tape.constant(Tensor::vec({0.8, 0.8, 0.8}));
  Var h = edge_logistic(tape, uniform);
  for (int i = 0; i < 3; ++i) REQUIRE(tape.val(h)[i] == Catch::Approx(0.5).margin(1e-12));

  // An edge ln 3 above the mean maps to 0.75... relative to its own mean.
  // Construct edges with mean mu and one entry mu + ln 3.
  const double mu = 1.0;
  const double x = mu + std::log(3.0);
  // Mean of {a, b, x} must be mu: choose a = b = (3 mu - x) / 2.
  const double ab = (3.0 * mu - x) / 2.0;
  Var edges = tape.constant(Tensor::vec({ab, ab, x}));
  Var h2 = edge_logistic(tape, edges);
  REQUIRE(tape.val(h2)[2] == Catch::Approx(0.75).margin(1e-12));
  // Transformed edges stay strictly inside (0, 1).
  for (int i = 0; i < 3; ++i) {
    REQUIRE(tape.val(h2)[i] > 0.0);
    REQUIRE(tape.val(h2)[i] < 1.0);
  }
}

TEST_CASE("identity-initialized translator is the identity bitwise") {
  ParamStore store;
  TranslatorParams t = make_identity_translator(store, "gasn/translator", kU);
  Tape tape;
  UnifiedVars u = toy_unified(tape, {0.1, -0.7, 0.3, 2.0}, {1.0, 0.0, -1.0, 0.5},
                              {0.0, 0.25, 0.5, 0.75});
  CompleteGraphVars g = build_complete_graph(tape, u);
  CompleteGraphVars gt = translate(tape, g, t);
  for (auto [orig, trans] : {std::pair{g.node_o, gt.node_o}, {g.node_a, gt.node_a},
                             {g.node_r, gt.node_r}}) {
    for (std::size_t k = 0; k < static_cast<std::size_t>(kU); ++k) {
      REQUIRE(std::memcmp(&tape.val(orig).data[k], &tape.val(trans).data[k], sizeof(double)) ==
              0);
    }
  }
}

TEST_CASE("translated edges obey the exp(-cos) invariant") {
  ParamStore store;
  Rng rng(31);
  TranslatorParams t = make_translator(store, "gasn/translator", kU, rng);
  Tape tape;
  UnifiedVars u = toy_unified(tape, {0.5, 0.1, -0.3, 0.9}, {0.2, 0.2, 0.7, -1.0},
                              {-0.4, 0.6, 0.0, 0.3});
  CompleteGraphVars gt = translate(tape, build_complete_graph(tape, u), t);
  const std::vector<double> to(tape.val(gt.node_o).data.begin(), tape.val(gt.node_o).data.end());
  const std::vector<double> ta(tape.val(gt.node_a).data.begin(), tape.val(gt.node_a).data.end());
  REQUIRE(tape.val(gt.edge_oa)[0] == Catch::Approx(std::exp(-oracle_cos(to, ta))).margin(1e-12));
}

TEST_CASE("translator output matches the scripted node map") {
  ParamStore store;
  Rng rng(37);
  TranslatorParams t = make_translator(store, "gasn/translator", kU, rng, 0.3);
  Tape tape;
  Var x = tape.constant(Tensor::vec({0.7, -0.1, 0.4, -0.8}));
  Var y = translate_node(tape, x, t);
  const std::vector<double> expected = oracle_translate(t, {0.7, -0.1, 0.4, -0.8});
  for (std::size_t k = 0; k < expected.size(); ++k) {
    REQUIRE(tape.val(y)[k] == Catch::Approx(expected[k]).margin(1e-12));
  }
}

TEST_CASE("constant-half discriminator gives 3 ln(1/2)") {
  // D == 0.5 at zero logits: zero weights and biases.
  ParamStore store;
  DiscriminatorParams d;
  d.w1 = &store.add("d/w1", Tensor::zeros({4, static_cast<std::size_t>(3 * kU)}));
  d.b1 = &store.add("d/b1", Tensor::zeros({4}));
  d.w2 = &store.add("d/w2", Tensor::zeros({1, 4}));
  d.b2 = &store.add("d/b2", Tensor::zeros({1}));

  Tape tape;
  UnifiedVars u1 = toy_unified(tape, {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0});
  UnifiedVars u2 = toy_unified(tape, {0, 1, 1, 0}, {1, 0, 0, 1}, {1, 1, 0, 0});
  UnifiedVars u3 = toy_unified(tape, {0.5, 0.5, 0, 0}, {0, 0, 0.5, 0.5}, {0.5, 0, 0.5, 0});
  CompleteGraphVars g1 = build_complete_graph(tape, u1);
  CompleteGraphVars g2 = build_complete_graph(tape, u2);
  CompleteGraphVars g3 = build_complete_graph(tape, u3);

  Var loss = node_alignment_loss(tape, g1, g2, g3, d, 1.0, 1.0);
  REQUIRE(tape.val(loss)[0] == Catch::Approx(3.0 * std::log(0.5)).margin(1e-9));

  // psi = 0 removes the translated term.
  Var loss_no_psi = node_alignment_loss(tape, g1, g2, g3, d, 1.0, 0.0);
  REQUIRE(tape.val(loss_no_psi)[0] == Catch::Approx(2.0 * std::log(0.5)).margin(1e-9));

  // Edge loss with the same constant discriminator.
  ParamStore store_e;
  DiscriminatorParams de;
  de.w1 = &store_e.add("d/w1", Tensor::zeros({4, 3}));
  de.b1 = &store_e.add("d/b1", Tensor::zeros({4}));
  de.w2 = &store_e.add("d/w2", Tensor::zeros({1, 4}));
  de.b2 = &store_e.add("d/b2", Tensor::zeros({1}));
  Var eloss = edge_alignment_loss(tape, g1, g2, g3, de, 1.0, 1.0);
  REQUIRE(tape.val(eloss)[0] == Catch::Approx(3.0 * std::log(0.5)).margin(1e-9));
}

TEST_CASE("alignment losses match the scripted Eq evaluation") {
  ParamStore store;
  Rng rng(41);
  DiscriminatorParams dn = make_discriminator(store, "dn", 3 * kU, 5, rng);
  DiscriminatorParams de = make_discriminator(store, "de", 3, 5, rng);
  const double phi = 0.7, psi = 1.3;

  Tape tape;
  UnifiedVars u1 = toy_unified(tape, {0.3, 0.4, -0.2, 1.0}, {0.9, -0.5, 0.2, 0.1},
                               {-0.6, 0.8, 0.3, -0.4});
  UnifiedVars u2 = toy_unified(tape, {1.1, 0.2, 0.5, -0.9}, {0.4, 0.4, -0.1, 0.6},
                               {0.2, -0.3, 0.9, 0.8});
  UnifiedVars u3 = toy_unified(tape, {-0.2, 0.6, 0.1, 0.4}, {0.5, 0.9, -0.7, 0.2},
                               {0.1, 0.1, 0.4, -0.5});
  CompleteGraphVars real = build_complete_graph(tape, u1);
  CompleteGraphVars negative = build_complete_graph(tape, u2);
  CompleteGraphVars translated = build_complete_graph(tape, u3);

  auto nodes_of = [&](const CompleteGraphVars& g) {
    std::vector<double> v;
    for (Var n : {g.node_o, g.node_a, g.node_r}) {
      v.insert(v.end(), tape.val(n).data.begin(), tape.val(n).data.end());
    }
    return v;
  };
  const double expected_n = std::log(oracle_discriminate(dn, nodes_of(real))) +
                            phi * std::log(1.0 - oracle_discriminate(dn, nodes_of(negative))) +
                            psi * std::log(1.0 - oracle_discriminate(dn, nodes_of(translated)));
  Var loss_n = node_alignment_loss(tape, real, negative, translated, dn, phi, psi);
  REQUIRE(tape.val(loss_n)[0] == Catch::Approx(expected_n).margin(1e-9));

  auto h_edges = [&](const CompleteGraphVars& g) {
    std::vector<double> e = {tape.val(g.edge_oa)[0], tape.val(g.edge_or)[0],
                             tape.val(g.edge_ar)[0]};
    const double mu = (e[0] + e[1] + e[2]) / 3.0;
    for (double& x : e) x = 1.0 / (1.0 + std::exp(-(x - mu)));
    return e;
  };
  const double expected_e = std::log(oracle_discriminate(de, h_edges(real))) +
                            phi * std::log(1.0 - oracle_discriminate(de, h_edges(negative))) +
                            psi * std::log(1.0 - oracle_discriminate(de, h_edges(translated)));
  Var loss_e = edge_alignment_loss(tape, real, negative, translated, de, phi, psi);
  REQUIRE(tape.val(loss_e)[0] == Catch::Approx(expected_e).margin(1e-9));

  // Eq 5 composition and the single-sided ablations.
  Var total = gasn_loss(loss_n, loss_e, 1.0, 1.0);
  REQUIRE(tape.val(total)[0] ==
          Catch::Approx(tape.val(loss_n)[0] + tape.val(loss_e)[0]).margin(1e-12));
  REQUIRE(tape.val(gasn_loss(loss_n, loss_e, 1.0, 0.0))[0] ==
          Catch::Approx(tape.val(loss_n)[0]).margin(1e-12));
  REQUIRE(tape.val(gasn_loss(loss_n, loss_e, 0.0, 1.0))[0] ==
          Catch::Approx(tape.val(loss_e)[0]).margin(1e-12));
}

TEST_CASE("weighted-sum spot value of Eq 5") {
  Tape tape;
  Var ln = tape.constant(Tensor::scalar(-2.0));
  Var le = tape.constant(Tensor::scalar(-3.0));
  REQUIRE(tape.val(gasn_loss(ln, le, 1.0, 1.0))[0] == -5.0);
}

TEST_CASE("extract_consensus composes node and edge-weighted neighbours") {
  Tape tape;
  UnifiedVars u = toy_unified(tape, {1, 0, 0, 0}, {0, 2, 0, 0}, {0, 0, 3, 0});
  CompleteGraphVars g = build_complete_graph(tape, u);

  SECTION("unit edges sum the neighbours") {
    CompleteGraphVars unit = g;
    unit.edge_oa = tape.constant(Tensor::scalar(1.0));
    unit.edge_or = tape.constant(Tensor::scalar(1.0));
    unit.edge_ar = tape.constant(Tensor::scalar(1.0));
    ConsensusVars c = extract_consensus(tape, unit);
    REQUIRE(tape.val(c.u_o).size() == 8);
    // First half is the node itself.
    REQUIRE(tape.val(c.u_o)[0] == 1.0);
    // Second half is n_a + n_r.
    REQUIRE(tape.val(c.u_o)[5] == 2.0);
    REQUIRE(tape.val(c.u_o)[6] == 3.0);
  }
  SECTION("zero edges leave a zero aggregate") {
    CompleteGraphVars zero = g;
    zero.edge_oa = tape.constant(Tensor::scalar(0.0));
    zero.edge_or = tape.constant(Tensor::scalar(0.0));
    zero.edge_ar = tape.constant(Tensor::scalar(0.0));
    ConsensusVars c = extract_consensus(tape, zero);
    for (std::size_t k = 4; k < 8; ++k) REQUIRE(tape.val(c.u_o)[k] == 0.0);
  }
  SECTION("zero neighbour nodes leave a zero aggregate") {
    UnifiedVars uz = toy_unified(tape, {1, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0});
    CompleteGraphVars gz = build_complete_graph(tape, uz);
    ConsensusVars c = extract_consensus(tape, gz);
    for (std::size_t k = 4; k < 8; ++k) REQUIRE(tape.val(c.u_o)[k] == 0.0);
  }
}

TEST_CASE("consensus extraction is permutation-consistent") {
  Tape tape;
  const std::vector<double> a = {0.3, -0.2, 0.8, 0.1};
  const std::vector<double> b = {1.2, 0.4, -0.6, 0.9};
  const std::vector<double> c = {-0.5, 0.7, 0.2, -1.1};
  UnifiedVars u1 = toy_unified(tape, a, b, c);
  CompleteGraphVars g1 = build_complete_graph(tape, u1);
  ConsensusVars c1 = extract_consensus(tape, g1);

  // Rename (o, a, r) -> (a, r, o) consistently.
  UnifiedVars u2 = toy_unified(tape, c, a, b);
  CompleteGraphVars g2 = build_complete_graph(tape, u2);
  ConsensusVars c2 = extract_consensus(tape, g2);

  for (std::size_t k = 0; k < 8; ++k) {
    REQUIRE(tape.val(c1.u_o)[k] == Catch::Approx(tape.val(c2.u_a)[k]).margin(1e-12));
    REQUIRE(tape.val(c1.u_a)[k] == Catch::Approx(tape.val(c2.u_r)[k]).margin(1e-12));
    REQUIRE(tape.val(c1.u_r)[k] == Catch::Approx(tape.val(c2.u_o)[k]).margin(1e-12));
  }
}

TEST_CASE("GASN gradients pass the finite-difference check") {
  ParamStore store;
  Rng rng(55);
  TranslatorParams t = make_translator(store, "t", kU, rng, 0.2);
  DiscriminatorParams dn = make_discriminator(store, "dn", 3 * kU, 5, rng);
  DiscriminatorParams de = make_discriminator(store, "de", 3, 5, rng);
  Parameter& vis_o = store.add("vis_o", random_vector(kU, rng, 0.8));
  Parameter& vis_a = store.add("vis_a", random_vector(kU, rng, 0.8));
  Parameter& vis_r = store.add("vis_r", random_vector(kU, rng, 0.8));

  auto loss_fn = [&](bool with_grad) {
    Tape tape;
    UnifiedVars lang = {tape.constant(Tensor::vec({0.2, 0.8, -0.3, 0.5})),
                        tape.constant(Tensor::vec({-0.1, 0.4, 0.9, 0.2})),
                        tape.constant(Tensor::vec({0.6, -0.7, 0.1, 0.3})),
                        SceneGraph::Domain::kLanguage};
    UnifiedVars lang_neg = {tape.constant(Tensor::vec({0.9, 0.1, 0.2, -0.4})),
                            tape.constant(Tensor::vec({0.3, 0.3, -0.8, 0.6})),
                            tape.constant(Tensor::vec({-0.2, 0.5, 0.4, 0.7})),
                            SceneGraph::Domain::kLanguage};
    UnifiedVars vis = {tape.param(vis_o), tape.param(vis_a), tape.param(vis_r),
                       SceneGraph::Domain::kVisual};
    CompleteGraphVars g_lang = build_complete_graph(tape, lang);
    CompleteGraphVars g_neg = build_complete_graph(tape, lang_neg);
    CompleteGraphVars g_vis = translate(tape, build_complete_graph(tape, vis), t);
    Var ln = node_alignment_loss(tape, g_lang, g_neg, g_vis, dn, 1.0, 1.0);
    Var le = edge_alignment_loss(tape, g_lang, g_neg, g_vis, de, 1.0, 1.0);
    Var loss = gasn_loss(ln, le, 1.0, 1.0);
    if (with_grad) tape.backward(loss);
    return tape.val(loss)[0];
  };
  std::vector<Parameter*> params;
  for (std::size_t i = 0; i < store.size(); ++i) params.push_back(&store[i]);
  REQUIRE(gradient_check(loss_fn, params, 1e-5) < 1e-4);
}

TEST_CASE("adversarial update contract on fixed data") {
  ParamStore store;
  Rng rng(77);
  TranslatorParams t = make_translator(store, "t", kU, rng, 0.2);
  DiscriminatorParams dn = make_discriminator(store, "dn", 3 * kU, 5, rng);
  DiscriminatorParams de = make_discriminator(store, "de", 3, 5, rng);

  auto total_loss = [&](bool with_grad) {
    Tape tape;
    UnifiedVars lang = {tape.constant(Tensor::vec({0.2, 0.8, -0.3, 0.5})),
                        tape.constant(Tensor::vec({-0.1, 0.4, 0.9, 0.2})),
                        tape.constant(Tensor::vec({0.6, -0.7, 0.1, 0.3})),
                        SceneGraph::Domain::kLanguage};
    UnifiedVars lang_neg = {tape.constant(Tensor::vec({0.9, 0.1, 0.2, -0.4})),
                            tape.constant(Tensor::vec({0.3, 0.3, -0.8, 0.6})),
                            tape.constant(Tensor::vec({-0.2, 0.5, 0.4, 0.7})),
                            SceneGraph::Domain::kLanguage};
    UnifiedVars vis = {tape.constant(Tensor::vec({0.4, -0.6, 0.2, 0.8})),
                       tape.constant(Tensor::vec({0.1, 0.9, -0.2, -0.5})),
                       tape.constant(Tensor::vec({0.7, 0.2, 0.5, 0.1})),
                       SceneGraph::Domain::kVisual};
    CompleteGraphVars g_lang = build_complete_graph(tape, lang);
    CompleteGraphVars g_neg = build_complete_graph(tape, lang_neg);
    CompleteGraphVars g_vis = translate(tape, build_complete_graph(tape, vis), t);
    Var ln = node_alignment_loss(tape, g_lang, g_neg, g_vis, dn, 1.0, 1.0);
    Var le = edge_alignment_loss(tape, g_lang, g_neg, g_vis, de, 1.0, 1.0);
    Var loss = add(ln, le);
    if (with_grad) tape.backward(loss);
    return tape.val(loss)[0];
  };

  // One tiny discriminator ascent step must not decrease L(N) + L(E).
  const double before = total_loss(false);
  store.zero_grads();
  total_loss(true);
  const double lr = 1e-6;
  std::vector<Parameter*> disc_params = {dn.w1, dn.b1, dn.w2, dn.b2, de.w1, de.b1, de.w2, de.b2};
  for (Parameter* p : disc_params) {
    for (std::size_t k = 0; k < p->value.size(); ++k) p->value.data[k] += lr * p->grad.data[k];
  }
  const double after = total_loss(false);
  REQUIRE(after >= before - 1e-8);

  // One tiny translator descent step on the psi terms must not increase them.
  auto psi_terms = [&](bool with_grad) {
    Tape tape;
    UnifiedVars vis = {tape.constant(Tensor::vec({0.4, -0.6, 0.2, 0.8})),
                       tape.constant(Tensor::vec({0.1, 0.9, -0.2, -0.5})),
                       tape.constant(Tensor::vec({0.7, 0.2, 0.5, 0.1})),
                       SceneGraph::Domain::kVisual};
    CompleteGraphVars g_vis = translate(tape, build_complete_graph(tape, vis), t);
    Var term_n = log_one_minus(discriminate(tape, node_concat(g_vis), dn));
    Var term_e = log_one_minus(discriminate(tape, edge_logistic(tape, edges_vector(g_vis)), de));
    Var loss = add(term_n, term_e);
    if (with_grad) tape.backward(loss);
    return tape.val(loss)[0];
  };
  const double psi_before = psi_terms(false);
  store.zero_grads();
  psi_terms(true);
  std::vector<Parameter*> gen_params = {t.w1, t.b1, t.w2, t.b2};
  for (Parameter* p : gen_params) {
    for (std::size_t k = 0; k < p->value.size(); ++k) p->value.data[k] -= lr * p->grad.data[k];
  }
  const double psi_after = psi_terms(false);
  REQUIRE(psi_after <= psi_before + 1e-8);
}
