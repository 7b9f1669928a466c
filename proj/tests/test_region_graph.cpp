#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cgrl/region_graph.hpp"
#include "cgrl/rng.hpp"

using namespace cgrl;

namespace {

RegionProposal region(double x, double y, double w, double h, std::vector<double> feature) {
  return {{x, y, w, h}, std::move(feature), std::nullopt};
}

// Scripted direct evaluation of the region GCN.
std::vector<double> oracle_encode_pair(const RegionGcnParams& p, const std::vector<double>& a,
                                       const std::array<double, 5>& s,
                                       const std::vector<double>& b) {
  std::vector<double> in = a;
  in.insert(in.end(), s.begin(), s.end());
  in.insert(in.end(), b.begin(), b.end());
  std::vector<double> out(p.w->value.rows(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = p.b->value[i];
    for (std::size_t j = 0; j < in.size(); ++j) acc += p.w->value.at2(i, j) * in[j];
    out[i] = std::max(0.0, acc);
  }
  return out;
}

}  // namespace

TEST_CASE("iou identities") {
  const Box a{0, 0, 2, 2};
  REQUIRE(iou(a, a) == 1.0);
  REQUIRE(iou(a, Box{10, 10, 2, 2}) == 0.0);
  // Area oracle: intersection 1, union 4 + 4 - 1 = 7.
  REQUIRE(iou(a, Box{1, 1, 2, 2}) == Catch::Approx(1.0 / 7.0).margin(1e-12));
  REQUIRE_THROWS_AS(iou(Box{0, 0, 0, 2}, a), DataError);
  REQUIRE_THROWS_AS(iou(a, Box{0, 0, 2, -1}), DataError);
}

TEST_CASE("iou is symmetric and bounded") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    Box a{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(1, 30), rng.uniform(1, 30)};
    Box b{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(1, 30), rng.uniform(1, 30)};
    const double ab = iou(a, b);
    REQUIRE(ab == iou(b, a));
    REQUIRE(ab >= 0.0);
    REQUIRE(ab <= 1.0);
  }
}

TEST_CASE("link_regions thresholds at IoU 0.5 inclusive") {
  std::vector<RegionProposal> regions;
  regions.push_back(region(0, 0, 10, 10, {1.0}));

  SECTION("single region has no edges") {
    SpatialGraph g = link_regions(regions);
    REQUIRE(g.n == 1);
    REQUIRE(g.edges.empty());
  }

  SECTION("identical boxes link with coincident spatial feature") {
    regions.push_back(region(0, 0, 10, 10, {2.0}));
    SpatialGraph g = link_regions(regions);
    REQUIRE(g.edges.size() == 1);
    const auto& s = g.edges[0].s_ij;
    REQUIRE(s[0] == 0.0);
    REQUIRE(s[1] == 0.0);
    REQUIRE(s[2] == 0.0);
    REQUIRE(s[3] == 0.0);
    REQUIRE(s[4] == 1.0);
  }

  SECTION("boundary IoU exactly 0.5 includes the edge") {
    // Boxes [0,10]x[0,10] and [0,5]x[0,10]: intersection 50, union 100.
    regions.push_back(region(0, 0, 5, 10, {2.0}));
    REQUIRE(iou(regions[0].box, regions[1].box) == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(link_regions(regions).edges.size() == 1);
  }

  SECTION("empty region list rejected") {
    std::vector<RegionProposal> none;
    REQUIRE_THROWS_AS(link_regions(none), DataError);
  }
}

TEST_CASE("three boxes with hand-computed IoUs produce exactly two edges") {
  // Box A = (0,0,10,10), B = (0,0,10,8): IoU = 80/100 = 0.8 (edge).
  // Box C = (0,6,10,10): IoU(A,C) = 40/160 = 0.25 (no edge),
  //                      IoU(B,C) = 20/160 = 0.125 (no edge).
  // Box D = (2,0,10,10): IoU(A,D) = 80/120 = 2/3 (edge).
  std::vector<RegionProposal> regions = {region(0, 0, 10, 10, {1}), region(0, 0, 10, 8, {2}),
                                         region(0, 6, 10, 10, {3})};
  REQUIRE(iou(regions[0].box, regions[1].box) == Catch::Approx(0.8).margin(1e-12));
  REQUIRE(iou(regions[0].box, regions[2].box) == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(iou(regions[1].box, regions[2].box) == Catch::Approx(20.0 / 160.0).margin(1e-12));
  regions.push_back(region(2, 0, 10, 10, {4}));
  SpatialGraph g = link_regions(regions);
  // Edges: (0,1) at 0.8, (0,3) at 2/3, (1,3) at 64/(80+100-64)?
  // IoU(B, D) = 8*8 / (80 + 100 - 64) = 64/116 > 0.5 (edge).
  REQUIRE(iou(regions[1].box, regions[3].box) == Catch::Approx(64.0 / 116.0).margin(1e-12));
  REQUIRE(g.edges.size() == 3);
  // No self loops; all edges i < j by construction.
  for (const auto& e : g.edges) {
    REQUIRE(e.i != e.j);
    REQUIRE(e.i < e.j);
  }
}

TEST_CASE("spatial features are directional") {
  const Box a{0, 0, 10, 10};
  const Box b{5, 0, 10, 10};
  const auto s_ab = spatial_feature(a, b);
  const auto s_ba = spatial_feature(b, a);
  REQUIRE(s_ab[0] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(s_ba[0] == Catch::Approx(-0.5).margin(1e-12));
  REQUIRE(s_ab[4] == s_ba[4]);
}

TEST_CASE("augment_regions isolated region keeps only its self term") {
  ParamStore store;
  Rng rng(3);
  RegionGcnParams p = make_region_gcn(store, "region/gcn", 4, rng);
  std::vector<RegionProposal> regions = {region(0, 0, 5, 5, {0.5, -0.5, 1.0, 0.25})};
  SpatialGraph g = link_regions(regions);

  Tape tape;
  std::vector<Var> features = {tape.constant(Tensor::vec(regions[0].feature))};
  auto out = augment_regions(tape, features, g, p);
  const auto expected =
      oracle_encode_pair(p, regions[0].feature, self_spatial_feature(), regions[0].feature);
  for (std::size_t k = 0; k < expected.size(); ++k) {
    REQUIRE(tape.val(out[0])[k] == Catch::Approx(expected[k]).margin(1e-12));
  }

  // Strict variant: isolated region becomes the zero vector.
  auto strict = augment_regions(tape, features, g, p, /*self_term=*/false);
  for (std::size_t k = 0; k < 4; ++k) REQUIRE(tape.val(strict[0])[k] == 0.0);
}

TEST_CASE("two identical linked regions get identical augmentations") {
  ParamStore store;
  Rng rng(5);
  RegionGcnParams p = make_region_gcn(store, "region/gcn", 3, rng);
  std::vector<RegionProposal> regions = {region(0, 0, 6, 6, {1.0, 2.0, 3.0}),
                                         region(0, 0, 6, 6, {1.0, 2.0, 3.0})};
  SpatialGraph g = link_regions(regions);
  REQUIRE(g.edges.size() == 1);
  Tape tape;
  std::vector<Var> features = {tape.constant(Tensor::vec(regions[0].feature)),
                               tape.constant(Tensor::vec(regions[1].feature))};
  auto out = augment_regions(tape, features, g, p);
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(tape.val(out[0])[k] == Catch::Approx(tape.val(out[1])[k]).margin(1e-12));
  }
}

TEST_CASE("three-region augmentation matches the scripted oracle") {
  ParamStore store;
  Rng rng(7);
  RegionGcnParams p = make_region_gcn(store, "region/gcn", 3, rng);
  std::vector<RegionProposal> regions = {region(0, 0, 10, 10, {0.2, -0.4, 0.6}),
                                         region(1, 0, 10, 10, {1.0, 0.5, -0.8}),
                                         region(40, 40, 8, 8, {-0.3, 0.9, 0.1})};
  SpatialGraph g = link_regions(regions);
  REQUIRE(g.edges.size() == 1);  // only (0, 1)

  Tape tape;
  std::vector<Var> features;
  for (const auto& r : regions) features.push_back(tape.constant(Tensor::vec(r.feature)));
  auto out = augment_regions(tape, features, g, p);

  for (std::size_t i = 0; i < regions.size(); ++i) {
    std::vector<double> expected = oracle_encode_pair(p, regions[i].feature,
                                                      self_spatial_feature(), regions[i].feature);
    for (const auto& [j, s] : g.neighbours(static_cast<int>(i))) {
      const auto term = oracle_encode_pair(p, regions[i].feature, s,
                                           regions[static_cast<std::size_t>(j)].feature);
      for (std::size_t k = 0; k < expected.size(); ++k) expected[k] += term[k];
    }
    for (std::size_t k = 0; k < expected.size(); ++k) {
      REQUIRE(tape.val(out[i])[k] == Catch::Approx(expected[k]).margin(1e-12));
    }
  }

  // Count mismatch is rejected.
  std::vector<Var> short_features(features.begin(), features.begin() + 2);
  REQUIRE_THROWS_AS(augment_regions(tape, short_features, g, p), ShapeError);
}

TEST_CASE("augmentation is equivariant under region permutation") {
  ParamStore store;
  Rng rng(11);
  RegionGcnParams p = make_region_gcn(store, "region/gcn", 3, rng);
  std::vector<RegionProposal> regions = {region(0, 0, 10, 10, {0.2, -0.4, 0.6}),
                                         region(1, 0, 10, 10, {1.0, 0.5, -0.8}),
                                         region(3, 1, 9, 9, {-0.3, 0.9, 0.1})};
  std::vector<RegionProposal> permuted = {regions[2], regions[0], regions[1]};

  Tape ta;
  std::vector<Var> fa;
  for (const auto& r : regions) fa.push_back(ta.constant(Tensor::vec(r.feature)));
  auto out_a = augment_regions(ta, fa, link_regions(regions), p);

  Tape tb;
  std::vector<Var> fb;
  for (const auto& r : permuted) fb.push_back(tb.constant(Tensor::vec(r.feature)));
  auto out_b = augment_regions(tb, fb, link_regions(permuted), p);

  // permuted[0] = regions[2], permuted[1] = regions[0], permuted[2] = regions[1].
  const int mapping[3] = {2, 0, 1};
  for (int i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      REQUIRE(tb.val(out_b[static_cast<std::size_t>(i)])[k] ==
              Catch::Approx(ta.val(out_a[static_cast<std::size_t>(mapping[i])])[k]).margin(1e-12));
    }
  }
}

TEST_CASE("region GCN gradients pass the finite-difference check") {
  ParamStore store;
  Rng rng(17);
  RegionGcnParams p = make_region_gcn(store, "region/gcn", 3, rng);
  Parameter& feat0 = store.add("feat0", random_vector(3, rng, 1.0));
  Parameter& feat1 = store.add("feat1", random_vector(3, rng, 1.0));
  std::vector<RegionProposal> regions = {region(0, 0, 10, 10, {0, 0, 0}),
                                         region(1, 1, 10, 10, {0, 0, 0})};
  SpatialGraph g = link_regions(regions);
  auto loss_fn = [&](bool with_grad) {
    Tape tape;
    std::vector<Var> features = {tape.param(feat0), tape.param(feat1)};
    auto out = augment_regions(tape, features, g, p);
    Var loss = add(dot(out[0], out[0]), dot(out[1], out[1]));
    if (with_grad) tape.backward(loss);
    return tape.val(loss)[0];
  };
  std::vector<Parameter*> params = {p.w, p.b, &feat0, &feat1};
  REQUIRE(gradient_check(loss_fn, params, 1e-5) < 1e-4);
}
