// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "graspvoc/scoring.hpp"
#include "support/test_support.hpp"

using namespace graspvoc;
using namespace graspvoc::testing;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kInvalidArgument;
}

GraspRecord grasp(std::string id, std::vector<Point3> contacts, double force) {
  GraspRecord g;
  g.id = std::move(id);
  g.contact_points = std::move(contacts);
  g.force = force;
  if (!g.contact_points.empty()) g.position = g.contact_points.front();
  return g;
}

/// handle = x in {0, 0.1}, blade = x in {0.3, 0.5}.
Vocabulary small_knife() {
  return make_vocabulary(ObjectModel("knife", PointCloud({{0, 0, 0}, {0.1, 0, 0}, {0.3, 0, 0}, {0.5, 0, 0}})),
                         {{0, "handle"}, {1, "handle"}, {2, "blade"}, {3, "blade"}});
}

const TaskCondition kCut{"cut", "handle", "blade"};

std::vector<std::string> ids_of(const std::vector<ScoredGrasp>& ranked) {
  std::vector<std::string> ids;
  for (const auto& s : ranked) ids.push_back(s.grasp.id);
  return ids;
}

}  // namespace

TEST(Score, WorkedExample) {
  const Vocabulary v = small_knife();
  const ScoredGrasp s = score(grasp("g", {{0.1, 0, 0}}, 1.5), kCut, v);
  EXPECT_EQ(s.grasped_label, "handle");
  EXPECT_NEAR(s.d_task, 0.2, 1e-15);
  EXPECT_NEAR(s.score, 15.2, 1e-12);
  // On the blade: filtered out regardless of force.
  EXPECT_EQ(score(grasp("b", {{0.5, 0, 0}}, 100.0), kCut, v).score, 0.0);
  // Custom gains.
  EXPECT_NEAR(score(grasp("g", {{0.1, 0, 0}}, 1.5), kCut, v, {2.0, 5.0}).score, 4.0, 1e-12);
}

TEST(Score, RepresentativeContactIsTheMean) {
  const GraspRecord g = grasp("g", {{0, 0, 0}, {2, 0, 0}, {1, 3, 0}}, 1);
  EXPECT_EQ(representative_contact(g), (Point3{1, 1, 0}));
  EXPECT_EQ(code_of([] { representative_contact(grasp("e", {}, 1)); }), ErrorCode::kNoContacts);
  EXPECT_EQ(code_of([&] { score(grasp("e", {}, 1), kCut, small_knife()); }), ErrorCode::kNoContacts);
}

TEST(Score, TaskDistanceUsesTheClosestContact) {
  const Vocabulary v = small_knife();
  // One contact far away, one on the blade: distance is 0.
  EXPECT_EQ(task_distance(grasp("g", {{-5, 0, 0}, {0.3, 0, 0}}, 1), subpart_cloud(v, "blade")), 0.0);
  EXPECT_EQ(code_of([] { task_distance(grasp("g", {{0, 0, 0}}, 1), PointCloud()); }), ErrorCode::kEmptyCloud);
}

TEST(Score, GraspedLabelTieGoesToLowerIndex) {
  std::vector<Point3> pts;
  for (int i = 0; i < 12; ++i) pts.push_back({0, 10.0 + i, 0});
  pts[3] = {-1, 0, 0};
  pts[9] = {1, 0, 0};
  LabelMap labels;
  for (std::size_t i = 0; i < pts.size(); ++i) labels[i] = "far";
  labels[3] = "a";
  labels[9] = "b";
  const Vocabulary v = make_vocabulary(ObjectModel("x", PointCloud(pts)), labels);
  const GraspRecord g = grasp("g", {{0, 0, 0}}, 1);
  EXPECT_EQ(grasped_label(g, v), "a");
  EXPECT_EQ(Scorer(v, {"t", "a", "b"}, {}).grasped_label(g), "a");
}

TEST(Score, InvalidConditionsAndGains) {
  const Vocabulary v = small_knife();
  EXPECT_EQ(code_of([&] { Scorer(v, {"t", "hilt", "blade"}, {}); }), ErrorCode::kUnknownLabel);
  EXPECT_EQ(code_of([&] { Scorer(v, {"t", "handle", "tip"}, {}); }), ErrorCode::kUnknownLabel);
  EXPECT_EQ(code_of([&] { Scorer(v, kCut, {0.0, 0.0}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { Scorer(v, kCut, {-1.0, 1.0}); }), ErrorCode::kInvalidArgument);
}

TEST(Rank, TiesBreakOnForceThenId) {
  const Vocabulary v = small_knife();
  GraspArchive a{"knife",
                 {grasp("c", {{0.1, 0, 0}}, 3.0), grasp("b", {{0.1, 0, 0}}, 5.0), grasp("a", {{0.1, 0, 0}}, 3.0),
                  grasp("z", {{0.5, 0, 0}}, 9.0)}};
  // Pure distance score: the three handle grasps tie on score.
  const auto ranked = rank_archive(a, kCut, v, {0.0, 1.0});
  EXPECT_EQ(ids_of(ranked), (std::vector<std::string>{"b", "a", "c", "z"}));
  EXPECT_EQ(select_optimal(a, kCut, v, {0.0, 1.0}).grasp.id, "b");
}

TEST(Rank, MatchesScanOracleOnRandomArchives) {
  Rng rng(51);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t parts = 1 + rng.index(5);
    const Vocabulary v = random_vocabulary(rng, 200 + rng.index(400), parts);
    const GraspArchive a = random_archive(rng, v, 1 + rng.index(200));
    const auto labels = v.labels();
    const TaskCondition cond{"t", labels[rng.index(labels.size())], labels[rng.index(labels.size())]};
    const ScoreParams params{rng.uniform(0.5, 20), rng.uniform(0.1, 5)};
    const auto ranked = rank_archive(a, cond, v, params);
    ASSERT_EQ(ranked.size(), a.grasps.size());
    std::string best_id;
    double best = -1, best_force = -1;
    for (const auto& s : ranked) {
      const OracleScore o = oracle_score(s.grasp, cond, v, params);
      EXPECT_EQ(s.score, o.score) << s.grasp.id;
      EXPECT_EQ(s.grasped_label, o.grasped_label);
      EXPECT_EQ(s.d_task, o.d_task);
      if (o.score > best || (o.score == best && (s.grasp.force > best_force || (s.grasp.force == best_force && s.grasp.id < best_id)))) {
        best = o.score;
        best_force = s.grasp.force;
        best_id = s.grasp.id;
      }
    }
    EXPECT_EQ(ranked.front().grasp.id, best_id);
    for (std::size_t i = 1; i < ranked.size(); ++i) EXPECT_FALSE(ranks_before(ranked[i], ranked[i - 1]));
  }
}

TEST(Rank, FilterHoldsForEveryGrasp) {
  Rng rng(52);
  for (int trial = 0; trial < 30; ++trial) {
    const Vocabulary v = random_vocabulary(rng, 300, 2 + rng.index(4));
    const GraspArchive a = random_archive(rng, v, 100);
    const auto labels = v.labels();
    const TaskCondition cond{"t", labels[0], labels.back()};
    const ScoreParams params{};
    for (const auto& s : rank_archive(a, cond, v, params)) {
      if (s.grasped_label != cond.grasp_label) {
        EXPECT_EQ(s.score, 0.0);
      } else {
        const double expected = params.k_force * s.grasp.force + params.k_dist * s.d_task;
        EXPECT_LE(std::abs(s.score - expected), 1e-12 * std::max(1.0, std::abs(expected)));
      }
    }
  }
}

TEST(Rank, UniformGainScalingKeepsTheOrder) {
  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    const Vocabulary v = random_vocabulary(rng, 300, 3);
    const GraspArchive a = random_archive(rng, v, 80);
    const auto labels = v.labels();
    const TaskCondition cond{"t", labels[rng.index(3)], labels[rng.index(3)]};
    // Powers of two scale exactly, so ties stay ties.
    const double c = std::ldexp(1.0, static_cast<int>(rng.index(9)) - 4);
    EXPECT_EQ(ids_of(rank_archive(a, cond, v, {10.0, 1.0})), ids_of(rank_archive(a, cond, v, {10.0 * c, 1.0 * c})));
  }
}

TEST(Rank, ForceGainScalingWithEqualDistances) {
  Rng rng(56);
  const Vocabulary v = small_knife();
  for (int trial = 0; trial < 50; ++trial) {
    GraspArchive a{"knife", {}};
    for (int i = 0; i < 20; ++i) {
      // Handle grasps share d_task = 0.2; blade grasps are filtered.
      const bool on_handle = rng.coin(0.7);
      a.grasps.push_back(grasp("g" + std::to_string(i), {{on_handle ? 0.1 : 0.5, 0, 0}}, 0.25 * double(rng.index(20))));
    }
    if (rng.coin()) a.grasps.push_back(grasp("h", {{0.1, 0, 0}}, 1.0));
    try {
      const std::string base = select_optimal(a, kCut, v).grasp.id;
      const double c = rng.uniform(0.01, 100.0);
      EXPECT_EQ(select_optimal(a, kCut, v, {10.0 * c, 1.0}).grasp.id, base);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNoCompatibleGrasp);
    }
  }
}

TEST(Score, TaskDistanceIsZeroExactlyOnTaskPoints) {
  Rng rng(57);
  for (int trial = 0; trial < 20; ++trial) {
    const Vocabulary v = random_vocabulary(rng, 300, 3);
    const GraspArchive a = random_archive(rng, v, 100);
    const auto labels = v.labels();
    const std::string task = labels[rng.index(labels.size())];
    const PointCloud task_cloud = subpart_cloud(v, task);
    for (const auto& g : a.grasps) {
      bool touches = false;
      for (const auto& c : g.contact_points)
        for (const auto& p : task_cloud) touches |= c == p;
      const double d = task_distance(g, task_cloud);
      EXPECT_GE(d, 0.0);
      EXPECT_EQ(d == 0.0, touches) << g.id;
    }
  }
}

TEST(Select, NoCompatibleGraspAndFallback) {
  const Vocabulary v = small_knife();
  const GraspArchive a{"knife", {grasp("x", {{0.5, 0, 0}}, 2.0), grasp("y", {{0.3, 0, 0}}, 4.0), grasp("w", {{0.3, 0, 0}}, 4.0)}};
  EXPECT_EQ(code_of([&] { select_optimal(a, kCut, v); }), ErrorCode::kNoCompatibleGrasp);
  const ScoredGrasp fb = select_optimal(a, kCut, v, {}, true);
  EXPECT_TRUE(fb.fallback);
  EXPECT_EQ(fb.grasp.id, "w");
  EXPECT_EQ(code_of([&] { select_optimal(GraspArchive{"knife", {}}, kCut, v); }), ErrorCode::kValidationFailed);
  // A handle grasp with zero force and zero distance scores 0 too.
  const GraspArchive zero{"knife", {grasp("h", {{0.3, 0, 0}, {0.0, 0, 0}}, 0.0)}};
  const ScoredGrasp z = score(zero.grasps[0], {"t", "handle", "blade"}, v);
  EXPECT_EQ(z.grasped_label, "handle");
  EXPECT_EQ(z.score, 0.0);
  EXPECT_EQ(code_of([&] { select_optimal(zero, kCut, v); }), ErrorCode::kNoCompatibleGrasp);
}

TEST(Controls, DistinctZeroScoreAndReproducible) {
  Rng rng(54);
  for (int trial = 0; trial < 30; ++trial) {
    const Vocabulary v = random_vocabulary(rng, 300, 2 + rng.index(3));
    const GraspArchive a = random_archive(rng, v, 60);
    const auto labels = v.labels();
    const TaskCondition cond{"t", labels[0], labels[1]};
    const std::uint64_t seed = rng.engine()();
    const Scorer scorer(v, cond, {});
    std::size_t zeros = 0;
    for (const auto& g : a.grasps) zeros += scorer.score(g).score == 0.0;
    if (zeros == 0) {
      EXPECT_EQ(code_of([&] { sample_controls(a, cond, v, 3, seed); }), ErrorCode::kNoControls);
      continue;
    }
    const ControlSample s = sample_controls(a, cond, v, 3, seed);
    EXPECT_EQ(s.grasps.size(), std::min<std::size_t>(3, zeros));
    EXPECT_EQ(s.shortfall, zeros < 3);
    std::set<std::string> ids;
    for (const auto& g : s.grasps) {
      EXPECT_EQ(scorer.score(g).score, 0.0);
      ids.insert(g.id);
    }
    EXPECT_EQ(ids.size(), s.grasps.size());
    // Same seed, same draw, regardless of archive order.
    GraspArchive shuffled = a;
    std::shuffle(shuffled.grasps.begin(), shuffled.grasps.end(), rng.engine());
    const ControlSample again = sample_controls(shuffled, cond, v, 3, seed);
    ASSERT_EQ(again.grasps.size(), s.grasps.size());
    for (std::size_t k = 0; k < s.grasps.size(); ++k) EXPECT_EQ(again.grasps[k].id, s.grasps[k].id);
  }
}

TEST(Controls, SeedsSpreadOverThePool) {
  const Vocabulary v = small_knife();
  GraspArchive a{"knife", {}};
  for (int i = 0; i < 10; ++i) a.grasps.push_back(grasp("z" + std::to_string(i), {{0.5, 0, 0}}, 1.0));
  std::map<std::string, int> hits;
  for (std::uint64_t seed = 0; seed < 2000; ++seed)
    for (const auto& g : sample_controls(a, kCut, v, 1, seed).grasps) ++hits[g.id];
  ASSERT_EQ(hits.size(), 10u);
  // Each id expects 200 draws; allow a wide band.
  for (const auto& [id, n] : hits) EXPECT_GT(n, 130) << id;
  EXPECT_EQ(code_of([&] { sample_controls(a, kCut, v, 0, 1); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(sample_controls(a, kCut, v, 20, 1).grasps.size(), 10u);
  EXPECT_TRUE(sample_controls(a, kCut, v, 20, 1).shortfall);
}

TEST(Controls, UniformBelowStaysInRange) {
  std::mt19937_64 eng(5);
  for (std::uint64_t n : {1ull, 2ull, 3ull, 7ull, 1000ull, (1ull << 63) + 1}) {
    for (int i = 0; i < 200; ++i) EXPECT_LT(uniform_below(eng, n), n);
  }
  // Pinned draw sequence: the sampler must not depend on the standard library's distributions.
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(uniform_below(a, 10), b() % 10);
}

TEST(Json, ArchiveRoundTripAndValidation) {
  Rng rng(55);
  const Vocabulary v = random_vocabulary(rng, 100, 2);
  const GraspArchive a = random_archive(rng, v, 20);
  const nlohmann::json j = archive_to_json(a);
  const GraspArchive back = archive_from_json(j);
  EXPECT_EQ(archive_to_json(back), j);
  EXPECT_EQ(code_of([&] { archive_from_json(j, "graspnet"); }), ErrorCode::kInvalidArgument);

  auto mutate = [&](const std::function<void(nlohmann::json&)>& f) {
    nlohmann::json m = j;
    f(m);
    return code_of([&] { archive_from_json(m); });
  };
  EXPECT_EQ(mutate([](auto& m) { m["grasps"][0]["quaternion_wxyz"] = {1, 1, 0, 0}; }), ErrorCode::kValidationFailed);
  EXPECT_EQ(mutate([](auto& m) { m["grasps"][1]["id"] = m["grasps"][0]["id"]; }), ErrorCode::kValidationFailed);
  EXPECT_EQ(mutate([](auto& m) { m["grasps"][0]["force"] = -1.0; }), ErrorCode::kValidationFailed);
  EXPECT_EQ(mutate([](auto& m) { m["grasps"] = nlohmann::json::array(); }), ErrorCode::kValidationFailed);
  EXPECT_EQ(mutate([](auto& m) { m["grasps"][0].erase("force"); }), ErrorCode::kValidationFailed);
  EXPECT_EQ(mutate([](auto& m) { m["grasps"][0]["position"] = {1, 2}; }), ErrorCode::kValidationFailed);
  EXPECT_EQ(mutate([](auto& m) { m["grasps"][0]["id"] = ""; }), ErrorCode::kValidationFailed);

  // Empty contact lists load; they fail at scoring time.
  nlohmann::json no_contacts = j;
  no_contacts["grasps"][0]["contact_points"] = nlohmann::json::array();
  EXPECT_TRUE(archive_from_json(no_contacts).grasps[0].contact_points.empty());
}

TEST(Json, ConditionRoundTrip) {
  const nlohmann::json j = condition_to_json(kCut);
  EXPECT_EQ(j.dump(), R"({"grasp_label":"handle","task":"cut","task_label":"blade"})");
  const TaskCondition c = condition_from_json(j);
  EXPECT_EQ(c.grasp_label, "handle");
  EXPECT_EQ(c.task_label, "blade");
  EXPECT_EQ(code_of([] { condition_from_json({{"task", "x"}, {"grasp_label", ""}, {"task_label", "a"}}); }),
            ErrorCode::kValidationFailed);
  EXPECT_EQ(code_of([] { condition_from_json({{"task", "x"}}); }), ErrorCode::kValidationFailed);
}
