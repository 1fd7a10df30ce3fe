// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graspvoc/error.hpp"
#include "graspvoc/geometry.hpp"
#include "graspvoc/object_model.hpp"

namespace graspvoc {

struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

/// One archive entry: a 6-DoF pose, finger contacts and the simulated
/// contact force. Orientation is carried through but never scored.
struct GraspRecord {
  std::string id;
  Point3 position;
  Quaternion orientation;
  std::vector<Point3> contact_points;
  double force = 0.0;  // N
};

struct GraspArchive {
  std::string object_label;
  std::vector<GraspRecord> grasps;
};

struct TaskCondition {
  std::string task;
  std::string grasp_label;
  std::string task_label;
};

struct ScoreParams {
  double k_force = 10.0;
  double k_dist = 1.0;
};

struct ScoredGrasp {
  GraspRecord grasp;
  double score = 0.0;
  std::string grasped_label;
  double d_task = 0.0;
  bool fallback = false;
};

inline void validate(const GraspRecord& g) {
  if (g.id.empty()) fail(ErrorCode::kValidationFailed, "grasp without id");
  if (std::abs(g.orientation.norm() - 1.0) > 1e-6) {
    fail(ErrorCode::kValidationFailed, "grasp " + g.id + " has a non-unit quaternion");
  }
  if (!g.position.finite()) fail(ErrorCode::kValidationFailed, "grasp " + g.id + " has a non-finite position");
  for (const auto& c : g.contact_points)
    if (!c.finite()) fail(ErrorCode::kValidationFailed, "grasp " + g.id + " has a non-finite contact point");
  if (!std::isfinite(g.force) || g.force < 0.0) fail(ErrorCode::kValidationFailed, "grasp " + g.id + " has an invalid force");
}

inline void validate(const GraspArchive& a) {
  if (a.grasps.empty()) fail(ErrorCode::kValidationFailed, "grasp archive is empty");
  std::set<std::string> ids;
  for (const auto& g : a.grasps) {
    validate(g);
    if (!ids.insert(g.id).second) fail(ErrorCode::kValidationFailed, "duplicate grasp id " + g.id);
  }
}

inline void validate(const ScoreParams& p) {
  if (!(p.k_force >= 0.0) || !(p.k_dist >= 0.0) || (p.k_force == 0.0 && p.k_dist == 0.0)) {
    fail(ErrorCode::kInvalidArgument, "score gains must be non-negative and not both zero");
  }
}

/// Mean of the contact points.
inline Point3 representative_contact(const GraspRecord& g) {
  if (g.contact_points.empty()) fail(ErrorCode::kNoContacts, "grasp " + g.id + " has no contact points");
  Point3 sum;
  for (const auto& c : g.contact_points) sum = sum + c;
  return (1.0 / static_cast<double>(g.contact_points.size())) * sum;
}

/// Smallest distance from any contact point to the task subpart.
inline double task_distance(const GraspRecord& g, const PointIndex& task_index) {
  if (g.contact_points.empty()) fail(ErrorCode::kNoContacts, "grasp " + g.id + " has no contact points");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : g.contact_points) best = std::min(best, task_index.nearest(c).distance());
  return best;
}

inline double task_distance(const GraspRecord& g, const PointCloud& task_cloud) {
  if (task_cloud.empty()) fail(ErrorCode::kEmptyCloud, "task subpart cloud is empty");
  return task_distance(g, PointIndex(task_cloud));
}

/// Scores grasps against one task condition. Holds the spatial indices so a
/// whole archive is scored without rebuilding them.
class Scorer {
 public:
  Scorer(const Vocabulary& vocab, TaskCondition condition, ScoreParams params)
      : vocab_(&vocab),
        condition_(std::move(condition)),
        params_(params),
        cloud_index_(vocab.object.cloud),
        owners_(vocab.owners()),
        task_index_(subpart_cloud(vocab, condition_.task_label)) {
    validate(params_);
    (void)vocab.at(condition_.grasp_label);
  }

  std::string grasped_label(const GraspRecord& g) const {
    const auto hit = cloud_index_.nearest(representative_contact(g));
    return vocab_->subparts.at(owners_.at(hit.index)).label;
  }

  double task_distance(const GraspRecord& g) const { return graspvoc::task_distance(g, task_index_); }

  ScoredGrasp score(const GraspRecord& g) const {
    ScoredGrasp s;
    s.grasp = g;
    s.grasped_label = grasped_label(g);
    s.d_task = task_distance(g);
    s.score = s.grasped_label == condition_.grasp_label ? params_.k_force * g.force + params_.k_dist * s.d_task : 0.0;
    return s;
  }

  const TaskCondition& condition() const { return condition_; }
  const ScoreParams& params() const { return params_; }

 private:
  const Vocabulary* vocab_;
  TaskCondition condition_;
  ScoreParams params_;
  PointIndex cloud_index_;
  std::vector<std::size_t> owners_;
  PointIndex task_index_;
};

inline std::string grasped_label(const GraspRecord& g, const Vocabulary& vocab) {
  const std::size_t nearest = nearest_index(representative_contact(g), vocab.object.cloud);
  for (const auto& s : vocab.subparts)
    if (std::binary_search(s.point_indices.begin(), s.point_indices.end(), nearest)) return s.label;
  fail(ErrorCode::kValidationFailed, "point " + std::to_string(nearest) + " belongs to no subpart");
}

inline ScoredGrasp score(const GraspRecord& g, const TaskCondition& cond, const Vocabulary& vocab,
                         const ScoreParams& params = {}) {
  return Scorer(vocab, cond, params).score(g);
}

/// Ranking order: score, then force (both descending), then id ascending.
inline bool ranks_before(const ScoredGrasp& a, const ScoredGrasp& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.grasp.force != b.grasp.force) return a.grasp.force > b.grasp.force;
  return a.grasp.id < b.grasp.id;
}

inline std::vector<ScoredGrasp> rank_archive(const GraspArchive& archive, const TaskCondition& cond,
                                             const Vocabulary& vocab, const ScoreParams& params = {}) {
  if (archive.grasps.empty()) fail(ErrorCode::kValidationFailed, "grasp archive is empty");
  const Scorer scorer(vocab, cond, params);
  std::vector<ScoredGrasp> out;
  out.reserve(archive.grasps.size());
  for (const auto& g : archive.grasps) out.push_back(scorer.score(g));
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

/// g* = argmax C. Throws NoCompatibleGrasp when every grasp scores 0, unless
/// `fallback_max_force` is set, in which case the archive-wide strongest
/// grasp is returned and flagged.
inline ScoredGrasp select_optimal(const GraspArchive& archive, const TaskCondition& cond, const Vocabulary& vocab,
                                  const ScoreParams& params = {}, bool fallback_max_force = false) {
  auto ranked = rank_archive(archive, cond, vocab, params);
  if (ranked.front().score > 0.0) return ranked.front();
  if (!fallback_max_force) {
    fail(ErrorCode::kNoCompatibleGrasp, "no grasp in the archive lies on '" + cond.grasp_label + "'");
  }
  ScoredGrasp best = ranked.front();  // all scores are 0, so this is max force then lowest id
  best.fallback = true;
  return best;
}

/// Uniform integer in [0, n) from a 64-bit engine by rejection; stable across
/// standard library implementations.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

struct ControlSample {
  std::vector<GraspRecord> grasps;
  bool shortfall = false;
};

/// k distinct zero-score grasps drawn uniformly with a seeded engine. The
/// candidate pool is ordered by id so archive file order does not matter.
inline ControlSample sample_controls(const GraspArchive& archive, const TaskCondition& cond, const Vocabulary& vocab,
                                    int k = 3, std::uint64_t seed = 0, const ScoreParams& params = {}) {
  if (k < 1) fail(ErrorCode::kInvalidArgument, "control count must be at least 1");
  const Scorer scorer(vocab, cond, params);
  std::vector<const GraspRecord*> pool;
  for (const auto& g : archive.grasps)
    if (scorer.score(g).score == 0.0) pool.push_back(&g);
  if (pool.empty()) fail(ErrorCode::kNoControls, "no zero-score grasps to sample controls from");
  std::sort(pool.begin(), pool.end(), [](const GraspRecord* a, const GraspRecord* b) { return a->id < b->id; });

  ControlSample out;
  const auto want = static_cast<std::size_t>(k);
  out.shortfall = pool.size() < want;
  const std::size_t take = std::min(want, pool.size());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
    std::swap(pool[i], pool[j]);
    out.grasps.push_back(*pool[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json point_to_json(const Point3& p) { return nlohmann::json::array({p.x, p.y, p.z}); }

inline Point3 point_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::kValidationFailed, "expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json grasp_to_json(const GraspRecord& g) {
  nlohmann::json contacts = nlohmann::json::array();
  for (const auto& c : g.contact_points) contacts.push_back(point_to_json(c));
  return {{"id", g.id},
          {"position", point_to_json(g.position)},
          {"quaternion_wxyz", {g.orientation.w, g.orientation.x, g.orientation.y, g.orientation.z}},
          {"contact_points", contacts},
          {"force", g.force}};
}

inline GraspRecord grasp_from_json(const nlohmann::json& j) {
  GraspRecord g;
  g.id = j.at("id").get<std::string>();
  g.position = point_from_json(j.at("position"));
  const auto& q = j.at("quaternion_wxyz");
  if (!q.is_array() || q.size() != 4) fail(ErrorCode::kValidationFailed, "grasp " + g.id + ": expected [w, x, y, z]");
  g.orientation = {q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()};
  for (const auto& c : j.at("contact_points")) g.contact_points.push_back(point_from_json(c));
  g.force = j.at("force").get<double>();
  return g;
}

inline nlohmann::json archive_to_json(const GraspArchive& a) {
  nlohmann::json grasps = nlohmann::json::array();
  for (const auto& g : a.grasps) grasps.push_back(grasp_to_json(g));
  return {{"object_label", a.object_label}, {"grasps", grasps}};
}

/// Converts a parsed archive document into the canonical representation.
using ArchiveImporter = std::function<GraspArchive(const nlohmann::json&)>;

inline GraspArchive import_canonical_archive(const nlohmann::json& j) {
  GraspArchive a;
  try {
    a.object_label = j.at("object_label").get<std::string>();
    for (const auto& g : j.at("grasps")) a.grasps.push_back(grasp_from_json(g));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidationFailed, std::string("grasp archive: ") + e.what());
  }
  validate(a);
  return a;
}

/// Registered archive formats. Only "canonical" ships; external archive
/// layouts plug in here.
inline std::map<std::string, ArchiveImporter>& archive_importers() {
  static std::map<std::string, ArchiveImporter> importers{{"canonical", import_canonical_archive}};
  return importers;
}

inline GraspArchive archive_from_json(const nlohmann::json& j, const std::string& format = "canonical") {
  const auto& importers = archive_importers();
  const auto it = importers.find(format);
  if (it == importers.end()) fail(ErrorCode::kInvalidArgument, "unknown archive format '" + format + "'");
  return it->second(j);
}

inline nlohmann::json condition_to_json(const TaskCondition& c) {
  return {{"task", c.task}, {"grasp_label", c.grasp_label}, {"task_label", c.task_label}};
}

inline TaskCondition condition_from_json(const nlohmann::json& j) {
  try {
    TaskCondition c{j.at("task").get<std::string>(), j.at("grasp_label").get<std::string>(),
                    j.at("task_label").get<std::string>()};
    if (c.grasp_label.empty() || c.task_label.empty()) fail(ErrorCode::kValidationFailed, "condition labels must not be empty");
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidationFailed, std::string("condition: ") + e.what());
  }
}

inline nlohmann::json scored_to_json(const ScoredGrasp& s) {
  nlohmann::json j = grasp_to_json(s.grasp);
  j["score"] = s.score;
  j["grasped_label"] = s.grasped_label;
  j["d_task"] = s.d_task;
  return j;
}

}  // namespace graspvoc
