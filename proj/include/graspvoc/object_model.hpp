// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graspvoc/error.hpp"
#include "graspvoc/geometry.hpp"

namespace graspvoc {

/// Label reserved for masks that belong to no subpart. Never stored in a
/// vocabulary.
inline constexpr const char* kBackgroundLabel = "background";

/// Object O = (L, P): a semantic label plus its point cloud.
struct ObjectModel {
  std::string label;
  PointCloud cloud;

  ObjectModel() = default;
  ObjectModel(std::string label_, PointCloud cloud_) : label(std::move(label_)), cloud(std::move(cloud_)) {
    if (label.empty()) fail(ErrorCode::kInvalidArgument, "object label must not be empty");
  }
};

struct Subpart {
  std::string label;
  std::vector<std::size_t> point_indices;  // ascending
};

/// Point index -> subpart label.
using LabelMap = std::map<std::size_t, std::string>;

/// Labeled subparts of one object. Construction through `make_vocabulary`
/// guarantees the partition invariant; the raw aggregate can hold anything so
/// that `validate_partition` can report on it.
struct Vocabulary {
  ObjectModel object;
  std::string cloud_file;
  std::vector<Subpart> subparts;

  const Subpart* find(const std::string& label) const {
    for (const auto& s : subparts)
      if (s.label == label) return &s;
    return nullptr;
  }

  const Subpart& at(const std::string& label) const {
    if (const Subpart* s = find(label)) return *s;
    fail(ErrorCode::kUnknownLabel, "no subpart labeled '" + label + "' on " + object.label);
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(subparts.size());
    for (const auto& s : subparts) out.push_back(s.label);
    return out;
  }

  /// Per-point owning subpart position; only meaningful for valid partitions.
  std::vector<std::size_t> owners() const {
    std::vector<std::size_t> owner(object.cloud.size(), subparts.size());
    for (std::size_t k = 0; k < subparts.size(); ++k)
      for (std::size_t i : subparts[k].point_indices)
        if (i < owner.size()) owner[i] = k;
    return owner;
  }
};

struct PartitionReport {
  std::vector<std::size_t> duplicates;    // indices claimed by more than one subpart
  std::vector<std::size_t> uncovered;     // indices claimed by none
  std::vector<std::size_t> out_of_range;  // indices >= N
  std::vector<std::string> problems;      // label-level issues (duplicates, empty sets)

  bool ok() const { return duplicates.empty() && uncovered.empty() && out_of_range.empty() && problems.empty(); }
};

inline PartitionReport validate_partition(const Vocabulary& vocab) {
  PartitionReport report;
  const std::size_t n = vocab.object.cloud.size();
  std::vector<int> claims(n, 0);
  std::set<std::string> seen;
  std::set<std::size_t> bad;
  if (vocab.subparts.empty()) report.problems.push_back("vocabulary has no subparts");
  for (const auto& s : vocab.subparts) {
    if (!seen.insert(s.label).second) report.problems.push_back("duplicate label '" + s.label + "'");
    if (s.label.empty()) report.problems.push_back("empty label");
    if (s.label == kBackgroundLabel) report.problems.push_back("reserved label 'background'");
    if (s.point_indices.empty()) report.problems.push_back("subpart '" + s.label + "' is empty");
    for (std::size_t i : s.point_indices) {
      if (i >= n) {
        bad.insert(i);
        continue;
      }
      ++claims[i];
    }
  }
  report.out_of_range.assign(bad.begin(), bad.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (claims[i] == 0) report.uncovered.push_back(i);
    if (claims[i] > 1) report.duplicates.push_back(i);
  }
  return report;
}

/// Points of one subpart, in original relative order.
inline PointCloud subpart_cloud(const Vocabulary& vocab, const std::string& label) {
  const Subpart& part = vocab.at(label);
  std::vector<Point3> pts;
  pts.reserve(part.point_indices.size());
  for (std::size_t i : part.point_indices) pts.push_back(vocab.object.cloud[i]);
  return PointCloud(std::move(pts), vocab.object.cloud.frame_id());
}

/// Gives every unlabeled point the label of its nearest labeled point (ties:
/// lowest labeled index). Labeled points keep their label.
inline LabelMap propagate_labels(const PointCloud& cloud, const LabelMap& partial) {
  if (partial.empty()) fail(ErrorCode::kEmptyAssignment, "no labeled points to propagate from");
  std::vector<Point3> seeds;
  std::vector<const std::string*> seed_labels;
  seeds.reserve(partial.size());
  for (const auto& [index, label] : partial) {
    if (index >= cloud.size()) fail(ErrorCode::kOutOfRange, "label for point " + std::to_string(index));
    seeds.push_back(cloud[index]);
    seed_labels.push_back(&label);
  }
  if (partial.size() == cloud.size()) return partial;

  const PointIndex index(seeds);
  LabelMap total = partial;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (partial.contains(i)) continue;
    total.emplace(i, *seed_labels[index.nearest(cloud[i]).index]);
  }
  return total;
}

/// Builds a vocabulary from a total label map; subparts come out sorted by
/// label. Throws ValidationFailed if the result is not a partition.
inline Vocabulary make_vocabulary(ObjectModel object, const LabelMap& labels, std::string cloud_file = {}) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (const auto& [index, label] : labels) groups[label].push_back(index);

  Vocabulary vocab;
  vocab.object = std::move(object);
  vocab.cloud_file = std::move(cloud_file);
  for (auto& [label, indices] : groups) {
    if (indices.empty()) continue;
    vocab.subparts.push_back({label, std::move(indices)});
  }
  const PartitionReport report = validate_partition(vocab);
  if (!report.ok()) {
    std::string msg = "vocabulary is not a partition of " + vocab.object.label;
    if (!report.uncovered.empty()) msg += "; " + std::to_string(report.uncovered.size()) + " uncovered points";
    if (!report.out_of_range.empty()) msg += "; " + std::to_string(report.out_of_range.size()) + " indices out of range";
    for (const auto& p : report.problems) msg += "; " + p;
    fail(ErrorCode::kValidationFailed, msg);
  }
  return vocab;
}

inline LabelMap to_label_map(const Vocabulary& vocab) {
  LabelMap out;
  for (const auto& s : vocab.subparts)
    for (std::size_t i : s.point_indices) out[i] = s.label;
  return out;
}

// Vocabulary JSON:
// {"object_label", "cloud_file", "n_points", "subparts": [{"label", "point_indices"}]}

inline nlohmann::json vocabulary_to_json(const Vocabulary& vocab) {
  nlohmann::json parts = nlohmann::json::array();
  std::vector<const Subpart*> sorted;
  for (const auto& s : vocab.subparts) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](const Subpart* a, const Subpart* b) { return a->label < b->label; });
  for (const Subpart* s : sorted) {
    std::vector<std::size_t> idx = s->point_indices;
    std::sort(idx.begin(), idx.end());
    parts.push_back({{"label", s->label}, {"point_indices", idx}});
  }
  return {{"object_label", vocab.object.label},
          {"cloud_file", vocab.cloud_file},
          {"n_points", vocab.object.cloud.size()},
          {"subparts", parts}};
}

/// Canonical serialized form: compact JSON plus a trailing newline.
inline std::string dump_vocabulary(const Vocabulary& vocab) { return vocabulary_to_json(vocab).dump() + "\n"; }

/// Rebuilds a vocabulary from JSON against an already loaded cloud.
inline Vocabulary vocabulary_from_json(const nlohmann::json& j, PointCloud cloud) {
  try {
    const std::size_t n = j.at("n_points").get<std::size_t>();
    if (n != cloud.size()) {
      fail(ErrorCode::kValidationFailed, "vocabulary expects " + std::to_string(n) + " points, cloud has " +
                                             std::to_string(cloud.size()));
    }
    Vocabulary vocab;
    vocab.object = ObjectModel(j.at("object_label").get<std::string>(), std::move(cloud));
    vocab.cloud_file = j.value("cloud_file", std::string{});
    for (const auto& s : j.at("subparts")) {
      vocab.subparts.push_back({s.at("label").get<std::string>(), s.at("point_indices").get<std::vector<std::size_t>>()});
    }
    const PartitionReport report = validate_partition(vocab);
    if (!report.ok()) fail(ErrorCode::kValidationFailed, "vocabulary file does not describe a partition");
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidationFailed, std::string("vocabulary JSON: ") + e.what());
  }
}

}  // namespace graspvoc
