// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "graspvoc/error.hpp"
#include "graspvoc/object_model.hpp"
#include "graspvoc/providers.hpp"
#include "graspvoc/viewrender.hpp"

namespace graspvoc {

struct SegmentationParams {
  Resolution resolution{512, 512};
  double margin_fraction = kDefaultMargin;
  int splat_radius_px = kDefaultSplatRadius;
  double depth_quantile = kDefaultDepthQuantile;
  std::size_t min_subpart_points = 5;
};

inline json segmentation_params_to_json(const SegmentationParams& p) {
  return {{"resolution", {p.resolution.width, p.resolution.height}},
          {"margin_fraction", p.margin_fraction},
          {"splat_radius_px", p.splat_radius_px},
          {"depth_quantile", p.depth_quantile},
          {"overlap_policy", "smallest-mask-wins"},
          {"min_subpart_points", p.min_subpart_points}};
}

/// Pixel -> label after combining same-label masks and resolving overlaps.
///
/// Each pixel takes the label of the smallest covering labeled mask (ties:
/// lowest id). Background masks never claim pixels, and masks missing from
/// `assignment` count as background.
inline std::map<std::size_t, std::string> merge_and_resolve(const std::vector<Mask2D>& masks,
                                                            const std::map<int, std::string>& assignment) {
  std::set<int> ids;
  for (const auto& m : masks) ids.insert(m.id);
  for (const auto& [id, label] : assignment) {
    if (!ids.contains(id)) fail(ErrorCode::kInvalidArgument, "assignment references unknown mask " + std::to_string(id));
  }

  std::vector<const Mask2D*> labeled;
  for (const auto& m : masks) {
    const auto it = assignment.find(m.id);
    if (it != assignment.end() && it->second != kBackgroundLabel) labeled.push_back(&m);
  }
  std::sort(labeled.begin(), labeled.end(), [](const Mask2D* a, const Mask2D* b) {
    return std::tuple(a->area(), a->id) < std::tuple(b->area(), b->id);
  });

  std::map<std::size_t, std::string> out;
  for (const Mask2D* m : labeled) {
    const std::string& label = assignment.at(m->id);
    for (std::size_t px : m->pixels) out.emplace(px, label);
  }
  return out;
}

/// Intermediate products of one segmentation run, for debugging output.
struct SegmentationTrace {
  ViewFrame view;
  RenderResult render;
  std::vector<Mask2D> masks;
  std::vector<std::string> candidates;
  std::map<int, std::string> assignment;
  std::vector<std::string> dissolved;
};

/// Render, segment, label, resolve overlaps, back-project and propagate.
inline Vocabulary segment_object(const ObjectModel& object, SegmenterProvider& segmenter, VisionLanguageProvider& vlm,
                                 const SegmentationParams& params = {}, const std::string& cloud_file = {},
                                 SegmentationTrace* trace = nullptr) {
  if (params.min_subpart_points < 1) fail(ErrorCode::kInvalidArgument, "min_subpart_points must be at least 1");
  SegmentationTrace local;
  SegmentationTrace& t = trace ? *trace : local;

  t.view = compute_view(object.cloud, params.resolution, params.margin_fraction);
  t.render = render(object.cloud, t.view, params.splat_radius_px, params.depth_quantile);
  const GrayImage& image = t.render.image;

  t.masks = segmenter.segment(image);
  for (const auto& m : t.masks) {
    if (m.pixels.empty() || m.pixels.back() >= image.resolution.pixel_count()) {
      fail(ErrorCode::kValidationFailed, "segmenter mask " + std::to_string(m.id) + " is empty or out of bounds");
    }
  }
  if (t.masks.empty()) fail(ErrorCode::kSegmentationEmpty, "segmenter returned no masks");

  t.candidates = vlm.candidate_labels(object.label, image);
  t.assignment = vlm.assign_labels(object.label, image, t.masks, t.candidates);

  const auto pixel_labels = merge_and_resolve(t.masks, t.assignment);
  if (pixel_labels.empty()) fail(ErrorCode::kSegmentationEmpty, "every mask was assigned to background");

  LabelMap partial;
  for (const auto& [px, label] : pixel_labels) {
    const auto it = t.render.pixel_points.find(px);
    if (it == t.render.pixel_points.end()) continue;
    for (std::size_t i : it->second) partial.emplace(i, label);
  }
  if (partial.empty()) fail(ErrorCode::kSegmentationEmpty, "labeled masks cover no visible point");

  // Dissolve speck subparts; if nothing reaches the threshold keep the largest.
  std::map<std::string, std::size_t> counts;
  for (const auto& [i, label] : partial) ++counts[label];
  std::string largest;
  std::size_t largest_count = 0;
  for (const auto& [label, c] : counts) {
    if (c > largest_count) {
      largest = label;
      largest_count = c;
    }
  }
  std::set<std::string> keep;
  for (const auto& [label, c] : counts) {
    if (c >= params.min_subpart_points) keep.insert(label);
    else t.dissolved.push_back(label);
  }
  if (keep.empty()) {
    keep.insert(largest);
    std::erase(t.dissolved, largest);
  }
  std::erase_if(partial, [&](const auto& kv) { return !keep.contains(kv.second); });

  return make_vocabulary(object, propagate_labels(object.cloud, partial), cloud_file);
}

}  // namespace graspvoc
