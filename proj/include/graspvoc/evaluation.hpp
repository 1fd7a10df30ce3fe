// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graspvoc/error.hpp"

namespace graspvoc {

/// Consolidated multi-annotator ground truth: per-point selection counts.
struct GroundTruth {
  std::size_t n_points = 0;
  std::vector<int> counts;
  int n_participants = 0;
};

struct RegionMetrics {
  double weighted_iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

inline GroundTruth consolidate(const std::vector<std::vector<std::size_t>>& selections, std::size_t n_points) {
  if (selections.empty()) fail(ErrorCode::kEmptyList, "no participant selections");
  GroundTruth gt;
  gt.n_points = n_points;
  gt.counts.assign(n_points, 0);
  gt.n_participants = static_cast<int>(selections.size());
  for (const auto& sel : selections) {
    const std::set<std::size_t> unique(sel.begin(), sel.end());
    for (std::size_t i : unique) {
      if (i >= n_points) fail(ErrorCode::kOutOfRange, "selected point " + std::to_string(i) + " >= " + std::to_string(n_points));
      ++gt.counts[i];
    }
  }
  if (std::none_of(gt.counts.begin(), gt.counts.end(), [](int c) { return c > 0; })) {
    fail(ErrorCode::kValidationFailed, "ground truth selects no point");
  }
  return gt;
}

/// Agreement-weighted IoU, precision and recall of a predicted point set.
///
/// Ground-truth points weigh counts[i] / K. Predicted points outside the
/// ground truth weigh 1 / K, i.e. one participant's worth of disagreement.
inline RegionMetrics region_metrics(const std::vector<std::size_t>& pred, const GroundTruth& gt) {
  if (gt.n_participants < 1 || gt.counts.size() != gt.n_points) {
    fail(ErrorCode::kValidationFailed, "malformed ground truth");
  }
  const std::set<std::size_t> p(pred.begin(), pred.end());
  for (std::size_t i : p)
    if (i >= gt.n_points) fail(ErrorCode::kOutOfRange, "predicted point " + std::to_string(i) + " >= " + std::to_string(gt.n_points));
  if (p.empty()) return {};

  const double k = gt.n_participants;
  double inter = 0.0, gt_total = 0.0, pred_only = 0.0, pred_in_gt = 0.0;
  for (std::size_t i = 0; i < gt.n_points; ++i) {
    const double w = gt.counts[i] / k;
    const bool in_pred = p.contains(i);
    if (gt.counts[i] > 0) {
      gt_total += w;
      if (in_pred) {
        inter += w;
        pred_in_gt += w;
      }
    } else if (in_pred) {
      pred_only += 1.0 / k;
    }
  }
  RegionMetrics m;
  m.weighted_iou = inter / (gt_total + pred_only);
  m.precision = inter / (pred_in_gt + pred_only);
  m.recall = inter / gt_total;
  return m;
}

inline RegionMetrics average_runs(const std::vector<RegionMetrics>& runs) {
  if (runs.empty()) fail(ErrorCode::kEmptyList, "no runs to average");
  RegionMetrics sum;
  for (const auto& r : runs) {
    sum.weighted_iou += r.weighted_iou;
    sum.precision += r.precision;
    sum.recall += r.recall;
  }
  const double n = static_cast<double>(runs.size());
  return {sum.weighted_iou / n, sum.precision / n, sum.recall / n};
}

struct PreferenceTally {
  int n_responses = 0;
  int chosen_optimal = 0;
  std::array<int, 3> chosen_controls{};
  int chosen_none = 0;
};

/// One-sided exact upper tail P[X >= k] for X ~ Binomial(n, p0).
///
/// Terms are accumulated in log space from a log-factorial table (extended
/// precision), so n up to 1e5 neither overflows nor underflows prematurely.
inline double binomial_upper_tail(int n, int k, double p0) {
  if (n < 1) fail(ErrorCode::kNoGraspResponses, "binomial test needs at least one response");
  if (!(p0 > 0.0 && p0 < 1.0)) fail(ErrorCode::kInvalidArgument, "p0 must lie in (0, 1)");
  if (k < 0 || k > n) fail(ErrorCode::kInvalidArgument, "successes must lie in [0, n]");
  if (k == 0) return 1.0;

  std::vector<long double> log_fact(static_cast<std::size_t>(n) + 1, 0.0L);
  for (int i = 2; i <= n; ++i) log_fact[i] = log_fact[i - 1] + std::log(static_cast<long double>(i));
  const long double lp = std::log(static_cast<long double>(p0));
  const long double lq = std::log1p(-static_cast<long double>(p0));

  // Smallest terms first.
  long double tail = 0.0L;
  for (int j = n; j >= k; --j) {
    const long double log_term = log_fact[n] - log_fact[j] - log_fact[n - j] + j * lp + (n - j) * lq;
    tail += std::exp(log_term);
  }
  return static_cast<double>(std::min(tail, 1.0L));
}

/// P-value that participants favour the optimal grasp over a uniform choice
/// among the grasp options. By default "none" answers are left out of n.
inline double binomial_preference_test(const PreferenceTally& tally, double p0 = 0.25, bool exclude_none = true) {
  const int grasp_responses = tally.chosen_optimal + tally.chosen_controls[0] + tally.chosen_controls[1] + tally.chosen_controls[2];
  if (grasp_responses + tally.chosen_none != tally.n_responses) {
    fail(ErrorCode::kValidationFailed, "preference tally parts do not sum to n_responses");
  }
  if (grasp_responses < 1) fail(ErrorCode::kNoGraspResponses, "every response was 'none'");
  return binomial_upper_tail(exclude_none ? grasp_responses : tally.n_responses, tally.chosen_optimal, p0);
}

// ---------------------------------------------------------------------------
// JSON

struct GroundTruthFile {
  std::string object_label;
  std::string task;
  GroundTruth gt;
};

/// {"object_label", "task", "n_points", "selections": [[int,...],...]}
inline GroundTruthFile ground_truth_from_json(const nlohmann::json& j) {
  try {
    GroundTruthFile f;
    f.object_label = j.at("object_label").get<std::string>();
    f.task = j.at("task").get<std::string>();
    f.gt = consolidate(j.at("selections").get<std::vector<std::vector<std::size_t>>>(), j.at("n_points").get<std::size_t>());
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidationFailed, std::string("ground truth: ") + e.what());
  }
}

inline nlohmann::json metrics_to_json(const RegionMetrics& m) {
  return {{"weighted_iou", m.weighted_iou}, {"precision", m.precision}, {"recall", m.recall}};
}

}  // namespace graspvoc
