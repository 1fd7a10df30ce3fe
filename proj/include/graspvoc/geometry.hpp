// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "graspvoc/error.hpp"

namespace graspvoc {

/// 3D point or vector in the object frame (meters).
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Point3() = default;
  constexpr Point3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Point3 operator+(const Point3& a, const Point3& b) {
    return {a.x + b.x, a.y + b.y, a.z + b.z};
  }
  friend constexpr Point3 operator-(const Point3& a, const Point3& b) {
    return {a.x - b.x, a.y - b.y, a.z - b.z};
  }
  friend constexpr Point3 operator*(double s, const Point3& a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr Point3 operator*(const Point3& a, double s) { return s * a; }
  friend constexpr Point3 operator-(const Point3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr bool operator==(const Point3&, const Point3&) = default;

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline constexpr double dot(const Point3& a, const Point3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline constexpr Point3 cross(const Point3& a, const Point3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Point3& a) { return std::sqrt(dot(a, a)); }

/// Squared Euclidean distance. Every nearest-neighbour path in the library
/// uses this exact expression so results are bit-comparable.
inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline double distance(const Point3& a, const Point3& b) { return std::sqrt(squared_distance(a, b)); }

/// Ordered point set. Index order is the identity of every point downstream,
/// so the class exposes no mutation after construction.
class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(std::vector<Point3> points, std::string frame_id = "object")
      : points_(std::move(points)), frame_id_(std::move(frame_id)) {
    if (points_.empty()) fail(ErrorCode::kEmptyCloud, "point cloud has no points");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!points_[i].finite()) {
        fail(ErrorCode::kInvalidArgument, "point " + std::to_string(i) + " has a non-finite coordinate");
      }
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const Point3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Point3> points() const noexcept { return points_; }
  const std::string& frame_id() const noexcept { return frame_id_; }

  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Point3> points_;
  std::string frame_id_ = "object";
};

/// Principal axes of a cloud. `axes` are ordered by descending variance and
/// form a right-handed orthonormal basis.
struct PcaFrame {
  Point3 centroid;
  std::array<Point3, 3> axes;
  std::array<double, 3> variances{};
};

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline double off_diagonal_norm(const Mat3& a) {
  return std::sqrt(2.0 * (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]));
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix. Columns of
/// `vectors` are the eigenvectors matching `values`.
inline void jacobi_eigen(Mat3 a, std::array<double, 3>& values, Mat3& vectors) {
  vectors = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  double frob = 0.0;
  for (const auto& row : a)
    for (double v : row) frob += v * v;
  frob = std::sqrt(frob);

  constexpr double kTolerance = 1e-12;
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = off_diagonal_norm(a);
    if (off <= kTolerance * frob) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p];
          const double akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k];
          const double aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = vectors[k][p];
          const double vkq = vectors[k][q];
          vectors[k][p] = c * vkp - s * vkq;
          vectors[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  for (int i = 0; i < 3; ++i) values[i] = a[i][i];
}

inline Point3 normalized(const Point3& v) { return (1.0 / norm(v)) * v; }

/// Flip so the largest-magnitude component is positive (first one wins ties).
inline Point3 sign_normalized(const Point3& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  return v[best] < 0.0 ? -v : v;
}

}  // namespace detail

/// Centroid plus eigen-decomposition of the population (1/N) covariance.
///
/// Axes are sign-normalized so each one's largest-magnitude component is
/// positive; if that leaves a left-handed basis the third axis is negated.
/// Eigenvalues closer than 1e-12 * trace share an eigenspace whose basis is
/// rebuilt by Gram-Schmidt over the world axes (x, y, z) so that symmetric
/// shapes still get a reproducible frame.
inline PcaFrame pca_frame(const PointCloud& cloud) {
  if (cloud.size() < 3) fail(ErrorCode::kDegenerateCloud, "PCA needs at least 3 points");

  const double n = static_cast<double>(cloud.size());
  Point3 centroid;
  for (const auto& p : cloud) centroid = centroid + p;
  centroid = (1.0 / n) * centroid;

  detail::Mat3 cov{};
  for (const auto& p : cloud) {
    const Point3 d = p - centroid;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = r; c < 3; ++c) cov[r][c] += d[r] * d[c];
  }
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = r; c < 3; ++c) {
      cov[r][c] /= n;
      cov[c][r] = cov[r][c];
    }
  }
  const double trace = cov[0][0] + cov[1][1] + cov[2][2];
  if (!(trace > 0.0)) fail(ErrorCode::kDegenerateCloud, "all points coincide");

  std::array<double, 3> values{};
  detail::Mat3 vecs{};
  detail::jacobi_eigen(cov, values, vecs);

  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });

  PcaFrame frame;
  frame.centroid = centroid;
  for (int i = 0; i < 3; ++i) {
    const int col = order[i];
    frame.variances[i] = std::max(0.0, values[col]);
    frame.axes[i] = detail::normalized(Point3{vecs[0][col], vecs[1][col], vecs[2][col]});
  }

  // Rebuild bases of (near-)degenerate eigenspaces deterministically.
  const double gap_tol = 1e-12 * trace;
  std::size_t start = 0;
  while (start < 3) {
    std::size_t stop = start + 1;
    while (stop < 3 && frame.variances[stop - 1] - frame.variances[stop] < gap_tol) ++stop;
    if (stop - start > 1) {
      std::vector<Point3> span(frame.axes.begin() + static_cast<std::ptrdiff_t>(start),
                               frame.axes.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<Point3> chosen;
      const std::array<Point3, 3> world{Point3{1, 0, 0}, Point3{0, 1, 0}, Point3{0, 0, 1}};
      for (const auto& e : world) {
        if (chosen.size() == span.size()) break;
        Point3 w;
        for (const auto& s : span) w = w + dot(e, s) * s;
        for (const auto& c : chosen) w = w - dot(w, c) * c;
        if (norm(w) > 1e-6) chosen.push_back(detail::normalized(w));
      }
      for (std::size_t k = 0; k < chosen.size(); ++k) frame.axes[start + k] = chosen[k];
    }
    start = stop;
  }

  for (auto& axis : frame.axes) axis = detail::sign_normalized(axis);
  if (dot(cross(frame.axes[0], frame.axes[1]), frame.axes[2]) < 0.0) frame.axes[2] = -frame.axes[2];
  return frame;
}

/// Index of the closest point by linear scan; ties go to the lowest index.
inline std::size_t nearest_index(const Point3& query, const PointCloud& cloud) {
  if (cloud.empty()) fail(ErrorCode::kEmptyCloud, "nearest-neighbour query on empty cloud");
  std::size_t best = 0;
  double best_d2 = squared_distance(query, cloud[0]);
  for (std::size_t i = 1; i < cloud.size(); ++i) {
    const double d2 = squared_distance(query, cloud[i]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

inline double nearest_distance(const Point3& query, const PointCloud& cloud) {
  return distance(query, cloud[nearest_index(query, cloud)]);
}

/// Static k-d tree over a cloud for repeated exact nearest-neighbour queries.
/// Answers are identical to `nearest_index` / `nearest_distance`, including
/// the lowest-index tie rule.
class PointIndex {
 public:
  struct Hit {
    std::size_t index = 0;
    double squared_distance = 0.0;
    double distance() const { return std::sqrt(squared_distance); }
  };

  explicit PointIndex(std::span<const Point3> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) fail(ErrorCode::kEmptyCloud, "cannot index an empty cloud");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(points_.size());
    root_ = build(0, order_.size());
  }
  explicit PointIndex(const PointCloud& cloud) : PointIndex(cloud.points()) {}

  std::size_t size() const noexcept { return points_.size(); }

  Hit nearest(const Point3& query) const {
    Hit best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
    search(root_, query, best);
    return best;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct Node {
    std::size_t begin = 0, end = 0;  // range into order_ (leaves only)
    std::size_t left = kNone, right = kNone;
    int axis = 0;
    double split = 0.0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return nodes_.size() - 1;
    }
    Point3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& p = points_[order_[i]];
      for (std::size_t k = 0; k < 3; ++k) {
        lo[k] = std::min(lo[k], p[k]);
        hi[k] = std::max(hi[k], p[k]);
      }
    }
    int axis = 0;
    for (int k = 1; k < 3; ++k)
      if (hi[k] - lo[k] > hi[axis] - lo[axis]) axis = k;
    const std::size_t mid = begin + (end - begin) / 2;
    auto first = order_.begin() + static_cast<std::ptrdiff_t>(begin);
    std::nth_element(first, order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       const double pa = points_[a][axis], pb = points_[b][axis];
                       return pa < pb || (pa == pb && a < b);
                     });
    node.axis = axis;
    node.split = points_[order_[mid]][axis];
    nodes_.push_back(node);
    const std::size_t id = nodes_.size() - 1;
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(std::size_t id, const Point3& q, Hit& best) const {
    const Node& node = nodes_[id];
    if (node.left == kNone) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const double d2 = squared_distance(q, points_[idx]);
        if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) {
          best = {idx, d2};
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const std::size_t near = diff < 0.0 ? node.left : node.right;
    const std::size_t far = diff < 0.0 ? node.right : node.left;
    search(near, q, best);
    // Equal-distance candidates must still be visited for the tie rule.
    if (diff * diff <= best.squared_distance) search(far, q, best);
  }

  std::vector<Point3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t root_ = 0;
};

}  // namespace graspvoc
