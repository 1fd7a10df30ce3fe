// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graspvoc/error.hpp"
#include "graspvoc/geometry.hpp"

namespace graspvoc {

struct Resolution {
  int width = 512;
  int height = 512;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

/// Row-major pixel address.
struct Pixel {
  int col = 0;
  int row = 0;

  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

inline std::size_t linear_index(const Pixel& p, const Resolution& res) {
  return static_cast<std::size_t>(p.row) * static_cast<std::size_t>(res.width) + static_cast<std::size_t>(p.col);
}

inline Pixel pixel_at(std::size_t linear, const Resolution& res) {
  const auto w = static_cast<std::size_t>(res.width);
  return {static_cast<int>(linear % w), static_cast<int>(linear / w)};
}

/// Orthographic camera looking along the least-variance PCA axis.
///
/// A point p maps to continuous image coordinates
///   x = W/2 + ((p - centroid) . u - u_center) * scale
///   y = H/2 - ((p - centroid) . v - v_center) * scale
/// and lands in pixel (floor(x), floor(y)), clamped to the image. Depth is
/// (p - centroid) . view; smaller depth is nearer the camera.
struct ViewFrame {
  Point3 u_axis;
  Point3 v_axis;
  Point3 view_axis;
  Point3 centroid;
  double u_center = 0.0;
  double v_center = 0.0;
  double scale = 1.0;  // pixels per meter
  Resolution resolution;

  double u_of(const Point3& p) const { return dot(p - centroid, u_axis); }
  double v_of(const Point3& p) const { return dot(p - centroid, v_axis); }
  double depth_of(const Point3& p) const { return dot(p - centroid, view_axis); }

  double image_x(const Point3& p) const { return resolution.width / 2.0 + (u_of(p) - u_center) * scale; }
  double image_y(const Point3& p) const { return resolution.height / 2.0 - (v_of(p) - v_center) * scale; }

  Pixel pixel_of(const Point3& p) const {
    const auto clamp = [](double c, int size) {
      const double f = std::floor(c);
      if (f < 0.0) return 0;
      if (f > size - 1) return size - 1;
      return static_cast<int>(f);
    };
    return {clamp(image_x(p), resolution.width), clamp(image_y(p), resolution.height)};
  }
};

inline constexpr double kDefaultMargin = 0.05;
inline constexpr int kDefaultSplatRadius = 2;
inline constexpr double kDefaultDepthQuantile = 0.6;

inline ViewFrame compute_view(const PointCloud& cloud, Resolution resolution = {}, double margin_fraction = kDefaultMargin) {
  if (resolution.width < 16 || resolution.height < 16) {
    fail(ErrorCode::kInvalidArgument, "resolution must be at least 16x16");
  }
  if (!(margin_fraction >= 0.0 && margin_fraction < 0.5)) {
    fail(ErrorCode::kInvalidArgument, "margin fraction must be in [0, 0.5)");
  }
  const PcaFrame pca = pca_frame(cloud);
  ViewFrame view;
  view.u_axis = pca.axes[0];
  view.v_axis = pca.axes[1];
  view.view_axis = pca.axes[2];
  view.centroid = pca.centroid;
  view.resolution = resolution;

  double umin = std::numeric_limits<double>::infinity(), umax = -umin;
  double vmin = umin, vmax = -umin;
  for (const auto& p : cloud) {
    const double u = view.u_of(p), v = view.v_of(p);
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  view.u_center = 0.5 * (umin + umax);
  view.v_center = 0.5 * (vmin + vmax);
  const double usable_w = resolution.width * (1.0 - 2.0 * margin_fraction);
  const double usable_h = resolution.height * (1.0 - 2.0 * margin_fraction);
  const double su = umax > umin ? usable_w / (umax - umin) : std::numeric_limits<double>::infinity();
  const double sv = vmax > vmin ? usable_h / (vmax - vmin) : std::numeric_limits<double>::infinity();
  view.scale = std::min(su, sv);
  if (!std::isfinite(view.scale) || view.scale <= 0.0) {
    fail(ErrorCode::kDegenerateCloud, "cloud has no extent in the image plane");
  }
  return view;
}

/// 8-bit grayscale image, row-major.
struct GrayImage {
  Resolution resolution;
  std::vector<std::uint8_t> pixels;
};

struct RenderResult {
  GrayImage image;
  std::map<std::size_t, std::vector<std::size_t>> pixel_points;  // linear pixel -> visible point indices (ascending)
  std::map<std::size_t, std::size_t> point_pixel;                // visible point -> linear pixel

  std::vector<std::size_t> visible_points() const {
    std::vector<std::size_t> out;
    out.reserve(point_pixel.size());
    for (const auto& [point, pixel] : point_pixel) out.push_back(point);
    return out;
  }
};

/// Orthographic splat rasterization with a local depth test.
///
/// A point is visible when its depth lies in the front `depth_quantile`
/// fraction of the depth range [dmin, dmax] spanned by all points landing in
/// its (2r+1)^2 pixel neighbourhood. The image holds the nearest depth per
/// pixel after splatting with radius r, normalized over the whole cloud to
/// 0 (nearest) .. 255 (farthest); empty pixels are 255.
inline RenderResult render(const PointCloud& cloud, const ViewFrame& view, int splat_radius_px = kDefaultSplatRadius,
                           double depth_quantile = kDefaultDepthQuantile) {
  if (splat_radius_px < 0) fail(ErrorCode::kInvalidArgument, "splat radius must be non-negative");
  if (!(depth_quantile > 0.0 && depth_quantile <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "depth quantile must be in (0, 1]");
  }
  const Resolution res = view.resolution;
  const std::size_t n_pix = res.pixel_count();
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> pix(cloud.size());
  std::vector<double> depth(cloud.size());
  std::vector<double> cell_min(n_pix, inf), cell_max(n_pix, -inf);
  double dmin_all = inf, dmax_all = -inf;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    pix[i] = linear_index(view.pixel_of(cloud[i]), res);
    depth[i] = view.depth_of(cloud[i]);
    cell_min[pix[i]] = std::min(cell_min[pix[i]], depth[i]);
    cell_max[pix[i]] = std::max(cell_max[pix[i]], depth[i]);
    dmin_all = std::min(dmin_all, depth[i]);
    dmax_all = std::max(dmax_all, depth[i]);
  }

  const int r = splat_radius_px;
  RenderResult rr;
  std::vector<double> nearest(n_pix, inf);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Pixel p = pixel_at(pix[i], res);
    double lo = inf, hi = -inf;
    for (int dr = -r; dr <= r; ++dr) {
      const int row = p.row + dr;
      if (row < 0 || row >= res.height) continue;
      for (int dc = -r; dc <= r; ++dc) {
        const int col = p.col + dc;
        if (col < 0 || col >= res.width) continue;
        const std::size_t q = linear_index({col, row}, res);
        lo = std::min(lo, cell_min[q]);
        hi = std::max(hi, cell_max[q]);
        nearest[q] = std::min(nearest[q], depth[i]);
      }
    }
    if (depth[i] <= lo + depth_quantile * (hi - lo)) {
      rr.pixel_points[pix[i]].push_back(i);
      rr.point_pixel.emplace(i, pix[i]);
    }
  }

  rr.image.resolution = res;
  rr.image.pixels.assign(n_pix, 255);
  const double range = dmax_all - dmin_all;
  for (std::size_t q = 0; q < n_pix; ++q) {
    if (nearest[q] == inf) continue;
    const double t = range > 0.0 ? (nearest[q] - dmin_all) / range : 0.0;
    rr.image.pixels[q] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  }
  return rr;
}

/// Binary PGM (P5), 8-bit.
inline std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.resolution.width) + " " + std::to_string(image.resolution.height) + "\n255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

/// 2D region from the segmenter; `pixels` holds sorted unique linear indices.
struct Mask2D {
  int id = 0;
  std::vector<std::size_t> pixels;

  std::size_t area() const { return pixels.size(); }
};

inline Mask2D make_mask(int id, std::vector<std::size_t> pixels, const Resolution& res) {
  std::sort(pixels.begin(), pixels.end());
  pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
  if (pixels.empty()) fail(ErrorCode::kValidationFailed, "mask " + std::to_string(id) + " is empty");
  if (pixels.back() >= res.pixel_count()) {
    fail(ErrorCode::kValidationFailed, "mask " + std::to_string(id) + " exceeds the image bounds");
  }
  return {id, std::move(pixels)};
}

/// Row-major run-length encoding: alternating skip/fill counts, starting with
/// a skip (possibly 0) and ending on the last fill run.
inline std::vector<std::size_t> rle_encode(const std::vector<std::size_t>& sorted_pixels) {
  std::vector<std::size_t> runs;
  std::size_t cursor = 0;
  std::size_t i = 0;
  while (i < sorted_pixels.size()) {
    const std::size_t start = sorted_pixels[i];
    std::size_t j = i + 1;
    while (j < sorted_pixels.size() && sorted_pixels[j] == sorted_pixels[j - 1] + 1) ++j;
    runs.push_back(start - cursor);
    runs.push_back(j - i);
    cursor = start + (j - i);
    i = j;
  }
  return runs;
}

inline std::vector<std::size_t> rle_decode(const std::vector<std::size_t>& runs, const Resolution& res) {
  std::vector<std::size_t> pixels;
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    if (k % 2 == 1) {
      for (std::size_t c = 0; c < runs[k]; ++c) pixels.push_back(cursor + c);
    }
    cursor += runs[k];
    if (cursor > res.pixel_count()) fail(ErrorCode::kValidationFailed, "RLE runs exceed image size");
  }
  return pixels;
}

/// {"masks": [{"id": int, "rle": [int, ...]}]}
inline nlohmann::json masks_to_json(const std::vector<Mask2D>& masks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : masks) arr.push_back({{"id", m.id}, {"rle", rle_encode(m.pixels)}});
  return {{"masks", arr}};
}

inline std::vector<Mask2D> masks_from_json(const nlohmann::json& j, const Resolution& res) {
  std::vector<Mask2D> masks;
  std::set<int> ids;
  try {
    for (const auto& m : j.at("masks")) {
      const int id = m.at("id").get<int>();
      if (!ids.insert(id).second) fail(ErrorCode::kValidationFailed, "duplicate mask id " + std::to_string(id));
      masks.push_back(make_mask(id, rle_decode(m.at("rle").get<std::vector<std::size_t>>(), res), res));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedResponse, std::string("mask JSON: ") + e.what());
  }
  return masks;
}

/// Union of the visible points under the mask's pixels.
inline std::vector<std::size_t> backproject(const std::vector<std::size_t>& mask_pixels, const RenderResult& rr) {
  std::vector<std::size_t> out;
  for (std::size_t px : mask_pixels) {
    const auto it = rr.pixel_points.find(px);
    if (it != rr.pixel_points.end()) out.insert(out.end(), it->second.begin(), it->second.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<std::size_t> backproject(const Mask2D& mask, const RenderResult& rr) {
  return backproject(mask.pixels, rr);
}

}  // namespace graspvoc
