// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "graspvoc/error.hpp"
#include "graspvoc/geometry.hpp"

namespace graspvoc::io {

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

/// Fixed 9-significant-digit decimal used by every cloud writer.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string format_point(const Point3& p) {
  return format_real(p.x) + " " + format_real(p.y) + " " + format_real(p.z);
}

/// Whitespace-separated XYZ text, one point per line. Blank lines and lines
/// starting with '#' are skipped; extra columns after z are ignored.
inline PointCloud parse_xyz(const std::string& text, std::string frame_id = "object") {
  std::vector<Point3> pts;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    Point3 p;
    if (!(ls >> p.x >> p.y >> p.z)) {
      fail(ErrorCode::kIo, "xyz line " + std::to_string(line_no) + ": expected three numbers");
    }
    pts.push_back(p);
  }
  return PointCloud(std::move(pts), std::move(frame_id));
}

/// ASCII PLY. The vertex element must carry x, y and z properties; other
/// properties and elements are skipped.
inline PointCloud parse_ply(const std::string& text, std::string frame_id = "object") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) fail(ErrorCode::kIo, "missing 'ply' magic");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
    bool has_list = false;
  };
  std::vector<Element> elements;
  bool ascii = false;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (keyword == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (keyword == "property") {
      if (elements.empty()) fail(ErrorCode::kIo, "PLY property before any element");
      std::string type, name;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type;
        elements.back().has_list = true;
      }
      ls >> name;
      elements.back().properties.push_back(name);
    } else if (keyword == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) fail(ErrorCode::kIo, "PLY header not terminated");
  if (!ascii) fail(ErrorCode::kIo, "only ASCII PLY is supported");

  std::vector<Point3> pts;
  bool found_vertex = false;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i)
        if (!std::getline(in, line)) fail(ErrorCode::kIo, "PLY body truncated in element " + e.name);
      continue;
    }
    found_vertex = true;
    int ix = -1, iy = -1, iz = -1;
    for (std::size_t k = 0; k < e.properties.size(); ++k) {
      if (e.properties[k] == "x") ix = static_cast<int>(k);
      if (e.properties[k] == "y") iy = static_cast<int>(k);
      if (e.properties[k] == "z") iz = static_cast<int>(k);
    }
    if (ix < 0 || iy < 0 || iz < 0) fail(ErrorCode::kIo, "PLY vertex element lacks x/y/z");
    if (e.has_list) fail(ErrorCode::kIo, "list properties on vertices are not supported");
    pts.reserve(e.count);
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!std::getline(in, line)) fail(ErrorCode::kIo, "PLY body truncated at vertex " + std::to_string(i));
      std::istringstream ls(line);
      std::vector<double> values(e.properties.size());
      for (auto& v : values)
        if (!(ls >> v)) fail(ErrorCode::kIo, "PLY vertex " + std::to_string(i) + " is malformed");
      pts.push_back({values[static_cast<std::size_t>(ix)], values[static_cast<std::size_t>(iy)],
                     values[static_cast<std::size_t>(iz)]});
    }
  }
  if (!found_vertex) fail(ErrorCode::kIo, "PLY has no vertex element");
  return PointCloud(std::move(pts), std::move(frame_id));
}

inline std::string to_xyz(const PointCloud& cloud) {
  std::string out;
  for (const auto& p : cloud) {
    out += format_point(p);
    out += '\n';
  }
  return out;
}

inline std::string to_ply(const PointCloud& cloud) {
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  out += to_xyz(cloud);
  return out;
}

/// Dispatches on extension: `.ply` is PLY, anything else is XYZ text.
inline PointCloud load_cloud(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  if (path.extension() == ".ply") return parse_ply(text);
  return parse_xyz(text);
}

inline void save_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  write_text_file(path, path.extension() == ".ply" ? to_ply(cloud) : to_xyz(cloud));
}

}  // namespace graspvoc::io
