#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "onet/image.hpp"

namespace onet {

struct Sample {
  std::string id;
  std::string image_path;
  std::string mask_path;
  std::string view;        // CC / MLO
  std::string laterality;  // L / R
  std::string abn_type;    // calc / mass
  std::int64_t center_x = 0;
  std::int64_t center_y = 0;
  std::string split;  // train / test
  std::vector<Rect> markers;
};

struct Dataset {
  std::vector<Sample> samples;
  // (abn_type, split) -> count, for reporting the partition.
  std::map<std::pair<std::string, std::string>, std::int64_t> partition;
};

namespace detail {

// One CSV record; quoted fields may contain commas (marker rectangle lists).
inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::vector<Rect> parse_markers(const std::string& field, int line_no) {
  std::vector<Rect> rects;
  if (field.empty()) return rects;
  std::istringstream groups(field);
  std::string group;
  while (std::getline(groups, group, ';')) {
    std::istringstream parts(group);
    std::string tok;
    std::vector<std::int64_t> vals;
    while (std::getline(parts, tok, ',')) vals.push_back(std::stoll(tok));
    if (vals.size() != 4) {
      fail("manifest line " + std::to_string(line_no) +
           ": marker group '" + group + "' is not x,y,w,h");
    }
    rects.push_back({vals[0], vals[1], vals[2], vals[3]});
  }
  return rects;
}

inline std::string dirname(const std::string& path) {
  const auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

inline std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || p.front() == '/') return p;
  return base + "/" + p;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

inline const char* kManifestHeader =
    "id,image,mask,view,laterality,abn_type,center_x,center_y,split,markers";

// Relative image/mask paths resolve against the manifest's directory. The
// default filter keeps CC views only.
inline Dataset load_manifest(const std::string& path,
                             const std::string& view_filter = "CC",
                             const std::string& abn_filter = "") {
  std::ifstream is(path);
  if (!is) fail("load_manifest: cannot open '" + path + "'");
  const std::string base = detail::dirname(path);

  std::string line;
  int line_no = 0;
  if (!std::getline(is, line)) fail("load_manifest: '" + path + "' is empty");
  ++line_no;
  {
    auto header = detail::csv_split(line);
    auto expect = detail::csv_split(kManifestHeader);
    if (header != expect) {
      fail("load_manifest: line 1: bad header, expected '" +
           std::string(kManifestHeader) + "'");
    }
  }

  Dataset ds;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = detail::csv_split(line);
    if (f.size() != 10) {
      fail("load_manifest: line " + std::to_string(line_no) + ": expected 10 fields, got " +
           std::to_string(f.size()));
    }
    Sample s;
    s.id = f[0];
    s.image_path = detail::resolve(base, f[1]);
    s.mask_path = detail::resolve(base, f[2]);
    s.view = f[3];
    s.laterality = f[4];
    s.abn_type = f[5];
    try {
      s.center_x = std::stoll(f[6]);
      s.center_y = std::stoll(f[7]);
    } catch (const std::exception&) {
      fail("load_manifest: line " + std::to_string(line_no) +
           ": bad center coordinates");
    }
    s.split = f[8];
    s.markers = detail::parse_markers(f[9], line_no);

    if (!view_filter.empty() && s.view != view_filter) continue;
    if (!abn_filter.empty() && s.abn_type != abn_filter) continue;

    auto [w, h] = pgm_dims(s.image_path);  // fails naming the path
    std::ifstream mask_probe(s.mask_path);
    if (!mask_probe) {
      fail("load_manifest: sample '" + s.id + "': mask path '" + s.mask_path +
           "' is unresolvable");
    }
    if (s.center_x < 0 || s.center_x >= w || s.center_y < 0 ||
        s.center_y >= h) {
      fail("load_manifest: sample '" + s.id + "': center (" +
           std::to_string(s.center_x) + "," + std::to_string(s.center_y) +
           ") outside image bounds " + std::to_string(w) + "x" +
           std::to_string(h));
    }

    ds.partition[{s.abn_type, s.split}] += 1;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

struct ProcessedSample {
  Image image;  // ROI, equalized, markers removed
  Image mask;   // ROI-aligned binary mask
  double angle = 0.0;  // augmentation rotation, 0 for plain preprocessing
};

// ROI extraction, marker removal and per-ROI equalization for one sample.
inline ProcessedSample preprocess_sample(const Sample& s,
                                         std::int64_t roi_size = 1024) {
  const Image img = read_pgm(s.image_path);
  const Image mask = read_mask(s.mask_path);
  if (mask.width != img.width || mask.height != img.height) {
    fail("preprocess: sample '" + s.id + "': mask extent " +
         std::to_string(mask.width) + "x" + std::to_string(mask.height) +
         " does not match image");
  }

  auto [x0, y0] = roi_origin(img, s.center_x, s.center_y, roi_size);
  ProcessedSample out;
  out.image = extract_roi(img, s.center_x, s.center_y, roi_size);
  out.mask = extract_roi(mask, s.center_x, s.center_y, roi_size);

  std::vector<Rect> local;
  for (const auto& r : s.markers) {
    Rect lr{r.x - x0, r.y - y0, r.w, r.h};
    local.push_back(lr);
  }
  out.image = remove_markers(out.image, local);
  out.image = hist_equalize(out.image);
  return out;
}

namespace detail {

// Uniform draw in [0, 180] with an explicit bit construction, stable across
// standard libraries.
inline double draw_angle(std::mt19937_64& rng) {
  const double u =
      static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1)
  return 180.0 * u;
}

}  // namespace detail

// Rotate the full mammogram (bilinear) and its mask (nearest) by an angle
// drawn from the (sample id, seed)-keyed PRNG, then crop around the rotated
// abnormality center, zero the rotated marker boxes and equalize.
inline ProcessedSample augment_sample(const Sample& s, std::uint64_t seed,
                                      std::int64_t roi_size = 1024) {
  std::mt19937_64 rng(seed ^ detail::fnv1a(s.id));
  const double angle = detail::draw_angle(rng);

  const Image img = read_pgm(s.image_path);
  const Image mask = read_mask(s.mask_path);
  if (mask.width != img.width || mask.height != img.height) {
    fail("augment: sample '" + s.id + "': mask extent does not match image");
  }

  const Image rimg = rotate(img, angle, Interp::Bilinear);
  const Image rmask = rotate(mask, angle, Interp::Nearest);
  auto [cxd, cyd] =
      rotate_point(static_cast<double>(s.center_x),
                   static_cast<double>(s.center_y), angle,
                   static_cast<double>(img.width),
                   static_cast<double>(img.height));
  const std::int64_t cx = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::llround(cxd)), 0, img.width - 1);
  const std::int64_t cy = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::llround(cyd)), 0, img.height - 1);

  auto [x0, y0] = roi_origin(rimg, cx, cy, roi_size);
  ProcessedSample out;
  out.angle = angle;
  out.image = extract_roi(rimg, cx, cy, roi_size);
  out.mask = extract_roi(rmask, cx, cy, roi_size);

  std::vector<Rect> local;
  for (const auto& r : s.markers) {
    Rect rb = rotate_rect_bbox(r, angle, img.width, img.height);
    if (rb.w <= 0 || rb.h <= 0) continue;
    local.push_back({rb.x - x0, rb.y - y0, rb.w, rb.h});
  }
  out.image = remove_markers(out.image, local);
  out.image = hist_equalize(out.image);
  return out;
}

inline std::string manifest_row(const Sample& s) {
  std::ostringstream os;
  std::ostringstream markers;
  for (std::size_t i = 0; i < s.markers.size(); ++i) {
    if (i) markers << ";";
    markers << s.markers[i].x << "," << s.markers[i].y << ","
            << s.markers[i].w << "," << s.markers[i].h;
  }
  const std::string m = markers.str();
  os << s.id << "," << s.image_path << "," << s.mask_path << "," << s.view
     << "," << s.laterality << "," << s.abn_type << "," << s.center_x << ","
     << s.center_y << "," << s.split << ","
     << (m.empty() ? "" : "\"" + m + "\"");
  return os.str();
}

}  // namespace onet
