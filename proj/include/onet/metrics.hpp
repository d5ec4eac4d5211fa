#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "onet/graph.hpp"
#include "onet/image.hpp"

namespace onet {

struct PixelCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
};

inline PixelCounts confusion_pixels(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height) {
    fail("confusion_pixels: extents differ");
  }
  PixelCounts c;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool p = pred.pixels[i] > 0;
    const bool t = gt.pixels[i] > 0;
    if (p && t) ++c.tp;
    else if (p && !t) ++c.fp;
    else if (!p && t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// 2TP / (2TP + FP + FN); 1.0 when both masks are empty.
inline double dice_from_counts(const PixelCounts& c) {
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) /
                                static_cast<double>(denom);
}

// TP / (TP + FP + FN); 1.0 when both masks are empty.
inline double iou_from_counts(const PixelCounts& c) {
  const std::int64_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) /
                                static_cast<double>(denom);
}

inline double dice(const Image& pred, const Image& gt) {
  return dice_from_counts(confusion_pixels(pred, gt));
}

inline double iou(const Image& pred, const Image& gt) {
  return iou_from_counts(confusion_pixels(pred, gt));
}

struct Component {
  std::int64_t area = 0;
  Rect bbox;
  std::vector<std::int64_t> pixels;  // flat indices
};

// 4-connected components of a binary mask; components under min_area are
// discarded.
inline std::vector<Component> detect_components(const Image& mask,
                                                std::int64_t min_area = 50) {
  std::vector<Component> out;
  std::vector<char> seen(mask.pixels.size(), 0);
  const std::int64_t w = mask.width;
  const std::int64_t h = mask.height;
  for (std::int64_t start = 0;
       start < static_cast<std::int64_t>(mask.pixels.size()); ++start) {
    if (seen[static_cast<std::size_t>(start)] ||
        mask.pixels[static_cast<std::size_t>(start)] == 0) {
      continue;
    }
    Component comp;
    std::int64_t min_x = w, min_y = h, max_x = -1, max_y = -1;
    std::deque<std::int64_t> queue{start};
    seen[static_cast<std::size_t>(start)] = 1;
    while (!queue.empty()) {
      const std::int64_t cur = queue.front();
      queue.pop_front();
      comp.pixels.push_back(cur);
      const std::int64_t y = cur / w;
      const std::int64_t x = cur % w;
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
      const std::int64_t nb[4] = {cur - w, cur + w, cur - 1, cur + 1};
      const bool ok[4] = {y > 0, y < h - 1, x > 0, x < w - 1};
      for (int k = 0; k < 4; ++k) {
        if (!ok[k]) continue;
        const auto ni = static_cast<std::size_t>(nb[k]);
        if (!seen[ni] && mask.pixels[ni] > 0) {
          seen[ni] = 1;
          queue.push_back(nb[k]);
        }
      }
    }
    comp.area = static_cast<std::int64_t>(comp.pixels.size());
    comp.bbox = {min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
    if (comp.area >= min_area) out.push_back(std::move(comp));
  }
  return out;
}

// A sample counts correct iff Dice >= tau against a non-empty ground truth,
// or the prediction has no surviving component when the ground truth is
// empty.
inline bool subject_classification(const Image& pred, const Image& gt,
                                   double tau = 0.2,
                                   std::int64_t min_area = 50) {
  bool gt_empty = true;
  for (auto v : gt.pixels) {
    if (v > 0) {
      gt_empty = false;
      break;
    }
  }
  if (gt_empty) return detect_components(pred, min_area).empty();
  return dice(pred, gt) >= tau;
}

struct RgbImage {
  std::int64_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major
};

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("write_ppm: cannot open '" + path + "'");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) fail("write_ppm: write failed for '" + path + "'");
}

// Grayscale base with the ground-truth region tinted red (50% blend) and
// 1 px predicted-component boundaries in pure yellow.
inline RgbImage overlay_render(const Image& img, const Image& gt,
                               const Image& pred) {
  if (gt.width != img.width || gt.height != img.height ||
      pred.width != img.width || pred.height != img.height) {
    fail("overlay_render: extents differ");
  }
  RgbImage out;
  out.width = img.width;
  out.height = img.height;
  out.rgb.resize(static_cast<std::size_t>(3 * img.width * img.height));

  const double scale = 255.0 / static_cast<double>(img.maxval());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto g = static_cast<std::uint8_t>(
        std::llround(static_cast<double>(img.pixels[i]) * scale));
    out.rgb[3 * i] = g;
    out.rgb[3 * i + 1] = g;
    out.rgb[3 * i + 2] = g;
    if (gt.pixels[i] > 0) {
      out.rgb[3 * i] = static_cast<std::uint8_t>((g + 255) / 2);
      out.rgb[3 * i + 1] = static_cast<std::uint8_t>(g / 2);
      out.rgb[3 * i + 2] = static_cast<std::uint8_t>(g / 2);
    }
  }

  const std::int64_t w = img.width;
  const std::int64_t h = img.height;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      if (pred.pixels[i] == 0) continue;
      // boundary pixel: a 4-neighbor missing or outside the component
      bool boundary = false;
      const std::int64_t ny[4] = {y - 1, y + 1, y, y};
      const std::int64_t nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4 && !boundary; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) {
          boundary = true;
        } else if (pred.pixels[static_cast<std::size_t>(ny[k] * w + nx[k])] ==
                   0) {
          boundary = true;
        }
      }
      if (boundary) {
        out.rgb[3 * i] = 255;
        out.rgb[3 * i + 1] = 255;
        out.rgb[3 * i + 2] = 0;
      }
    }
  }
  return out;
}

struct SampleEval {
  std::string id;
  std::string abn_type;
  double dice = 0.0;
  double iou = 0.0;
  double pixel_accuracy = 0.0;
  bool subject_correct = false;
  PixelCounts counts;
};

struct EvalReport {
  std::vector<SampleEval> rows;
  double mean_dice = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  // abn_type -> subject-level classification accuracy
  std::map<std::string, double> subject_accuracy;
  PixelCounts totals;
};

// Binarization tie rule: probability exactly 0.5 maps to label 1.
template <typename T>
Image binarize(const Tensor<T>& prob, T threshold = T(0.5)) {
  Image m;
  m.width = prob.shape().w();
  m.height = prob.shape().h();
  m.depth = 8;
  m.pixels.resize(static_cast<std::size_t>(m.width * m.height));
  for (std::int64_t i = 0; i < prob.numel(); ++i) {
    m.pixels[static_cast<std::size_t>(i)] = prob[i] >= threshold ? 1 : 0;
  }
  return m;
}

template <typename T>
Image tensor_to_mask(const Tensor<T>& t) {
  return binarize(t, T(0.5));
}

template <typename T>
EvalReport aggregate_eval(const std::vector<SampleEval>& rows) {
  EvalReport rep;
  rep.rows = rows;
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> subj;
  double dice_sum = 0.0;
  for (const auto& r : rows) {
    dice_sum += r.dice;
    rep.totals.tp += r.counts.tp;
    rep.totals.fp += r.counts.fp;
    rep.totals.tn += r.counts.tn;
    rep.totals.fn += r.counts.fn;
    auto& [correct, total] = subj[r.abn_type];
    total += 1;
    if (r.subject_correct) correct += 1;
  }
  const auto n = static_cast<double>(rows.size());
  rep.mean_dice = rows.empty() ? 0.0 : dice_sum / n;
  const auto pos = rep.totals.tp + rep.totals.fn;
  const auto neg = rep.totals.tn + rep.totals.fp;
  rep.sensitivity =
      pos == 0 ? 1.0 : static_cast<double>(rep.totals.tp) / static_cast<double>(pos);
  rep.specificity =
      neg == 0 ? 1.0 : static_cast<double>(rep.totals.tn) / static_cast<double>(neg);
  for (const auto& [type, ct] : subj) {
    rep.subject_accuracy[type] =
        static_cast<double>(ct.first) / static_cast<double>(ct.second);
  }
  return rep;
}

struct EvalSample {
  std::string id;
  std::string abn_type;
  Image image;  // preprocessed ROI
  Image gt;     // binary mask
};

template <typename T>
EvalReport evaluate(const LayerGraph<T>& g, const std::vector<EvalSample>& ds,
                    double tau = 0.2, std::int64_t min_area = 50,
                    T threshold = T(0.5)) {
  std::vector<SampleEval> rows;
  rows.reserve(ds.size());
  for (const auto& s : ds) {
    auto fwd = graph_forward(g, to_tensor<T>(s.image), false);
    const Image pred = binarize(fwd.output(g), threshold);
    SampleEval row;
    row.id = s.id;
    row.abn_type = s.abn_type;
    row.counts = confusion_pixels(pred, s.gt);
    row.dice = dice_from_counts(row.counts);
    row.iou = iou_from_counts(row.counts);
    row.pixel_accuracy =
        static_cast<double>(row.counts.tp + row.counts.tn) /
        static_cast<double>(row.counts.total());
    row.subject_correct = subject_classification(pred, s.gt, tau, min_area);
    rows.push_back(std::move(row));
  }
  return aggregate_eval<T>(rows);
}

inline void write_eval_csv(const std::string& path, const EvalReport& rep) {
  std::ofstream os(path);
  if (!os) fail("write_eval_csv: cannot open '" + path + "'");
  os << "id,abn_type,dice,iou,pixel_accuracy,subject_correct,tp,fp,tn,fn\n";
  for (const auto& r : rep.rows) {
    os << r.id << "," << r.abn_type << "," << r.dice << "," << r.iou << ","
       << r.pixel_accuracy << "," << (r.subject_correct ? 1 : 0) << ","
       << r.counts.tp << "," << r.counts.fp << "," << r.counts.tn << ","
       << r.counts.fn << "\n";
  }
}

}  // namespace onet
