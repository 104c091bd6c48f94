#pragma once

// Manifest CSV ingestion and image preprocessing.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/errors.hpp"
#include "dpa/image_io.hpp"
#include "dpa/tensor.hpp"

namespace dpa {

enum class Label { normal = 0, anomalous = 1 };
enum class Split { train, val_pool, test };

inline std::string to_string(Label l) { return l == Label::normal ? "normal" : "anomalous"; }
inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val_pool: return "val-pool";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val-pool") return Split::val_pool;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "' (expected train, val-pool or test)");
}

struct ManifestRow {
  /// Path as written in the manifest.
  std::string path;
  /// Path resolved against the manifest's directory.
  std::string resolved;
  Label label = Label::normal;
  Split split = Split::train;
  std::string anomaly_type;
  /// 1-based line number in the manifest file (0 for in-memory rows).
  int line = 0;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  std::vector<const ManifestRow*> select(Split split) const {
    std::vector<const ManifestRow*> out;
    for (const auto& r : rows)
      if (r.split == split) out.push_back(&r);
    return out;
  }
  std::size_t count(Split split) const { return select(split).size(); }
  std::size_t count(Split split, Label label) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.split == split && r.label == label; }));
  }

  /// Throws DataError naming the first offending row.
  void validate() const {
    std::map<std::string, const ManifestRow*> seen;
    for (const auto& r : rows) {
      const std::string where = "manifest row " + std::to_string(r.line) + " (" + r.path + ")";
      if (r.path.empty()) throw DataError(where + ": empty path");
      if (r.split == Split::train && r.label == Label::anomalous)
        throw DataError(where + ": anomalous image in the train split; training data must be normal");
      if (r.label == Label::anomalous && r.anomaly_type.empty()) throw DataError(where + ": anomalous row needs an anomaly_type");
      if (r.label == Label::normal && !r.anomaly_type.empty()) throw DataError(where + ": normal row has an anomaly_type");
      auto [it, inserted] = seen.emplace(r.resolved, &r);
      if (!inserted)
        throw DataError(where + ": path already listed at row " + std::to_string(it->second->line) +
                        (it->second->split != r.split ? " in split " + to_string(it->second->split) : ""));
    }
  }
};

inline constexpr const char* kManifestHeader = "path,label,split,anomaly_type";

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

inline Manifest parse_manifest(std::istream& in, const std::string& name, const std::filesystem::path& base_dir) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(name + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (line != kManifestHeader) throw DataError(name + ": header must be '" + std::string(kManifestHeader) + "', got '" + line + "'");
  Manifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = name + " row " + std::to_string(lineno);
    if (line.find('"') != std::string::npos) throw DataError(where + ": quoted fields are not supported");
    auto f = detail::split_csv_line(line);
    if (f.size() != 4) throw DataError(where + ": expected 4 columns, got " + std::to_string(f.size()));
    ManifestRow r;
    r.path = f[0];
    std::filesystem::path p(f[0]);
    r.resolved = (p.is_absolute() ? p : base_dir / p).lexically_normal().string();
    if (f[1] == "normal") r.label = Label::normal;
    else if (f[1] == "anomalous") r.label = Label::anomalous;
    else throw DataError(where + ": label must be normal or anomalous, got '" + f[1] + "'");
    try {
      r.split = parse_split(f[2]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    r.anomaly_type = f[3];
    r.line = lineno;
    m.rows.push_back(std::move(r));
  }
  m.validate();
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  return parse_manifest(in, path, std::filesystem::path(path).parent_path());
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path);
  out << kManifestHeader << '\n';
  for (const auto& r : m.rows) out << r.path << ',' << to_string(r.label) << ',' << to_string(r.split) << ',' << r.anomaly_type << '\n';
}

// --- preprocessing ---------------------------------------------------------------

struct PreprocessSpec {
  int target_resolution = 32;
  bool grayscale = true;
  /// Crop the central 3/4 of each side before resizing.
  bool center_crop = false;
  bool hist_equalize = false;

  void validate() const {
    if (target_resolution < 1) throw ConfigError("preprocess.target_resolution", "must be positive");
  }
  /// Stable text key; orders preprocessing candidates lexicographically.
  std::string key() const {
    std::ostringstream s;
    s << "res" << target_resolution << "-gray" << grayscale << "-crop" << center_crop << "-heq" << hist_equalize;
    return s.str();
  }
  friend bool operator==(const PreprocessSpec&, const PreprocessSpec&) = default;
};

/// Float planar image in the 0..255 range used between preprocessing steps.
struct FloatImage {
  int width = 0, height = 0, channels = 1;
  std::vector<double> data;  // [c][y][x]
  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

inline FloatImage to_float(const Image& img) {
  FloatImage f{img.width, img.height, img.channels, {}};
  f.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) f.at(c, y, x) = img.at(y, x, c);
  return f;
}

/// Central crop to floor(3/4) of each side.
inline FloatImage center_crop(const FloatImage& in) {
  const int w = in.width * 3 / 4, h = in.height * 3 / 4;
  if (w < 1 || h < 1) throw DataError("image too small to crop");
  const int x0 = (in.width - w) / 2, y0 = (in.height - h) / 2;
  FloatImage out{w, h, in.channels, std::vector<double>(static_cast<std::size_t>(w) * h * in.channels)};
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = in.at(c, y0 + y, x0 + x);
  return out;
}

/// Bilinear resize with half-pixel centres and edge clamping; identity at equal size.
inline FloatImage resize_bilinear(const FloatImage& in, int width, int height) {
  if (in.width == width && in.height == height) return in;
  FloatImage out{width, height, in.channels, std::vector<double>(static_cast<std::size_t>(width) * height * in.channels)};
  const double sx = static_cast<double>(in.width) / width, sy = static_cast<double>(in.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, in.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, in.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < in.channels; ++c) {
        const double top = in.at(c, y0, x0) * (1 - tx) + in.at(c, y0, x1) * tx;
        const double bot = in.at(c, y1, x0) * (1 - tx) + in.at(c, y1, x1) * tx;
        out.at(c, y, x) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

inline FloatImage to_grayscale(const FloatImage& in) {
  if (in.channels == 1) return in;
  FloatImage out{in.width, in.height, 1, std::vector<double>(static_cast<std::size_t>(in.width) * in.height)};
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      out.at(0, y, x) = 0.299 * in.at(0, y, x) + 0.587 * in.at(1, y, x) + 0.114 * in.at(2, y, x);
  return out;
}

/// 256-bin histogram equalization of the luminance. A single occupied bin leaves
/// the image unchanged. Color images shift all channels by the luminance change.
inline FloatImage equalize_histogram(const FloatImage& in) {
  const std::size_t n = static_cast<std::size_t>(in.width) * in.height;
  std::vector<double> luma(n);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * in.width + x;
      luma[i] = in.channels == 1 ? in.at(0, y, x) : 0.299 * in.at(0, y, x) + 0.587 * in.at(1, y, x) + 0.114 * in.at(2, y, x);
    }
  auto bin = [](double v) { return static_cast<int>(std::clamp(std::lround(v), 0L, 255L)); };
  std::array<std::size_t, 256> hist{};
  for (double v : luma) ++hist[static_cast<std::size_t>(bin(v))];
  if (std::count_if(hist.begin(), hist.end(), [](auto h) { return h > 0; }) <= 1) return in;
  std::array<double, 256> lut{};
  std::size_t cdf = 0, cdf_min = 0;
  for (int b = 0; b < 256; ++b) {
    if (cdf_min == 0 && hist[static_cast<std::size_t>(b)] > 0) cdf_min = hist[static_cast<std::size_t>(b)];
    cdf += hist[static_cast<std::size_t>(b)];
    lut[static_cast<std::size_t>(b)] = cdf_min == 0 ? 0.0 : std::round(255.0 * static_cast<double>(cdf - cdf_min) / static_cast<double>(n - cdf_min));
  }
  FloatImage out = in;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * in.width + x;
      const double target = lut[static_cast<std::size_t>(bin(luma[i]))];
      if (in.channels == 1) {
        out.at(0, y, x) = target;
      } else {
        const double delta = target - luma[i];
        for (int c = 0; c < in.channels; ++c) out.at(c, y, x) = std::clamp(in.at(c, y, x) + delta, 0.0, 255.0);
      }
    }
  return out;
}

/// centre crop -> bilinear resize -> grayscale -> histogram equalization -> [0, 1]; off steps are skipped.
template <typename Real = float>
Tensor<Real> preprocess(const Image& image, const PreprocessSpec& spec) {
  spec.validate();
  if (image.width < 1 || image.height < 1 || (image.channels != 1 && image.channels != 3))
    throw DataError("undecodable image (" + std::to_string(image.width) + "x" + std::to_string(image.height) + "x" +
                    std::to_string(image.channels) + ")");
  FloatImage f = to_float(image);
  if (spec.center_crop) f = center_crop(f);
  f = resize_bilinear(f, spec.target_resolution, spec.target_resolution);
  if (spec.grayscale) f = to_grayscale(f);
  if (spec.hist_equalize) f = equalize_histogram(f);
  Tensor<Real> out(1, f.channels, f.height, f.width);
  for (std::size_t i = 0; i < f.data.size(); ++i) out[i] = static_cast<Real>(f.data[i] / 255.0);
  return out;
}

/// Loads and preprocesses the given rows; errors name the offending file.
template <typename Real = float>
std::vector<Tensor<Real>> load_images(const std::vector<const ManifestRow*>& rows, const PreprocessSpec& spec) {
  std::vector<Tensor<Real>> out;
  out.reserve(rows.size());
  for (const auto* r : rows) {
    try {
      out.push_back(preprocess<Real>(read_png(r->resolved), spec));
    } catch (const DataError& e) {
      throw DataError("manifest row " + std::to_string(r->line) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dpa
