#pragma once

// Synthetic texture anomaly dataset.
//
// Normal images are smooth band-limited noise (radial Gaussian spectrum around
// 1.28 cycles per image) at a random contrast. Anomalies mix in a faint
// high-frequency texture (around 9.6 cycles per image), either under a Gaussian
// patch window ("patch-shift") or uniformly over the image ("global-shift").
// Frequencies are fixed per image, not per pixel, so content is consistent
// across resolutions.

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstdio>
#include <optional>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "dpa/data.hpp"
#include "dpa/random.hpp"

namespace dpa {

inline constexpr const char* kPatchShift = "patch-shift";
inline constexpr const char* kGlobalShift = "global-shift";

struct SynthSpec {
  int resolution = 32;
  int n_train = 2000;
  int n_test_normal = 200;
  int n_test_anomalous = 200;
  int n_val_pool = 100;
  /// Anomaly strength; 0 makes anomalies distributed like normal images.
  double strength = 1.0;
  std::uint64_t seed = 0;

  // Spectral profile, in cycles per image.
  double normal_peak = 1.28;
  double normal_width = 0.96;
  double anomaly_peak = 9.6;
  double anomaly_width = 1.6;
  /// Patch side as a fraction of the image side.
  double patch_fraction = 0.75;
  double patch_mix = 0.8;
  double global_mix = 0.4;
  double contrast_min = 0.5, contrast_max = 1.5;
  double amplitude = 0.12;

  void validate() const {
    if (resolution < 16 || (resolution & (resolution - 1)) != 0)
      throw ArgumentError("synthetic resolution must be a power of two >= 16, got " + std::to_string(resolution));
    if (n_train < 0 || n_test_normal < 0 || n_test_anomalous < 0 || n_val_pool < 0) throw ArgumentError("negative sample count");
    if (!(strength >= 0.0) || strength * patch_mix > 1.0 || strength * global_mix > 1.0)
      throw ArgumentError("strength must be in [0, " + std::to_string(1.0 / std::max(patch_mix, global_mix)) + "]");
  }
};

struct SynthDataset {
  Manifest manifest;
  /// Same order as manifest.rows.
  std::vector<Image> images;
};

namespace detail {

/// Zero-mean unit-variance noise filtered by a radial Gaussian bandpass.
inline std::vector<double> bandpass_texture(Rng& rng, int res, double peak, double width) {
  using C = std::complex<double>;
  std::vector<C> field(static_cast<std::size_t>(res) * res);
  for (auto& v : field) v = C(rng.normal(0.0, 1.0), 0.0);
  Eigen::FFT<double> fft;
  std::vector<C> line(static_cast<std::size_t>(res)), tmp;
  auto transform = [&](bool forward) {
    for (int pass = 0; pass < 2; ++pass)
      for (int a = 0; a < res; ++a) {
        for (int b = 0; b < res; ++b) line[b] = pass == 0 ? field[a * res + b] : field[b * res + a];
        forward ? fft.fwd(tmp, line) : fft.inv(tmp, line);
        for (int b = 0; b < res; ++b) (pass == 0 ? field[a * res + b] : field[b * res + a]) = tmp[b];
      }
  };
  transform(true);
  auto freq = [res](int i) { return static_cast<double>(i < (res + 1) / 2 ? i : i - res); };
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double r = std::hypot(freq(y), freq(x));
      field[y * res + x] *= std::exp(-0.5 * std::pow((r - peak) / width, 2));
    }
  transform(false);
  std::vector<double> t(field.size());
  double mean = 0;
  for (std::size_t i = 0; i < t.size(); ++i) mean += t[i] = field[i].real();
  mean /= static_cast<double>(t.size());
  double var = 0;
  for (double& v : t) {
    v -= mean;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(t.size())) + 1e-12;
  for (double& v : t) v /= sd;
  return t;
}

}  // namespace detail

/// One image. kind: "" for normal, else kPatchShift / kGlobalShift.
inline Image synth_image(const SynthSpec& spec, std::uint64_t index, const std::string& kind) {
  const int res = spec.resolution;
  Rng rng(derive_seed(spec.seed, {index}));
  auto t = detail::bandpass_texture(rng, res, spec.normal_peak, spec.normal_width);
  if (!kind.empty()) {
    auto hi = detail::bandpass_texture(rng, res, spec.anomaly_peak, spec.anomaly_width);
    std::vector<double> w(t.size());
    if (kind == kGlobalShift) {
      std::fill(w.begin(), w.end(), spec.strength * spec.global_mix);
    } else if (kind == kPatchShift) {
      const int p = static_cast<int>(res * spec.patch_fraction);
      const double cy = static_cast<double>(rng.index(static_cast<std::size_t>(res - p + 1))) + p / 2.0;
      const double cx = static_cast<double>(rng.index(static_cast<std::size_t>(res - p + 1))) + p / 2.0;
      const double s = p / 3.0;
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
          w[y * res + x] = spec.strength * spec.patch_mix * std::exp(-0.5 * (std::pow((y - cy) / s, 2) + std::pow((x - cx) / s, 2)));
    } else {
      throw ArgumentError("unknown anomaly kind '" + kind + "'");
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::sqrt(1.0 - w[i] * w[i]) * t[i] + w[i] * hi[i];
  }
  const double contrast = rng.uniform(spec.contrast_min, spec.contrast_max);
  Image img(res, res, 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = std::clamp(0.5 + spec.amplitude * contrast * t[i], 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  return img;
}

/// Splits: train (normal), test (normal + anomalous), val-pool (anomalous).
/// Anomaly types alternate within each split. Paths are images/<split>_<index>.png.
inline SynthDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  SynthDataset ds;
  std::uint64_t index = 0;
  auto add = [&](Split split, Label label, int count) {
    for (int k = 0; k < count; ++k, ++index) {
      const std::string kind = label == Label::normal ? "" : (k % 2 == 0 ? kPatchShift : kGlobalShift);
      char name[64];
      std::snprintf(name, sizeof name, "images/%s_%06llu.png", to_string(split).c_str(), static_cast<unsigned long long>(index));
      ManifestRow row;
      row.path = name;
      row.resolved = name;
      row.label = label;
      row.split = split;
      row.anomaly_type = kind;
      row.line = static_cast<int>(index) + 2;
      ds.manifest.rows.push_back(row);
      ds.images.push_back(synth_image(spec, index, kind));
    }
  };
  add(Split::train, Label::normal, spec.n_train);
  add(Split::test, Label::normal, spec.n_test_normal);
  add(Split::test, Label::anomalous, spec.n_test_anomalous);
  add(Split::val_pool, Label::anomalous, spec.n_val_pool);
  return ds;
}

/// Writes dir/manifest.csv and the PNGs; returns the manifest path.
inline std::string write_synthetic(const SynthDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
  for (std::size_t i = 0; i < ds.images.size(); ++i) write_png((fs::path(dir) / ds.manifest.rows[i].path).string(), ds.images[i]);
  const auto manifest = (fs::path(dir) / "manifest.csv").string();
  write_manifest(manifest, ds.manifest);
  return manifest;
}

/// In-memory tensors of one split/label selection, preprocessed like files on disk.
template <typename Real = float>
std::vector<Tensor<Real>> synth_tensors(const SynthDataset& ds, Split split, std::optional<Label> label,
                                        const PreprocessSpec& spec, std::vector<std::size_t>* indices = nullptr) {
  std::vector<Tensor<Real>> out;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& r = ds.manifest.rows[i];
    if (r.split != split || (label && r.label != *label)) continue;
    out.push_back(preprocess<Real>(ds.images[i], spec));
    if (indices) indices->push_back(i);
  }
  return out;
}

/// Pixel-space nearest-neighbour baseline: score = min squared L2 distance to a reference image.
template <typename Real>
std::vector<double> nearest_neighbor_scores(const std::vector<Tensor<Real>>& reference, const std::vector<Tensor<Real>>& queries) {
  std::vector<double> out;
  for (const auto& q : queries) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : reference) {
      if (!r.same_shape(q)) throw ShapeError("nearest-neighbour baseline: shape mismatch");
      double d = 0;
      for (std::size_t i = 0; i < q.size() && d < best; ++i) {
        const double e = static_cast<double>(q[i]) - static_cast<double>(r[i]);
        d += e * e;
      }
      best = std::min(best, d);
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace dpa
