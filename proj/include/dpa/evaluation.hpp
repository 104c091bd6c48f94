#pragma once

// Anomaly scores (the training loss of the final level) and ROC AUC.

#include <algorithm>
#include <cstdio>
#include <limits>
#include <span>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/autoencoder.hpp"

namespace dpa {

struct ScoredSample {
  std::string id;
  double score = 0.0;
  /// 0 normal, 1 anomalous.
  int label = 0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct ScoreSummary {
  std::size_t count = 0;
  double mean = 0.0, std = 0.0, min = 0.0, max = 0.0;
};

struct EvalReport {
  double roc_auc = 0.5;
  std::size_t n_normal = 0;
  std::size_t n_anomalous = 0;
  ScoreSummary normal_scores, anomalous_scores;
  std::vector<RocPoint> roc_curve;
  std::vector<ScoredSample> samples;
};

struct RunSummary {
  std::vector<double> values;
  double mean = 0.0;
  /// Population standard deviation (0 for a single run).
  double std = 0.0;
};

namespace detail {
inline void check_samples(std::span<const ScoredSample> samples) {
  std::size_t pos = 0, neg = 0;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw NumericError("non-finite score for sample '" + s.id + "'");
    if (s.label == 1) ++pos;
    else if (s.label == 0) ++neg;
    else throw ArgumentError("label must be 0 or 1, got " + std::to_string(s.label));
  }
  if (pos == 0 || neg == 0) throw ArgumentError("ROC AUC needs both normal and anomalous samples");
}
}  // namespace detail

/// Mann-Whitney statistic with midranks: P(anomalous score > normal score) + 0.5 P(tie).
inline double roc_auc(std::span<const ScoredSample> samples) {
  detail::check_samples(samples);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return samples[a].score < samples[b].score; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && samples[order[j]].score == samples[order[i]].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (samples[order[t]].label == 1) {
        rank_sum += midrank;
        ++pos;
      }
    i = j;
  }
  const double n_pos = static_cast<double>(pos), n_neg = static_cast<double>(samples.size() - pos);
  return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ArgumentError("scores and labels differ in length");
  std::vector<ScoredSample> s;
  for (std::size_t i = 0; i < scores.size(); ++i) s.push_back({std::to_string(i), scores[i], labels[i]});
  return roc_auc(s);
}

/// ROC points from (0,0) to (1,1), one per distinct score threshold (score >= threshold is flagged).
inline std::vector<RocPoint> roc_curve(std::span<const ScoredSample> samples) {
  detail::check_samples(samples);
  std::vector<const ScoredSample*> sorted;
  for (const auto& s : samples) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->score > b->score; });
  double pos = 0, neg = 0;
  for (auto* s : sorted) (s->label == 1 ? pos : neg) += 1;
  std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double thr = sorted[i]->score;
    for (; i < sorted.size() && sorted[i]->score == thr; ++i) (sorted[i]->label == 1 ? tp : fp) += 1;
    out.push_back({fp / neg, tp / pos, thr});
  }
  return out;
}

inline ScoreSummary summarize(std::span<const double> v) {
  ScoreSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

inline RunSummary summarize_runs(std::vector<double> values) {
  RunSummary r;
  auto s = summarize(values);
  r.values = std::move(values);
  r.mean = s.mean;
  r.std = s.std;
  return r;
}

inline EvalReport evaluate_scores(std::vector<ScoredSample> samples) {
  EvalReport r;
  r.roc_auc = roc_auc(samples);
  r.roc_curve = roc_curve(samples);
  std::vector<double> normal, anomalous;
  for (const auto& s : samples) (s.label == 1 ? anomalous : normal).push_back(s.score);
  r.n_normal = normal.size();
  r.n_anomalous = anomalous.size();
  r.normal_scores = summarize(normal);
  r.anomalous_scores = summarize(anomalous);
  r.samples = std::move(samples);
  return r;
}

/// Per-item loss between images and their reconstructions at a fully faded-in level.
template <typename Real>
std::vector<double> score_reconstructions(const Tensor<Real>& x, const Tensor<Real>& xr, int level,
                                          const LossContext<Real>& ctx) {
  ag::NoGradGuard guard;
  auto per = loss_terms(x, ag::Var<Real>::constant(xr), level, 1.0, ctx);
  std::vector<double> out;
  for (auto v : per.value().storage()) out.push_back(static_cast<double>(v));
  return out;
}

/// Anomaly score of every item of x (higher = more anomalous): the training loss
/// between x and its reconstruction at the final level.
template <typename Real>
std::vector<double> anomaly_scores(const Autoencoder<Real>& model, const LossContext<Real>& ctx, const Tensor<Real>& x,
                                   int chunk = 64) {
  if (!model.at_target() || model.blend().alpha != 1.0)
    throw ArgumentError("scoring needs a fully trained model (final level, alpha = 1)");
  const int r = model.config().target_resolution;
  if (x.h() != r || x.w() != r)
    throw ShapeError("image resolution " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                     " does not match model resolution " + std::to_string(r) + "x" + std::to_string(r));
  std::vector<double> out;
  for (int start = 0; start < x.n(); start += chunk) {
    const int end = std::min(x.n(), start + chunk);
    std::vector<Tensor<Real>> items;
    for (int i = start; i < end; ++i) items.push_back(x.slice(i));
    auto batch = stack(items);
    auto rec = model.reconstruct(batch);
    auto s = score_reconstructions(batch, rec, model.level(), ctx);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

template <typename Real>
double anomaly_score(const Autoencoder<Real>& model, const LossContext<Real>& ctx, const Tensor<Real>& x) {
  if (x.n() != 1) throw ShapeError("anomaly_score takes a single image, got " + shape_string(x));
  return anomaly_scores(model, ctx, x).front();
}

template <typename Real>
std::vector<double> anomaly_scores(const Autoencoder<Real>& model, const LossContext<Real>& ctx,
                                   const std::vector<Tensor<Real>>& images, int chunk = 64) {
  std::vector<double> out;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(chunk));
    auto s = anomaly_scores(model, ctx, stack(std::span<const Tensor<Real>>(images).subspan(start, end - start)), chunk);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

template <typename Real>
EvalReport evaluate(const Autoencoder<Real>& model, const LossContext<Real>& ctx, const std::vector<Tensor<Real>>& images,
                    const std::vector<int>& labels, const std::vector<std::string>& ids = {}) {
  if (images.size() != labels.size()) throw ArgumentError("images and labels differ in length");
  if (!ids.empty() && ids.size() != images.size()) throw ArgumentError("ids and images differ in length");
  auto scores = anomaly_scores(model, ctx, images);
  std::vector<ScoredSample> samples;
  for (std::size_t i = 0; i < scores.size(); ++i)
    samples.push_back({ids.empty() ? std::to_string(i) : ids[i], scores[i], labels[i]});
  return evaluate_scores(std::move(samples));
}

inline nlohmann::json to_json(const ScoreSummary& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}};
}

inline nlohmann::json to_json(const RunSummary& s) { return {{"values", s.values}, {"mean", s.mean}, {"std", s.std}}; }

inline nlohmann::json to_json(const EvalReport& r, bool with_samples = false) {
  nlohmann::json j{{"schema", "dpa-eval-report"},
                   {"version", 1},
                   {"roc_auc", r.roc_auc},
                   {"n_normal", r.n_normal},
                   {"n_anomalous", r.n_anomalous},
                   {"normal_scores", to_json(r.normal_scores)},
                   {"anomalous_scores", to_json(r.anomalous_scores)}};
  auto& curve = j["roc_curve"] = nlohmann::json::array();
  for (const auto& p : r.roc_curve)
    curve.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", std::isinf(p.threshold) ? nlohmann::json("inf") : nlohmann::json(p.threshold)}});
  if (with_samples) {
    auto& s = j["samples"] = nlohmann::json::array();
    for (const auto& x : r.samples) s.push_back({{"id", x.id}, {"score", x.score}, {"label", x.label}});
  }
  return j;
}

/// CSV with header id,score,label. Scores are written with round-trip precision.
inline void write_scores_csv(const std::string& path, std::span<const ScoredSample> samples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "id,score,label\n";
  out.precision(17);
  for (const auto& s : samples) {
    if (s.id.find_first_of(",\n\"") != std::string::npos) throw DataError("sample id not CSV-safe: " + s.id);
    out << s.id << ',' << s.score << ',' << s.label << '\n';
  }
}

inline std::vector<ScoredSample> read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "id,score,label") throw DataError(path + ": expected header id,score,label");
  std::vector<ScoredSample> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, score, label;
    if (!std::getline(ss, id, ',') || !std::getline(ss, score, ',') || !std::getline(ss, label))
      throw DataError(path + ": row " + std::to_string(row) + " malformed");
    try {
      out.push_back({id, std::stod(score), std::stoi(label)});
    } catch (const std::exception&) {
      throw DataError(path + ": row " + std::to_string(row) + " has a non-numeric field");
    }
  }
  return out;
}

inline void write_roc_csv(const std::string& path, std::span<const RocPoint> curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "fpr,tpr,threshold\n";
  out.precision(17);
  for (const auto& p : curve) out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
}

}  // namespace dpa
