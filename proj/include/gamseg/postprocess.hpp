#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gamseg/error.hpp"
#include "gamseg/tensor.hpp"

namespace gamseg {

struct PeakParams {
  std::size_t half_width = 64;  // frames, ≈ 1.49 s at 22050/512 fps
  double threshold = 0.5;
};

struct BoundaryPrediction {
  std::vector<double> times;
  std::vector<double> probabilities;
};

/// Frames that are the maximum of their window [i − hw, i + hw]; among equal
/// values inside a window only the earliest frame survives. A frame whose whole
/// window is flat is not a peak.
inline std::vector<std::size_t> local_maxima(std::span<const double> curve, std::size_t half_width) {
  std::vector<std::size_t> out;
  const std::size_t n = curve.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half_width ? i - half_width : 0;
    const std::size_t hi = std::min(n - 1, i + half_width);
    bool keep = true;
    bool rises = false;
    for (std::size_t j = lo; j <= hi && keep; ++j) {
      if (curve[j] > curve[i] || (j < i && curve[j] == curve[i])) keep = false;
      if (curve[j] < curve[i]) rises = true;
    }
    if (keep && rises) out.push_back(i);
  }
  return out;
}

/// Local-maximum filter over logits; a peak is kept when σ(logit) ≥ threshold.
inline BoundaryPrediction peak_pick(std::span<const double> logits, double frame_rate,
                                    const PeakParams& params = {}) {
  BoundaryPrediction pred;
  for (std::size_t i : local_maxima(logits, params.half_width)) {
    const double p = nn::sigmoid(logits[i]);
    if (p >= params.threshold) {
      pred.times.push_back(static_cast<double>(i) / frame_rate);
      pred.probabilities.push_back(p);
    }
  }
  return pred;
}

/// Same filter on a curve that already holds scores in [0, 1] (novelty).
inline BoundaryPrediction peak_pick_scores(std::span<const double> scores, double frame_rate,
                                           const PeakParams& params) {
  BoundaryPrediction pred;
  for (std::size_t i : local_maxima(scores, params.half_width)) {
    if (scores[i] >= params.threshold) {
      pred.times.push_back(static_cast<double>(i) / frame_rate);
      pred.probabilities.push_back(scores[i]);
    }
  }
  return pred;
}

struct BoundaryMatch {
  double ref_time;
  double pred_time;
  bool operator==(const BoundaryMatch&) const = default;
};

/// Maximum-cardinality one-to-one matching of predictions to references with
/// |pred − ref| ≤ tolerance, found with augmenting paths (Kuhn's algorithm).
/// Matches are returned in reference order.
inline std::vector<BoundaryMatch> match_boundaries(std::span<const double> pred,
                                                   std::span<const double> ref,
                                                   double tolerance = 3.0) {
  if (!std::is_sorted(pred.begin(), pred.end())) throw UnsortedInput("predictions not sorted");
  if (!std::is_sorted(ref.begin(), ref.end())) throw UnsortedInput("references not sorted");
  const std::size_t np = pred.size();
  const std::size_t nr = ref.size();
  std::vector<std::vector<std::size_t>> adj(np);
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < nr; ++j) {
      if (std::abs(pred[i] - ref[j]) <= tolerance) adj[i].push_back(j);
    }
  }
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> ref_owner(nr, kNone);
  std::vector<char> visited(nr);
  // Iterative DFS for an augmenting path from prediction `start`.
  auto augment = [&](std::size_t start) {
    struct Frame {
      std::size_t pred;
      std::size_t next_edge;
      std::size_t via_ref;
    };
    std::vector<Frame> stack{{start, 0, kNone}};
    while (!stack.empty()) {
      Frame& top = stack.back();
      if (top.next_edge == adj[top.pred].size()) {
        stack.pop_back();
        continue;
      }
      const std::size_t r = adj[top.pred][top.next_edge++];
      if (visited[r]) continue;
      visited[r] = 1;
      if (ref_owner[r] == kNone) {
        // Flip the path: every frame's pred takes the ref it descended through.
        std::size_t claimed = r;
        for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
          const std::size_t previous = it->via_ref;
          ref_owner[claimed] = it->pred;
          claimed = previous;
        }
        return true;
      }
      stack.push_back({ref_owner[r], 0, r});
    }
    return false;
  };
  for (std::size_t i = 0; i < np; ++i) {
    std::fill(visited.begin(), visited.end(), 0);
    augment(i);
  }
  std::vector<BoundaryMatch> out;
  for (std::size_t j = 0; j < nr; ++j) {
    if (ref_owner[j] != kNone) out.push_back({ref[j], pred[ref_owner[j]]});
  }
  return out;
}

struct TrackScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t n_pred = 0;
  std::size_t n_ref = 0;
  std::vector<BoundaryMatch> matches;
};

inline TrackScore evaluate_track(std::span<const double> pred, std::span<const double> ref,
                                 double tolerance = 3.0) {
  TrackScore s;
  s.matches = match_boundaries(pred, ref, tolerance);
  s.n_pred = pred.size();
  s.n_ref = ref.size();
  const auto hits = static_cast<double>(s.matches.size());
  s.precision = pred.empty() ? 0.0 : hits / static_cast<double>(pred.size());
  s.recall = ref.empty() ? 0.0 : hits / static_cast<double>(ref.size());
  s.f1 = s.precision + s.recall > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(var / static_cast<double>(xs.size()));
  return out;
}

/// "0.512 (0.32)": mean to three decimals, population std to two.
inline std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f (%.2f)", m.mean, m.std);
  return buf;
}

struct EvalReport {
  struct Entry {
    std::string id;
    TrackScore score;
  };
  double tolerance = 3.0;
  std::vector<Entry> tracks;
  MeanStd precision;
  MeanStd recall;
  MeanStd f1;

  void add(std::string id, TrackScore score) { tracks.push_back({std::move(id), std::move(score)}); }

  /// Recomputes the unweighted corpus mean and population std.
  void aggregate() {
    std::vector<double> p;
    std::vector<double> r;
    std::vector<double> f;
    for (const auto& t : tracks) {
      p.push_back(t.score.precision);
      r.push_back(t.score.recall);
      f.push_back(t.score.f1);
    }
    precision = mean_std(p);
    recall = mean_std(r);
    f1 = mean_std(f);
  }

  nlohmann::json to_json() const {
    nlohmann::json per_track = nlohmann::json::array();
    for (const auto& t : tracks) {
      nlohmann::json matches = nlohmann::json::array();
      for (const auto& m : t.score.matches) matches.push_back({m.ref_time, m.pred_time});
      per_track.push_back({{"id", t.id},
                           {"precision", t.score.precision},
                           {"recall", t.score.recall},
                           {"f1", t.score.f1},
                           {"n_pred", t.score.n_pred},
                           {"n_ref", t.score.n_ref},
                           {"matches", matches}});
    }
    auto stat = [](const MeanStd& m) {
      return nlohmann::json{{"mean", m.mean}, {"std", m.std}, {"formatted", format_mean_std(m)}};
    };
    return {{"tolerance", tolerance},
            {"std_kind", "population"},
            {"n_tracks", tracks.size()},
            {"precision", stat(precision)},
            {"recall", stat(recall)},
            {"f1", stat(f1)},
            {"tracks", per_track}};
  }
};

/// Two-column "time<TAB>probability" text.
inline std::string format_predictions(const BoundaryPrediction& pred) {
  std::string out;
  char buf[96];
  for (std::size_t i = 0; i < pred.times.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.6f\n", pred.times[i], pred.probabilities[i]);
    out += buf;
  }
  return out;
}

}  // namespace gamseg
