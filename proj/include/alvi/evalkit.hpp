#pragma once

// Offline metrics: per-DOF Pearson correlation and mean angular error.

#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "alvi/error.hpp"
#include "alvi/handformer.hpp"
#include "alvi/preprocess.hpp"

namespace alvi {

struct PearsonResult {
  double r = 0.0;
  bool degenerate = false;
};

/// Pearson correlation. A zero-variance argument yields r = 0 with the flag set.
inline PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorCode::shape_mismatch, "pearson: series lengths differ");
  require(x.size() >= 2, ErrorCode::invalid_argument, "pearson: need at least two samples");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  // Relative threshold so that a series of identical values that picked up
  // rounding noise in the mean still counts as constant.
  auto flat = [&](double ss, double m) { return ss <= 1e-24 * std::max(1.0, m * m) * n; };
  if (flat(sxx, mx) || flat(syy, my)) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

inline PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(std::span<const double>(x), std::span<const double>(y));
}

inline constexpr double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Mean of |pred - target| over every entry, in degrees.
template <class A, class B>
double mean_angular_error(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorCode::shape_mismatch,
          "mean_angular_error: shapes differ");
  require(pred.size() > 0, ErrorCode::invalid_argument, "mean_angular_error: empty input");
  const double s = (pred.template cast<double>() - target.template cast<double>()).cwiseAbs().sum();
  return rad_to_deg(s / static_cast<double>(pred.size()));
}

enum class FrameSelection { last_frame, all_frames };

struct EvalReport {
  std::array<double, kPoseDims> correlation{};
  std::array<bool, kPoseDims> degenerate{};
  double mean_correlation = 0.0;
  double pooled_correlation = 0.0;
  std::array<double, kPoseDims> angular_error_deg{};
  double mean_angular_error_deg = 0.0;
  std::size_t window_count = 0;
  std::uint64_t model_version = 0;
  FrameSelection frames = FrameSelection::last_frame;

  bool passes(double min_corr, double max_err_deg) const {
    return mean_correlation >= min_corr && mean_angular_error_deg <= max_err_deg;
  }
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"per_dof_correlation", r.correlation},
       {"degenerate", r.degenerate},
       {"mean_correlation", r.mean_correlation},
       {"pooled_correlation", r.pooled_correlation},
       {"per_dof_error_deg", r.angular_error_deg},
       {"mean_error_deg", r.mean_angular_error_deg},
       {"window_count", r.window_count},
       {"model_version", r.model_version},
       {"frames", r.frames == FrameSelection::last_frame ? "last" : "all"}};
}

inline std::string format_report(const EvalReport& r) {
  static const char* fingers[] = {"thumb", "index", "middle", "ring", "little"};
  static const char* slots[] = {"base_flex", "base_abd", "mid_flex", "tip_flex"};
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-20s %8s %9s\n", "dof", "corr", "err_deg");
  os << line;
  for (int k = 0; k < kPoseDims; ++k) {
    std::string name = std::string(fingers[k / 4]) + "." + slots[k % 4];
    std::snprintf(line, sizeof line, "%-20s %8.3f%s %8.2f\n", name.c_str(), r.correlation[k], r.degenerate[k] ? "*" : " ",
                  r.angular_error_deg[k]);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-20s %8.3f  %8.2f\n", "mean", r.mean_correlation, r.mean_angular_error_deg);
  os << line;
  std::snprintf(line, sizeof line, "windows %zu, model version %llu, pooled corr %.3f\n", r.window_count,
                static_cast<unsigned long long>(r.model_version), r.pooled_correlation);
  os << line;
  return os.str();
}

using Predictor = std::function<MatF(const WindowPair&)>;

/// Predictor that returns the ground-truth target.
inline Predictor oracle_predictor() {
  return [](const WindowPair& p) { return p.target; };
}

inline Predictor model_predictor(const ModelState& s) {
  return [&s](const WindowPair& p) { return forward(s, p.emg); };
}

/// Mean absolute error in radians over all frames and DOFs of every window.
inline double mean_l1(const ModelState& s, const std::vector<WindowPair>& windows) {
  require(!windows.empty(), ErrorCode::invalid_argument, "mean_l1: no windows");
  double sum = 0;
  for (const auto& w : windows) sum += (forward(s, w.emg) - w.target).cwiseAbs().cast<double>().mean();
  return sum / static_cast<double>(windows.size());
}

inline EvalReport evaluate_windows(const std::vector<WindowPair>& windows, const Predictor& predict,
                                   FrameSelection frames = FrameSelection::last_frame) {
  require(!windows.empty(), ErrorCode::invalid_argument, "evaluate: no windows");
  std::vector<std::vector<double>> pred(kPoseDims), truth(kPoseDims);
  for (const auto& w : windows) {
    const MatF p = predict(w);
    require(p.rows() == w.target.rows() && p.cols() == kPoseDims, ErrorCode::shape_mismatch, "evaluate: prediction shape");
    const Eigen::Index first = frames == FrameSelection::last_frame ? p.rows() - 1 : 0;
    for (Eigen::Index f = first; f < p.rows(); ++f)
      for (int k = 0; k < kPoseDims; ++k) {
        pred[k].push_back(p(f, k));
        truth[k].push_back(w.target(f, k));
      }
  }
  EvalReport r;
  r.frames = frames;
  r.window_count = windows.size();
  std::vector<double> all_p, all_t;
  double err_sum = 0;
  for (int k = 0; k < kPoseDims; ++k) {
    const auto c = pearson(pred[k], truth[k]);
    r.correlation[k] = c.r;
    r.degenerate[k] = c.degenerate;
    double e = 0;
    for (std::size_t i = 0; i < pred[k].size(); ++i) e += std::abs(pred[k][i] - truth[k][i]);
    err_sum += e;
    r.angular_error_deg[k] = rad_to_deg(e / static_cast<double>(pred[k].size()));
    r.mean_correlation += c.r / kPoseDims;
    all_p.insert(all_p.end(), pred[k].begin(), pred[k].end());
    all_t.insert(all_t.end(), truth[k].begin(), truth[k].end());
  }
  r.mean_angular_error_deg = rad_to_deg(err_sum / static_cast<double>(all_p.size()));
  r.pooled_correlation = pearson(all_p, all_t).r;
  return r;
}

inline EvalReport evaluate_session(const ModelState& s, const SessionRecording& session, std::size_t stride,
                                   FrameSelection frames = FrameSelection::last_frame) {
  require(session.emg.duration() >= 1.28 - 1e-9, ErrorCode::invalid_argument, "evaluate_session: session shorter than one window");
  auto windows = make_windows(session, stride);
  auto r = evaluate_windows(windows, model_predictor(s), frames);
  r.model_version = s.version;
  return r;
}

}  // namespace alvi
