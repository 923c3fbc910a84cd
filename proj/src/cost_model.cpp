/* Copyright 2026 The dllmsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "dllmsim/cost_model.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>
#include <string>

#include "dllmsim/core_types.h"

namespace dllmsim {
namespace {

constexpr double kContinuityTol = 1e-9;

double eval_segment(const CostSegment& s, double x) {
  return s.intercept + s.slope * x;
}

// Residuals are weighted by 1 / latency, so the fit minimizes relative error
// and the slow end of a profile cannot drown out the fast end.
double relative_weight(const ProfileSample& s) {
  return 1.0 / std::max(s.latency_s, 1e-9);
}

struct HingeFit {
  double sse = std::numeric_limits<double>::infinity();
  // intercept, slope, slope delta at b1, slope delta at b2
  std::array<double, 4> coef{};
};

// Nonnegative least squares on (slope, delta1, delta2) with a free
// intercept, solved exactly by enumerating active sets.
HingeFit fit_hinges(std::span<const ProfileSample> samples, double b1,
                    double b2, double x_scale) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd basis(n, 4);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = samples[static_cast<size_t>(i)].x;
    const double w = relative_weight(samples[static_cast<size_t>(i)]);
    basis(i, 0) = w;
    basis(i, 1) = w * x / x_scale;
    basis(i, 2) = w * std::max(0.0, x - b1) / x_scale;
    basis(i, 3) = w * std::max(0.0, x - b2) / x_scale;
    target(i) = w * samples[static_cast<size_t>(i)].latency_s;
  }
  HingeFit best;
  for (int mask = 0; mask < 8; ++mask) {
    std::vector<int> cols{0};
    for (int k = 0; k < 3; ++k) {
      if (mask & (1 << k)) cols.push_back(k + 1);
    }
    Eigen::MatrixXd sub(n, static_cast<Eigen::Index>(cols.size()));
    for (size_t c = 0; c < cols.size(); ++c) {
      sub.col(static_cast<Eigen::Index>(c)) = basis.col(cols[c]);
    }
    const Eigen::VectorXd sol = sub.colPivHouseholderQr().solve(target);
    bool feasible = true;
    std::array<double, 4> coef{};
    for (size_t c = 0; c < cols.size(); ++c) {
      coef[static_cast<size_t>(cols[c])] = sol(static_cast<Eigen::Index>(c));
      if (cols[c] > 0 && sol(static_cast<Eigen::Index>(c)) < 0.0) {
        feasible = false;
      }
    }
    if (!feasible) continue;
    const double sse = (sub * sol - target).squaredNorm();
    if (sse < best.sse) {
      best.sse = sse;
      for (size_t k = 1; k < 4; ++k) coef[k] /= x_scale;
      best.coef = coef;
    }
  }
  return best;
}


// Weighted power sums of x and y over the samples with x above a knot, so the Gram
// matrix of any hinge basis is assembled in O(1) per knot pair.
struct SuffixSums {
  std::vector<double> n, x, xx, y, xy;

  explicit SuffixSums(std::span<const ProfileSample> sorted, double x_scale) {
    const size_t m = sorted.size();
    for (auto* v : {&n, &x, &xx, &y, &xy}) v->assign(m + 1, 0.0);
    for (size_t i = m; i-- > 0;) {
      const double w = relative_weight(sorted[i]);
      const double ww = w * w;
      const double xi = sorted[i].x / x_scale;
      const double yi = sorted[i].latency_s;
      n[i] = n[i + 1] + ww;
      x[i] = x[i + 1] + ww * xi;
      xx[i] = xx[i + 1] + ww * xi * xi;
      y[i] = y[i + 1] + ww * yi;
      xy[i] = xy[i + 1] + ww * xi * yi;
    }
  }
};

// Least-squares SSE of the hinge basis with knots b1 < b2 (scaled), where
// i1/i2 index the first sample beyond each knot. Same active-set
// enumeration as fit_hinges, on the Gram matrix.
double hinge_sse(const SuffixSums& s, double yy, double b1, size_t i1, double b2,
                 size_t i2) {
  Eigen::Matrix4d g;
  Eigen::Vector4d r;
  const double h1 = s.x[i1] - b1 * s.n[i1];
  const double h2 = s.x[i2] - b2 * s.n[i2];
  g(0, 0) = s.n[0];
  g(0, 1) = s.x[0];
  g(0, 2) = h1;
  g(0, 3) = h2;
  g(1, 1) = s.xx[0];
  g(1, 2) = s.xx[i1] - b1 * s.x[i1];
  g(1, 3) = s.xx[i2] - b2 * s.x[i2];
  g(2, 2) = s.xx[i1] - 2 * b1 * s.x[i1] + b1 * b1 * s.n[i1];
  g(2, 3) = s.xx[i2] - (b1 + b2) * s.x[i2] + b1 * b2 * s.n[i2];
  g(3, 3) = s.xx[i2] - 2 * b2 * s.x[i2] + b2 * b2 * s.n[i2];
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < a; ++b) g(a, b) = g(b, a);
  }
  r << s.y[0], s.xy[0], s.xy[i1] - b1 * s.y[i1], s.xy[i2] - b2 * s.y[i2];

  // A feasible unconstrained solution is already the constrained optimum.
  const Eigen::Vector4d full = g.ldlt().solve(r);
  if (full.allFinite() && full(1) >= 0.0 && full(2) >= 0.0 && full(3) >= 0.0) {
    return std::max(0.0, yy - full.dot(r));
  }
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 0; mask < 8; ++mask) {
    std::vector<int> cols{0};
    for (int k = 0; k < 3; ++k) {
      if (mask & (1 << k)) cols.push_back(k + 1);
    }
    const auto m = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd sub(m, m);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      rhs(a) = r(cols[static_cast<size_t>(a)]);
      for (Eigen::Index b = 0; b < m; ++b) {
        sub(a, b) = g(cols[static_cast<size_t>(a)], cols[static_cast<size_t>(b)]);
      }
    }
    const Eigen::VectorXd sol = sub.ldlt().solve(rhs);
    bool feasible = sol.allFinite();
    for (Eigen::Index a = 1; a < m; ++a) feasible = feasible && sol(a) >= 0.0;
    if (!feasible) continue;
    best = std::min(best, std::max(0.0, yy - sol.dot(rhs)));
  }
  return best;
}

}  // namespace

void CostModel::validate() const {
  if (segments[0].x_start != 0.0) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "first cost segment must start at x = 0");
  }
  for (size_t k = 0; k < segments.size(); ++k) {
    if (segments[k].slope < 0.0) {
      throw SimError(ErrorCode::kInvalidArgument,
                     "cost segment slopes must be nonnegative");
    }
    if (k == 0) continue;
    const auto& prev = segments[k - 1];
    const auto& cur = segments[k];
    if (cur.x_start < prev.x_start) {
      throw SimError(ErrorCode::kInvalidArgument,
                     "cost segments must be ordered by x_start");
    }
    if (cur.slope < prev.slope) {
      throw SimError(ErrorCode::kInvalidArgument,
                     "cost segment slopes must be nondecreasing");
    }
    const double gap = std::abs(eval_segment(prev, cur.x_start) -
                                eval_segment(cur, cur.x_start));
    if (gap > kContinuityTol) {
      throw SimError(ErrorCode::kInvalidArgument,
                     "cost segments are discontinuous at x = " +
                         std::to_string(cur.x_start));
    }
  }
  if (segments[0].intercept < 0.0 || context_surcharge < 0.0) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "cost intercept and surcharge must be nonnegative");
  }
}

CostModel CostModel::scaled(double factor) const {
  CostModel out = *this;
  for (auto& s : out.segments) {
    s.slope *= factor;
    s.intercept *= factor;
  }
  out.context_surcharge *= factor;
  return out;
}

CostModel make_cost_model(double intercept_s, std::array<double, 3> slopes_s,
                          double breakpoint1, double breakpoint2) {
  CostModel model;
  model.segments[0] = {0.0, slopes_s[0], intercept_s};
  const double at1 = intercept_s + slopes_s[0] * breakpoint1;
  model.segments[1] = {breakpoint1, slopes_s[1], at1 - slopes_s[1] * breakpoint1};
  const double at2 = at1 + slopes_s[1] * (breakpoint2 - breakpoint1);
  model.segments[2] = {breakpoint2, slopes_s[2], at2 - slopes_s[2] * breakpoint2};
  model.validate();
  return model;
}

CostModel default_cost_model() {
  return make_cost_model(35e-3, {10e-6, 30e-6, 100e-6}, 128.0, 512.0);
}

double latency(const CostModel& model, double computed_tokens) {
  const double x = std::max(0.0, computed_tokens);
  size_t k = 0;
  while (k + 1 < model.segments.size() && x >= model.segments[k + 1].x_start) {
    ++k;
  }
  return eval_segment(model.segments[k], x);
}

CostModel fit(std::span<const ProfileSample> samples) {
  if (samples.size() < kMinProfileSamples) {
    throw SimError(ErrorCode::kInsufficientProfile,
                   "need at least " + std::to_string(kMinProfileSamples) +
                       " profile samples, got " +
                       std::to_string(samples.size()));
  }
  std::vector<double> xs;
  for (const auto& s : samples) {
    if (!(s.x >= 0.0) || !std::isfinite(s.latency_s)) {
      throw SimError(ErrorCode::kInvalidArgument, "malformed profile sample");
    }
    xs.push_back(s.x);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const double x_scale = std::max(1.0, xs.back());

  std::vector<ProfileSample> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ProfileSample& a, const ProfileSample& b) { return a.x < b.x; });
  const SuffixSums sums(sorted, x_scale);
  double yy = 0.0;
  for (const auto& s : sorted) {
    const double wy = relative_weight(s) * s.latency_s;
    yy += wy * wy;
  }
  auto first_above = [&](double b) {
    return static_cast<size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), b,
                         [](double v, const ProfileSample& s) { return v < s.x; }) -
        sorted.begin());
  };

  // Segment one owns x <= b1 (>= 3 distinct values); the later segments each
  // need two more distinct values beyond their knot. Knots are chosen on the
  // Gram-matrix SSE, then the winner is refit directly on the samples.
  double best_sse = std::numeric_limits<double>::infinity();
  double best_b1 = 0.0;
  double best_b2 = 0.0;
  const int nx = static_cast<int>(xs.size());
  std::vector<size_t> above(xs.size());
  for (int i = 0; i < nx; ++i) above[static_cast<size_t>(i)] = first_above(xs[static_cast<size_t>(i)]);
  int best_i = -1;
  int best_j = -1;
  auto scan = [&](int i_lo, int i_hi, int j_lo, int j_hi, int stride) {
    for (int i = std::max(2, i_lo); i <= i_hi && i < nx; i += stride) {
      for (int j = std::max(i + 2, j_lo); j <= j_hi && j + 2 < nx; j += stride) {
        const double sse = hinge_sse(sums, yy, xs[static_cast<size_t>(i)] / x_scale,
                                     above[static_cast<size_t>(i)],
                                     xs[static_cast<size_t>(j)] / x_scale,
                                     above[static_cast<size_t>(j)]);
        if (sse < best_sse * (1.0 - 1e-12)) {
          best_sse = sse;
          best_i = i;
          best_j = j;
        }
      }
    }
  };
  // Coarse grid over knot pairs, then every pair near the coarse winner.
  const int stride = std::max(1, nx / 64);
  scan(2, nx, 2, nx, stride);
  if (stride > 1 && best_i >= 0) {
    const int ci = best_i;
    const int cj = best_j;
    scan(ci - stride, ci + stride, cj - stride, cj + stride, 1);
  }
  if (best_i >= 0) {
    best_b1 = xs[static_cast<size_t>(best_i)];
    best_b2 = xs[static_cast<size_t>(best_j)];
  }
  HingeFit best;
  if (std::isfinite(best_sse)) best = fit_hinges(samples, best_b1, best_b2, x_scale);
  if (!std::isfinite(best.sse)) {
    throw SimError(ErrorCode::kInsufficientProfile,
                   "profile must span at least three distinct x values per "
                   "segment");
  }
  const auto& c = best.coef;
  CostModel model;
  model.segments[0] = {0.0, c[1], c[0]};
  model.segments[1] = {best_b1, c[1] + c[2], c[0] - c[2] * best_b1};
  model.segments[2] = {best_b2, c[1] + c[2] + c[3],
                       c[0] - c[2] * best_b1 - c[3] * best_b2};
  if (model.segments[0].intercept < 0.0) {
    throw SimError(ErrorCode::kInsufficientProfile,
                   "fitted fixed overhead is negative; profile is degenerate");
  }
  model.validate();
  return model;
}

std::vector<ProfileSample> read_profile_csv(std::istream& in) {
  std::vector<ProfileSample> out;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("x,latency_ms", 0) != 0) {
        throw SimError(ErrorCode::kConfig,
                       "profile CSV must start with header x,latency_ms");
      }
      continue;
    }
    std::istringstream row(line);
    std::string x_field;
    std::string t_field;
    if (!std::getline(row, x_field, ',') || !std::getline(row, t_field)) {
      throw SimError(ErrorCode::kConfig,
                     "profile CSV line " + std::to_string(line_no) +
                         ": expected two fields");
    }
    try {
      out.push_back({std::stod(x_field), std::stod(t_field) * 1e-3});
    } catch (const std::exception&) {
      throw SimError(ErrorCode::kConfig,
                     "profile CSV line " + std::to_string(line_no) +
                         ": not a number");
    }
  }
  return out;
}

void write_profile_csv(std::ostream& out,
                       std::span<const ProfileSample> samples) {
  out << "x,latency_ms\n";
  char buf[96];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", s.x, s.latency_s * 1e3);
    out << buf;
  }
}

nlohmann::json to_json(const CostModel& model) {
  nlohmann::json segments = nlohmann::json::array();
  for (size_t k = 0; k < model.segments.size(); ++k) {
    const auto& s = model.segments[k];
    segments.push_back({{"label", kRegimeLabels[k]},
                        {"x_start", s.x_start},
                        {"slope_us_per_token", s.slope * 1e6},
                        {"intercept_ms", s.intercept * 1e3}});
  }
  nlohmann::json j = {{"segments", segments}};
  if (model.context_surcharge > 0.0) {
    j["context_surcharge_us_per_token"] = model.context_surcharge * 1e6;
  }
  return j;
}

CostModel cost_model_from_json(const nlohmann::json& j) {
  CostModel model;
  try {
    const auto& segments = j.at("segments");
    if (!segments.is_array() || segments.size() != 3) {
      throw SimError(ErrorCode::kConfig, "cost model needs exactly 3 segments");
    }
    for (size_t k = 0; k < 3; ++k) {
      const auto& s = segments[k];
      model.segments[k] = {s.at("x_start").get<double>(),
                           s.at("slope_us_per_token").get<double>() * 1e-6,
                           s.at("intercept_ms").get<double>() * 1e-3};
    }
    model.context_surcharge =
        j.value("context_surcharge_us_per_token", 0.0) * 1e-6;
  } catch (const nlohmann::json::exception& e) {
    throw SimError(ErrorCode::kConfig, std::string("cost model JSON: ") + e.what());
  }
  model.validate();
  return model;
}

}  // namespace dllmsim
