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

#include "dllmsim/slo_capacity.h"

#include <cmath>
#include <limits>

namespace dllmsim {

double probe_p90_tpot(const Scenario& scenario_template, double rate,
                      const CapacityOptions& options) {
  std::vector<double> p90(options.seeds.size());
  parallel_for(static_cast<int>(options.seeds.size()), options.jobs, [&](int i) {
    const auto idx = static_cast<size_t>(i);
    const Scenario s = cell_scenario(scenario_template, SweepAxis::kRate, rate,
                                     scenario_template.policy, options.seeds[idx]);
    p90[idx] = summarize(run(s)).tpot_p90;
  });
  return percentile_nearest_rank(p90, 50.0);
}

CapacityResult slo_capacity(const Scenario& scenario_template, double slo,
                            RateBounds bounds, const CapacityOptions& options) {
  if (!(bounds.low > 0.0 && bounds.high > bounds.low)) {
    throw SimError(ErrorCode::kInvalidArgument, "rate bounds need 0 < low < high");
  }
  if (!(slo > 0.0)) throw SimError(ErrorCode::kInvalidArgument, "slo must be > 0");
  if (options.seeds.empty() || options.grid_points < 2 || !(options.tolerance > 0.0)) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "capacity search needs seeds, >= 2 grid points, tolerance > 0");
  }
  CapacityResult result;
  if (std::isinf(slo)) {
    result.capacity = bounds.high;
    return result;
  }
  auto probe = [&](double rate) {
    CapacityProbe p;
    p.rate = rate;
    p.p90_tpot = probe_p90_tpot(scenario_template, rate, options);
    p.within_slo = p.p90_tpot <= slo;
    result.probes.push_back(p);
    return p.within_slo;
  };

  const double ratio = bounds.high / bounds.low;
  const int g = options.grid_points;
  double lo = bounds.low;
  double hi = std::numeric_limits<double>::infinity();
  for (int i = 0; i < g; ++i) {
    const double rate = i == g - 1 ? bounds.high
                                   : bounds.low * std::pow(ratio, double(i) / (g - 1));
    if (probe(rate)) {
      lo = rate;
      continue;
    }
    if (i == 0) {
      throw SimError(ErrorCode::kSloInfeasible,
                     "P90 TPOT " + std::to_string(result.probes.back().p90_tpot) +
                         " s exceeds the SLO at the low rate bound");
    }
    hi = rate;
    break;
  }
  if (std::isinf(hi)) {
    result.capacity = bounds.high;
    return result;
  }
  while (hi / lo > 1.0 + options.tolerance) {
    const double mid = std::sqrt(lo * hi);
    if (probe(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  result.capacity = lo;
  return result;
}

}  // namespace dllmsim
