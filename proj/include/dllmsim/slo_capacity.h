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

#pragma once

#include <cstdint>
#include <vector>

#include "dllmsim/sim_engine.h"

namespace dllmsim {

struct RateBounds {
  double low = 0.1;   // requests per second
  double high = 64.0;
};

struct CapacityProbe {
  double rate = 0.0;
  double p90_tpot = 0.0;  // median over seeds
  bool within_slo = false;
};

struct CapacityResult {
  double capacity = 0.0;
  std::vector<CapacityProbe> probes;
};

struct CapacityOptions {
  std::vector<uint64_t> seeds{1, 2, 3};
  int grid_points = 8;
  double tolerance = 0.02;  // relative bracket width
  int jobs = 1;
};

// Median over seeds of the open-loop P90 TPOT at one arrival rate.
double probe_p90_tpot(const Scenario& scenario_template, double rate,
                      const CapacityOptions& options);

// Largest arrival rate whose P90 TPOT stays within slo: a geometric grid over
// the bounds, then geometric bisection of the first violating interval.
// Throws SloInfeasible when the low bound already violates. Returns
// bounds.high when slo is infinite or never violated.
CapacityResult slo_capacity(const Scenario& scenario_template, double slo,
                            RateBounds bounds, const CapacityOptions& options = {});

}  // namespace dllmsim
