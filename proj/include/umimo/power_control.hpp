// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include <functional>
#include <memory>
#include <ostream>
#include <vector>

#include "umimo/common.hpp"
#include "umimo/det_equiv.hpp"
#include "umimo/lsfp.hpp"

namespace umimo {

// Maps data powers q (per user (k, l)) to the SINR of every user.
using SinrEvaluator = std::function<RVec(const RVec&)>;

inline constexpr double kFeasibilitySlack = 1e-3;

struct DistributedOptions {
    double eps = 1e-5;
    int max_iterations = 10000;
    bool stop_at_target = false;  // return as soon as every user meets the target
    bool record_trace = false;
};

struct DistributedResult {
    RVec q;
    RVec sinr;                   // at q
    bool converged_to_target = false;
    int iterations = 0;
    std::vector<RVec> trace;     // q after every update when recorded
};

// Synchronous update q <- min(Q_max, q * gamma / SINR(q)).
DistributedResult distributed_power_iteration(const SinrEvaluator& eval, double gamma, const RVec& q0, double q_max,
                                              const DistributedOptions& options = {});

struct BisectionStep {
    int iteration = 0;
    double gamma = 0.0;
    bool feasible = false;
    double total_power = 0.0;
    double gamma_min = 0.0;      // bracket after the step
    double gamma_max = 0.0;
};

struct BisectionOptions {
    double eps = 0.01;           // stop when gamma_max - gamma_min < eps
    double eps_db = 0.0;         // if positive, stop when the bracket is narrower than this many dB
    int max_bisections = 200;
    DistributedOptions inner;
};

struct PowerOptResult {
    double gamma_star = 0.0;
    RVec q_star;
    int iterations = 0;
    int expansions = 0;          // doublings of the initial upper bound
    std::vector<BisectionStep> trace;
    std::vector<RVec> distributed_trace;  // inner iterates of the final min-power run
};

// Max-min SINR by bisection on gamma with the distributed iteration as the
// feasibility oracle. The upper bound is doubled while it is still feasible.
PowerOptResult bisection_maxmin(const SinrEvaluator& eval, int n_users, double gamma_max, double q_max,
                                const BisectionOptions& options = {});

// max_{k,l} ||c_kl||^2 P_max Q_max.
double initial_gamma_max(const SummaryKernel& kernel, double p_max, double q_max);

struct OutagePoint {
    double gamma = 0.0;
    int achieved = 0;
    int users = 0;
    [[nodiscard]] double fraction() const { return users > 0 ? static_cast<double>(achieved) / users : 0.0; }
};

// Users reaching each target. Without power control the SINRs at q = Q_max
// are thresholded; with it, the distributed iteration is run toward every
// target from q = Q_max.
std::vector<OutagePoint> outage_curve(const SinrEvaluator& eval, const std::vector<double>& gamma_grid, int n_users,
                                      double q_max, bool power_control, const DistributedOptions& options = {});

enum class LsfpMode { None, Optimal };

// Closed-form evaluators. Summaries are rebuilt on every call because D_k
// (and Gamma for ZF) depend on q.
SinrEvaluator mf_evaluator(std::shared_ptr<const SummaryKernel> kernel, const RVec& pilot, double q_max,
                           LsfpMode mode);

// With `freeze_at` non-empty the ZF kernels are evaluated once at those powers.
SinrEvaluator zf_evaluator(std::shared_ptr<const SummaryKernel> kernel, std::shared_ptr<const GammaBasis> gamma,
                           const RVec& pilot, double q_max, LsfpMode mode, const RVec& freeze_at = RVec());

// CSV with columns iteration,gamma,feasible,total_power.
void write_bisection_trace(std::ostream& os, const PowerOptResult& result);

}  // namespace umimo
