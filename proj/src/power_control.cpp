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

#include "umimo/power_control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace umimo {

namespace {

bool meets(const RVec& sinr, double gamma) {
    return (sinr.array() >= gamma * (1.0 - kFeasibilitySlack)).all();
}

RVec checked_eval(const SinrEvaluator& eval, const RVec& q) {
    RVec s = eval(q);
    if (s.size() != q.size()) throw DomainError("power control: SINR evaluator returned the wrong number of users");
    return s;
}

}  // namespace

DistributedResult distributed_power_iteration(const SinrEvaluator& eval, double gamma, const RVec& q0, double q_max,
                                              const DistributedOptions& options) {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw DomainError("distributed iteration: target must be finite and nonnegative");
    if (!(q_max > 0.0)) throw DomainError("distributed iteration: Q_max must be positive");
    if ((q0.array() < 0.0).any() || (q0.array() > q_max).any()) {
        throw DomainError("distributed iteration: initial powers must lie in [0, Q_max]");
    }
    DistributedResult out;
    out.q = q0;
    out.sinr = checked_eval(eval, out.q);
    for (int it = 1; it <= options.max_iterations; ++it) {
        if (options.stop_at_target && meets(out.sinr, gamma)) {
            out.converged_to_target = true;
            return out;
        }
        RVec next(out.q.size());
        for (Eigen::Index i = 0; i < next.size(); ++i) {
            if (out.sinr(i) > 0.0) {
                next(i) = std::min(q_max, out.q(i) * gamma / out.sinr(i));
            } else {
                next(i) = gamma == 0.0 ? 0.0 : q_max;
            }
        }
        const double step = (next - out.q).norm();
        out.q = next;
        out.iterations = it;
        if (options.record_trace) out.trace.push_back(out.q);
        out.sinr = checked_eval(eval, out.q);
        if (step == 0.0 || step < options.eps * out.q.norm()) {
            out.converged_to_target = meets(out.sinr, gamma);
            return out;
        }
    }
    std::ostringstream msg;
    msg << "distributed power iteration did not converge within " << options.max_iterations
        << " iterations at target " << gamma << "; the SINR evaluator is not a standard interference function";
    throw AnomalyError(msg.str());
}

PowerOptResult bisection_maxmin(const SinrEvaluator& eval, int n_users, double gamma_max, double q_max,
                                const BisectionOptions& options) {
    if (!(options.eps > 0.0) && !(options.eps_db > 0.0)) throw DomainError("bisection: eps must be positive");
    if (!(gamma_max > 0.0) || !std::isfinite(gamma_max)) throw DomainError("bisection: initial gamma_max must be positive");
    if (n_users < 1) throw DomainError("bisection: need at least one user");
    const RVec q_full = RVec::Constant(n_users, q_max);
    DistributedOptions probe = options.inner;
    probe.stop_at_target = true;
    probe.record_trace = false;

    PowerOptResult out;
    out.q_star = q_full;
    double lo = 0.0;
    double hi = gamma_max;
    auto total = [](const RVec& q) { return q.sum(); };

    // Expand the bracket until its upper end is infeasible.
    for (;;) {
        const DistributedResult r = distributed_power_iteration(eval, hi, q_full, q_max, probe);
        BisectionStep step;
        step.iteration = static_cast<int>(out.trace.size());
        step.gamma = hi;
        step.feasible = r.converged_to_target;
        step.total_power = total(r.q);
        if (!r.converged_to_target) {
            step.gamma_min = lo;
            step.gamma_max = hi;
            out.trace.push_back(step);
            break;
        }
        lo = hi;
        out.q_star = r.q;
        hi *= 2.0;
        ++out.expansions;
        step.gamma_min = lo;
        step.gamma_max = hi;
        out.trace.push_back(step);
        if (out.expansions > 200) throw AnomalyError("bisection: SINR unbounded in the power variables");
    }

    auto narrow_enough = [&] {
        if (options.eps_db > 0.0) return lo > 0.0 && to_db(hi / lo) < options.eps_db;
        return hi - lo < options.eps;
    };
    while (!narrow_enough() && out.iterations < options.max_bisections) {
        const double gamma = 0.5 * (lo + hi);
        const DistributedResult r = distributed_power_iteration(eval, gamma, q_full, q_max, probe);
        ++out.iterations;
        if (r.converged_to_target) {
            lo = gamma;
            out.q_star = r.q;
        } else {
            hi = gamma;
        }
        BisectionStep step;
        step.iteration = static_cast<int>(out.trace.size());
        step.gamma = gamma;
        step.feasible = r.converged_to_target;
        step.total_power = total(r.q);
        step.gamma_min = lo;
        step.gamma_max = hi;
        out.trace.push_back(step);
    }
    out.gamma_star = lo;

    // Minimal-power allocation at the achieved target.
    if (lo > 0.0) {
        DistributedOptions fin = options.inner;
        fin.stop_at_target = false;
        fin.record_trace = true;
        const DistributedResult r = distributed_power_iteration(eval, lo, q_full, q_max, fin);
        if (r.converged_to_target) {
            out.q_star = r.q;
            out.distributed_trace = r.trace;
        }
    }
    return out;
}

double initial_gamma_max(const SummaryKernel& kernel, double p_max, double q_max) {
    const Dims d = kernel.dims();
    double best = 0.0;
    for (int k = 0; k < d.K; ++k) {
        for (int l = 0; l < d.L; ++l) best = std::max(best, kernel.c(k, l).squaredNorm());
    }
    return best * p_max * q_max;
}

std::vector<OutagePoint> outage_curve(const SinrEvaluator& eval, const std::vector<double>& gamma_grid, int n_users,
                                      double q_max, bool power_control, const DistributedOptions& options) {
    const RVec q_full = RVec::Constant(n_users, q_max);
    std::vector<OutagePoint> out;
    out.reserve(gamma_grid.size());
    RVec fixed;
    if (!power_control) fixed = checked_eval(eval, q_full);
    for (double gamma : gamma_grid) {
        const RVec sinr = power_control ? distributed_power_iteration(eval, gamma, q_full, q_max, options).sinr : fixed;
        OutagePoint pt;
        pt.gamma = gamma;
        pt.users = n_users;
        pt.achieved = static_cast<int>((sinr.array() >= gamma * (1.0 - kFeasibilitySlack)).count());
        out.push_back(pt);
    }
    return out;
}

namespace {

PowerAllocation allocation(const RVec& pilot, const RVec& q, double q_max) {
    PowerAllocation p;
    p.pilot = pilot;
    p.data = q;
    p.max_power = q_max;
    return p;
}

RVec evaluate(const SlowFadingSummaries& s, const PowerAllocation& p, Receiver receiver, LsfpMode mode) {
    if (mode == LsfpMode::Optimal) return optimal_sinr(s, p, receiver);
    const LsfpConvention conv = receiver == Receiver::MF ? LsfpConvention::PilotScaled : LsfpConvention::Raw;
    return closed_form_sinr(s, LsfpSet::none(s.dims, conv, p.pilot), p, receiver);
}

}  // namespace

SinrEvaluator mf_evaluator(std::shared_ptr<const SummaryKernel> kernel, const RVec& pilot, double q_max,
                           LsfpMode mode) {
    if (!kernel) throw ConfigError("mf_evaluator: missing summary kernel");
    return [kernel, pilot, q_max, mode](const RVec& q) {
        const PowerAllocation p = allocation(pilot, q, q_max);
        return evaluate(build_summaries(*kernel, q), p, Receiver::MF, mode);
    };
}

SinrEvaluator zf_evaluator(std::shared_ptr<const SummaryKernel> kernel, std::shared_ptr<const GammaBasis> gamma,
                           const RVec& pilot, double q_max, LsfpMode mode, const RVec& freeze_at) {
    if (!kernel || !gamma) throw ConfigError("zf_evaluator: missing summary kernel or ZF kernels");
    std::vector<CMat> frozen;
    if (freeze_at.size() > 0) frozen = gamma->evaluate(freeze_at);
    return [kernel, gamma, pilot, q_max, mode, frozen](const RVec& q) {
        const PowerAllocation p = allocation(pilot, q, q_max);
        const std::vector<CMat> g = frozen.empty() ? gamma->evaluate(q) : frozen;
        return evaluate(build_summaries(*kernel, q, g), p, Receiver::ZF, mode);
    };
}

void write_bisection_trace(std::ostream& os, const PowerOptResult& result) {
    os << "iteration,gamma,feasible,total_power\n";
    os.precision(17);
    for (const auto& s : result.trace) {
        os << s.iteration << ',' << s.gamma << ',' << (s.feasible ? 1 : 0) << ',' << s.total_power << '\n';
    }
}

}  // namespace umimo
