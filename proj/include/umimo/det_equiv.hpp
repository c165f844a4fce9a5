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

#include <string>
#include <vector>

#include "umimo/common.hpp"
#include "umimo/estimation.hpp"

namespace umimo {

// Resolvent data at one BS j. With h~_kn ~ CN(0, Rbar^k_nn / M) and
// B = sum_k sum_n h~_kn h~_kn^H, the solvers approximate
//   f^k_qn     ~ (1/M) tr(Rbar^k_qn (B - zI)^{-1})
//   fbar^k_qn  ~ (1/M) tr(Rbar^k_qn (B - zI)^{-1} Lambda (B - zI)^{-1}).
// Both are stored as L x L matrices per pilot k with [F_k](n, q) = f^k_qn.
struct DetEquivProblem {
    int M = 0;
    int K = 0;
    int L = 0;
    int cell = -1;                    // BS index, for diagnostics only
    std::vector<CMat> rbar;           // per (k, q, n) -> (k * L + q) * L + n
    CMat lambda;                      // M x M
    std::vector<CMat> lambda_terms;   // per user (m, n): coefficient of q_mn in lambda; may be empty
    // Optional factors per (k, n) -> k * L + n with Rbar^k_qn = P_kq P_kn^H,
    // all of width r_k. Without them the solvers factor each pilot's block
    // matrix [Rbar^k_qn] themselves.
    std::vector<CMat> factors;

    [[nodiscard]] std::size_t index(int k, int q, int n) const {
        return static_cast<std::size_t>((k * L + q) * L + n);
    }
    [[nodiscard]] const CMat& at(int k, int q, int n) const { return rbar[index(k, q, n)]; }
    void validate() const;
};

// Rbar^k_qn = sqrt(p_kq p_kn) R_jkq K_kj^{-1} R_jkn and
// Lambda_j = I + sum_{m,n} q_mn (error covariance of (j, m, n)).
DetEquivProblem make_det_equiv_problem(const EstimationModel& est, const RVec& data_powers, int j,
                                       bool with_lambda_terms = false);

struct FixedPointOptions {
    double damping = 0.5;
    double tolerance = 1e-10;
    int max_iterations = 500;
    int anderson_depth = 8;           // 0 gives plain damped iteration
    // Limit systems invert F~_k + diag(limit_loading * (1/M) tr(Rbar^k_nn)).
    // Users the other users' channels span entirely (F~ diagonal -> 0) then
    // settle near the loading instead of making F~ singular.
    double limit_loading = 1e-8;
    // Accept the best iterate when the residual has not improved for 40
    // iterations and is already below this value. Zero disables.
    double stagnation_tolerance = 1e-6;
};

struct FixedPointSolution {
    double z = 0.0;
    std::vector<CMat> F;                  // per k
    CMat T;                               // M x M
    int iterations = 0;
    double residual = 0.0;                // max normalized |g(F) - F|
    std::vector<double> residual_history;
    bool monotone_tail = true;            // residual non-increasing after iteration 10
    bool floor_limited = false;           // accepted at the stagnation tolerance
};

// Damped fixed point for z < 0 starting from F = 0.
FixedPointSolution solve_fixed_point(const DetEquivProblem& problem, double z, const FixedPointOptions& options = {});

// Derivative matrices Fbar_k for a converged finite-z solution.
std::vector<CMat> solve_derivative_system(const DetEquivProblem& problem, const FixedPointSolution& solution,
                                          const CMat& lambda);

// z -> 0 limits F~ = lim -z F and Fbar~ = lim z^2 Fbar.
struct LimitSolution {
    std::vector<CMat> F_tilde;        // per k
    std::vector<CMat> Fbar_tilde;     // per k, for problem.lambda
    CMat T_tilde;
    int iterations = 0;
    double residual = 0.0;
    double condition = 1.0;           // worst Jacobi-scaled condition of the loaded F~_k
    std::vector<double> residual_history;
    std::vector<RVec> loading;        // per k, diagonal added to F~_k before inversion
    int collapsed = 0;                // users below kCollapseThreshold
    bool floor_limited = false;
};

// Solves the limiting system directly:
//   f~^k_qn = (1/M) tr(Rbar^k_qn T~^{-1}),  T~ = I + (1/M) sum_k sum_{n,p} [F~_k^{-1}]_{np} Rbar^k_np,
// with F~_k loaded as described in FixedPointOptions.
LimitSolution solve_limit_system(const DetEquivProblem& problem, const FixedPointOptions& options = {});

struct ZLimitCheck {
    LimitSolution direct;
    std::vector<CMat> F_tilde;        // extrapolated from the z-sequence
    std::vector<CMat> Fbar_tilde;
    std::vector<double> z_values;
    double extrapolation_residual = 0.0;
    double disagreement = 0.0;        // max relative gap between both paths
    bool warning = false;             // extrapolation residual above 1e-4
};

// Evaluates -z F and z^2 Fbar at z = -eps_i * s (s = smallest per-user scale),
// extrapolates to z = 0 with Neville's scheme and compares with the direct
// limit. Throws NumericError when the two disagree by more than 1e-3.
ZLimitCheck take_z_limits(const DetEquivProblem& problem,
                          const std::vector<double>& eps = {1e-2, 1e-3, 1e-4, 1e-5},
                          const FixedPointOptions& options = {});

// Gamma_k = (1/M) F~_k^{-1} Fbar~_k F~_k^{-1} with the loaded F~_k, Hermitized.
std::vector<CMat> gamma_from_limits(const LimitSolution& limits, int M);

// Limit diagonals below this fraction of (1/M) tr(Rbar^k_nn) count as collapsed.
inline constexpr double kCollapseThreshold = 1e-6;

struct ZfKernelOptions {
    bool cross_check = false;         // also run the z-sequence path per cell
    FixedPointOptions fixed_point;
};

// ZF kernels of one drop as an affine function of the data powers:
//   Gamma_jk(q) = G0_jk + sum_{m,n} q_mn G_jk^{mn}.
// Exact because Gamma is linear in Lambda and Lambda is affine in q.
class GammaBasis {
  public:
    GammaBasis() = default;
    explicit GammaBasis(const EstimationModel& est, const ZfKernelOptions& options = {});

    [[nodiscard]] const Dims& dims() const { return dims_; }
    // Kernels per (j, k) -> j * K + k.
    [[nodiscard]] std::vector<CMat> evaluate(const RVec& data_powers) const;
    [[nodiscard]] double condition(int j) const { return condition_[static_cast<std::size_t>(j)]; }
    [[nodiscard]] double cross_check_disagreement(int j) const { return disagreement_[static_cast<std::size_t>(j)]; }
    // Users at BS j whose limit diagonal fell below kCollapseThreshold.
    [[nodiscard]] int collapsed(int j) const { return collapsed_[static_cast<std::size_t>(j)]; }
    [[nodiscard]] const std::vector<std::string>& warnings() const { return warnings_; }

  private:
    Dims dims_;
    std::vector<CMat> constant_;             // per (j, k)
    std::vector<std::vector<CMat>> slope_;   // per (j, k), per user (m, n)
    std::vector<double> condition_;
    std::vector<double> disagreement_;
    std::vector<int> collapsed_;
    std::vector<std::string> warnings_;
};

// Kernels at one power vector without the basis.
std::vector<CMat> zf_gamma(const EstimationModel& est, const RVec& data_powers, const ZfKernelOptions& options = {});

}  // namespace umimo
