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

#include <vector>

#include "umimo/common.hpp"
#include "umimo/estimation.hpp"

namespace umimo {

enum class Receiver { MF, ZF };

// Raw LSFP weights a, or pilot-scaled weights a_hat_kljp = a_kljp * sqrt(p_kp).
enum class LsfpConvention { Raw, PilotScaled };

// Large-scale fading postcoding matrices, one L^2 x L matrix per pilot k.
// Column l combines the L^2 per-BS receiver outputs into the estimate of
// user (k, l). Row j * L + p weights the output of BS j matched to the
// channel of user (k, p).
struct LsfpSet {
    Dims dims;
    LsfpConvention convention = LsfpConvention::Raw;
    std::vector<CMat> A;

    // a_kljp = 1 iff j = p = l (each BS decodes only its own users).
    static LsfpSet none(const Dims& d, LsfpConvention convention, const RVec& pilot_powers);

    [[nodiscard]] cd entry(int k, int l, int j, int p) const { return A[static_cast<std::size_t>(k)](j * dims.L + p, l); }

    [[nodiscard]] LsfpSet to_raw(const RVec& pilot_powers) const;
    [[nodiscard]] LsfpSet to_pilot_scaled(const RVec& pilot_powers) const;
    void validate() const;
};

// The L^2-vector with a one at every (j, l) position.
CVec eta_vector(int L, int l);

// Traces that depend only on covariances and pilot powers. The MF
// interference matrix D_k is affine in the data powers q, so a kernel is
// built once per drop and evaluated for any q in O(K L^5).
class SummaryKernel {
  public:
    explicit SummaryKernel(const EstimationModel& est);

    [[nodiscard]] const Dims& dims() const { return dims_; }
    // c_kn with entries tr(R_jkn K_kj^{-1} R_jkp) at j * L + p.
    [[nodiscard]] const CVec& c(int k, int n) const { return c_[dims_.user(k, n)]; }

    // D_k blocks: noise part (q-independent) and the full matrix at q.
    [[nodiscard]] CMat noise_block(int j, int k) const;
    [[nodiscard]] CMat interference_block(int j, int k, const RVec& q) const;

  private:
    Dims dims_;
    std::vector<CVec> c_;
    std::vector<CMat> base_;  // per (j, k): L x L
    std::vector<CMat> tau_;   // per (j, k): (K L) x (L^2), row user(m, n), column p * L + p'
};

struct SlowFadingSummaries {
    Dims dims;
    RVec data_power;
    std::vector<CVec> c;        // per (k, n), length L^2
    std::vector<CMat> D;        // per k, L^2 x L^2 block diagonal
    std::vector<CMat> D_noise;  // per k, the q-independent part of D
    std::vector<CMat> E;        // per k, block diagonal of the ZF kernels; empty if not built

    [[nodiscard]] const CVec& c_vec(int k, int n) const { return c[dims.user(k, n)]; }
    [[nodiscard]] bool has_zf() const { return !E.empty(); }
};

// `gamma` holds the L x L ZF kernels per (j, k) -> j * K + k, evaluated at
// the same data powers. Pass an empty vector for MF-only summaries.
SlowFadingSummaries build_summaries(const SummaryKernel& kernel, const RVec& data_powers,
                                    const std::vector<CMat>& gamma = {});
SlowFadingSummaries build_summaries(const EstimationModel& est, const RVec& data_powers,
                                    const std::vector<CMat>& gamma = {});

struct ClosedFormSinr {
    double sinr = 0.0;
    double numerator = 0.0;
    double i1 = 0.0;  // coherent co-pilot interference
    double i2 = 0.0;  // estimation error / non-coherent interference
    double i3 = 0.0;  // noise (MF only)
    bool degenerate = false;  // zero denominator
};

// MF receiver with pilot-scaled LSFP weights.
ClosedFormSinr sinr_mf_closed(const SlowFadingSummaries& s, const LsfpSet& lsfp, const PowerAllocation& power,
                              int k, int l);

// ZF receiver with raw LSFP weights; requires summaries built with kernels.
ClosedFormSinr sinr_zf_closed(const SlowFadingSummaries& s, const LsfpSet& lsfp, const PowerAllocation& power,
                              int k, int l);

// Closed-form SINR of every user (k, l) -> k * L + l for a given LSFP set.
RVec closed_form_sinr(const SlowFadingSummaries& s, const LsfpSet& lsfp, const PowerAllocation& power,
                      Receiver receiver);

// Pilot-power weighting in the optimal ZF combiner. `Consistent` maximizes
// the ZF closed form exactly; `Literal` additionally weights every term by
// the pilot power, which coincides with `Consistent` only for unit pilots.
enum class ZfPilotWeighting { Consistent, Literal };

struct OptimalLsfp {
    LsfpSet lsfp;                 // PilotScaled for MF, Raw for ZF
    RVec sinr;                    // per user (k, l)
    std::vector<bool> regularized;  // per user, true when a ridge was needed
};

OptimalLsfp optimal_lsfp(const SlowFadingSummaries& s, const PowerAllocation& power, Receiver receiver,
                         ZfPilotWeighting weighting = ZfPilotWeighting::Consistent);

// SINR of every user under optimal LSFP without forming the combiners: one
// Cholesky factorization per pilot plus a rank-one downdate per user.
RVec optimal_sinr(const SlowFadingSummaries& s, const PowerAllocation& power, Receiver receiver,
                  ZfPilotWeighting weighting = ZfPilotWeighting::Consistent);

}  // namespace umimo
