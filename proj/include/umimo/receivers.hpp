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

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "umimo/common.hpp"
#include "umimo/estimation.hpp"
#include "umimo/lsfp.hpp"

namespace umimo {

// One uplink slot: channels, their estimates, data symbols and the received
// vectors y_l = sum_{m,n} h_lmn sqrt(q_mn) s_mn + z_l.
struct UplinkRealization {
    Dims dims;
    std::vector<CVec> h;         // per (l, m, n)
    std::vector<CVec> estimate;  // per (l, m, n)
    std::vector<CVec> y;         // per BS l
    CVec symbols;                // per user (m, n)
    RVec data_power;             // per user (m, n)
};

// Forms the received vectors from explicit ingredients. `noise` holds one
// M-vector per BS; pass an empty vector for a noiseless slot.
UplinkRealization make_realization(const Dims& d, std::vector<CVec> h, std::vector<CVec> estimate, CVec symbols,
                                   const RVec& data_power, const std::vector<CVec>& noise);

// Draws channels, pilot noise, unit-modulus symbols and receiver noise.
UplinkRealization draw_realization(const EstimationModel& est, const ChannelSampler& sampler, const RVec& data_power,
                                   std::mt19937_64& rng);

// Columns of the stacked estimates at BS l, ordered (k, p) -> k * L + p.
CMat stacked_estimates(const UplinkRealization& r, int l);

// ZF matrix V = H (H^H H)^{-1}; throws SingularityError naming the cell if
// the Gram matrix condition exceeds 1e12.
CMat zf_matrix(const CMat& stacked, int cell);

// Receiver outputs per pilot k as L^2-vectors with entry j * L + p equal to
// g_jkp^H y_j, where g is the estimate (MF) or the ZF column of user (k, p).
std::vector<CVec> mf_statistics(const UplinkRealization& r);
std::vector<CVec> zf_statistics(const UplinkRealization& r);

// s_hat_kl = sum_j sum_p conj(a_kljp) s~_kjp with raw LSFP weights; one
// value per user (k, l) -> k * L + l.
CVec lsfp_combine(const std::vector<CVec>& stats, const LsfpSet& lsfp);

struct McOptions {
    int n_trials = 10000;
    std::uint64_t seed = 1;
    int workers = 1;
    int block_size = 64;           // trials per batch for the confidence intervals
    bool perfect_csi = false;      // estimates equal the true channels
    bool noise_free = false;       // no receiver noise (pilot noise is kept unless perfect_csi)
    double target_halfwidth_db = 0.25;
};

struct EmpiricalEntry {
    double useful = 0.0;               // |E[b_kl,kl]|^2 q_kl
    double pilot_contamination = 0.0;  // sum_{n != l} |E[b_kl,kn]|^2 q_kn
    double residual = 0.0;             // everything else, including noise
    double total = 0.0;                // E[|s_hat|^2] from the coefficients
    double realized_power = 0.0;       // mean |s_hat|^2 of the simulated outputs
    double realized_stderr = 0.0;
    double sinr = 0.0;
    double rate = 0.0;                 // log2(1 + SINR)
    double ci_halfwidth_db = 0.0;      // 95 % normal interval on the SINR in dB
    bool capped = false;               // SINR clipped at 1e12
};

struct EmpiricalSinr {
    Dims dims;
    Receiver receiver = Receiver::MF;
    int n_trials = 0;
    std::vector<EmpiricalEntry> entries;  // per user (k, l)
    std::vector<std::string> warnings;

    [[nodiscard]] RVec sinr() const;
};

inline constexpr double kSinrCap = 1e12;

// Monte Carlo SINR under the same expectation convention as the closed forms:
// the mean of each combined coefficient is the useful (or coherent
// interference) gain and all fluctuations count as interference. The LSFP
// set may use either convention. Identical results for any worker count.
EmpiricalSinr measure_empirical_sinr(const EstimationModel& est, const LsfpSet& lsfp, const PowerAllocation& power,
                                     Receiver receiver, const McOptions& options = {});

// Per-trial generator derived from (seed, trial).
std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t trial);

}  // namespace umimo
