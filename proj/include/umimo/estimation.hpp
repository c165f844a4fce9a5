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

#include <random>
#include <vector>

#include "umimo/common.hpp"
#include "umimo/geometry.hpp"

namespace umimo {

// Pilot powers and data powers per user (k, l) -> k * L + l, in mW.
struct PowerAllocation {
    RVec pilot;
    RVec data;
    double max_power = 0.0;

    static PowerAllocation full(const Dims& d, double max_power_mw);
    void validate(const Dims& d) const;
};

// Second-order statistics of the MMSE channel estimates obtained from a
// single orthogonal pilot phase with full pilot reuse across cells.
//
// At BS l for pilot k:  K_kl = I + sum_n p_kn R_lkn, and for every cell m
//   estimate covariance  p_km R_lkm K_kl^{-1} R_lkm
//   error covariance     R_lkm - estimate covariance
//   cross covariance     sqrt(p_km p_km') R_lkm K_kl^{-1} R_lkm'
class EstimationModel {
  public:
    EstimationModel() = default;
    EstimationModel(const CovarianceSet& cov, const RVec& pilot_powers);

    [[nodiscard]] const Dims& dims() const { return dims_; }
    [[nodiscard]] const RVec& pilot_powers() const { return pilot_; }
    [[nodiscard]] double pilot_power(int k, int l) const { return pilot_(static_cast<Eigen::Index>(dims_.user(k, l))); }

    // K_kl^{-1} at BS l (index (l, k)).
    [[nodiscard]] const CMat& k_inverse(int l, int k) const { return k_inv_[dims_.bs_pilot(l, k)]; }
    // K_kl^{-1} R_lkm, the workhorse product for every trace formula.
    [[nodiscard]] const CMat& whitened(int l, int k, int m) const { return whitened_[dims_.triple(l, k, m)]; }
    [[nodiscard]] const CMat& covariance(int l, int k, int m) const { return cov_->at(l, k, m); }
    [[nodiscard]] const CovarianceSet& covariances() const { return *cov_; }

    [[nodiscard]] CMat estimate_covariance(int l, int k, int m) const;
    [[nodiscard]] CMat error_covariance(int l, int k, int m) const;
    [[nodiscard]] CMat cross_covariance(int l, int k, int m, int m2) const;

  private:
    Dims dims_;
    const CovarianceSet* cov_ = nullptr;
    RVec pilot_;
    std::vector<CMat> k_inv_;
    std::vector<CMat> whitened_;
};

inline EstimationModel build_estimation_model(const CovarianceSet& cov, const RVec& pilot_powers) {
    return EstimationModel(cov, pilot_powers);
}

// Hermitian square root via eigendecomposition with eigenvalue clamping.
CMat hermitian_sqrt(const CMat& R);

// Square roots of every covariance in a set, for drawing h = R^{1/2} w.
class ChannelSampler {
  public:
    explicit ChannelSampler(const CovarianceSet& cov);

    [[nodiscard]] const Dims& dims() const { return dims_; }

    // h per (j, k, l), each an M-vector.
    template <typename Rng>
    std::vector<CVec> draw(Rng& rng) const;

  private:
    Dims dims_;
    std::vector<CMat> sqrt_;
};

// Draws a CN(0, I) vector.
template <typename Rng>
CVec complex_normal(Rng& rng, int n) {
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    CVec v(n);
    for (int i = 0; i < n; ++i) {
        const double re = normal(rng);
        const double im = normal(rng);
        v(i) = cd(re, im);
    }
    return v;
}

template <typename Rng>
std::vector<CVec> ChannelSampler::draw(Rng& rng) const {
    std::vector<CVec> h(dims_.num_triples());
    for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] = sqrt_[i] * complex_normal(rng, dims_.M);
    }
    return h;
}

struct ChannelEstimates {
    std::vector<CVec> estimate;  // per (l, k, m)
    std::vector<CVec> error;     // per (l, k, m): h - estimate
};

// MMSE estimates from the de-spread pilot observation
//   t_kl = sum_n sqrt(p_kn) h_lkn + noise_kl,   estimate_lkm = sqrt(p_km) R_lkm K_kl^{-1} t_kl.
// `pilot_noise` holds one CN(0, I) M-vector per (l, k).
ChannelEstimates estimate_channels(const EstimationModel& model, const std::vector<CVec>& true_channels,
                                   const std::vector<CVec>& pilot_noise);

}  // namespace umimo
