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

#include "umimo/estimation.hpp"

#include <cmath>
#include <string>

namespace umimo {

PowerAllocation PowerAllocation::full(const Dims& d, double max_power_mw) {
    PowerAllocation p;
    p.pilot = RVec::Constant(static_cast<Eigen::Index>(d.num_users()), max_power_mw);
    p.data = p.pilot;
    p.max_power = max_power_mw;
    return p;
}

void PowerAllocation::validate(const Dims& d) const {
    const auto n = static_cast<Eigen::Index>(d.num_users());
    if (pilot.size() != n || data.size() != n) {
        throw DomainError("power allocation: expected K*L pilot and data powers");
    }
    const double cap = max_power * (1.0 + 1e-12);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(pilot(i) >= 0.0) || !(data(i) >= 0.0) || !std::isfinite(pilot(i)) || !std::isfinite(data(i))) {
            throw DomainError("power allocation: powers must be finite and nonnegative");
        }
        if (max_power > 0.0 && (pilot(i) > cap || data(i) > cap)) {
            throw DomainError("power allocation: power exceeds the per-user cap");
        }
    }
}

EstimationModel::EstimationModel(const CovarianceSet& cov, const RVec& pilot_powers)
    : dims_(cov.dims), cov_(&cov), pilot_(pilot_powers) {
    const Dims d = dims_;
    if (pilot_.size() != static_cast<Eigen::Index>(d.num_users())) {
        throw DomainError("estimation: expected K*L pilot powers");
    }
    for (Eigen::Index i = 0; i < pilot_.size(); ++i) {
        if (!(pilot_(i) >= 0.0) || !std::isfinite(pilot_(i))) {
            throw DomainError("estimation: pilot powers must be finite and nonnegative");
        }
    }
    k_inv_.resize(static_cast<std::size_t>(d.L * d.K));
    whitened_.resize(d.num_triples());
    const CMat eye = CMat::Identity(d.M, d.M);
    for (int l = 0; l < d.L; ++l) {
        for (int k = 0; k < d.K; ++k) {
            CMat kmat = eye;
            for (int n = 0; n < d.L; ++n) {
                kmat += pilot_power(k, n) * cov.at(l, k, n);
            }
            Eigen::LLT<CMat> llt(hermitian_part(kmat));
            if (llt.info() != Eigen::Success) {
                throw NumericError("estimation: K matrix is not positive definite at BS " + std::to_string(l));
            }
            // K = I + PSD, so lambda_min >= 1 and cond(K) <= lambda_max <= max row sum.
            const double lambda_max = kmat.cwiseAbs().rowwise().sum().maxCoeff();
            if (lambda_max > 1e12) {
                throw NumericError("estimation: K matrix condition number exceeds 1e12 at BS " +
                                   std::to_string(l));
            }
            k_inv_[d.bs_pilot(l, k)] = llt.solve(eye);
            for (int m = 0; m < d.L; ++m) {
                whitened_[d.triple(l, k, m)] = llt.solve(cov.at(l, k, m));
            }
        }
    }
}

CMat EstimationModel::estimate_covariance(int l, int k, int m) const {
    return hermitian_part(pilot_power(k, m) * covariance(l, k, m) * whitened(l, k, m));
}

CMat EstimationModel::error_covariance(int l, int k, int m) const {
    return covariance(l, k, m) - estimate_covariance(l, k, m);
}

CMat EstimationModel::cross_covariance(int l, int k, int m, int m2) const {
    return std::sqrt(pilot_power(k, m) * pilot_power(k, m2)) * covariance(l, k, m) * whitened(l, k, m2);
}

CMat hermitian_sqrt(const CMat& R) {
    Eigen::SelfAdjointEigenSolver<CMat> es(hermitian_part(R));
    const RVec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().adjoint();
}

ChannelSampler::ChannelSampler(const CovarianceSet& cov) : dims_(cov.dims) {
    sqrt_.resize(cov.R.size());
    for (std::size_t i = 0; i < cov.R.size(); ++i) {
        if (cov.correlation == CorrelationMode::Uncorrelated) {
            sqrt_[i] = std::sqrt(cov.beta[i]) * CMat::Identity(dims_.M, dims_.M);
        } else {
            sqrt_[i] = hermitian_sqrt(cov.R[i]);
        }
    }
}

ChannelEstimates estimate_channels(const EstimationModel& model, const std::vector<CVec>& true_channels,
                                   const std::vector<CVec>& pilot_noise) {
    const Dims d = model.dims();
    if (true_channels.size() != d.num_triples() || pilot_noise.size() != static_cast<std::size_t>(d.L * d.K)) {
        throw DomainError("estimate_channels: unexpected input sizes");
    }
    ChannelEstimates out;
    out.estimate.resize(d.num_triples());
    out.error.resize(d.num_triples());
    for (int l = 0; l < d.L; ++l) {
        for (int k = 0; k < d.K; ++k) {
            CVec t = pilot_noise[d.bs_pilot(l, k)];
            for (int n = 0; n < d.L; ++n) {
                t += std::sqrt(model.pilot_power(k, n)) * true_channels[d.triple(l, k, n)];
            }
            for (int m = 0; m < d.L; ++m) {
                const auto idx = d.triple(l, k, m);
                // R K^{-1} = (K^{-1} R)^H
                out.estimate[idx] = std::sqrt(model.pilot_power(k, m)) * (model.whitened(l, k, m).adjoint() * t);
                out.error[idx] = true_channels[idx] - out.estimate[idx];
            }
        }
    }
    return out;
}

}  // namespace umimo
