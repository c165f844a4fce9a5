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

#include "umimo/lsfp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace umimo {

namespace {

void check_pilot_vector(const Dims& d, const RVec& pilot) {
    if (pilot.size() != static_cast<Eigen::Index>(d.num_users())) {
        throw DomainError("lsfp: expected K*L pilot powers");
    }
}

// Column-major vec() of a square matrix as a column of `dst`.
void put_vec(CMat& dst, Eigen::Index col, const CMat& m) {
    dst.col(col) = Eigen::Map<const CVec>(m.data(), m.size());
}

// Cholesky with a trace-scaled ridge fallback.
Eigen::LLT<CMat> factor_with_ridge(const CMat& a, bool& regularized) {
    CMat h = hermitian_part(a);
    Eigen::LLT<CMat> llt(h);
    regularized = false;
    if (llt.info() == Eigen::Success) return llt;
    const double ridge = 1e-12 * std::abs(h.trace()) / static_cast<double>(h.rows());
    h.diagonal().array() += std::max(ridge, 1e-300);
    llt.compute(h);
    if (llt.info() != Eigen::Success) {
        throw SingularityError("lsfp: interference matrix is not positive definite even after regularization");
    }
    regularized = true;
    return llt;
}

}  // namespace

LsfpSet LsfpSet::none(const Dims& d, LsfpConvention convention, const RVec& pilot_powers) {
    LsfpSet s;
    s.dims = d;
    s.convention = convention;
    if (convention == LsfpConvention::PilotScaled) check_pilot_vector(d, pilot_powers);
    s.A.assign(static_cast<std::size_t>(d.K), CMat::Zero(d.L * d.L, d.L));
    for (int k = 0; k < d.K; ++k) {
        for (int l = 0; l < d.L; ++l) {
            const double v = convention == LsfpConvention::Raw
                                 ? 1.0
                                 : std::sqrt(pilot_powers(static_cast<Eigen::Index>(d.user(k, l))));
            s.A[static_cast<std::size_t>(k)](l * d.L + l, l) = v;
        }
    }
    return s;
}

LsfpSet LsfpSet::to_raw(const RVec& pilot_powers) const {
    if (convention == LsfpConvention::Raw) return *this;
    check_pilot_vector(dims, pilot_powers);
    LsfpSet out = *this;
    out.convention = LsfpConvention::Raw;
    for (int k = 0; k < dims.K; ++k) {
        for (int p = 0; p < dims.L; ++p) {
            const double s = std::sqrt(pilot_powers(static_cast<Eigen::Index>(dims.user(k, p))));
            for (int j = 0; j < dims.L; ++j) {
                auto row = out.A[static_cast<std::size_t>(k)].row(j * dims.L + p);
                row = s > 0.0 ? CMat(row / s) : CMat(CMat::Zero(1, dims.L));
            }
        }
    }
    return out;
}

LsfpSet LsfpSet::to_pilot_scaled(const RVec& pilot_powers) const {
    if (convention == LsfpConvention::PilotScaled) return *this;
    check_pilot_vector(dims, pilot_powers);
    LsfpSet out = *this;
    out.convention = LsfpConvention::PilotScaled;
    for (int k = 0; k < dims.K; ++k) {
        for (int p = 0; p < dims.L; ++p) {
            const double s = std::sqrt(pilot_powers(static_cast<Eigen::Index>(dims.user(k, p))));
            for (int j = 0; j < dims.L; ++j) {
                out.A[static_cast<std::size_t>(k)].row(j * dims.L + p) *= s;
            }
        }
    }
    return out;
}

void LsfpSet::validate() const {
    if (A.size() != static_cast<std::size_t>(dims.K)) {
        throw DomainError("lsfp: expected one matrix per pilot");
    }
    for (const auto& a : A) {
        if (a.rows() != dims.L * dims.L || a.cols() != dims.L) {
            throw DomainError("lsfp: matrices must be L^2 x L");
        }
        if (!a.allFinite()) {
            throw DomainError("lsfp: non-finite weights");
        }
    }
}

CVec eta_vector(int L, int l) {
    CVec e = CVec::Zero(L * L);
    for (int j = 0; j < L; ++j) e(j * L + l) = 1.0;
    return e;
}

SummaryKernel::SummaryKernel(const EstimationModel& est) : dims_(est.dims()) {
    const Dims d = dims_;
    const int L = d.L;
    const int M = d.M;
    const bool diagonal = est.covariances().correlation == CorrelationMode::Uncorrelated;
    c_.assign(d.num_users(), CVec::Zero(L * L));
    base_.resize(static_cast<std::size_t>(d.L * d.K));
    tau_.resize(static_cast<std::size_t>(d.L * d.K));

    for (int j = 0; j < L; ++j) {
        // Scaled identities reduce every trace to a dot product of diagonals.
        CMat rstack(diagonal ? M : M * M, d.K * L);
        for (int m = 0; m < d.K; ++m) {
            for (int n = 0; n < L; ++n) {
                const CMat& r = est.covariance(j, m, n);
                if (diagonal) {
                    rstack.col(static_cast<Eigen::Index>(d.user(m, n))) = r.diagonal();
                } else {
                    put_vec(rstack, static_cast<Eigen::Index>(d.user(m, n)), r);
                }
            }
        }
        for (int k = 0; k < d.K; ++k) {
            for (int n = 0; n < L; ++n) {
                for (int p = 0; p < L; ++p) {
                    const CMat& r = est.covariance(j, k, n);
                    const CMat& w = est.whitened(j, k, p);
                    const cd t = diagonal ? (r.diagonal().array() * w.diagonal().array()).sum()
                                          : trace_of_product(r, w);
                    c_[d.user(k, n)](j * L + p) = t;
                }
            }
            CMat xstack(diagonal ? M : M * M, L * L);
            CMat base(L, L);
            for (int p = 0; p < L; ++p) {
                for (int pp = 0; pp < L; ++pp) {
                    const CMat& r = est.covariance(j, k, pp);
                    const CMat& w = est.whitened(j, k, p);
                    if (diagonal) {
                        xstack.col(p * L + pp) = (r.diagonal().array() * w.diagonal().array()).matrix();
                        base(p, pp) = xstack.col(p * L + pp).sum();
                    } else {
                        const CMat x = r * w;
                        put_vec(xstack, p * L + pp, x);
                        base(p, pp) = x.trace();
                    }
                }
            }
            // tr(R_jmn X) = <vec R_jmn, vec X> for Hermitian R.
            base_[d.bs_pilot(j, k)] = hermitian_part(base);
            tau_[d.bs_pilot(j, k)] = rstack.adjoint() * xstack;
        }
    }
}

CMat SummaryKernel::noise_block(int j, int k) const { return base_[dims_.bs_pilot(j, k)]; }

CMat SummaryKernel::interference_block(int j, int k, const RVec& q) const {
    const int L = dims_.L;
    if (q.size() != static_cast<Eigen::Index>(dims_.num_users())) {
        throw DomainError("summaries: expected K*L data powers");
    }
    const CVec flat = tau_[dims_.bs_pilot(j, k)].transpose() * q.cast<cd>();
    CMat block = base_[dims_.bs_pilot(j, k)];
    for (int p = 0; p < L; ++p) {
        for (int pp = 0; pp < L; ++pp) {
            block(p, pp) += flat(p * L + pp);
        }
    }
    return hermitian_part(block);
}

SlowFadingSummaries build_summaries(const SummaryKernel& kernel, const RVec& data_powers,
                                    const std::vector<CMat>& gamma) {
    const Dims d = kernel.dims();
    const int L = d.L;
    SlowFadingSummaries s;
    s.dims = d;
    s.data_power = data_powers;
    s.c.resize(d.num_users());
    for (int k = 0; k < d.K; ++k) {
        for (int n = 0; n < L; ++n) s.c[d.user(k, n)] = kernel.c(k, n);
    }
    s.D.assign(static_cast<std::size_t>(d.K), CMat::Zero(L * L, L * L));
    s.D_noise.assign(static_cast<std::size_t>(d.K), CMat::Zero(L * L, L * L));
    for (int k = 0; k < d.K; ++k) {
        for (int j = 0; j < L; ++j) {
            s.D[static_cast<std::size_t>(k)].block(j * L, j * L, L, L) = kernel.interference_block(j, k, data_powers);
            s.D_noise[static_cast<std::size_t>(k)].block(j * L, j * L, L, L) = kernel.noise_block(j, k);
        }
    }
    if (!gamma.empty()) {
        if (gamma.size() != static_cast<std::size_t>(d.L * d.K)) {
            throw ConfigError("summaries: expected one ZF kernel per (BS, pilot)");
        }
        s.E.assign(static_cast<std::size_t>(d.K), CMat::Zero(L * L, L * L));
        for (int k = 0; k < d.K; ++k) {
            for (int j = 0; j < L; ++j) {
                const CMat& g = gamma[d.bs_pilot(j, k)];
                if (g.rows() != L || g.cols() != L) {
                    throw ConfigError("summaries: ZF kernels must be L x L");
                }
                s.E[static_cast<std::size_t>(k)].block(j * L, j * L, L, L) = hermitian_part(g);
            }
        }
    }
    return s;
}

SlowFadingSummaries build_summaries(const EstimationModel& est, const RVec& data_powers,
                                    const std::vector<CMat>& gamma) {
    return build_summaries(SummaryKernel(est), data_powers, gamma);
}

namespace {

double user_value(const RVec& v, const Dims& d, int k, int l) { return v(static_cast<Eigen::Index>(d.user(k, l))); }

void finish(ClosedFormSinr& out) {
    const double denom = out.i1 + out.i2 + out.i3;
    if (!(denom > 0.0)) {
        out.sinr = 0.0;
        out.degenerate = true;
    } else {
        out.sinr = out.numerator / denom;
    }
}

}  // namespace

ClosedFormSinr sinr_mf_closed(const SlowFadingSummaries& s, const LsfpSet& lsfp, const PowerAllocation& power,
                              int k, int l) {
    if (lsfp.convention != LsfpConvention::PilotScaled) {
        throw ConfigError("sinr_mf_closed: LSFP weights must be in the pilot-scaled convention");
    }
    const Dims d = s.dims;
    const CVec a = lsfp.A[static_cast<std::size_t>(k)].col(l);
    ClosedFormSinr out;
    const double own = std::norm(a.dot(s.c_vec(k, l)));
    out.numerator = own * user_value(power.pilot, d, k, l) * user_value(power.data, d, k, l);
    for (int n = 0; n < d.L; ++n) {
        if (n == l) continue;
        out.i1 += std::norm(a.dot(s.c_vec(k, n))) * user_value(power.pilot, d, k, n) * user_value(power.data, d, k, n);
    }
    const auto& D = s.D[static_cast<std::size_t>(k)];
    const auto& D0 = s.D_noise[static_cast<std::size_t>(k)];
    out.i3 = std::real(a.dot(D0 * a));
    out.i2 = std::real(a.dot((D - D0) * a));
    finish(out);
    return out;
}

ClosedFormSinr sinr_zf_closed(const SlowFadingSummaries& s, const LsfpSet& lsfp, const PowerAllocation& power,
                              int k, int l) {
    if (!s.has_zf()) {
        throw ConfigError("sinr_zf_closed: summaries were built without ZF kernels");
    }
    if (lsfp.convention != LsfpConvention::Raw) {
        throw ConfigError("sinr_zf_closed: LSFP weights must be in the raw convention");
    }
    const Dims d = s.dims;
    const CVec a = lsfp.A[static_cast<std::size_t>(k)].col(l);
    ClosedFormSinr out;
    out.numerator = std::norm(eta_vector(d.L, l).dot(a)) * user_value(power.data, d, k, l);
    for (int n = 0; n < d.L; ++n) {
        if (n == l) continue;
        out.i1 += std::norm(eta_vector(d.L, n).dot(a)) * user_value(power.data, d, k, n);
    }
    out.i2 = std::real(a.dot(s.E[static_cast<std::size_t>(k)] * a));
    finish(out);
    return out;
}

RVec closed_form_sinr(const SlowFadingSummaries& s, const LsfpSet& lsfp, const PowerAllocation& power,
                      Receiver receiver) {
    const Dims d = s.dims;
    RVec out(static_cast<Eigen::Index>(d.num_users()));
    for (int k = 0; k < d.K; ++k) {
        for (int l = 0; l < d.L; ++l) {
            out(static_cast<Eigen::Index>(d.user(k, l))) = receiver == Receiver::MF
                                                               ? sinr_mf_closed(s, lsfp, power, k, l).sinr
                                                               : sinr_zf_closed(s, lsfp, power, k, l).sinr;
        }
    }
    return out;
}

namespace {

// Per pilot k: the steering vectors, their weights in the interference sum,
// and the matrix D_k or E_k they are added to.
struct OptimalProblem {
    std::vector<CVec> vectors;  // per cell n
    RVec weight;                // per cell n
    RVec gain;                  // multiplies the quadratic form in the SINR
    CMat base;
};

OptimalProblem optimal_problem(const SlowFadingSummaries& s, const PowerAllocation& power, Receiver receiver,
                               ZfPilotWeighting weighting, int k) {
    const Dims d = s.dims;
    OptimalProblem pr;
    pr.vectors.resize(static_cast<std::size_t>(d.L));
    pr.weight.resize(d.L);
    pr.gain.resize(d.L);
    for (int n = 0; n < d.L; ++n) {
        const double p = user_value(power.pilot, d, k, n);
        const double q = user_value(power.data, d, k, n);
        if (receiver == Receiver::MF) {
            pr.vectors[static_cast<std::size_t>(n)] = s.c_vec(k, n);
            pr.weight(n) = p * q;
        } else {
            pr.vectors[static_cast<std::size_t>(n)] = eta_vector(d.L, n);
            pr.weight(n) = weighting == ZfPilotWeighting::Literal ? p * q : q;
        }
        pr.gain(n) = pr.weight(n);
    }
    if (receiver == Receiver::ZF && !s.has_zf()) {
        throw ConfigError("optimal_lsfp: ZF requires summaries built with ZF kernels");
    }
    pr.base = receiver == Receiver::MF ? s.D[static_cast<std::size_t>(k)] : s.E[static_cast<std::size_t>(k)];
    return pr;
}

}  // namespace

OptimalLsfp optimal_lsfp(const SlowFadingSummaries& s, const PowerAllocation& power, Receiver receiver,
                         ZfPilotWeighting weighting) {
    const Dims d = s.dims;
    OptimalLsfp out;
    out.lsfp.dims = d;
    out.lsfp.convention = receiver == Receiver::MF ? LsfpConvention::PilotScaled : LsfpConvention::Raw;
    out.lsfp.A.assign(static_cast<std::size_t>(d.K), CMat::Zero(d.L * d.L, d.L));
    out.sinr = RVec::Zero(static_cast<Eigen::Index>(d.num_users()));
    out.regularized.assign(d.num_users(), false);
    for (int k = 0; k < d.K; ++k) {
        const OptimalProblem pr = optimal_problem(s, power, receiver, weighting, k);
        for (int l = 0; l < d.L; ++l) {
            CMat m = pr.base;
            for (int n = 0; n < d.L; ++n) {
                if (n == l) continue;
                const CVec& v = pr.vectors[static_cast<std::size_t>(n)];
                m.noalias() += pr.weight(n) * v * v.adjoint();
            }
            bool ridge = false;
            const Eigen::LLT<CMat> llt = factor_with_ridge(m, ridge);
            const CVec& v = pr.vectors[static_cast<std::size_t>(l)];
            const CVec a = llt.solve(v);
            out.lsfp.A[static_cast<std::size_t>(k)].col(l) = a;
            out.sinr(static_cast<Eigen::Index>(d.user(k, l))) = pr.gain(l) * std::real(v.dot(a));
            out.regularized[d.user(k, l)] = ridge;
        }
    }
    return out;
}

RVec optimal_sinr(const SlowFadingSummaries& s, const PowerAllocation& power, Receiver receiver,
                  ZfPilotWeighting weighting) {
    const Dims d = s.dims;
    RVec out = RVec::Zero(static_cast<Eigen::Index>(d.num_users()));
    for (int k = 0; k < d.K; ++k) {
        const OptimalProblem pr = optimal_problem(s, power, receiver, weighting, k);
        CMat a = pr.base;
        for (int n = 0; n < d.L; ++n) {
            const CVec& v = pr.vectors[static_cast<std::size_t>(n)];
            a.noalias() += pr.weight(n) * v * v.adjoint();
        }
        bool ridge = false;
        const Eigen::LLT<CMat> llt = factor_with_ridge(a, ridge);
        for (int l = 0; l < d.L; ++l) {
            // v^H (A - w v v^H)^{-1} v = y / (1 - w y) with y = v^H A^{-1} v.
            const CVec& v = pr.vectors[static_cast<std::size_t>(l)];
            const double y = std::real(v.dot(llt.solve(v)));
            const double w = pr.weight(l);
            const double denom = 1.0 - w * y;
            double sinr = 0.0;
            if (w > 0.0) {
                sinr = denom > 0.0 ? pr.gain(l) * y / denom : std::numeric_limits<double>::infinity();
            }
            out(static_cast<Eigen::Index>(d.user(k, l))) = sinr;
        }
    }
    return out;
}

}  // namespace umimo
