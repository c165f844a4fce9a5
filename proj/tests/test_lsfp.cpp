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

#include <doctest.h>

#include <random>

#include "support.hpp"
#include "umimo/lsfp.hpp"

using namespace umimo;
using namespace umimo::testing;

namespace {

std::vector<CMat> random_kernels(const Dims& d, std::mt19937_64& rng) {
    std::vector<CMat> g;
    for (int i = 0; i < d.L * d.K; ++i) g.push_back(random_psd(d.L, d.L, rng, 0.01));
    return g;
}

PowerAllocation random_power(const Dims& d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.1, 1.0);
    PowerAllocation p;
    p.max_power = 1.0;
    p.pilot.resize(static_cast<Eigen::Index>(d.num_users()));
    p.data.resize(p.pilot.size());
    for (Eigen::Index i = 0; i < p.pilot.size(); ++i) {
        p.pilot(i) = u(rng);
        p.data(i) = u(rng);
    }
    return p;
}

}  // namespace

TEST_CASE("single-cell summaries are scalars") {
    const Dims d{1, 1, 6};
    std::mt19937_64 rng(1);
    const CovarianceSet c = random_covariances(d, rng);
    const EstimationModel est(c, RVec::Ones(1));
    const SlowFadingSummaries s = build_summaries(est, RVec::Ones(1));
    REQUIRE(s.c_vec(0, 0).size() == 1);
    REQUIRE(s.D[0].rows() == 1);
    const CMat& r = c.at(0, 0, 0);
    const CMat kinv = (CMat::Identity(6, 6) + r).inverse();
    CHECK(std::abs(s.c_vec(0, 0)(0) - (r * kinv * r).trace()) < 1e-10 * r.squaredNorm());
}

TEST_CASE("identity covariances reduce to scalar traces") {
    const Dims d{3, 2, 8};
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.1, 3.0);
    std::vector<double> beta;
    for (std::size_t i = 0; i < d.num_triples(); ++i) beta.push_back(u(rng));
    const CovarianceSet c = identity_covariances(d, beta);
    RVec p(6);
    p << 1.0, 0.5, 2.0, 1.5, 0.2, 0.7;
    const EstimationModel est(c, p);
    const SlowFadingSummaries s = build_summaries(est, RVec::Ones(6));
    for (int k = 0; k < 2; ++k) {
        for (int j = 0; j < 3; ++j) {
            double denom = 1.0;
            for (int n = 0; n < 3; ++n) denom += c.gain(j, k, n) * p(d.user(k, n));
            for (int n = 0; n < 3; ++n) {
                for (int q = 0; q < 3; ++q) {
                    const double expected = d.M * c.gain(j, k, n) * c.gain(j, k, q) / denom;
                    CHECK(std::abs(s.c_vec(k, n)(j * 3 + q) - expected) < 1e-10 * expected);
                }
            }
        }
    }
}

TEST_CASE("zero data power leaves only the noise block") {
    const Dims d{2, 2, 5};
    std::mt19937_64 rng(3);
    const CovarianceSet c = random_covariances(d, rng);
    const EstimationModel est(c, RVec::Ones(4));
    const SlowFadingSummaries s = build_summaries(est, RVec::Zero(4));
    for (int k = 0; k < 2; ++k) {
        CHECK((s.D[static_cast<std::size_t>(k)] - s.D_noise[static_cast<std::size_t>(k)]).norm() == 0.0);
        for (int j = 0; j < 2; ++j) {
            for (int p = 0; p < 2; ++p) {
                for (int p2 = 0; p2 < 2; ++p2) {
                    const cd expected = (c.at(j, k, p2) * est.k_inverse(j, k) * c.at(j, k, p)).trace();
                    CHECK(std::abs(s.D[static_cast<std::size_t>(k)](j * 2 + p, j * 2 + p2) - expected) < 1e-10 * std::abs(expected));
                }
            }
        }
    }
}

TEST_CASE("summaries are Hermitian positive semidefinite") {
    const Dims d{3, 2, 6};
    std::mt19937_64 rng(4);
    const CovarianceSet c = random_covariances(d, rng);
    const PowerAllocation pw = random_power(d, rng);
    const EstimationModel est(c, pw.pilot);
    const SlowFadingSummaries s = build_summaries(est, pw.data, random_kernels(d, rng));
    for (int k = 0; k < 2; ++k) {
        for (const CMat* m : {&s.D[static_cast<std::size_t>(k)], &s.E[static_cast<std::size_t>(k)]}) {
            CHECK(hermitian_defect(*m) < 1e-12);
            CHECK(min_eigenvalue(hermitian_part(*m)) >= -1e-8 * m->norm());
        }
        for (int l = 0; l < 3; ++l) {
            const cd v = s.c_vec(k, l)(l * 3 + l);
            CHECK(v.real() > 0.0);
            CHECK(std::abs(v.imag()) < 1e-12 * v.real());
        }
    }
}

TEST_CASE("zero data power for the user gives zero SINR") {
    const Dims d{2, 1, 4};
    std::mt19937_64 rng(5);
    const CovarianceSet c = random_covariances(d, rng);
    PowerAllocation pw = PowerAllocation::full(d, 1.0);
    pw.data(0) = 0.0;
    const EstimationModel est(c, pw.pilot);
    const SlowFadingSummaries s = build_summaries(est, pw.data);
    const LsfpSet none = LsfpSet::none(d, LsfpConvention::PilotScaled, pw.pilot);
    CHECK(sinr_mf_closed(s, none, pw, 0, 0).sinr == 0.0);
}

TEST_CASE("hand evaluation for one cell with identity covariance") {
    const Dims d{1, 1, 4};
    const CovarianceSet c = identity_covariances(d, {1.0});
    const PowerAllocation pw = PowerAllocation::full(d, 1.0);
    const EstimationModel est(c, pw.pilot);
    const SlowFadingSummaries s = build_summaries(est, pw.data);
    const ClosedFormSinr r = sinr_mf_closed(s, LsfpSet::none(d, LsfpConvention::PilotScaled, pw.pilot), pw, 0, 0);
    // c = tr(I (2I)^{-1} I) = 2; numerator c^2; noise tr(R K^-1 R) = 2; interference q tr(R R K^-1 R) = 2.
    CHECK(r.numerator == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(r.i1 == 0.0);
    CHECK(r.i2 == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.i3 == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.sinr == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("degenerate denominator is flagged") {
    const Dims d{1, 1, 4};
    const CovarianceSet c = identity_covariances(d, {1.0});
    PowerAllocation pw = PowerAllocation::full(d, 1.0);
    const EstimationModel est(c, pw.pilot);
    const SlowFadingSummaries s = build_summaries(est, pw.data);
    LsfpSet zero = LsfpSet::none(d, LsfpConvention::PilotScaled, pw.pilot);
    zero.A[0].setZero();
    const ClosedFormSinr r = sinr_mf_closed(s, zero, pw, 0, 0);
    CHECK(r.degenerate);
    CHECK(r.sinr == 0.0);
}

TEST_CASE("zero-forcing closed form without combining") {
    const Dims d{3, 2, 8};
    std::mt19937_64 rng(6);
    const CovarianceSet c = random_covariances(d, rng);
    const PowerAllocation pw = random_power(d, rng);
    const EstimationModel est(c, pw.pilot);
    const auto g = random_kernels(d, rng);
    const SlowFadingSummaries s = build_summaries(est, pw.data, g);
    const LsfpSet none = LsfpSet::none(d, LsfpConvention::Raw, pw.pilot);
    for (int k = 0; k < 2; ++k) {
        for (int l = 0; l < 3; ++l) {
            const ClosedFormSinr r = sinr_zf_closed(s, none, pw, k, l);
            CHECK(r.i1 == 0.0);
            const double gll = g[d.bs_pilot(l, k)](l, l).real();
            CHECK(r.sinr == doctest::Approx(pw.data(d.user(k, l)) / gll).epsilon(1e-12));
        }
    }
}

TEST_CASE("zero-forcing closed form with a single nonzero weight") {
    const Dims d{2, 1, 8};
    std::mt19937_64 rng(7);
    const CovarianceSet c = random_covariances(d, rng);
    const PowerAllocation pw = random_power(d, rng);
    const EstimationModel est(c, pw.pilot);
    const auto g = random_kernels(d, rng);
    const SlowFadingSummaries s = build_summaries(est, pw.data, g);
    LsfpSet a = LsfpSet::none(d, LsfpConvention::Raw, pw.pilot);
    a.A[0].setZero();
    const cd w(0.6, -0.8);
    // Only (l = 0, j = 1, p = 0): the weight reaches user (0, 0) through eta_0.
    a.A[0](1 * 2 + 0, 0) = w;
    const ClosedFormSinr r = sinr_zf_closed(s, a, pw, 0, 0);
    const double e = g[d.bs_pilot(1, 0)](0, 0).real();
    CHECK(r.sinr == doctest::Approx(std::norm(w) * pw.data(0) / (std::norm(w) * e)).epsilon(1e-12));
    CHECK_THROWS_AS(sinr_zf_closed(build_summaries(est, pw.data), a, pw, 0, 0), ConfigError);
}

TEST_CASE("single-cell optimum is the scalar ratio") {
    const Dims d{1, 1, 5};
    std::mt19937_64 rng(8);
    const CovarianceSet c = random_covariances(d, rng);
    const PowerAllocation pw = random_power(d, rng);
    const EstimationModel est(c, pw.pilot);
    const SlowFadingSummaries s = build_summaries(est, pw.data);
    const OptimalLsfp opt = optimal_lsfp(s, pw, Receiver::MF);
    const double cval = std::abs(s.c_vec(0, 0)(0));
    const double expected = cval * cval * pw.pilot(0) * pw.data(0) / s.D[0](0, 0).real();
    CHECK(opt.sinr(0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("homogeneity of the closed forms") {
    const Dims d{3, 2, 6};
    std::mt19937_64 rng(9);
    const CovarianceSet c = random_covariances(d, rng);
    const PowerAllocation pw = random_power(d, rng);
    const EstimationModel est(c, pw.pilot);
    const SlowFadingSummaries s = build_summaries(est, pw.data, random_kernels(d, rng));
    LsfpSet a = LsfpSet::none(d, LsfpConvention::PilotScaled, pw.pilot);
    for (auto& m : a.A) m = random_complex(9, 3, rng);
    LsfpSet b = a;
    for (auto& m : b.A) m.col(1) *= cd(-2.0, 0.5);
    LsfpSet raw = a;
    raw.convention = LsfpConvention::Raw;
    LsfpSet raw_b = b;
    raw_b.convention = LsfpConvention::Raw;
    for (int k = 0; k < 2; ++k) {
        const double mf_a = sinr_mf_closed(s, a, pw, k, 1).sinr;
        CHECK(sinr_mf_closed(s, b, pw, k, 1).sinr == doctest::Approx(mf_a).epsilon(1e-10));
        const double zf_a = sinr_zf_closed(s, raw, pw, k, 1).sinr;
        CHECK(sinr_zf_closed(s, raw_b, pw, k, 1).sinr == doctest::Approx(zf_a).epsilon(1e-10));
    }
}

TEST_CASE("optimal combining beats random perturbations") {
    const Dims d{3, 2, 6};
    std::mt19937_64 rng(10);
    const CovarianceSet c = random_covariances(d, rng);
    const PowerAllocation pw = random_power(d, rng);
    const EstimationModel est(c, pw.pilot);
    const SlowFadingSummaries s = build_summaries(est, pw.data, random_kernels(d, rng));
    for (Receiver rx : {Receiver::MF, Receiver::ZF}) {
        const OptimalLsfp opt = optimal_lsfp(s, pw, rx);
        const RVec fast = optimal_sinr(s, pw, rx);
        const RVec direct = closed_form_sinr(s, opt.lsfp, pw, rx);
        for (Eigen::Index i = 0; i < fast.size(); ++i) {
            CHECK(direct(i) == doctest::Approx(opt.sinr(i)).epsilon(1e-9));
            CHECK(fast(i) == doctest::Approx(opt.sinr(i)).epsilon(1e-9));
        }
        std::normal_distribution<double> eps(0.0, 1.0);
        for (int t = 0; t < 100; ++t) {
            LsfpSet pert = opt.lsfp;
            const double size = std::pow(10.0, -3.0 + 3.0 * t / 100.0);
            for (auto& m : pert.A) m += size * m.norm() * random_complex(static_cast<int>(m.rows()), static_cast<int>(m.cols()), rng) / std::sqrt(double(m.size()));
            const RVec v = closed_form_sinr(s, pert, pw, rx);
            for (Eigen::Index i = 0; i < v.size(); ++i) CHECK(v(i) <= opt.sinr(i) * (1.0 + 1e-9));
        }
    }
}

TEST_CASE("optimal combining dominates per-cell decoding") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const Dims d{3, 2, 8};
        const CovarianceSet c = random_covariances(d, rng, 3);
        const PowerAllocation pw = random_power(d, rng);
        const EstimationModel est(c, pw.pilot);
        const SlowFadingSummaries s = build_summaries(est, pw.data, random_kernels(d, rng));
        const RVec mf_none = closed_form_sinr(s, LsfpSet::none(d, LsfpConvention::PilotScaled, pw.pilot), pw, Receiver::MF);
        const RVec zf_none = closed_form_sinr(s, LsfpSet::none(d, LsfpConvention::Raw, pw.pilot), pw, Receiver::ZF);
        const RVec mf_opt = optimal_sinr(s, pw, Receiver::MF);
        const RVec zf_opt = optimal_sinr(s, pw, Receiver::ZF);
        for (Eigen::Index i = 0; i < mf_none.size(); ++i) {
            CHECK(mf_opt(i) >= mf_none(i) * (1.0 - 1e-9));
            CHECK(zf_opt(i) >= zf_none(i) * (1.0 - 1e-9));
        }
    }
}

TEST_CASE("convention conversions round trip") {
    const Dims d{2, 2, 4};
    std::mt19937_64 rng(12);
    const PowerAllocation pw = random_power(d, rng);
    LsfpSet a = LsfpSet::none(d, LsfpConvention::Raw, pw.pilot);
    for (auto& m : a.A) m = random_complex(4, 2, rng);
    const LsfpSet back = a.to_pilot_scaled(pw.pilot).to_raw(pw.pilot);
    for (int k = 0; k < 2; ++k) CHECK((back.A[static_cast<std::size_t>(k)] - a.A[static_cast<std::size_t>(k)]).norm() < 1e-14);
    const LsfpSet hat = a.to_pilot_scaled(pw.pilot);
    CHECK(std::abs(hat.entry(1, 0, 1, 1) - a.entry(1, 0, 1, 1) * std::sqrt(pw.pilot(d.user(1, 1)))) < 1e-14);
    a.A[0](0, 0) = cd(std::nan(""), 0.0);
    CHECK_THROWS(a.validate());
}
