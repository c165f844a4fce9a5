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
#include "umimo/estimation.hpp"

using namespace umimo;
using namespace umimo::testing;

namespace {

std::vector<CVec> pilot_noise(const Dims& d, std::mt19937_64& rng) {
    std::vector<CVec> z;
    for (std::size_t i = 0; i < static_cast<std::size_t>(d.L * d.K); ++i) z.push_back(complex_normal(rng, d.M));
    return z;
}

}  // namespace

TEST_CASE("single cell with identity covariance and unit pilot") {
    const Dims d{1, 1, 4};
    const CovarianceSet c = identity_covariances(d, {1.0});
    const EstimationModel est(c, RVec::Ones(1));
    CHECK((est.k_inverse(0, 0) - 0.5 * CMat::Identity(4, 4)).norm() < 1e-14);
    CHECK((est.estimate_covariance(0, 0, 0) - 0.5 * CMat::Identity(4, 4)).norm() < 1e-14);
    CHECK((est.error_covariance(0, 0, 0) - 0.5 * CMat::Identity(4, 4)).norm() < 1e-14);
}

TEST_CASE("zero pilot power gives a zero estimate") {
    const Dims d{2, 1, 3};
    std::mt19937_64 rng(5);
    const CovarianceSet c = random_covariances(d, rng);
    const EstimationModel est(c, RVec::Zero(2));
    for (int l = 0; l < 2; ++l) {
        for (int m = 0; m < 2; ++m) {
            CHECK(est.estimate_covariance(l, 0, m).norm() == 0.0);
            CHECK((est.error_covariance(l, 0, m) - c.at(l, 0, m)).norm() == 0.0);
        }
    }
}

TEST_CASE("two cells with disjoint diagonal covariances") {
    const Dims d{2, 1, 2};
    CovarianceSet c;
    c.dims = d;
    c.correlation = CorrelationMode::OneRing;
    CMat r1 = CMat::Zero(2, 2), r2 = CMat::Zero(2, 2);
    r1(0, 0) = 1.0;
    r2(1, 1) = 1.0;
    for (int j = 0; j < 2; ++j) {
        c.R.push_back(r1);
        c.R.push_back(r2);
        c.beta.push_back(0.5);
        c.beta.push_back(0.5);
    }
    const EstimationModel est(c, RVec::Ones(2));
    CMat expected = CMat::Zero(2, 2);
    expected(0, 0) = 0.5;
    CHECK((est.k_inverse(0, 0) - 0.5 * CMat::Identity(2, 2)).norm() < 1e-14);
    CHECK((est.estimate_covariance(0, 0, 0) - expected).norm() < 1e-14);
}

TEST_CASE("decomposition and spectral bounds") {
    const Dims d{3, 2, 6};
    std::mt19937_64 rng(17);
    const CovarianceSet c = random_covariances(d, rng);
    RVec p(6);
    p << 1.0, 2.0, 0.5, 3.0, 0.1, 1.5;
    const EstimationModel est(c, p);
    for (int l = 0; l < 3; ++l) {
        for (int k = 0; k < 2; ++k) {
            const double kinv_norm = Eigen::SelfAdjointEigenSolver<CMat>(est.k_inverse(l, k)).eigenvalues().maxCoeff();
            CHECK(kinv_norm <= 1.0 + 1e-12);
            for (int m = 0; m < 3; ++m) {
                const CMat& r = c.at(l, k, m);
                const CMat sum = est.estimate_covariance(l, k, m) + est.error_covariance(l, k, m);
                CHECK((sum - r).norm() <= 1e-10 * r.norm());
                CHECK(min_eigenvalue(est.estimate_covariance(l, k, m)) >= -1e-10 * r.norm());
                CHECK(min_eigenvalue(est.error_covariance(l, k, m)) >= -1e-10 * r.norm());
            }
        }
    }
}

TEST_CASE("noise-free estimate with very strong pilot is consistent") {
    const Dims d{1, 1, 5};
    std::mt19937_64 rng(3);
    const CovarianceSet c = random_covariances(d, rng);
    RVec p(1);
    p << 1e9;
    const EstimationModel est(c, p);
    const ChannelSampler sampler(c);
    const auto h = sampler.draw(rng);
    std::vector<CVec> zero{CVec::Zero(5)};
    const ChannelEstimates e = estimate_channels(est, h, zero);
    CHECK((e.estimate[0] - h[0]).norm() / h[0].norm() < 1e-3);
    CHECK((e.error[0] - (h[0] - e.estimate[0])).norm() == 0.0);
}

TEST_CASE("empirical second moments match the model") {
    const Dims d{2, 1, 4};
    std::mt19937_64 rng(99);
    const CovarianceSet c = random_covariances(d, rng);
    RVec p(2);
    p << 1.0, 0.7;
    const EstimationModel est(c, p);
    const ChannelSampler sampler(c);
    const int n = 20000;
    const int l = 0, k = 0;
    CMat est_cov = CMat::Zero(4, 4), cross = CMat::Zero(4, 4), orth = CMat::Zero(4, 4);
    for (int t = 0; t < n; ++t) {
        const auto h = sampler.draw(rng);
        const auto z = pilot_noise(d, rng);
        const ChannelEstimates e = estimate_channels(est, h, z);
        const CVec& own = e.estimate[d.triple(l, k, 0)];
        const CVec& other = e.estimate[d.triple(l, k, 1)];
        est_cov += own * own.adjoint();
        cross += other * own.adjoint();
        orth += e.error[d.triple(l, k, 0)] * own.adjoint();
    }
    est_cov /= n;
    cross /= n;
    orth /= n;
    const CMat phi = est.estimate_covariance(l, k, 0);
    CHECK((est_cov - phi).norm() / phi.norm() < 0.05);
    const CMat cr = est.cross_covariance(l, k, 1, 0);
    CHECK((cross - cr).norm() / cr.norm() < 0.05);
    CHECK(orth.norm() < 0.05 * phi.norm());
}

TEST_CASE("co-pilot estimates are colinear under scaled identity covariances") {
    const Dims d{3, 2, 6};
    const CovarianceSet c = identity_covariances(d, std::vector<double>(d.num_triples(), 1.0));
    std::vector<double> beta;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (std::size_t i = 0; i < d.num_triples(); ++i) beta.push_back(u(rng));
    const CovarianceSet cs = identity_covariances(d, beta);
    const EstimationModel est(cs, RVec::Constant(6, 2.0));
    const ChannelSampler sampler(cs);
    const auto h = sampler.draw(rng);
    const ChannelEstimates e = estimate_channels(est, h, pilot_noise(d, rng));
    for (int l = 0; l < 3; ++l) {
        for (int k = 0; k < 2; ++k) {
            const CVec& ref = e.estimate[d.triple(l, k, l)];
            for (int m = 0; m < 3; ++m) {
                const CVec& v = e.estimate[d.triple(l, k, m)];
                const double cosine = std::abs(ref.dot(v)) / (ref.norm() * v.norm());
                CHECK(1.0 - cosine < 1e-12);
            }
        }
    }
    (void)c;
}

TEST_CASE("hermitian square root") {
    std::mt19937_64 rng(4);
    const CMat r = random_psd(6, 3, rng);
    const CMat s = hermitian_sqrt(r);
    CHECK((s * s - r).norm() < 1e-10 * r.norm());
    CHECK(hermitian_defect(s) < 1e-12);
}

TEST_CASE("power allocation validation") {
    const Dims d{2, 2, 4};
    PowerAllocation a = PowerAllocation::full(d, 200.0);
    CHECK(a.pilot.size() == 4);
    CHECK(a.data.size() == 4);
    CHECK_NOTHROW(a.validate(d));
    a.data(1) = 250.0;
    CHECK_THROWS_AS(a.validate(d), DomainError);
    a = PowerAllocation::full(d, 200.0);
    a.pilot(0) = -1.0;
    CHECK_THROWS_AS(a.validate(d), DomainError);
}
