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

// Randomized invariants, each checked on 50 seeds.

#include <doctest.h>

#include <memory>
#include <random>

#include "support.hpp"
#include "umimo/det_equiv.hpp"
#include "umimo/experiment.hpp"
#include "umimo/power_control.hpp"

using namespace umimo;
using namespace umimo::testing;

namespace {

constexpr int kSeeds = 50;

PowerAllocation random_power(const Dims& d, std::mt19937_64& rng, double cap) {
    std::uniform_real_distribution<double> u(0.05 * cap, cap);
    PowerAllocation p;
    p.max_power = cap;
    p.pilot.resize(static_cast<Eigen::Index>(d.num_users()));
    p.data.resize(p.pilot.size());
    for (Eigen::Index i = 0; i < p.pilot.size(); ++i) {
        p.pilot(i) = u(rng);
        p.data(i) = u(rng);
    }
    return p;
}

}  // namespace

TEST_CASE("covariances are Hermitian, PSD, Toeplitz with exact diagonals") {
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const NetworkScenario s = small_scenario(3, 2, 16, static_cast<std::uint64_t>(seed));
        const CovarianceSet c = scenario_covariances(s);
        for (std::size_t i = 0; i < c.R.size(); ++i) {
            const CMat& r = c.R[i];
            CHECK(hermitian_defect(r) < 1e-10);
            CHECK(min_eigenvalue(r) >= -1e-8 * c.beta[i]);
            for (int m = 0; m < s.M; ++m) CHECK(r(m, m) == cd(c.beta[i], 0.0));
            for (int m = 1; m < s.M; ++m) {
                for (int p = 1; p < s.M; ++p) CHECK(std::abs(r(m, p) - r(m - 1, p - 1)) <= 1e-12 * c.beta[i]);
            }
        }
    }
}

TEST_CASE("correlation decays as the angular spread grows") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> theta(-kPi / 3, kPi / 3);
    for (int seed = 0; seed < kSeeds; ++seed) {
        const double th = theta(rng);
        double prev = 1.0;
        for (double delta = 0.01; delta <= 0.3; delta += 0.01) {
            const double v = std::abs(one_ring_covariance(1.0, th, delta, 2, 0.5)(0, 1));
            CHECK(v <= prev + 1e-12);
            prev = v;
        }
    }
}

TEST_CASE("drops are deterministic") {
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const NetworkScenario s = small_scenario(7, 3, 8, static_cast<std::uint64_t>(seed));
        CHECK(drop_users(s) == drop_users(s));
    }
}

TEST_CASE("estimation statistics decompose the covariance") {
    for (int seed = 1; seed <= kSeeds; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        const Dims d{2, 2, 8};
        const CovarianceSet c = random_covariances(d, rng, 1 + seed % 8);
        const PowerAllocation pw = random_power(d, rng, 2.0);
        const EstimationModel est(c, pw.pilot);
        for (int l = 0; l < 2; ++l) {
            for (int k = 0; k < 2; ++k) {
                for (int m = 0; m < 2; ++m) {
                    const CMat& r = c.at(l, k, m);
                    const CMat phi = est.estimate_covariance(l, k, m);
                    const CMat err = est.error_covariance(l, k, m);
                    CHECK((phi + err - r).norm() <= 1e-10 * r.norm());
                    CHECK(min_eigenvalue(phi) >= -1e-10 * r.norm());
                    CHECK(min_eigenvalue(err) >= -1e-10 * r.norm());
                }
            }
        }
    }
}

TEST_CASE("summaries are PSD, combining is homogeneous and optimal combining dominates") {
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const NetworkScenario s = small_scenario(2, 2, 16, static_cast<std::uint64_t>(seed));
        const CovarianceSet c = scenario_covariances(s);
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 31);
        const PowerAllocation pw = random_power(s.dims(), rng, s.max_power_mw);
        const EstimationModel est(c, pw.pilot);
        const auto gamma = zf_gamma(est, pw.data);
        for (const CMat& g : gamma) {
            CHECK(hermitian_defect(g) < 1e-12);
            CHECK(min_eigenvalue(g) >= -1e-8 * g.norm());
        }
        const SlowFadingSummaries sum = build_summaries(est, pw.data, gamma);
        for (int k = 0; k < 2; ++k) {
            const CMat& D = sum.D[static_cast<std::size_t>(k)];
            CHECK(min_eigenvalue(hermitian_part(D)) >= -1e-8 * D.norm());
        }
        LsfpSet a = LsfpSet::none(s.dims(), LsfpConvention::PilotScaled, pw.pilot);
        for (auto& m : a.A) m = random_complex(4, 2, rng);
        LsfpSet b = a;
        for (auto& m : b.A) m *= cd(0.0, -3.0);
        const RVec va = closed_form_sinr(sum, a, pw, Receiver::MF);
        const RVec vb = closed_form_sinr(sum, b, pw, Receiver::MF);
        for (Eigen::Index i = 0; i < va.size(); ++i) CHECK(vb(i) == doctest::Approx(va(i)).epsilon(1e-10));
        for (Receiver rx : {Receiver::MF, Receiver::ZF}) {
            const LsfpConvention conv = rx == Receiver::MF ? LsfpConvention::PilotScaled : LsfpConvention::Raw;
            const RVec none = closed_form_sinr(sum, LsfpSet::none(s.dims(), conv, pw.pilot), pw, rx);
            const RVec opt = optimal_sinr(sum, pw, rx);
            for (Eigen::Index i = 0; i < none.size(); ++i) CHECK(opt(i) >= none(i) * (1.0 - 1e-9));
        }
    }
}

TEST_CASE("bisection bracket halves and evaluations repeat bitwise") {
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const NetworkScenario s = small_scenario(2, 1, 8, static_cast<std::uint64_t>(seed));
        const CovarianceSet c = scenario_covariances(s);
        const RVec pilot = RVec::Constant(2, s.max_power_mw);
        const EstimationModel est(c, pilot);
        auto kernel = std::make_shared<SummaryKernel>(est);
        const SinrEvaluator eval = mf_evaluator(kernel, pilot, s.max_power_mw, LsfpMode::Optimal);
        BisectionOptions opt;
        opt.eps_db = 0.05;
        const PowerOptResult r =
            bisection_maxmin(eval, 2, initial_gamma_max(*kernel, s.max_power_mw, s.max_power_mw), s.max_power_mw, opt);
        for (std::size_t i = static_cast<std::size_t>(r.expansions) + 1; i < r.trace.size(); ++i) {
            const double prev = r.trace[i - 1].gamma_max - r.trace[i - 1].gamma_min;
            const double cur = r.trace[i].gamma_max - r.trace[i].gamma_min;
            CHECK(cur == doctest::Approx(0.5 * prev).epsilon(1e-12));
        }
        CHECK(eval(r.q_star).minCoeff() >= r.gamma_star * (1.0 - kFeasibilitySlack));
        const RVec a = eval(r.q_star), b = eval(r.q_star);
        CHECK((a.array() == b.array()).all());
    }
}

TEST_CASE("empirical CDFs are monotone step functions") {
    for (int seed = 1; seed <= kSeeds; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        std::lognormal_distribution<double> g(0.0, 1.5);
        std::vector<double> v(1 + seed * 7);
        for (double& x : v) x = std::round(g(rng) * 4.0) / 4.0;
        const CdfResult c = compute_cdf(v);
        CHECK(c.F.back() == 1.0);
        for (std::size_t i = 1; i < c.F.size(); ++i) CHECK(c.F[i] > c.F[i - 1]);
        for (std::size_t i = 0; i < c.x.size(); ++i) {
            CHECK(c.at(c.x[i]) == c.F[i]);
            CHECK(c.at(c.x[i] - 1e-9) == (i == 0 ? 0.0 : c.F[i - 1]));
        }
        CHECK(c.q05 == nearest_rank_quantile(v, 0.05));
    }
}
