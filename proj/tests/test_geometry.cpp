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

#include <cmath>

#include "support.hpp"
#include "umimo/geometry.hpp"

using namespace umimo;
using umimo::testing::small_scenario;

TEST_CASE("drops are deterministic for a fixed seed") {
    const NetworkScenario s = small_scenario(7, 5, 16, 42);
    CHECK(drop_users(s) == drop_users(s));
    NetworkScenario other = s;
    other.seed = 43;
    CHECK_FALSE(drop_users(s) == drop_users(other));
}

TEST_CASE("angular spread of a ring at 1 km") {
    const double delta = angular_spread(20.0, 1.0);
    CHECK(delta == doctest::Approx(std::atan(0.02)).epsilon(1e-15));
    CHECK(delta == doctest::Approx(0.0200).epsilon(1e-3));
}

TEST_CASE("single cell with one user") {
    const UserDrop d = drop_users(small_scenario(1, 1, 4, 3));
    CHECK(d.user_positions_km.size() == 1);
    CHECK(d.distance_km.size() == 1);
    CHECK(d.angle_rad.size() == 1);
    CHECK(d.spread_rad.size() == 1);
}

TEST_CASE("drop geometry respects the layout") {
    const NetworkScenario s = small_scenario(7, 5, 8, 9);
    const UserDrop d = drop_users(s);
    const Dims dims = s.dims();
    for (int j = 0; j < s.L; ++j) {
        for (int k = 0; k < s.K; ++k) {
            for (int l = 0; l < s.L; ++l) {
                const auto t = dims.triple(j, k, l);
                CHECK(d.distance_km[t] >= s.min_distance_km - 1e-12);
                CHECK(d.spread_rad[t] > 0.0);
                CHECK(d.spread_rad[t] <= kPi / 2);
                if (j == l) CHECK(d.distance_km[t] <= s.cell_radius_km + 1e-12);
            }
        }
    }
}

TEST_CASE("path loss coefficients") {
    CHECK(path_loss_db(1.0, 0.0) == doctest::Approx(-127.8).epsilon(1e-12));
    CHECK(path_loss_db(10.0, 3.0) == doctest::Approx(-127.8 - 35.0 + 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(path_gain(0.0, 0.0, -95.0), DomainError);
    CHECK_THROWS_AS(path_gain(-1.0, 0.0, -95.0), DomainError);
}

TEST_CASE("noise power for 20 MHz and NF 4") {
    const double expected = -174.0 + 10.0 * std::log10(20e6) + 4.0 + 2.0;
    CHECK(noise_power_dbm(20e6, 4.0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(noise_power_dbm(20e6, 4.0) == doctest::Approx(-94.99).epsilon(1e-4));
}

TEST_CASE("cell-edge SNR at full power is about -6 dB") {
    const NetworkScenario s;
    const double beta = path_gain(1.0, 0.0, noise_power_dbm(s.bandwidth_hz, s.noise_figure_db), s.antenna_gain_db);
    const double snr_db = to_db(beta * s.max_power_mw);
    CHECK(std::abs(snr_db - (-6.0)) <= 0.5);
}

TEST_CASE("one-ring diagonal equals beta exactly") {
    const CMat r = one_ring_covariance(2.5, 0.3, 0.1, 12, 0.5);
    for (int m = 0; m < 12; ++m) {
        CHECK(r(m, m).real() == 2.5);
        CHECK(r(m, m).imag() == 0.0);
    }
}

TEST_CASE("vanishing spread gives a rank-one steering matrix") {
    const int M = 10;
    const double theta = 0.4;
    const CMat r = one_ring_covariance(1.0, theta, 1e-9, M, 0.5);
    CVec a(M);
    for (int m = 0; m < M; ++m) a(m) = std::polar(1.0, 2.0 * kPi * 0.5 * std::sin(theta) * m);
    const CMat expected = a * a.adjoint();
    CHECK((r - expected).norm() / expected.norm() < 1e-6);
    const RVec ev = Eigen::SelfAdjointEigenSolver<CMat>(r).eigenvalues();
    CHECK(ev(M - 2) / ev(M - 1) < 1e-6);
}

TEST_CASE("two-antenna entry against a fine trapezoid rule") {
    const double delta = kPi / 6;
    const CMat r = one_ring_covariance(1.0, 0.0, delta, 2, 0.5);
    // Independent oracle: composite trapezoid with 2e4 panels.
    const int n = 20000;
    cd sum = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double a = -delta + 2.0 * delta * i / n;
        const double w = (i == 0 || i == n) ? 0.5 : 1.0;
        sum += w * std::polar(1.0, 2.0 * kPi * 0.5 * std::sin(a) * (0 - 1));
    }
    const cd oracle = sum * (2.0 * delta / n) / (2.0 * delta);
    CHECK(std::abs(r(0, 1) - oracle) < 1e-8);
    CHECK(std::abs(r(1, 0) - std::conj(oracle)) < 1e-8);
}

TEST_CASE("uncorrelated covariances are scaled identities") {
    const NetworkScenario s = small_scenario(3, 2, 6, 5, CorrelationMode::Uncorrelated);
    const CovarianceSet c = build_covariance_set(s, drop_users(s));
    CHECK(c.R.size() == static_cast<std::size_t>(s.L * s.L * s.K));
    for (std::size_t i = 0; i < c.R.size(); ++i) {
        const RVec ev = Eigen::SelfAdjointEigenSolver<CMat>(c.R[i]).eigenvalues();
        CHECK(ev.maxCoeff() - ev.minCoeff() == doctest::Approx(0.0));
        CHECK((c.R[i] - c.beta[i] * CMat::Identity(s.M, s.M)).norm() == 0.0);
    }
}

TEST_CASE("one-ring set satisfies the covariance invariants") {
    const NetworkScenario s = small_scenario(3, 2, 24, 11);
    const CovarianceSet c = build_covariance_set(s, drop_users(s));
    CHECK(c.R.size() == static_cast<std::size_t>(s.L * s.L * s.K));
    for (std::size_t i = 0; i < c.R.size(); ++i) {
        const CMat& r = c.R[i];
        const double tr = r.trace().real();
        CHECK(hermitian_defect(r) < 1e-10);
        CHECK(min_eigenvalue(r) >= -1e-8 * tr / s.M);
        CHECK(std::abs(tr - s.M * c.beta[i]) <= 1e-6 * s.M * c.beta[i]);
    }
}

TEST_CASE("scenario validation rejects bad parameters") {
    NetworkScenario s;
    s.M = 0;
    CHECK_THROWS_AS(s.validate(), DomainError);
    s = NetworkScenario{};
    s.scattering_radius_m = 0.0;
    CHECK_THROWS_AS(s.validate(), DomainError);
    s = NetworkScenario{};
    s.shadowing_std_db = -1.0;
    CHECK_THROWS_AS(s.validate(), DomainError);
    CHECK_THROWS_AS(one_ring_covariance(1.0, 0.0, 0.0, 4, 0.5), DomainError);
    CHECK_THROWS_AS(one_ring_covariance(-1.0, 0.0, 0.1, 4, 0.5), DomainError);
}
