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

#include "umimo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace umimo {

void NetworkScenario::validate() const {
    if (L < 1 || K < 1 || M < 1) {
        throw DomainError("scenario: L, K and M must be >= 1");
    }
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw DomainError(std::string("scenario: ") + name + " must be positive and finite");
        }
    };
    positive(cell_radius_km, "cell_radius_km");
    positive(scattering_radius_m, "scattering_radius_m");
    positive(antenna_spacing, "antenna_spacing");
    positive(max_power_mw, "max_power_mw");
    positive(bandwidth_hz, "bandwidth_hz");
    if (!(shadowing_std_db >= 0.0)) {
        throw DomainError("scenario: shadowing_std_db must be >= 0");
    }
    if (!(min_distance_km >= 0.0) || min_distance_km >= cell_radius_km) {
        throw DomainError("scenario: min_distance_km must lie in [0, cell_radius_km)");
    }
}

std::vector<std::array<double, 2>> hexagonal_sites(int num_cells, double cell_radius_km) {
    const double isd = std::sqrt(3.0) * cell_radius_km;
    struct Site {
        double x, y, r, phi;
    };
    std::vector<Site> sites;
    const int span = 1 + static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_cells))));
    for (int a = -span; a <= span; ++a) {
        for (int b = -span; b <= span; ++b) {
            const double x = isd * (a + 0.5 * b);
            const double y = isd * (std::sqrt(3.0) / 2.0) * b;
            double phi = std::atan2(y, x);
            if (phi < 0.0) phi += 2.0 * kPi;
            sites.push_back({x, y, std::hypot(x, y), phi});
        }
    }
    std::sort(sites.begin(), sites.end(), [](const Site& s, const Site& t) {
        const double dr = s.r - t.r;
        if (std::abs(dr) > 1e-9) return dr < 0.0;
        return s.phi < t.phi;
    });
    std::vector<std::array<double, 2>> out;
    out.reserve(static_cast<std::size_t>(num_cells));
    for (int i = 0; i < num_cells; ++i) {
        // snap exact zeros so the centre site is (0, 0) and not (-0, 0)
        out.push_back({sites[static_cast<std::size_t>(i)].x + 0.0, sites[static_cast<std::size_t>(i)].y + 0.0});
    }
    return out;
}

double angular_spread(double scattering_radius_m, double distance_km) {
    if (!(distance_km > 0.0)) {
        throw DomainError("angular_spread: distance must be positive");
    }
    return std::atan(scattering_radius_m / (1000.0 * distance_km));
}

double noise_power_dbm(double bandwidth_hz, double noise_figure_db) {
    return -174.0 + 10.0 * std::log10(bandwidth_hz) + noise_figure_db + 2.0;
}

double path_loss_db(double distance_km, double shadowing_db) {
    if (!(distance_km > 0.0)) {
        throw DomainError("path_loss_db: distance must be positive");
    }
    return -127.8 - 35.0 * std::log10(distance_km) + shadowing_db;
}

double path_gain(double distance_km, double shadowing_db, double noise_dbm, double antenna_gain_db) {
    return from_db(path_loss_db(distance_km, shadowing_db) + antenna_gain_db - noise_dbm);
}

namespace {

void fill_links(const NetworkScenario& s, UserDrop& drop) {
    const Dims d = drop.dims;
    drop.distance_km.assign(d.num_triples(), 0.0);
    drop.angle_rad.assign(d.num_triples(), 0.0);
    drop.spread_rad.assign(d.num_triples(), 0.0);
    for (int j = 0; j < d.L; ++j) {
        const auto& bs = drop.bs_positions_km[static_cast<std::size_t>(j)];
        for (int k = 0; k < d.K; ++k) {
            for (int l = 0; l < d.L; ++l) {
                const auto& u = drop.user_positions_km[d.user(k, l)];
                const double dx = u[0] - bs[0];
                const double dy = u[1] - bs[1];
                const double dist = std::hypot(dx, dy);
                if (!(dist > 0.0)) {
                    throw DomainError("drop: user located exactly at a base station");
                }
                const auto idx = d.triple(j, k, l);
                drop.distance_km[idx] = dist;
                drop.angle_rad[idx] = std::atan2(dy, dx);
                drop.spread_rad[idx] = angular_spread(s.scattering_radius_m, dist);
            }
        }
    }
}

}  // namespace

UserDrop drop_users(const NetworkScenario& scenario) {
    scenario.validate();
    UserDrop drop;
    drop.dims = scenario.dims();
    const Dims d = drop.dims;
    drop.bs_positions_km = hexagonal_sites(d.L, scenario.cell_radius_km);

    std::mt19937_64 rng(scenario.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const double r0 = scenario.min_distance_km;
    const double rc = scenario.cell_radius_km;
    drop.user_positions_km.assign(d.num_users(), {0.0, 0.0});
    for (int l = 0; l < d.L; ++l) {
        for (int k = 0; k < d.K; ++k) {
            const double radius = std::sqrt(r0 * r0 + (rc * rc - r0 * r0) * unit(rng));
            const double phi = 2.0 * kPi * unit(rng);
            const auto& bs = drop.bs_positions_km[static_cast<std::size_t>(l)];
            drop.user_positions_km[d.user(k, l)] = {bs[0] + radius * std::cos(phi),
                                                    bs[1] + radius * std::sin(phi)};
        }
    }
    drop.shadowing_db.assign(d.num_triples(), 0.0);
    for (auto& x : drop.shadowing_db) {
        x = scenario.shadowing_std_db * normal(rng);
    }
    fill_links(scenario, drop);
    return drop;
}

UserDrop drop_from_positions(const NetworkScenario& scenario,
                             const std::vector<std::array<double, 2>>& user_positions_km,
                             const std::vector<double>& shadowing_db) {
    scenario.validate();
    UserDrop drop;
    drop.dims = scenario.dims();
    if (user_positions_km.size() != drop.dims.num_users()) {
        throw DomainError("drop_from_positions: expected K*L user positions");
    }
    if (!shadowing_db.empty() && shadowing_db.size() != drop.dims.num_triples()) {
        throw DomainError("drop_from_positions: expected L*K*L shadowing values");
    }
    drop.bs_positions_km = hexagonal_sites(drop.dims.L, scenario.cell_radius_km);
    drop.user_positions_km = user_positions_km;
    drop.shadowing_db = shadowing_db.empty() ? std::vector<double>(drop.dims.num_triples(), 0.0) : shadowing_db;
    fill_links(scenario, drop);
    return drop;
}

namespace {

// (P_n(z), P_n'(z)) by the three-term recurrence.
std::pair<double, double> legendre(int n, double z) {
    double p0 = 1.0;
    double p1 = z;
    for (int m = 2; m <= n; ++m) {
        const double p2 = ((2.0 * m - 1.0) * z * p1 - (m - 1.0) * p0) / m;
        p0 = p1;
        p1 = p2;
    }
    return {p1, n * (z * p1 - p0) / (z * z - 1.0)};
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
    if (n < 1) {
        throw DomainError("gauss_legendre: n must be >= 1");
    }
    std::vector<double> x(static_cast<std::size_t>(n), 0.0);
    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // Tricomi initial guess, then Newton.
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            const auto [p, dp] = legendre(n, z);
            const double dz = p / dp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        const double dp = legendre(n, z).second;
        const double weight = 2.0 / ((1.0 - z * z) * dp * dp);
        const auto lo = static_cast<std::size_t>(i);
        const auto hi = static_cast<std::size_t>(n - 1 - i);
        x[lo] = -z;
        x[hi] = z;
        w[lo] = weight;
        w[hi] = weight;
    }
    if (n % 2 == 1) {
        x[static_cast<std::size_t>(n / 2)] = 0.0;
    }
    return {x, w};
}

namespace {

// Normalized lag profile r[lag] = 1/(2 delta) int exp(j 2 pi D lag sin(a + theta)) da
// for lag = 0..M-1 with an n-point Gauss-Legendre rule.
std::vector<cd> lag_profile(double theta, double delta, int M, double spacing, int n) {
    const auto [x, w] = gauss_legendre(n);
    std::vector<double> phase(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        phase[static_cast<std::size_t>(i)] =
            2.0 * kPi * spacing * std::sin(delta * x[static_cast<std::size_t>(i)] + theta);
    }
    std::vector<cd> r(static_cast<std::size_t>(M), cd(0.0, 0.0));
    for (int lag = 0; lag < M; ++lag) {
        double re = 0.0;
        double im = 0.0;
        for (int i = 0; i < n; ++i) {
            const double a = lag * phase[static_cast<std::size_t>(i)];
            re += w[static_cast<std::size_t>(i)] * std::cos(a);
            im += w[static_cast<std::size_t>(i)] * std::sin(a);
        }
        r[static_cast<std::size_t>(lag)] = cd(0.5 * re, 0.5 * im);
    }
    r[0] = cd(1.0, 0.0);
    return r;
}

// Frobenius norm of a Toeplitz Hermitian matrix given its first column.
double toeplitz_norm_sq(const std::vector<cd>& r) {
    const auto M = static_cast<double>(r.size());
    double acc = M * std::norm(r[0]);
    for (std::size_t lag = 1; lag < r.size(); ++lag) {
        acc += 2.0 * (M - static_cast<double>(lag)) * std::norm(r[lag]);
    }
    return acc;
}

}  // namespace

CMat one_ring_covariance(double beta, double theta, double delta, int M, double antenna_spacing,
                         QuadratureReport* report) {
    if (!(beta > 0.0) || M < 1) {
        throw DomainError("one_ring_covariance: need beta > 0 and M >= 1");
    }
    if (!(delta > 0.0) || delta > kPi / 2.0 + 1e-15) {
        throw DomainError("one_ring_covariance: angular spread must lie in (0, pi/2]");
    }
    constexpr double kTol = 1e-9;
    constexpr int kMaxNodes = 1 << 15;

    int n = 32;
    std::vector<cd> prev = lag_profile(theta, delta, M, antenna_spacing, n);
    double change = 0.0;
    bool converged = false;
    while (n < kMaxNodes) {
        n *= 2;
        std::vector<cd> cur = lag_profile(theta, delta, M, antenna_spacing, n);
        std::vector<cd> diff(cur.size());
        for (std::size_t i = 0; i < cur.size(); ++i) diff[i] = cur[i] - prev[i];
        change = std::sqrt(toeplitz_norm_sq(diff) / toeplitz_norm_sq(cur));
        prev = std::move(cur);
        if (change < kTol) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw NumericError("one_ring_covariance: quadrature did not converge (relative change " +
                           std::to_string(change) + ")");
    }
    if (report != nullptr) {
        report->nodes = n;
        report->last_relative_change = change;
    }

    CMat R(M, M);
    for (int m = 0; m < M; ++m) {
        R(m, m) = cd(beta, 0.0);
        for (int p = 0; p < m; ++p) {
            const cd v = beta * prev[static_cast<std::size_t>(m - p)];
            R(m, p) = v;
            R(p, m) = std::conj(v);
        }
    }
    return R;
}

CovarianceSet build_covariance_set(const NetworkScenario& scenario, const UserDrop& drop) {
    scenario.validate();
    if (!(drop.dims == scenario.dims())) {
        throw DomainError("build_covariance_set: drop dimensions do not match scenario");
    }
    const Dims d = drop.dims;
    const double noise_dbm = noise_power_dbm(scenario.bandwidth_hz, scenario.noise_figure_db);

    CovarianceSet cov;
    cov.dims = d;
    cov.correlation = scenario.correlation;
    cov.R.resize(d.num_triples());
    cov.beta.resize(d.num_triples());
    for (std::size_t idx = 0; idx < d.num_triples(); ++idx) {
        const double beta =
            path_gain(drop.distance_km[idx], drop.shadowing_db[idx], noise_dbm, scenario.antenna_gain_db);
        cov.beta[idx] = beta;
        if (scenario.correlation == CorrelationMode::Uncorrelated) {
            cov.R[idx] = beta * CMat::Identity(d.M, d.M);
        } else {
            cov.R[idx] = one_ring_covariance(beta, drop.angle_rad[idx], drop.spread_rad[idx], d.M,
                                             scenario.antenna_spacing);
        }
    }
    return cov;
}

double hermitian_defect(const CMat& R) {
    const double n = R.norm();
    if (n == 0.0) return 0.0;
    return (R - R.adjoint()).norm() / n;
}

double min_eigenvalue(const CMat& R) {
    Eigen::SelfAdjointEigenSolver<CMat> es(hermitian_part(R), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace umimo
