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

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "umimo/common.hpp"

namespace umimo {

enum class CorrelationMode { OneRing, Uncorrelated };

// Static geometry and radio parameters of a multi-cell uplink network.
//
// All linear powers used downstream are in mW and path gains are divided by
// the thermal noise power in mW, so AWGN has unit variance and beta * p is an
// SNR.
struct NetworkScenario {
    int L = 7;                         // cells
    int K = 5;                         // users per cell (= pilots)
    int M = 100;                       // BS antennas
    double cell_radius_km = 1.0;
    double scattering_radius_m = 20.0;
    double antenna_spacing = 0.5;      // in carrier wavelengths
    double shadowing_std_db = 8.0;
    double max_power_mw = 200.0;
    double bandwidth_hz = 20e6;
    double noise_figure_db = 4.0;
    double antenna_gain_db = 4.0;      // total link antenna gain (2 dB at each end)
    double min_distance_km = 0.035;    // exclusion radius around each BS
    std::uint64_t seed = 1;
    CorrelationMode correlation = CorrelationMode::OneRing;

    // Throws DomainError on any non-positive size or parameter.
    void validate() const;

    [[nodiscard]] Dims dims() const { return {L, K, M}; }
};

struct UserDrop {
    Dims dims;
    std::vector<std::array<double, 2>> bs_positions_km;    // per cell
    std::vector<std::array<double, 2>> user_positions_km;  // per (k, l)
    // Per (j, k, l): link from user k of cell l to BS j.
    std::vector<double> distance_km;
    std::vector<double> angle_rad;
    std::vector<double> spread_rad;
    std::vector<double> shadowing_db;

    friend bool operator==(const UserDrop&, const UserDrop&) = default;
};

// Slow-fading state: covariance and normalized path gain per (j, k, l).
struct CovarianceSet {
    Dims dims;
    CorrelationMode correlation = CorrelationMode::OneRing;
    std::vector<CMat> R;
    std::vector<double> beta;

    [[nodiscard]] const CMat& at(int j, int k, int l) const { return R[dims.triple(j, k, l)]; }
    [[nodiscard]] double gain(int j, int k, int l) const { return beta[dims.triple(j, k, l)]; }
};

// Base-station sites on a hexagonal grid (centre cell first, then rings),
// inter-site distance sqrt(3) * cell radius.
std::vector<std::array<double, 2>> hexagonal_sites(int num_cells, double cell_radius_km);

// Random user placement, uniform on each cell's disk with the exclusion radius.
UserDrop drop_users(const NetworkScenario& scenario);

// Deterministic placement for tests and pinned instances. Positions are per (k, l).
UserDrop drop_from_positions(const NetworkScenario& scenario,
                             const std::vector<std::array<double, 2>>& user_positions_km,
                             const std::vector<double>& shadowing_db = {});

// Half-width of the angle of arrival seen from a BS at distance_km for a
// scattering ring of the given radius: atan(r / d).
double angular_spread(double scattering_radius_m, double distance_km);

// Thermal noise in dBm: -174 + 10 log10(B) + NF + 2.
double noise_power_dbm(double bandwidth_hz, double noise_figure_db);

// Urban-macro path loss in dB (negative), before antenna gain and noise
// normalization: -127.8 - 35 log10(d_km) + shadowing.
double path_loss_db(double distance_km, double shadowing_db);

// Linear path gain relative to the noise power (per mW of transmit power).
double path_gain(double distance_km, double shadowing_db, double noise_power_dbm,
                 double antenna_gain_db = 4.0);

// Gauss-Legendre nodes and weights on [-1, 1].
std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n);

struct QuadratureReport {
    int nodes = 0;
    double last_relative_change = 0.0;
};

// One-ring covariance of a half-wavelength-style ULA:
//   [R]_{m,p} = beta / (2 delta) * int_{-delta}^{delta} exp(j 2 pi D sin(a + theta) (m - p)) da
// evaluated with Gauss-Legendre rules of doubling order until the relative
// Frobenius change drops below 1e-9. Toeplitz Hermitian, diagonal exactly beta.
CMat one_ring_covariance(double beta, double theta, double delta, int M, double antenna_spacing,
                         QuadratureReport* report = nullptr);

CovarianceSet build_covariance_set(const NetworkScenario& scenario, const UserDrop& drop);

// Invariant checks used by tests and by the validation tooling.
double hermitian_defect(const CMat& R);   // ||R - R^H||_F / ||R||_F
double min_eigenvalue(const CMat& R);

}  // namespace umimo
