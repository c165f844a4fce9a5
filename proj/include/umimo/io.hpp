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

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umimo/common.hpp"
#include "umimo/geometry.hpp"
#include "umimo/lsfp.hpp"
#include "umimo/receivers.hpp"

namespace umimo {

inline constexpr int kScenarioSchema = 1;

// Scenario documents carry "schema": 1 and the keys
//   L, K, M, cell_radius_km, scattering_radius_m, antenna_spacing_D,
//   sigma_shadow_dB, Q_max_mW, bandwidth_Hz, noise_figure_dB, rng_seed,
//   correlation_mode ("OneRing" | "Uncorrelated")
// plus the optional antenna_gain_dB and min_distance_km. Unknown keys are
// rejected so that typos surface as ConfigError.
NetworkScenario scenario_from_json(const nlohmann::json& doc);
nlohmann::json scenario_to_json(const NetworkScenario& scenario);
NetworkScenario load_scenario(const std::string& path);

std::string to_string(CorrelationMode mode);
CorrelationMode correlation_from_string(const std::string& name);
std::string to_string(Receiver receiver);
Receiver receiver_from_string(const std::string& name);

// Binary dump of one matrix per (j, k, l): little-endian uint32 header
// L, K, M followed by every M x M matrix in triple order, row-major, each
// entry as two doubles (re, im).
void write_matrix_dump(std::ostream& os, const Dims& dims, const std::vector<CMat>& matrices);
std::vector<CMat> read_matrix_dump(std::istream& is, Dims* dims = nullptr);
void write_covariance_dump(std::ostream& os, const CovarianceSet& cov);

// Estimate covariances of an estimation model in the same format.
void write_estimate_dump(std::ostream& os, const EstimationModel& est);

// CSV with columns cell,user,receiver,lsfp_mode,sinr_db,rate_bps_hz,ci_halfwidth_db.
void write_mc_records(std::ostream& os, const EmpiricalSinr& result, const std::string& lsfp_mode);
nlohmann::json mc_summary(const EmpiricalSinr& result);

// Matrices as nested arrays of [re, im] pairs.
nlohmann::json matrix_to_json(const CMat& m);
CMat matrix_from_json(const nlohmann::json& doc);

nlohmann::json lsfp_to_json(const LsfpSet& lsfp);
LsfpSet lsfp_from_json(const nlohmann::json& doc);

// Kernels per (j, k) -> j * K + k.
nlohmann::json gamma_to_json(const Dims& dims, const std::vector<CMat>& gamma);
std::vector<CMat> gamma_from_json(const nlohmann::json& doc, Dims* dims = nullptr);

}  // namespace umimo
