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

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umimo/geometry.hpp"
#include "umimo/lsfp.hpp"
#include "umimo/power_control.hpp"

namespace umimo {

enum class PowerMode { FixedQmax, MaxMinBisect, DistributedToTarget };

std::string to_string(LsfpMode mode);
LsfpMode lsfp_mode_from_string(const std::string& name);
std::string to_string(PowerMode mode);
PowerMode power_mode_from_string(const std::string& name);

// One curve of an experiment. All configurations of a run share the same
// user drops; `correlation` selects the covariance model for this curve.
struct ExperimentConfig {
    std::string label;
    Receiver receiver = Receiver::MF;
    LsfpMode lsfp = LsfpMode::Optimal;
    PowerMode power = PowerMode::FixedQmax;
    double target_db = 0.0;  // DistributedToTarget only
    CorrelationMode correlation = CorrelationMode::OneRing;
};

struct ExperimentSpec {
    NetworkScenario scenario;
    std::vector<ExperimentConfig> configs;
    int n_drops = 50;
    int n_mc_trials = 0;                 // 0 = closed forms only
    int workers = 1;
    bool freeze_gamma = false;           // ZF power control keeps Gamma at q = Q_max
    std::vector<double> gamma_grid_db;   // outage table targets
    BisectionOptions bisection;

    // n_drops >= 1, unique labels, M >= K L for ZF curves.
    void validate() const;
};

// Curves of the evaluation section: MF without and with LSFP, MF with LSFP
// and max-min power control, ZF with LSFP, and the two MF curves again on
// uncorrelated channels.
std::vector<ExperimentConfig> default_configs();
std::vector<double> default_gamma_grid_db();

// Scenario keys at the top level plus an optional "experiment" object:
//   {"n_drops", "n_mc_trials", "workers", "freeze_gamma",
//    "gamma_grid_db": {"start", "stop", "step"},
//    "configs": [{"label", "receiver", "lsfp", "power", "target_db", "correlation_mode"}]}
ExperimentSpec experiment_from_json(const nlohmann::json& doc);
ExperimentSpec load_experiment(const std::string& path);
nlohmann::json experiment_to_json(const ExperimentSpec& spec);

// Seed of drop d; drop d of every run with the same base seed is identical.
std::uint64_t drop_seed(std::uint64_t base, int drop);

struct UserRecord {
    int drop = 0;
    int cell = 0;
    int user = 0;
    double sinr = 0.0;
    double rate = 0.0;
    double mc_sinr = std::numeric_limits<double>::quiet_NaN();
    double mc_rate = std::numeric_limits<double>::quiet_NaN();
    double ci_halfwidth_db = std::numeric_limits<double>::quiet_NaN();
};

struct CdfResult {
    std::vector<double> x;   // distinct values, ascending
    std::vector<double> F;   // fraction of records <= x
    double q05 = 0.0;        // nearest-rank 5 % quantile
    double median = 0.0;     // nearest-rank 50 % quantile
    std::size_t count = 0;

    // Right-continuous step function; 0 below the smallest record.
    [[nodiscard]] double at(double v) const;
};

// Empirical CDF; throws DomainError on empty input or non-finite values.
CdfResult compute_cdf(std::vector<double> values);

// Smallest x with at least ceil(p n) records <= x.
double nearest_rank_quantile(std::vector<double> values, double p);

struct ConfigResult {
    ExperimentConfig config;
    std::vector<UserRecord> records;     // drop-major, then user (k, l)
    std::vector<OutagePoint> outage;     // pooled over successful drops
    CdfResult sinr_db_cdf;
    CdfResult rate_cdf;
    double outage5_db = std::numeric_limits<double>::quiet_NaN();  // largest grid target met by >= 95 %
    bool has_mc = false;
};

struct DropFailure {
    int drop = 0;
    std::string message;
};

struct ResultBundle {
    std::string version;
    std::uint64_t seed = 0;
    int n_drops = 0;
    double wall_time_s = 0.0;
    std::vector<double> gamma_grid_db;
    std::vector<ConfigResult> configs;
    std::vector<DropFailure> failures;
    std::vector<std::string> warnings;
};

// Per drop: covariances -> estimation -> (ZF kernels) -> summaries -> LSFP
// -> powers -> closed-form SINRs, plus Monte Carlo when requested. A failing
// drop is recorded and skipped. Output is independent of the worker count.
ResultBundle run_experiment(const ExperimentSpec& spec,
                            const std::function<void(int drop, const std::string& status)>& log = {});

std::string library_version();

// records_<label>.csv, mc_<label>.csv (when Monte Carlo ran), cdf_<label>.csv
// (x,y rate CDF), outage.csv and manifest.json.
void write_results(const ResultBundle& bundle, const ExperimentSpec& spec, const std::string& dir);

}  // namespace umimo
