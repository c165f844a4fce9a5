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

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "support.hpp"
#include "umimo/experiment.hpp"
#include "umimo/io.hpp"

using namespace umimo;
using namespace umimo::testing;

namespace {

ExperimentSpec small_spec(int drops) {
    ExperimentSpec spec;
    spec.scenario = small_scenario(3, 2, 24, 17);
    spec.configs = default_configs();
    spec.gamma_grid_db = default_gamma_grid_db();
    spec.n_drops = drops;
    return spec;
}

const ConfigResult& find(const ResultBundle& b, const std::string& label) {
    for (const auto& c : b.configs) {
        if (c.config.label == label) return c;
    }
    throw std::runtime_error("missing configuration " + label);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("empirical CDF examples") {
    const CdfResult c = compute_cdf({4.0, 1.0, 3.0, 2.0});
    CHECK(c.at(2.5) == 0.5);
    CHECK(c.at(0.5) == 0.0);
    CHECK(c.at(4.0) == 1.0);
    CHECK(c.at(2.0) == 0.5);

    const CdfResult same = compute_cdf({3.0, 3.0, 3.0});
    REQUIRE(same.x.size() == 1);
    CHECK(same.at(2.999) == 0.0);
    CHECK(same.at(3.0) == 1.0);

    CHECK_THROWS_AS(compute_cdf({}), DomainError);
    CHECK_THROWS_AS(compute_cdf({1.0, std::nan("")}), DomainError);
}

TEST_CASE("nearest-rank quantile is an order statistic") {
    std::vector<double> v(1000);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (double& x : v) x = g(rng);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(nearest_rank_quantile(v, 0.05) == sorted[49]);
    CHECK(compute_cdf(v).q05 == sorted[49]);
    CHECK(compute_cdf(v).median == sorted[499]);
}

TEST_CASE("CDF is nondecreasing from zero to one") {
    std::vector<double> v;
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> u(0, 20);
    for (int i = 0; i < 300; ++i) v.push_back(u(rng));
    const CdfResult c = compute_cdf(v);
    CHECK(c.F.back() == 1.0);
    CHECK(c.F.front() > 0.0);
    for (std::size_t i = 1; i < c.F.size(); ++i) {
        CHECK(c.F[i] > c.F[i - 1]);
        CHECK(c.x[i] > c.x[i - 1]);
    }
}

TEST_CASE("spec validation") {
    ExperimentSpec s = small_spec(1);
    CHECK_NOTHROW(s.validate());
    s.n_drops = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec(1);
    s.scenario.M = 4;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec(1);
    s.configs.push_back(s.configs.front());
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("experiment documents round trip") {
    const ExperimentSpec s = small_spec(3);
    const ExperimentSpec back = experiment_from_json(experiment_to_json(s));
    CHECK(experiment_to_json(back) == experiment_to_json(s));
    nlohmann::json doc = experiment_to_json(s);
    doc["experiment"]["n_dorps"] = 4;
    CHECK_THROWS_AS(experiment_from_json(doc), ConfigError);
}

TEST_CASE("single-drop runs are reproducible and independent of the worker count") {
    ExperimentSpec spec = small_spec(2);
    const ResultBundle a = run_experiment(spec);
    spec.workers = 2;
    const ResultBundle b = run_experiment(spec);
    REQUIRE(a.failures.empty());
    REQUIRE(a.configs.size() == b.configs.size());
    for (std::size_t c = 0; c < a.configs.size(); ++c) {
        REQUIRE(a.configs[c].records.size() == b.configs[c].records.size());
        for (std::size_t i = 0; i < a.configs[c].records.size(); ++i) {
            CHECK(a.configs[c].records[i].sinr == b.configs[c].records[i].sinr);
        }
    }
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "umimo_experiment_test";
    fs::remove_all(dir);
    write_results(a, spec, (dir / "a").string());
    write_results(b, spec, (dir / "b").string());
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        const std::string name = entry.path().filename().string();
        if (name == "manifest.json") continue;
        CHECK_MESSAGE(slurp(entry.path()) == slurp(dir / "b" / name), name);
    }
    auto ma = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    auto mb = nlohmann::json::parse(slurp(dir / "b" / "manifest.json"));
    ma.erase("wall_time_s");
    mb.erase("wall_time_s");
    ma["spec"]["experiment"].erase("workers");
    mb["spec"]["experiment"].erase("workers");
    CHECK(ma == mb);
    fs::remove_all(dir);
}

TEST_CASE("the per-cell configuration equals direct closed-form evaluation") {
    ExperimentSpec spec = small_spec(1);
    spec.configs = {default_configs().front()};
    REQUIRE(spec.configs[0].lsfp == LsfpMode::None);
    const ResultBundle b = run_experiment(spec);
    NetworkScenario s = spec.scenario;
    s.seed = drop_seed(spec.scenario.seed, 0);
    const CovarianceSet c = scenario_covariances(s);
    const PowerAllocation pw = PowerAllocation::full(s.dims(), s.max_power_mw);
    const EstimationModel est(c, pw.pilot);
    const RVec direct = closed_form_sinr(build_summaries(est, pw.data),
                                         LsfpSet::none(s.dims(), LsfpConvention::PilotScaled, pw.pilot), pw,
                                         Receiver::MF);
    const auto& rec = b.configs[0].records;
    REQUIRE(rec.size() == static_cast<std::size_t>(direct.size()));
    for (const auto& r : rec) {
        CHECK(r.sinr == doctest::Approx(direct(s.dims().user(r.user, r.cell))).epsilon(1e-12));
        CHECK(r.rate == doctest::Approx(std::log2(1.0 + r.sinr)).epsilon(1e-12));
    }
}

TEST_CASE("median ordering across configurations") {
    ExperimentSpec spec;
    spec.scenario = NetworkScenario{};
    spec.n_drops = 4;
    for (const auto& c : default_configs()) {
        if (c.receiver == Receiver::MF && c.power == PowerMode::FixedQmax) spec.configs.push_back(c);
    }
    spec.gamma_grid_db = default_gamma_grid_db();
    const ResultBundle b = run_experiment(spec);
    REQUIRE(b.failures.empty());
    const double corr_none = find(b, "mf_none").rate_cdf.median;
    const double corr_lsfp = find(b, "mf_lsfp").rate_cdf.median;
    const double unc_none = find(b, "mf_none_uncorr").rate_cdf.median;
    const double unc_lsfp = find(b, "mf_lsfp_uncorr").rate_cdf.median;
    CHECK(corr_lsfp >= corr_none);
    CHECK(corr_none >= unc_none);
    CHECK(corr_lsfp >= unc_lsfp);
}
