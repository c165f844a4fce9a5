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

#include "umimo/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "umimo/det_equiv.hpp"
#include "umimo/estimation.hpp"
#include "umimo/io.hpp"
#include "umimo/receivers.hpp"

#ifndef UMIMO_VERSION
#define UMIMO_VERSION "0.1.0"
#endif

namespace umimo {

using nlohmann::json;

std::string library_version() { return UMIMO_VERSION; }

std::string to_string(LsfpMode mode) { return mode == LsfpMode::None ? "none" : "optimal"; }

LsfpMode lsfp_mode_from_string(const std::string& name) {
    if (name == "none") return LsfpMode::None;
    if (name == "optimal") return LsfpMode::Optimal;
    throw ConfigError("unknown lsfp mode '" + name + "'");
}

std::string to_string(PowerMode mode) {
    switch (mode) {
        case PowerMode::FixedQmax: return "fixed_Qmax";
        case PowerMode::MaxMinBisect: return "maxmin_bisect";
        case PowerMode::DistributedToTarget: return "distributed_to_target";
    }
    return "fixed_Qmax";
}

PowerMode power_mode_from_string(const std::string& name) {
    if (name == "fixed_Qmax") return PowerMode::FixedQmax;
    if (name == "maxmin_bisect") return PowerMode::MaxMinBisect;
    if (name == "distributed_to_target") return PowerMode::DistributedToTarget;
    throw ConfigError("unknown power mode '" + name + "'");
}

void ExperimentSpec::validate() const {
    try {
        scenario.validate();
    } catch (const DomainError& e) {
        throw ConfigError(std::string("experiment: ") + e.what());
    }
    if (n_drops < 1) throw ConfigError("experiment: n_drops must be at least 1");
    if (n_mc_trials < 0) throw ConfigError("experiment: n_mc_trials must be nonnegative");
    if (workers < 1) throw ConfigError("experiment: workers must be at least 1");
    if (configs.empty()) throw ConfigError("experiment: no configurations");
    std::set<std::string> labels;
    for (const auto& c : configs) {
        if (c.label.empty()) throw ConfigError("experiment: empty configuration label");
        if (c.label.find_first_of("/\\ ,") != std::string::npos) {
            throw ConfigError("experiment: label '" + c.label + "' must not contain separators");
        }
        if (!labels.insert(c.label).second) throw ConfigError("experiment: duplicate label '" + c.label + "'");
        if (c.receiver == Receiver::ZF && scenario.M < scenario.K * scenario.L) {
            throw ConfigError("experiment: ZF curve '" + c.label + "' needs M >= K L");
        }
        if (!std::isfinite(c.target_db)) throw ConfigError("experiment: non-finite target for '" + c.label + "'");
    }
    for (double g : gamma_grid_db) {
        if (!std::isfinite(g)) throw ConfigError("experiment: non-finite outage grid point");
    }
}

std::vector<ExperimentConfig> default_configs() {
    using C = ExperimentConfig;
    return {
        C{"mf_none", Receiver::MF, LsfpMode::None, PowerMode::FixedQmax, 0.0, CorrelationMode::OneRing},
        C{"mf_lsfp", Receiver::MF, LsfpMode::Optimal, PowerMode::FixedQmax, 0.0, CorrelationMode::OneRing},
        C{"mf_lsfp_pc", Receiver::MF, LsfpMode::Optimal, PowerMode::MaxMinBisect, 0.0, CorrelationMode::OneRing},
        C{"zf_lsfp", Receiver::ZF, LsfpMode::Optimal, PowerMode::FixedQmax, 0.0, CorrelationMode::OneRing},
        C{"mf_none_uncorr", Receiver::MF, LsfpMode::None, PowerMode::FixedQmax, 0.0, CorrelationMode::Uncorrelated},
        C{"mf_lsfp_uncorr", Receiver::MF, LsfpMode::Optimal, PowerMode::FixedQmax, 0.0, CorrelationMode::Uncorrelated},
    };
}

std::vector<double> default_gamma_grid_db() {
    std::vector<double> g;
    for (int i = -40; i <= 60; ++i) g.push_back(0.5 * i);
    return g;
}

namespace {

std::vector<double> grid_from_json(const json& doc) {
    if (doc.is_array()) return doc.get<std::vector<double>>();
    const double start = doc.at("start").get<double>();
    const double stop = doc.at("stop").get<double>();
    const double step = doc.at("step").get<double>();
    if (!(step > 0.0) || !(stop >= start)) throw ConfigError("experiment: bad gamma_grid_db range");
    const auto n = static_cast<int>(std::floor((stop - start) / step + 1e-9));
    if (n > 100000) throw ConfigError("experiment: gamma grid too fine");
    std::vector<double> g;
    for (int i = 0; i <= n; ++i) g.push_back(start + step * i);
    return g;
}

const std::set<std::string>& experiment_keys() {
    static const std::set<std::string> keys = {"n_drops", "n_mc_trials", "workers", "freeze_gamma",
                                               "gamma_grid_db", "configs", "bisection_eps"};
    return keys;
}

}  // namespace

ExperimentSpec experiment_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("experiment: document must be a JSON object");
    ExperimentSpec spec;
    json scenario = doc.contains("scenario") ? doc.at("scenario") : doc;
    if (!doc.contains("scenario")) scenario.erase("experiment");
    spec.scenario = scenario_from_json(scenario);
    spec.configs = default_configs();
    spec.gamma_grid_db = default_gamma_grid_db();
    if (!doc.contains("experiment")) {
        spec.validate();
        return spec;
    }
    const json& e = doc.at("experiment");
    if (!e.is_object()) throw ConfigError("experiment: 'experiment' must be an object");
    for (const auto& [key, value] : e.items()) {
        (void)value;
        if (!experiment_keys().count(key)) throw ConfigError("experiment: unknown key '" + key + "'");
    }
    try {
        spec.n_drops = e.value("n_drops", spec.n_drops);
        spec.n_mc_trials = e.value("n_mc_trials", spec.n_mc_trials);
        spec.workers = e.value("workers", spec.workers);
        spec.freeze_gamma = e.value("freeze_gamma", spec.freeze_gamma);
        spec.bisection.eps = e.value("bisection_eps", spec.bisection.eps);
        if (e.contains("gamma_grid_db")) spec.gamma_grid_db = grid_from_json(e.at("gamma_grid_db"));
        if (e.contains("configs")) {
            spec.configs.clear();
            for (const json& c : e.at("configs")) {
                ExperimentConfig cfg;
                cfg.label = c.at("label").get<std::string>();
                cfg.receiver = receiver_from_string(c.value("receiver", std::string("MF")));
                cfg.lsfp = lsfp_mode_from_string(c.value("lsfp", std::string("optimal")));
                cfg.power = power_mode_from_string(c.value("power", std::string("fixed_Qmax")));
                cfg.target_db = c.value("target_db", 0.0);
                cfg.correlation = c.contains("correlation_mode")
                                      ? correlation_from_string(c.at("correlation_mode").get<std::string>())
                                      : spec.scenario.correlation;
                spec.configs.push_back(cfg);
            }
        }
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("experiment: ") + ex.what());
    }
    spec.validate();
    return spec;
}

ExperimentSpec load_experiment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open spec file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("spec '" + path + "': " + e.what());
    }
    return experiment_from_json(doc);
}

json experiment_to_json(const ExperimentSpec& spec) {
    json configs = json::array();
    for (const auto& c : spec.configs) {
        configs.push_back({{"label", c.label},
                           {"receiver", to_string(c.receiver)},
                           {"lsfp", to_string(c.lsfp)},
                           {"power", to_string(c.power)},
                           {"target_db", c.target_db},
                           {"correlation_mode", to_string(c.correlation)}});
    }
    json doc = scenario_to_json(spec.scenario);
    doc["experiment"] = {{"n_drops", spec.n_drops},
                         {"n_mc_trials", spec.n_mc_trials},
                         {"workers", spec.workers},
                         {"freeze_gamma", spec.freeze_gamma},
                         {"bisection_eps", spec.bisection.eps},
                         {"gamma_grid_db", spec.gamma_grid_db},
                         {"configs", configs}};
    return doc;
}

std::uint64_t drop_seed(std::uint64_t base, int drop) {
    // splitmix64 of the pair
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(drop) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double CdfResult::at(double v) const {
    const auto it = std::upper_bound(x.begin(), x.end(), v);
    if (it == x.begin()) return 0.0;
    return F[static_cast<std::size_t>(it - x.begin()) - 1];
}

double nearest_rank_quantile(std::vector<double> values, double p) {
    if (values.empty()) throw DomainError("quantile: empty input");
    if (!(p > 0.0 && p <= 1.0)) throw DomainError("quantile: p must lie in (0, 1]");
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-12));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return values[rank - 1];
}

CdfResult compute_cdf(std::vector<double> values) {
    if (values.empty()) throw DomainError("cdf: empty input");
    for (double v : values) {
        if (std::isnan(v)) throw DomainError("cdf: NaN record");
    }
    std::sort(values.begin(), values.end());
    CdfResult out;
    out.count = values.size();
    const auto n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
        out.x.push_back(values[i]);
        out.F.push_back(static_cast<double>(i + 1) / n);
    }
    out.q05 = nearest_rank_quantile(values, 0.05);
    out.median = nearest_rank_quantile(values, 0.5);
    return out;
}

namespace {

struct ConfigDropOutput {
    std::vector<UserRecord> records;
    std::vector<int> achieved;  // per grid target
    std::vector<std::string> warnings;
};

struct DropOutput {
    std::vector<ConfigDropOutput> configs;
    std::vector<std::string> warnings;
};

struct ModelBundle {
    std::unique_ptr<CovarianceSet> cov;
    std::unique_ptr<EstimationModel> est;
    std::shared_ptr<const SummaryKernel> kernel;
    std::shared_ptr<const GammaBasis> gamma;
};

PowerAllocation make_power(const RVec& pilot, const RVec& q, double q_max) {
    PowerAllocation p;
    p.pilot = pilot;
    p.data = q;
    p.max_power = q_max;
    return p;
}

LsfpSet lsfp_for(const ModelBundle& m, const ExperimentConfig& c, const PowerAllocation& power) {
    const Dims d = m.est->dims();
    if (c.lsfp == LsfpMode::None) {
        return LsfpSet::none(d, c.receiver == Receiver::MF ? LsfpConvention::PilotScaled : LsfpConvention::Raw,
                             power.pilot);
    }
    std::vector<CMat> g;
    if (c.receiver == Receiver::ZF) g = m.gamma->evaluate(power.data);
    return optimal_lsfp(build_summaries(*m.kernel, power.data, g), power, c.receiver).lsfp;
}

DropOutput run_drop(const ExperimentSpec& spec, int drop) {
    NetworkScenario sc = spec.scenario;
    sc.seed = drop_seed(spec.scenario.seed, drop);
    const UserDrop users = drop_users(sc);
    const Dims d = sc.dims();
    const int n = static_cast<int>(d.num_users());
    const double q_max = sc.max_power_mw;
    const PowerAllocation full = PowerAllocation::full(d, q_max);

    DropOutput out;
    std::map<CorrelationMode, ModelBundle> models;
    for (const auto& c : spec.configs) {
        ModelBundle& m = models[c.correlation];
        if (!m.cov) {
            NetworkScenario variant = sc;
            variant.correlation = c.correlation;
            m.cov = std::make_unique<CovarianceSet>(build_covariance_set(variant, users));
            m.est = std::make_unique<EstimationModel>(*m.cov, full.pilot);
            m.kernel = std::make_shared<SummaryKernel>(*m.est);
        }
        if (c.receiver == Receiver::ZF && !m.gamma) {
            auto g = std::make_shared<GammaBasis>(*m.est);
            for (const auto& w : g->warnings()) out.warnings.push_back(w);
            m.gamma = std::move(g);
        }
    }

    for (const auto& c : spec.configs) {
        const ModelBundle& m = models.at(c.correlation);
        const SinrEvaluator eval =
            c.receiver == Receiver::MF
                ? mf_evaluator(m.kernel, full.pilot, q_max, c.lsfp)
                : zf_evaluator(m.kernel, m.gamma, full.pilot, q_max, c.lsfp, spec.freeze_gamma ? full.data : RVec());
        RVec q = full.data;
        if (c.power == PowerMode::MaxMinBisect) {
            q = bisection_maxmin(eval, n, initial_gamma_max(*m.kernel, q_max, q_max), q_max, spec.bisection).q_star;
        } else if (c.power == PowerMode::DistributedToTarget) {
            q = distributed_power_iteration(eval, from_db(c.target_db), full.data, q_max, spec.bisection.inner).q;
        }
        const RVec sinr = eval(q);

        ConfigDropOutput co;
        co.records.resize(static_cast<std::size_t>(n));
        for (int k = 0; k < d.K; ++k) {
            for (int l = 0; l < d.L; ++l) {
                UserRecord& r = co.records[d.user(k, l)];
                r.drop = drop;
                r.cell = l;
                r.user = k;
                r.sinr = sinr(static_cast<Eigen::Index>(d.user(k, l)));
                r.rate = std::log2(1.0 + r.sinr);
            }
        }

        std::vector<double> grid;
        grid.reserve(spec.gamma_grid_db.size());
        for (double g : spec.gamma_grid_db) grid.push_back(from_db(g));
        const bool controlled = c.power != PowerMode::FixedQmax;
        for (const auto& pt : outage_curve(eval, grid, n, q_max, controlled, spec.bisection.inner)) {
            co.achieved.push_back(pt.achieved);
        }

        if (spec.n_mc_trials > 0) {
            const PowerAllocation power = make_power(full.pilot, q, q_max);
            McOptions mc;
            mc.n_trials = spec.n_mc_trials;
            mc.seed = drop_seed(spec.scenario.seed ^ 0xA5A5A5A5A5A5A5A5ULL, drop);
            const EmpiricalSinr emp = measure_empirical_sinr(*m.est, lsfp_for(m, c, power), power, c.receiver, mc);
            for (std::size_t u = 0; u < co.records.size(); ++u) {
                co.records[u].mc_sinr = emp.entries[u].sinr;
                co.records[u].mc_rate = emp.entries[u].rate;
                co.records[u].ci_halfwidth_db = emp.entries[u].ci_halfwidth_db;
            }
            for (const auto& w : emp.warnings) co.warnings.push_back(c.label + ": " + w);
        }
        out.configs.push_back(std::move(co));
    }
    return out;
}

}  // namespace

ResultBundle run_experiment(const ExperimentSpec& spec, const std::function<void(int, const std::string&)>& log) {
    spec.validate();
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::optional<DropOutput>> results(static_cast<std::size_t>(spec.n_drops));
    std::vector<std::string> errors(static_cast<std::size_t>(spec.n_drops));
    std::atomic<int> next{0};
    std::mutex log_mutex;

    auto worker = [&] {
        for (int d = next++; d < spec.n_drops; d = next++) {
            try {
                results[static_cast<std::size_t>(d)] = run_drop(spec, d);
                if (log) {
                    std::lock_guard<std::mutex> lock(log_mutex);
                    log(d, "ok");
                }
            } catch (const Error& e) {
                errors[static_cast<std::size_t>(d)] = e.what();
                if (log) {
                    std::lock_guard<std::mutex> lock(log_mutex);
                    log(d, std::string("failed: ") + e.what());
                }
            }
        }
    };
    const int threads = std::min(spec.workers, spec.n_drops);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    ResultBundle b;
    b.version = library_version();
    b.seed = spec.scenario.seed;
    b.n_drops = spec.n_drops;
    b.gamma_grid_db = spec.gamma_grid_db;
    const std::size_t n_cfg = spec.configs.size();
    b.configs.resize(n_cfg);
    const int users = static_cast<int>(spec.scenario.dims().num_users());
    for (std::size_t c = 0; c < n_cfg; ++c) {
        b.configs[c].config = spec.configs[c];
        b.configs[c].has_mc = spec.n_mc_trials > 0;
        for (double g : spec.gamma_grid_db) {
            OutagePoint pt;
            pt.gamma = from_db(g);
            b.configs[c].outage.push_back(pt);
        }
    }
    for (int d = 0; d < spec.n_drops; ++d) {
        const auto& r = results[static_cast<std::size_t>(d)];
        if (!r) {
            b.failures.push_back({d, errors[static_cast<std::size_t>(d)]});
            continue;
        }
        for (const auto& w : r->warnings) b.warnings.push_back("drop " + std::to_string(d) + ": " + w);
        for (std::size_t c = 0; c < n_cfg; ++c) {
            const ConfigDropOutput& co = r->configs[c];
            ConfigResult& cr = b.configs[c];
            cr.records.insert(cr.records.end(), co.records.begin(), co.records.end());
            for (std::size_t g = 0; g < co.achieved.size(); ++g) {
                cr.outage[g].achieved += co.achieved[g];
                cr.outage[g].users += users;
            }
            for (const auto& w : co.warnings) b.warnings.push_back("drop " + std::to_string(d) + ": " + w);
        }
    }
    for (auto& cr : b.configs) {
        if (cr.records.empty()) continue;
        std::vector<double> sinr_db;
        std::vector<double> rate;
        for (const auto& r : cr.records) {
            sinr_db.push_back(to_db(r.sinr));
            rate.push_back(r.rate);
        }
        cr.sinr_db_cdf = compute_cdf(sinr_db);
        cr.rate_cdf = compute_cdf(rate);
        for (std::size_t g = 0; g < cr.outage.size(); ++g) {
            if (cr.outage[g].fraction() >= 0.95) {
                const double v = spec.gamma_grid_db[g];
                cr.outage5_db = std::isnan(cr.outage5_db) ? v : std::max(cr.outage5_db, v);
            }
        }
    }
    b.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return b;
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write '" + p.string() + "'");
    os.precision(12);
    return os;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void write_results(const ResultBundle& b, const ExperimentSpec& spec, const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());

    json configs = json::array();
    for (const auto& cr : b.configs) {
        const ExperimentConfig& c = cr.config;
        {
            std::ofstream os = open_out(root / ("records_" + c.label + ".csv"));
            os << "drop,cell,user,receiver,lsfp_mode,power_mode,sinr_db,rate_bps_hz\n";
            for (const auto& r : cr.records) {
                os << r.drop << ',' << r.cell << ',' << r.user << ',' << to_string(c.receiver) << ','
                   << to_string(c.lsfp) << ',' << to_string(c.power) << ',' << to_db(r.sinr) << ',' << r.rate << '\n';
            }
        }
        if (cr.has_mc) {
            std::ofstream os = open_out(root / ("mc_" + c.label + ".csv"));
            os << "drop,cell,user,receiver,lsfp_mode,sinr_db,rate_bps_hz,ci_halfwidth_db\n";
            for (const auto& r : cr.records) {
                os << r.drop << ',' << r.cell << ',' << r.user << ',' << to_string(c.receiver) << ','
                   << to_string(c.lsfp) << ',' << to_db(r.mc_sinr) << ',' << r.mc_rate << ',' << r.ci_halfwidth_db
                   << '\n';
            }
        }
        if (!cr.records.empty()) {
            std::ofstream os = open_out(root / ("cdf_" + c.label + ".csv"));
            os << "x,y\n";
            for (std::size_t i = 0; i < cr.rate_cdf.x.size(); ++i) os << cr.rate_cdf.x[i] << ',' << cr.rate_cdf.F[i] << '\n';
        }
        json entry = {{"label", c.label},
                      {"receiver", to_string(c.receiver)},
                      {"lsfp", to_string(c.lsfp)},
                      {"power", to_string(c.power)},
                      {"correlation_mode", to_string(c.correlation)},
                      {"records", cr.records.size()}};
        if (c.power == PowerMode::DistributedToTarget) entry["target_db"] = c.target_db;
        if (!cr.records.empty()) {
            entry["sinr_q05_db"] = cr.sinr_db_cdf.q05;
            entry["sinr_median_db"] = cr.sinr_db_cdf.median;
            entry["rate_q05_bps_hz"] = cr.rate_cdf.q05;
            entry["rate_median_bps_hz"] = cr.rate_cdf.median;
        }
        entry["outage5_db"] = finite_or_null(cr.outage5_db);
        configs.push_back(entry);
    }
    {
        std::ofstream os = open_out(root / "outage.csv");
        os << "gamma_db";
        for (const auto& cr : b.configs) os << ',' << cr.config.label;
        os << '\n';
        for (std::size_t g = 0; g < b.gamma_grid_db.size(); ++g) {
            os << b.gamma_grid_db[g];
            for (const auto& cr : b.configs) os << ',' << cr.outage[g].fraction();
            os << '\n';
        }
    }
    json failures = json::array();
    for (const auto& f : b.failures) failures.push_back({{"drop", f.drop}, {"error", f.message}});
    json manifest = {{"version", b.version},
                     {"seed", b.seed},
                     {"n_drops", b.n_drops},
                     {"spec", experiment_to_json(spec)},
                     {"configs", configs},
                     {"failures", failures},
                     {"warnings", b.warnings},
                     {"wall_time_s", b.wall_time_s}};
    std::ofstream os = open_out(root / "manifest.json");
    os << manifest.dump(2) << '\n';
}

}  // namespace umimo
