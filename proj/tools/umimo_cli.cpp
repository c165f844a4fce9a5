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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "umimo/det_equiv.hpp"
#include "umimo/experiment.hpp"
#include "umimo/io.hpp"
#include "umimo/power_control.hpp"
#include "umimo/receivers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace umimo;

namespace {

enum Exit { kOk = 0, kSpecError = 2, kNumericError = 3, kPartialFailure = 4 };

struct Common {
    std::string spec_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

ExperimentSpec load(const Common& c) {
    ExperimentSpec spec = load_experiment(c.spec_path);
    if (c.seed) spec.scenario.seed = *c.seed;
    return spec;
}

std::ofstream open_file(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write '" + p.string() + "'");
    os.precision(10);
    return os;
}

void make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create '" + dir + "': " + ec.message());
}

// Models of drop 0 at full power, shared by validate and optimize.
struct DropModels {
    NetworkScenario scenario;
    CovarianceSet cov;
    std::unique_ptr<EstimationModel> est;
    PowerAllocation power;
    std::shared_ptr<const SummaryKernel> kernel;
    std::shared_ptr<const GammaBasis> gamma;
};

DropModels build_drop(const NetworkScenario& base, bool with_zf) {
    DropModels m;
    m.scenario = base;
    m.scenario.seed = drop_seed(base.seed, 0);
    m.cov = build_covariance_set(m.scenario, drop_users(m.scenario));
    m.power = PowerAllocation::full(m.scenario.dims(), m.scenario.max_power_mw);
    m.est = std::make_unique<EstimationModel>(m.cov, m.power.pilot);
    m.kernel = std::make_shared<SummaryKernel>(*m.est);
    if (with_zf) {
        if (m.scenario.M < m.scenario.K * m.scenario.L) throw ConfigError("ZF needs M >= K L");
        auto g = std::make_shared<GammaBasis>(*m.est);
        for (const auto& w : g->warnings()) std::cerr << "warning: " << w << '\n';
        m.gamma = std::move(g);
    }
    return m;
}

int cmd_run(const Common& c, std::optional<int> drops, std::optional<int> mc_trials, std::optional<int> workers) {
    ExperimentSpec spec = load(c);
    if (drops) spec.n_drops = *drops;
    if (mc_trials) spec.n_mc_trials = *mc_trials;
    if (workers) spec.workers = *workers;
    spec.validate();
    const ResultBundle b = run_experiment(spec, [&](int d, const std::string& status) {
        std::cerr << "drop " << d + 1 << "/" << spec.n_drops << ": " << status << '\n';
    });
    write_results(b, spec, c.out);
    std::printf("%-18s %12s %14s %14s\n", "config", "q05 SINR dB", "median bps/Hz", "outage5 dB");
    for (const auto& cr : b.configs) {
        if (cr.records.empty()) continue;
        std::printf("%-18s %12.2f %14.3f %14.2f\n", cr.config.label.c_str(), cr.sinr_db_cdf.q05, cr.rate_cdf.median,
                    cr.outage5_db);
    }
    for (const auto& w : b.warnings) std::cerr << "warning: " << w << '\n';
    if (b.failures.empty()) return kOk;
    std::cerr << b.failures.size() << " of " << spec.n_drops << " drops failed\n";
    return static_cast<int>(b.failures.size()) == spec.n_drops ? kNumericError : kPartialFailure;
}

int cmd_validate(const Common& c, int trials, const std::string& receivers, const std::string& lsfp_name) {
    const ExperimentSpec spec = load(c);
    const LsfpMode mode = lsfp_mode_from_string(lsfp_name);
    std::vector<Receiver> list;
    if (receivers == "mf" || receivers == "both") list.push_back(Receiver::MF);
    if (receivers == "zf" || receivers == "both") list.push_back(Receiver::ZF);
    if (list.empty()) throw ConfigError("--receiver must be mf, zf or both");
    bool want_zf = false;
    for (Receiver r : list) want_zf = want_zf || r == Receiver::ZF;

    make_dir(c.out);
    const DropModels m = build_drop(spec.scenario, want_zf);
    {
        std::ofstream os(fs::path(c.out) / "covariances.bin", std::ios::binary);
        write_covariance_dump(os, m.cov);
    }
    const Dims d = m.scenario.dims();
    json report = {{"version", library_version()}, {"seed", spec.scenario.seed}, {"trials", trials}};
    int failures = 0;
    for (Receiver r : list) {
        const std::string tag = r == Receiver::MF ? "mf" : "zf";
        std::vector<CMat> g;
        if (r == Receiver::ZF) {
            g = m.gamma->evaluate(m.power.data);
            open_file(fs::path(c.out) / "gamma.json") << gamma_to_json(d, g).dump(1) << '\n';
        }
        const SlowFadingSummaries s = build_summaries(*m.kernel, m.power.data, g);
        LsfpSet lsfp;
        RVec closed;
        if (mode == LsfpMode::Optimal) {
            OptimalLsfp opt = optimal_lsfp(s, m.power, r);
            lsfp = std::move(opt.lsfp);
            closed = opt.sinr;
        } else {
            lsfp = LsfpSet::none(d, r == Receiver::MF ? LsfpConvention::PilotScaled : LsfpConvention::Raw, m.power.pilot);
            closed = closed_form_sinr(s, lsfp, m.power, r);
        }
        open_file(fs::path(c.out) / ("lsfp_" + tag + ".json")) << lsfp_to_json(lsfp).dump(1) << '\n';
        McOptions mc;
        mc.n_trials = trials;
        mc.seed = drop_seed(spec.scenario.seed ^ 0xA5A5A5A5A5A5A5A5ULL, 0);
        EmpiricalSinr emp;
        try {
            emp = measure_empirical_sinr(*m.est, lsfp, m.power, r, mc);
        } catch (const NumericError& e) {
            std::cerr << tag << ": Monte Carlo failed: " << e.what() << '\n';
            report[tag] = {{"error", e.what()}};
            ++failures;
            continue;
        }
        {
            std::ofstream os = open_file(fs::path(c.out) / ("mc_" + tag + ".csv"));
            write_mc_records(os, emp, to_string(mode));
        }
        std::ofstream os = open_file(fs::path(c.out) / ("validate_" + tag + ".csv"));
        os << "cell,user,closed_sinr_db,mc_sinr_db,diff_db,ci_halfwidth_db\n";
        double worst = 0.0;
        for (int k = 0; k < d.K; ++k) {
            for (int l = 0; l < d.L; ++l) {
                const auto u = d.user(k, l);
                const double cf = to_db(closed(static_cast<Eigen::Index>(u)));
                const double em = to_db(emp.entries[u].sinr);
                worst = std::max(worst, std::abs(cf - em));
                os << l << ',' << k << ',' << cf << ',' << em << ',' << cf - em << ',' << emp.entries[u].ci_halfwidth_db
                   << '\n';
            }
        }
        report[tag] = {{"max_abs_diff_db", worst}, {"summary", mc_summary(emp)}};
        std::printf("%s (%s LSFP): max |closed form - Monte Carlo| = %.3f dB over %d users\n",
                    r == Receiver::MF ? "MF" : "ZF", to_string(mode).c_str(), worst, static_cast<int>(d.num_users()));
    }
    open_file(fs::path(c.out) / "validate.json") << report.dump(2) << '\n';
    if (failures == 0) return kOk;
    return failures == static_cast<int>(list.size()) ? kNumericError : kPartialFailure;
}

int cmd_optimize(const Common& c, const std::string& receiver, const std::string& lsfp_name, double eps,
                 bool freeze) {
    const ExperimentSpec spec = load(c);
    const Receiver r = receiver_from_string(receiver);
    const LsfpMode mode = lsfp_mode_from_string(lsfp_name);
    const DropModels m = build_drop(spec.scenario, r == Receiver::ZF);
    const double q_max = m.scenario.max_power_mw;
    const SinrEvaluator eval = r == Receiver::MF
                                   ? mf_evaluator(m.kernel, m.power.pilot, q_max, mode)
                                   : zf_evaluator(m.kernel, m.gamma, m.power.pilot, q_max, mode,
                                                  freeze ? m.power.data : RVec());
    BisectionOptions opt = spec.bisection;
    opt.eps = eps;
    const int n = static_cast<int>(m.scenario.dims().num_users());
    const PowerOptResult res = bisection_maxmin(eval, n, initial_gamma_max(*m.kernel, q_max, q_max), q_max, opt);
    make_dir(c.out);
    {
        std::ofstream os = open_file(fs::path(c.out) / "trace.csv");
        write_bisection_trace(os, res);
    }
    const RVec sinr = eval(res.q_star);
    json doc = {{"version", library_version()},
                {"seed", spec.scenario.seed},
                {"receiver", to_string(r)},
                {"lsfp", to_string(mode)},
                {"gamma_star", res.gamma_star},
                {"gamma_star_db", to_db(res.gamma_star)},
                {"bisections", res.iterations},
                {"expansions", res.expansions},
                {"q_star_mw", std::vector<double>(res.q_star.data(), res.q_star.data() + res.q_star.size())},
                {"sinr_db_at_q_star", [&] {
                     std::vector<double> v;
                     for (Eigen::Index i = 0; i < sinr.size(); ++i) v.push_back(to_db(sinr(i)));
                     return v;
                 }()}};
    open_file(fs::path(c.out) / "optimize.json") << doc.dump(2) << '\n';
    std::printf("max-min SINR %.4f dB after %d bisections (%zu trace rows)\n", to_db(res.gamma_star), res.iterations,
                res.trace.size());
    return kOk;
}

int cmd_cdf(const std::string& path, const std::string& column, const std::string& out) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("'" + path + "' is empty");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::size_t col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == column) col = i;
    }
    if (col == header.size()) throw ConfigError("column '" + column + "' not found in '" + path + "'");
    std::vector<double> values;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t i = 0; i <= col; ++i) {
            if (!std::getline(ss, cell, ',')) throw ConfigError("row " + std::to_string(row) + " is short");
        }
        try {
            values.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw ConfigError("row " + std::to_string(row) + ": '" + cell + "' is not a number");
        }
    }
    const CdfResult cdf = compute_cdf(values);
    std::ofstream os = open_file(out);
    os << "x,y\n";
    for (std::size_t i = 0; i < cdf.x.size(); ++i) os << cdf.x[i] << ',' << cdf.F[i] << '\n';
    std::printf("%zu records, 5%% quantile %.6g, median %.6g\n", cdf.count, cdf.q05, cdf.median);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-cell massive MIMO uplink simulator with large-scale fading postcoding"};
    app.set_version_flag("--version", library_version());
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("spec", common.spec_path, "Scenario / experiment JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "Override rng_seed");
        sub->add_option("--out", common.out, "Output directory")->capture_default_str();
    };

    std::optional<int> drops, mc_trials, workers;
    auto* run = app.add_subcommand("run", "Run an experiment over user drops");
    add_common(run);
    run->add_option("--drops", drops, "Number of drops")->check(CLI::PositiveNumber);
    run->add_option("--mc-trials", mc_trials, "Monte Carlo trials per drop and curve (0 = closed form only)")
        ->check(CLI::NonNegativeNumber);
    run->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

    int val_trials = 2000;
    std::string val_receiver = "both";
    std::string val_lsfp = "none";
    auto* validate = app.add_subcommand("validate", "Compare closed forms with Monte Carlo on one drop");
    add_common(validate);
    validate->add_option("--mc-trials", val_trials, "Monte Carlo trials")->check(CLI::PositiveNumber)->capture_default_str();
    validate->add_option("--receiver", val_receiver, "mf, zf or both")
        ->check(CLI::IsMember({"mf", "zf", "both"}))
        ->capture_default_str();
    validate->add_option("--lsfp", val_lsfp, "none or optimal")->check(CLI::IsMember({"none", "optimal"}))->capture_default_str();

    std::string opt_receiver = "MF";
    std::string opt_lsfp = "optimal";
    double opt_eps = 0.01;
    bool opt_freeze = false;
    auto* optimize = app.add_subcommand("optimize", "Max-min power control on one drop, with trace");
    add_common(optimize);
    optimize->add_option("--receiver", opt_receiver, "MF or ZF")->check(CLI::IsMember({"MF", "ZF", "mf", "zf"}))->capture_default_str();
    optimize->add_option("--lsfp", opt_lsfp, "none or optimal")->check(CLI::IsMember({"none", "optimal"}))->capture_default_str();
    optimize->add_option("--eps", opt_eps, "Bisection tolerance (linear SINR)")->check(CLI::PositiveNumber)->capture_default_str();
    optimize->add_flag("--freeze-gamma", opt_freeze, "Keep the ZF kernels at full power");

    std::string cdf_input, cdf_column = "rate_bps_hz", cdf_out = "cdf.csv";
    auto* cdf = app.add_subcommand("cdf", "Empirical CDF of a records column");
    cdf->add_option("records", cdf_input, "Records CSV")->required()->check(CLI::ExistingFile);
    cdf->add_option("--column", cdf_column, "Column to aggregate")->capture_default_str();
    cdf->add_option("--out", cdf_out, "Output CSV (x,y)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kSpecError;
    }

    try {
        if (*run) return cmd_run(common, drops, mc_trials, workers);
        if (*validate) return cmd_validate(common, val_trials, val_receiver, val_lsfp);
        if (*optimize) return cmd_optimize(common, opt_receiver, opt_lsfp, opt_eps, opt_freeze);
        if (*cdf) return cmd_cdf(cdf_input, cdf_column, cdf_out);
    } catch (const ConfigError& e) {
        std::cerr << "spec error: " << e.what() << '\n';
        return kSpecError;
    } catch (const DomainError& e) {
        std::cerr << "spec error: " << e.what() << '\n';
        return kSpecError;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumericError;
    }
    return kSpecError;
}
