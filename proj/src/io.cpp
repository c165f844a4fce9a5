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

#include "umimo/io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace umimo {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "binary dumps assume a little-endian host");

const std::set<std::string>& scenario_keys() {
    static const std::set<std::string> keys = {
        "schema",         "L",           "K",             "M",
        "cell_radius_km", "scattering_radius_m", "antenna_spacing_D", "sigma_shadow_dB",
        "Q_max_mW",       "bandwidth_Hz", "noise_figure_dB", "rng_seed",
        "correlation_mode", "antenna_gain_dB", "min_distance_km"};
    return keys;
}

template <typename T>
T required(const json& doc, const char* key) {
    if (!doc.contains(key)) throw ConfigError(std::string("scenario: missing key '") + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario: bad value for '") + key + "': " + e.what());
    }
}

template <typename T>
T optional(const json& doc, const char* key, T fallback) {
    return doc.contains(key) ? required<T>(doc, key) : fallback;
}

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("dump: truncated header");
    return v;
}

}  // namespace

std::string to_string(CorrelationMode mode) { return mode == CorrelationMode::OneRing ? "OneRing" : "Uncorrelated"; }

CorrelationMode correlation_from_string(const std::string& name) {
    if (name == "OneRing") return CorrelationMode::OneRing;
    if (name == "Uncorrelated") return CorrelationMode::Uncorrelated;
    throw ConfigError("unknown correlation mode '" + name + "'");
}

std::string to_string(Receiver receiver) { return receiver == Receiver::MF ? "MF" : "ZF"; }

Receiver receiver_from_string(const std::string& name) {
    if (name == "MF" || name == "mf") return Receiver::MF;
    if (name == "ZF" || name == "zf") return Receiver::ZF;
    throw ConfigError("unknown receiver '" + name + "'");
}

NetworkScenario scenario_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("scenario: document must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (!scenario_keys().count(key)) throw ConfigError("scenario: unknown key '" + key + "'");
    }
    const int schema = required<int>(doc, "schema");
    if (schema != kScenarioSchema) {
        throw ConfigError("scenario: unsupported schema " + std::to_string(schema) + " (expected 1)");
    }
    NetworkScenario s;
    s.L = required<int>(doc, "L");
    s.K = required<int>(doc, "K");
    s.M = required<int>(doc, "M");
    s.cell_radius_km = required<double>(doc, "cell_radius_km");
    s.scattering_radius_m = required<double>(doc, "scattering_radius_m");
    s.antenna_spacing = required<double>(doc, "antenna_spacing_D");
    s.shadowing_std_db = required<double>(doc, "sigma_shadow_dB");
    s.max_power_mw = required<double>(doc, "Q_max_mW");
    s.bandwidth_hz = required<double>(doc, "bandwidth_Hz");
    s.noise_figure_db = required<double>(doc, "noise_figure_dB");
    s.seed = required<std::uint64_t>(doc, "rng_seed");
    s.correlation = correlation_from_string(required<std::string>(doc, "correlation_mode"));
    s.antenna_gain_db = optional<double>(doc, "antenna_gain_dB", s.antenna_gain_db);
    s.min_distance_km = optional<double>(doc, "min_distance_km", s.min_distance_km);
    try {
        s.validate();
    } catch (const DomainError& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
    return s;
}

json scenario_to_json(const NetworkScenario& s) {
    return json{{"schema", kScenarioSchema},
                {"L", s.L},
                {"K", s.K},
                {"M", s.M},
                {"cell_radius_km", s.cell_radius_km},
                {"scattering_radius_m", s.scattering_radius_m},
                {"antenna_spacing_D", s.antenna_spacing},
                {"sigma_shadow_dB", s.shadowing_std_db},
                {"Q_max_mW", s.max_power_mw},
                {"bandwidth_Hz", s.bandwidth_hz},
                {"noise_figure_dB", s.noise_figure_db},
                {"rng_seed", s.seed},
                {"correlation_mode", to_string(s.correlation)},
                {"antenna_gain_dB", s.antenna_gain_db},
                {"min_distance_km", s.min_distance_km}};
}

NetworkScenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("scenario '" + path + "': " + e.what());
    }
    if (doc.is_object() && doc.contains("scenario")) return scenario_from_json(doc.at("scenario"));
    if (doc.is_object()) doc.erase("experiment");
    return scenario_from_json(doc);
}

void write_matrix_dump(std::ostream& os, const Dims& d, const std::vector<CMat>& matrices) {
    if (matrices.size() != d.num_triples()) throw DomainError("dump: expected one matrix per (j, k, l)");
    put_u32(os, static_cast<std::uint32_t>(d.L));
    put_u32(os, static_cast<std::uint32_t>(d.K));
    put_u32(os, static_cast<std::uint32_t>(d.M));
    std::vector<double> row(static_cast<std::size_t>(2 * d.M));
    for (const CMat& m : matrices) {
        if (m.rows() != d.M || m.cols() != d.M) throw DomainError("dump: matrix is not M x M");
        for (int r = 0; r < d.M; ++r) {
            for (int c = 0; c < d.M; ++c) {
                row[static_cast<std::size_t>(2 * c)] = m(r, c).real();
                row[static_cast<std::size_t>(2 * c + 1)] = m(r, c).imag();
            }
            os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
        }
    }
    if (!os) throw ConfigError("dump: write failed");
}

std::vector<CMat> read_matrix_dump(std::istream& is, Dims* dims) {
    Dims d;
    d.L = static_cast<int>(get_u32(is));
    d.K = static_cast<int>(get_u32(is));
    d.M = static_cast<int>(get_u32(is));
    if (d.L < 1 || d.K < 1 || d.M < 1 || d.M > 65536 || d.L * d.K * d.L > 1 << 20) {
        throw ConfigError("dump: implausible header");
    }
    std::vector<CMat> out(d.num_triples(), CMat(d.M, d.M));
    std::vector<double> row(static_cast<std::size_t>(2 * d.M));
    for (CMat& m : out) {
        for (int r = 0; r < d.M; ++r) {
            if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)))) {
                throw ConfigError("dump: truncated payload");
            }
            for (int c = 0; c < d.M; ++c) {
                m(r, c) = cd(row[static_cast<std::size_t>(2 * c)], row[static_cast<std::size_t>(2 * c + 1)]);
            }
        }
    }
    if (dims) *dims = d;
    return out;
}

void write_covariance_dump(std::ostream& os, const CovarianceSet& cov) { write_matrix_dump(os, cov.dims, cov.R); }

void write_estimate_dump(std::ostream& os, const EstimationModel& est) {
    const Dims& d = est.dims();
    std::vector<CMat> m(d.num_triples());
    for (int j = 0; j < d.L; ++j) {
        for (int k = 0; k < d.K; ++k) {
            for (int l = 0; l < d.L; ++l) m[d.triple(j, k, l)] = est.estimate_covariance(j, k, l);
        }
    }
    write_matrix_dump(os, d, m);
}

void write_mc_records(std::ostream& os, const EmpiricalSinr& r, const std::string& lsfp_mode) {
    os << "cell,user,receiver,lsfp_mode,sinr_db,rate_bps_hz,ci_halfwidth_db\n";
    os.precision(10);
    for (int k = 0; k < r.dims.K; ++k) {
        for (int l = 0; l < r.dims.L; ++l) {
            const EmpiricalEntry& e = r.entries[r.dims.user(k, l)];
            os << l << ',' << k << ',' << to_string(r.receiver) << ',' << lsfp_mode << ',' << to_db(e.sinr) << ','
               << e.rate << ',' << e.ci_halfwidth_db << '\n';
        }
    }
}

json mc_summary(const EmpiricalSinr& r) {
    json users = json::array();
    for (int k = 0; k < r.dims.K; ++k) {
        for (int l = 0; l < r.dims.L; ++l) {
            const EmpiricalEntry& e = r.entries[r.dims.user(k, l)];
            users.push_back({{"cell", l},
                             {"user", k},
                             {"useful", e.useful},
                             {"pilot_contamination", e.pilot_contamination},
                             {"residual", e.residual},
                             {"sinr", e.sinr},
                             {"rate_bps_hz", e.rate},
                             {"ci_halfwidth_db", e.ci_halfwidth_db},
                             {"capped", e.capped}});
        }
    }
    return json{{"receiver", to_string(r.receiver)},
                {"trials", r.n_trials},
                {"users", users},
                {"warnings", r.warnings}};
}

json matrix_to_json(const CMat& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back({m(r, c).real(), m(r, c).imag()});
        rows.push_back(std::move(row));
    }
    return rows;
}

CMat matrix_from_json(const json& doc) {
    if (!doc.is_array()) throw ConfigError("matrix: expected an array of rows");
    const auto rows = static_cast<Eigen::Index>(doc.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(doc.at(0).size()) : 0;
    CMat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const json& row = doc.at(static_cast<std::size_t>(r));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError("matrix: ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) {
            const json& e = row.at(static_cast<std::size_t>(c));
            if (!e.is_array() || e.size() != 2) throw ConfigError("matrix: entries must be [re, im]");
            m(r, c) = cd(e.at(0).get<double>(), e.at(1).get<double>());
        }
    }
    return m;
}

json lsfp_to_json(const LsfpSet& lsfp) {
    json a = json::array();
    for (const CMat& m : lsfp.A) a.push_back(matrix_to_json(m));
    return json{{"L", lsfp.dims.L},
                {"K", lsfp.dims.K},
                {"M", lsfp.dims.M},
                {"convention", lsfp.convention == LsfpConvention::Raw ? "raw" : "pilot_scaled"},
                {"A", a}};
}

LsfpSet lsfp_from_json(const json& doc) {
    LsfpSet s;
    try {
        s.dims = {doc.at("L").get<int>(), doc.at("K").get<int>(), doc.value("M", 1)};
        const std::string conv = doc.at("convention").get<std::string>();
        if (conv == "raw") {
            s.convention = LsfpConvention::Raw;
        } else if (conv == "pilot_scaled") {
            s.convention = LsfpConvention::PilotScaled;
        } else {
            throw ConfigError("lsfp: unknown convention '" + conv + "'");
        }
        for (const json& m : doc.at("A")) s.A.push_back(matrix_from_json(m));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("lsfp: ") + e.what());
    }
    s.validate();
    return s;
}

json gamma_to_json(const Dims& d, const std::vector<CMat>& gamma) {
    if (gamma.size() != static_cast<std::size_t>(d.L * d.K)) throw DomainError("gamma: expected one kernel per (j, k)");
    json kernels = json::array();
    for (int j = 0; j < d.L; ++j) {
        for (int k = 0; k < d.K; ++k) {
            kernels.push_back({{"bs", j}, {"pilot", k}, {"gamma", matrix_to_json(gamma[d.bs_pilot(j, k)])}});
        }
    }
    return json{{"L", d.L}, {"K", d.K}, {"M", d.M}, {"kernels", kernels}};
}

std::vector<CMat> gamma_from_json(const json& doc, Dims* dims) {
    Dims d;
    std::vector<CMat> out;
    try {
        d = {doc.at("L").get<int>(), doc.at("K").get<int>(), doc.value("M", 1)};
        out.assign(static_cast<std::size_t>(d.L * d.K), CMat());
        for (const json& e : doc.at("kernels")) {
            const int j = e.at("bs").get<int>();
            const int k = e.at("pilot").get<int>();
            if (j < 0 || j >= d.L || k < 0 || k >= d.K) throw ConfigError("gamma: index out of range");
            out[d.bs_pilot(j, k)] = matrix_from_json(e.at("gamma"));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("gamma: ") + e.what());
    }
    for (const CMat& g : out) {
        if (g.rows() != d.L || g.cols() != d.L) throw ConfigError("gamma: missing or misshapen kernel");
    }
    if (dims) *dims = d;
    return out;
}

}  // namespace umimo
