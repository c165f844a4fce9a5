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

#include "umimo/receivers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace umimo {

std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t trial) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32), 0x5bd1e995u};
    return std::mt19937_64(seq);
}

namespace {

CVec unit_symbols(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    CVec s(n);
    for (int i = 0; i < n; ++i) s(i) = std::polar(1.0, phase(rng));
    return s;
}

std::vector<CVec> pilot_noise(std::mt19937_64& rng, const Dims& d) {
    std::vector<CVec> out(static_cast<std::size_t>(d.L * d.K));
    for (auto& v : out) v = complex_normal(rng, d.M);
    return out;
}

CMat stack_triples(const std::vector<CVec>& v, const Dims& d, int l) {
    CMat out(d.M, d.K * d.L);
    for (int k = 0; k < d.K; ++k) {
        for (int p = 0; p < d.L; ++p) out.col(static_cast<Eigen::Index>(d.user(k, p))) = v[d.triple(l, k, p)];
    }
    return out;
}

std::vector<CVec> statistics(const UplinkRealization& r, Receiver receiver) {
    const Dims d = r.dims;
    std::vector<CVec> out(static_cast<std::size_t>(d.K), CVec::Zero(d.L * d.L));
    for (int j = 0; j < d.L; ++j) {
        const CMat hs = stacked_estimates(r, j);
        const CMat g = receiver == Receiver::MF ? hs : zf_matrix(hs, j);
        const CVec s = g.adjoint() * r.y[static_cast<std::size_t>(j)];
        for (int k = 0; k < d.K; ++k) {
            for (int p = 0; p < d.L; ++p) out[static_cast<std::size_t>(k)](j * d.L + p) = s(static_cast<Eigen::Index>(d.user(k, p)));
        }
    }
    return out;
}

}  // namespace

UplinkRealization make_realization(const Dims& d, std::vector<CVec> h, std::vector<CVec> estimate, CVec symbols,
                                   const RVec& data_power, const std::vector<CVec>& noise) {
    if (h.size() != d.num_triples() || estimate.size() != d.num_triples()) {
        throw DomainError("realization: expected one channel and one estimate per (BS, user)");
    }
    if (symbols.size() != static_cast<Eigen::Index>(d.num_users()) ||
        data_power.size() != static_cast<Eigen::Index>(d.num_users())) {
        throw DomainError("realization: expected K*L symbols and data powers");
    }
    if (!noise.empty() && noise.size() != static_cast<std::size_t>(d.L)) {
        throw DomainError("realization: expected one noise vector per BS");
    }
    UplinkRealization r;
    r.dims = d;
    r.h = std::move(h);
    r.estimate = std::move(estimate);
    r.symbols = std::move(symbols);
    r.data_power = data_power;
    const CVec x = data_power.cwiseSqrt().cast<cd>().cwiseProduct(r.symbols);
    r.y.resize(static_cast<std::size_t>(d.L));
    for (int l = 0; l < d.L; ++l) {
        CVec y = stack_triples(r.h, d, l) * x;
        if (!noise.empty()) y += noise[static_cast<std::size_t>(l)];
        r.y[static_cast<std::size_t>(l)] = std::move(y);
    }
    return r;
}

UplinkRealization draw_realization(const EstimationModel& est, const ChannelSampler& sampler, const RVec& data_power,
                                   std::mt19937_64& rng) {
    const Dims d = est.dims();
    std::vector<CVec> h = sampler.draw(rng);
    ChannelEstimates e = estimate_channels(est, h, pilot_noise(rng, d));
    CVec s = unit_symbols(rng, d.K * d.L);
    std::vector<CVec> z(static_cast<std::size_t>(d.L));
    for (auto& v : z) v = complex_normal(rng, d.M);
    return make_realization(d, std::move(h), std::move(e.estimate), std::move(s), data_power, z);
}

CMat stacked_estimates(const UplinkRealization& r, int l) { return stack_triples(r.estimate, r.dims, l); }

CMat zf_matrix(const CMat& stacked, int cell) {
    if (stacked.rows() < stacked.cols()) {
        throw SingularityError("ZF at BS " + std::to_string(cell) + ": fewer antennas than estimated channels");
    }
    const CMat gram = hermitian_part(stacked.adjoint() * stacked);
    const double cond = scaled_condition(gram);
    if (!(cond <= 1e12)) {
        std::ostringstream msg;
        msg << "ZF at BS " << cell << ": estimate Gram matrix is rank deficient (scaled condition " << cond << ")";
        throw SingularityError(msg.str());
    }
    Eigen::LLT<CMat> llt(gram);
    if (llt.info() != Eigen::Success) {
        throw SingularityError("ZF at BS " + std::to_string(cell) + ": estimate Gram matrix is not positive definite");
    }
    return llt.solve(stacked.adjoint()).adjoint();
}

std::vector<CVec> mf_statistics(const UplinkRealization& r) { return statistics(r, Receiver::MF); }
std::vector<CVec> zf_statistics(const UplinkRealization& r) { return statistics(r, Receiver::ZF); }

CVec lsfp_combine(const std::vector<CVec>& stats, const LsfpSet& lsfp) {
    const Dims d = lsfp.dims;
    if (lsfp.convention != LsfpConvention::Raw) {
        throw ConfigError("lsfp_combine: weights must be in the raw convention");
    }
    if (stats.size() != static_cast<std::size_t>(d.K)) throw DomainError("lsfp_combine: expected one vector per pilot");
    CVec out(static_cast<Eigen::Index>(d.num_users()));
    for (int k = 0; k < d.K; ++k) {
        const CVec combined = lsfp.A[static_cast<std::size_t>(k)].adjoint() * stats[static_cast<std::size_t>(k)];
        for (int l = 0; l < d.L; ++l) out(static_cast<Eigen::Index>(d.user(k, l))) = combined(l);
    }
    return out;
}

RVec EmpiricalSinr::sinr() const {
    RVec out(static_cast<Eigen::Index>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) out(static_cast<Eigen::Index>(i)) = entries[i].sinr;
    return out;
}

namespace {

struct BlockSums {
    CMat b;             // rows: user (k, l); cols: transmitter (m, n)
    RVec total;
    RVec realized;
    RVec realized_sq;
    int count = 0;
};

struct Estimate {
    double useful = 0.0;
    double pc = 0.0;
    double residual = 0.0;
    double total = 0.0;
    double sinr = 0.0;
    bool capped = false;
};

Estimate estimate_from(const CMat& sum_b, const RVec& sum_total, double count, const RVec& q, const Dims& d, int k,
                       int l) {
    Estimate e;
    const auto x = static_cast<Eigen::Index>(d.user(k, l));
    e.useful = std::norm(sum_b(x, x) / count) * q(x);
    for (int n = 0; n < d.L; ++n) {
        if (n == l) continue;
        const auto y = static_cast<Eigen::Index>(d.user(k, n));
        e.pc += std::norm(sum_b(x, y) / count) * q(y);
    }
    e.total = sum_total(x) / count;
    e.residual = std::max(e.total - e.useful - e.pc, 0.0);
    const double denom = e.pc + e.residual;
    if (denom * kSinrCap <= e.useful) {
        e.sinr = kSinrCap;
        e.capped = true;
    } else {
        e.sinr = e.useful / denom;
    }
    return e;
}

}  // namespace

EmpiricalSinr measure_empirical_sinr(const EstimationModel& est, const LsfpSet& lsfp_in, const PowerAllocation& power,
                                     Receiver receiver, const McOptions& options) {
    const Dims d = est.dims();
    if (options.n_trials < 1) throw DomainError("measure_empirical_sinr: n_trials must be at least 1");
    if (!(lsfp_in.dims == d)) throw DomainError("measure_empirical_sinr: LSFP dimensions do not match the network");
    power.validate(d);
    lsfp_in.validate();
    const LsfpSet lsfp = lsfp_in.to_raw(est.pilot_powers());
    const RVec& q = power.data;
    const auto nu = static_cast<Eigen::Index>(d.num_users());
    const ChannelSampler sampler(est.covariances());
    const CVec sqrt_q = q.cwiseSqrt().cast<cd>();

    const int n = options.n_trials;
    const int block = std::max(1, std::min(options.block_size, n / 10));
    const int n_blocks = (n + block - 1) / block;
    std::vector<BlockSums> blocks(static_cast<std::size_t>(n_blocks));

    auto run_block = [&](int bi) {
        BlockSums acc;
        acc.b = CMat::Zero(nu, nu);
        acc.total = RVec::Zero(nu);
        acc.realized = RVec::Zero(nu);
        acc.realized_sq = RVec::Zero(nu);
        const int first = bi * block;
        const int last = std::min(n, first + block);
        std::vector<CMat> g(static_cast<std::size_t>(d.L));
        std::vector<CMat> p(static_cast<std::size_t>(d.L));
        std::vector<CVec> stat(static_cast<std::size_t>(d.L));
        for (int t = first; t < last; ++t) {
            std::mt19937_64 rng = trial_rng(options.seed, static_cast<std::uint64_t>(t));
            std::vector<CVec> h = sampler.draw(rng);
            std::vector<CVec> estimate;
            if (options.perfect_csi) {
                estimate = h;
            } else {
                estimate = estimate_channels(est, h, pilot_noise(rng, d)).estimate;
            }
            const CVec s = unit_symbols(rng, d.K * d.L);
            const CVec x = sqrt_q.cwiseProduct(s);
            for (int j = 0; j < d.L; ++j) {
                const auto jj = static_cast<std::size_t>(j);
                const CMat hs = stack_triples(estimate, d, j);
                g[jj] = receiver == Receiver::MF ? hs : zf_matrix(hs, j);
                const CMat ht = stack_triples(h, d, j);
                p[jj] = g[jj].adjoint() * ht;
                CVec y = ht * x;
                if (!options.noise_free) y += complex_normal(rng, d.M);
                stat[jj] = g[jj].adjoint() * y;
            }
            for (int k = 0; k < d.K; ++k) {
                const CMat& a = lsfp.A[static_cast<std::size_t>(k)];
                for (int l = 0; l < d.L; ++l) {
                    const auto xi = static_cast<Eigen::Index>(d.user(k, l));
                    CVec b = CVec::Zero(nu);
                    cd s_hat = 0.0;
                    double noise_power = 0.0;
                    for (int j = 0; j < d.L; ++j) {
                        const auto jj = static_cast<std::size_t>(j);
                        CVec w = CVec::Zero(d.M);
                        for (int pp = 0; pp < d.L; ++pp) {
                            const cd weight = a(j * d.L + pp, l);
                            if (weight == cd(0.0)) continue;
                            const auto col = static_cast<Eigen::Index>(d.user(k, pp));
                            b += std::conj(weight) * p[jj].row(col).transpose();
                            s_hat += std::conj(weight) * stat[jj](col);
                            w += weight * g[jj].col(col);
                        }
                        if (!options.noise_free) noise_power += w.squaredNorm();
                    }
                    acc.b.row(xi) += b.transpose();
                    acc.total(xi) += (b.cwiseAbs2().array() * q.array()).sum() + noise_power;
                    const double r2 = std::norm(s_hat);
                    acc.realized(xi) += r2;
                    acc.realized_sq(xi) += r2 * r2;
                }
            }
            ++acc.count;
        }
        blocks[static_cast<std::size_t>(bi)] = std::move(acc);
    };

    const int workers = std::max(1, std::min(options.workers, n_blocks));
    if (workers == 1) {
        for (int bi = 0; bi < n_blocks; ++bi) run_block(bi);
    } else {
        std::atomic<int> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int bi = next++; bi < n_blocks; bi = next++) {
                    try {
                        run_block(bi);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                        next = n_blocks;
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    CMat sum_b = CMat::Zero(nu, nu);
    RVec sum_total = RVec::Zero(nu);
    RVec sum_realized = RVec::Zero(nu);
    RVec sum_realized_sq = RVec::Zero(nu);
    for (const auto& blk : blocks) {
        sum_b += blk.b;
        sum_total += blk.total;
        sum_realized += blk.realized;
        sum_realized_sq += blk.realized_sq;
    }

    EmpiricalSinr out;
    out.dims = d;
    out.receiver = receiver;
    out.n_trials = n;
    out.entries.resize(d.num_users());
    if (n_blocks < 10) {
        out.warnings.push_back("only " + std::to_string(n_blocks) + " batches; confidence intervals are unreliable");
    }
    for (int k = 0; k < d.K; ++k) {
        for (int l = 0; l < d.L; ++l) {
            const auto xi = static_cast<Eigen::Index>(d.user(k, l));
            const Estimate e = estimate_from(sum_b, sum_total, n, q, d, k, l);
            EmpiricalEntry& entry = out.entries[d.user(k, l)];
            entry.useful = e.useful;
            entry.pilot_contamination = e.pc;
            entry.residual = e.residual;
            entry.total = e.total;
            entry.sinr = e.sinr;
            entry.capped = e.capped;
            entry.rate = std::log2(1.0 + e.sinr);
            entry.realized_power = sum_realized(xi) / n;
            const double var = std::max(sum_realized_sq(xi) / n - entry.realized_power * entry.realized_power, 0.0);
            entry.realized_stderr = std::sqrt(var / n);

            // Delete-one-batch jackknife on the SINR in dB.
            if (n_blocks >= 2 && e.sinr > 0.0) {
                std::vector<double> loo(static_cast<std::size_t>(n_blocks));
                double mean = 0.0;
                for (int bi = 0; bi < n_blocks; ++bi) {
                    const auto& blk = blocks[static_cast<std::size_t>(bi)];
                    const Estimate eb =
                        estimate_from(sum_b - blk.b, sum_total - blk.total, n - blk.count, q, d, k, l);
                    loo[static_cast<std::size_t>(bi)] = eb.sinr > 0.0 ? to_db(eb.sinr) : to_db(e.sinr);
                    mean += loo[static_cast<std::size_t>(bi)];
                }
                mean /= n_blocks;
                double ss = 0.0;
                for (double v : loo) ss += (v - mean) * (v - mean);
                entry.ci_halfwidth_db = 1.96 * std::sqrt(ss * (n_blocks - 1.0) / n_blocks);
            } else {
                entry.ci_halfwidth_db = std::numeric_limits<double>::infinity();
            }
            if (entry.ci_halfwidth_db > options.target_halfwidth_db) {
                std::ostringstream msg;
                msg << "user " << k << " of cell " << l << ": confidence half-width " << entry.ci_halfwidth_db
                    << " dB exceeds " << options.target_halfwidth_db << " dB";
                out.warnings.push_back(msg.str());
            }
        }
    }
    return out;
}

}  // namespace umimo
