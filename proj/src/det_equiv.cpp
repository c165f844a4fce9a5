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

#include "umimo/det_equiv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace umimo {

namespace {

enum class Mode { Finite, Limit };

constexpr int kStallWindow = 40;

std::string where(const DetEquivProblem& p) {
    return p.cell >= 0 ? " at BS " + std::to_string(p.cell) : std::string();
}

// (I + F)^{-1} for finite z, (F + diag(load))^{-1} in the limit.
CMat weight_matrix(const CMat& F, Mode mode, const DetEquivProblem& p, int k, const RVec& load) {
    const int L = p.L;
    CMat a = mode == Mode::Finite ? CMat(CMat::Identity(L, L) + F) : CMat(F + CMat(load.cast<cd>().asDiagonal()));
    a = hermitian_part(a);
    if (mode == Mode::Limit) {
        const double cond = scaled_condition(a);
        if (!(cond <= 1e10)) {
            std::ostringstream msg;
            msg << "det_equiv: limit matrix for pilot " << k << where(p) << " has condition " << cond
                << " (M too close to K*L or colinear covariances)";
            throw SingularityError(msg.str());
        }
    }
    CMat inv = a.partialPivLu().inverse();
    if (!inv.allFinite()) {
        throw SingularityError("det_equiv: weight matrix inverse diverged for pilot " + std::to_string(k) + where(p));
    }
    return hermitian_part(inv);
}

// Per pilot k, every P_kn is compressed to E_n B_n with E_n an orthonormal
// basis of its column space (r_n columns). With the s_k = sum_n r_n rows of
// B stacked, C = B B^H and C = S S^H, the width-s_k factors E_n S_n
// (S_n the rows of S for user n) reproduce Rbar^k_qn.
struct Factors {
    int M = 0;
    int L = 0;
    std::vector<CMat> basis;                          // per k: [E_k0 ... E_k,L-1], M x s_k
    std::vector<std::vector<Eigen::Index>> offsets;   // per k: L + 1 column offsets into basis
    std::vector<CMat> coupling;                       // per k: C, s_k x s_k
    std::vector<CMat> root;                           // per k: S, s_k x s_k
    std::vector<CMat> stacked;                        // per k: [E_n S_n]_n, M x (L s_k)

    [[nodiscard]] Eigen::Index width(std::size_t k) const { return basis[k].cols(); }
};

CMat psd_root(const CMat& a) {
    Eigen::SelfAdjointEigenSolver<CMat> es(hermitian_part(a));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

// Raw factors P_kn (M x r) of one pilot.
std::vector<CMat> raw_factors(const DetEquivProblem& p, int k) {
    std::vector<CMat> out(static_cast<std::size_t>(p.L));
    if (!p.factors.empty()) {
        for (int n = 0; n < p.L; ++n) out[static_cast<std::size_t>(n)] = p.factors[static_cast<std::size_t>(k * p.L + n)];
        return out;
    }
    const Eigen::Index big = static_cast<Eigen::Index>(p.L) * p.M;
    CMat block(big, big);
    for (int n = 0; n < p.L; ++n) {
        for (int q = 0; q < p.L; ++q) block.block(n * p.M, q * p.M, p.M, p.M) = p.at(k, n, q);
    }
    const CMat full = psd_root(block);
    for (int n = 0; n < p.L; ++n) out[static_cast<std::size_t>(n)] = full.middleRows(n * p.M, p.M);
    return out;
}

Factors factorize(const DetEquivProblem& p) {
    Factors f;
    f.M = p.M;
    f.L = p.L;
    for (int k = 0; k < p.K; ++k) {
        const std::vector<CMat> raw = raw_factors(p, k);
        std::vector<CMat> bases;
        std::vector<CMat> rows;
        std::vector<Eigen::Index> off{0};
        for (const CMat& pn : raw) {
            Eigen::ColPivHouseholderQR<CMat> qr(pn);
            qr.setThreshold(1e-8);
            const Eigen::Index r = std::max<Eigen::Index>(qr.rank(), 1);
            const CMat q = CMat(qr.householderQ()).leftCols(r);
            bases.push_back(q);
            rows.push_back(q.adjoint() * pn);
            off.push_back(off.back() + r);
        }
        const Eigen::Index sk = off.back();
        CMat e(p.M, sk);
        CMat b(sk, raw.front().cols());
        for (int n = 0; n < p.L; ++n) {
            const auto nn = static_cast<std::size_t>(n);
            e.middleCols(off[nn], off[nn + 1] - off[nn]) = bases[nn];
            b.middleRows(off[nn], off[nn + 1] - off[nn]) = rows[nn];
        }
        CMat c = hermitian_part(CMat(b * b.adjoint()));
        CMat root = psd_root(c);
        CMat stacked(p.M, p.L * sk);
        for (int n = 0; n < p.L; ++n) {
            const auto nn = static_cast<std::size_t>(n);
            stacked.middleCols(n * sk, sk) = bases[nn] * root.middleRows(off[nn], off[nn + 1] - off[nn]);
        }
        f.basis.push_back(std::move(e));
        f.offsets.push_back(std::move(off));
        f.coupling.push_back(std::move(c));
        f.root.push_back(std::move(root));
        f.stacked.push_back(std::move(stacked));
    }
    return f;
}

// T = -z I + (1/M) sum_k sum_{n,q} G_k(n, q) P_kn P_kq^H for finite z,
// with the identity in place of -z I in the limit. Each pilot adds
// E X E^H with X = [G(n, q) C_nq], applied through a root of X so that T
// stays positive definite in floating point.
CMat assemble_t(const Factors& f, const std::vector<CMat>& G, Mode mode, double z) {
    const int M = f.M;
    CMat t = mode == Mode::Finite ? CMat(-z * CMat::Identity(M, M)) : CMat(CMat::Identity(M, M));
    for (std::size_t k = 0; k < f.basis.size(); ++k) {
        const auto& off = f.offsets[k];
        CMat x = f.coupling[k];
        for (int n = 0; n < f.L; ++n) {
            for (int q = 0; q < f.L; ++q) {
                const auto nn = static_cast<std::size_t>(n);
                const auto qq = static_cast<std::size_t>(q);
                x.block(off[nn], off[qq], off[nn + 1] - off[nn], off[qq + 1] - off[qq]) *= G[k](n, q);
            }
        }
        x = hermitian_part(x);
        Eigen::LLT<CMat> llt(x);
        const CMat v = llt.info() == Eigen::Success ? CMat(llt.matrixL()) : psd_root(x);
        const CMat w = f.basis[k] * v;
        t.selfadjointView<Eigen::Lower>().rankUpdate(w, 1.0 / M);
    }
    return CMat(t.selfadjointView<Eigen::Lower>());
}

CMat cholesky_factor(const CMat& t, const DetEquivProblem& p) {
    Eigen::LLT<CMat> llt(t);
    if (llt.info() != Eigen::Success) {
        throw NumericError("det_equiv: resolvent matrix T is not positive definite" + where(p));
    }
    return llt.matrixL();
}

// Whitened factors C^{-1} E_n S_n per pilot, blocks of width s_k (C C^H = T).
std::vector<CMat> whiten_factors(const Factors& f, const CMat& chol) {
    std::vector<CMat> out(f.basis.size());
    for (std::size_t k = 0; k < f.basis.size(); ++k) {
        const CMat z = chol.triangularView<Eigen::Lower>().solve(f.basis[k]);
        const Eigen::Index sk = f.width(k);
        const auto& off = f.offsets[k];
        out[k].resize(f.M, f.L * sk);
        for (int n = 0; n < f.L; ++n) {
            const auto nn = static_cast<std::size_t>(n);
            const Eigen::Index r = off[nn + 1] - off[nn];
            out[k].middleCols(n * sk, sk).noalias() = z.middleCols(off[nn], r) * f.root[k].middleRows(off[nn], r);
        }
    }
    return out;
}

// f^k_qn = (1/M) tr(Rbar^k_qn T^{-1}) = (1/M) <Z_kn, Z_kq>, stored at F_k(n, q).
std::vector<CMat> traces_to_f(const Factors& f, const std::vector<CMat>& z) {
    std::vector<CMat> F(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        const Eigen::Index r = f.width(k);
        Eigen::Map<const CMat> cols(z[k].data(), f.M * r, f.L);
        F[k] = hermitian_part(CMat(cols.adjoint() * cols) / static_cast<double>(f.M));
    }
    return F;
}

// Entrywise gap scaled by sqrt(s_n s_q) with s_n = max(|a_nn|, 1e-3 natural_n).
double normalized_gap(const std::vector<CMat>& a, const std::vector<CMat>& b, const std::vector<RVec>& natural) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const CMat& x = a[k];
        const CMat& y = b[k];
        const RVec s = x.diagonal().cwiseAbs().cwiseMax(1e-3 * natural[k]);
        for (Eigen::Index n = 0; n < x.rows(); ++n) {
            for (Eigen::Index q = 0; q < x.cols(); ++q) {
                const double diff = std::abs(x(n, q) - y(n, q));
                if (diff == 0.0) continue;
                const double scale = std::sqrt(s(n) * s(q));
                worst = std::max(worst, scale > 0.0 ? diff / scale : std::numeric_limits<double>::infinity());
            }
        }
    }
    return worst;
}

double normalized_gap(const std::vector<CMat>& a, const std::vector<CMat>& b) {
    std::vector<RVec> zero;
    for (const CMat& x : a) zero.push_back(RVec::Zero(x.rows()));
    return normalized_gap(a, b, zero);
}

struct CoreSolution {
    std::vector<CMat> F;
    std::vector<CMat> G;             // weights at F
    std::vector<RVec> load;          // diagonal loading of the limit weights, per k
    int collapsed = 0;               // users below kCollapseThreshold of their natural scale
    bool floor_limited = false;      // accepted at the stagnation tolerance
    CMat T;
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> history;
    bool monotone_tail = true;
};

bool admissible(const std::vector<CMat>& F, Mode mode) {
    for (const CMat& f : F) {
        if (!f.allFinite()) return false;
        const CMat a = mode == Mode::Finite ? CMat(CMat::Identity(f.rows(), f.cols()) + f) : f;
        Eigen::LLT<CMat> llt(a);
        if (llt.info() != Eigen::Success) return false;
        for (Eigen::Index n = 0; n < f.rows(); ++n) {
            if (!(f(n, n).real() > 0.0)) return false;
        }
    }
    return true;
}

// Real coordinates of all F_k, entry (n, q) weighted by w_n w_q.
RVec flatten(const std::vector<CMat>& F, const RVec& w) {
    const Eigen::Index L = F.front().rows();
    RVec v(static_cast<Eigen::Index>(F.size()) * L * L * 2);
    Eigen::Index i = 0;
    for (std::size_t k = 0; k < F.size(); ++k) {
        const Eigen::Index o = static_cast<Eigen::Index>(k) * L;
        for (Eigen::Index q = 0; q < L; ++q) {
            for (Eigen::Index n = 0; n < L; ++n) {
                const cd x = F[k](n, q) * (w(o + n) * w(o + q));
                v(i++) = x.real();
                v(i++) = x.imag();
            }
        }
    }
    return v;
}

// Weights 1 / sqrt(|f_nn|) per (k, n).
RVec diagonal_weights(const std::vector<CMat>& F) {
    const Eigen::Index L = F.front().rows();
    RVec w(static_cast<Eigen::Index>(F.size()) * L);
    for (std::size_t k = 0; k < F.size(); ++k) {
        for (Eigen::Index n = 0; n < L; ++n) {
            const double d = std::abs(F[k](n, n));
            w(static_cast<Eigen::Index>(k) * L + n) = d > 0.0 ? 1.0 / std::sqrt(d) : 1.0;
        }
    }
    return w;
}

// Extrapolated diagonals may shrink at most fourfold relative to the smaller
// of the current iterate and its image.
bool within_trust(const std::vector<CMat>& trial, const std::vector<CMat>& F, const std::vector<CMat>& g) {
    for (std::size_t k = 0; k < trial.size(); ++k) {
        for (Eigen::Index n = 0; n < trial[k].rows(); ++n) {
            const double floor = 0.25 * std::min(F[k](n, n).real(), g[k](n, n).real());
            if (trial[k](n, n).real() < floor) return false;
        }
    }
    return true;
}

std::vector<CMat> combine(const std::vector<CMat>& a, double alpha, const std::vector<CMat>& b) {
    std::vector<CMat> out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] + alpha * b[k];
    return out;
}

std::vector<CMat> difference(const std::vector<CMat>& a, const std::vector<CMat>& b) { return combine(a, -1.0, b); }

CoreSolution iterate(const DetEquivProblem& p, Mode mode, double z, const FixedPointOptions& opt) {
    const Factors fac = factorize(p);
    CoreSolution out;
    if (mode == Mode::Finite) {
        out.F.assign(static_cast<std::size_t>(p.K), CMat::Zero(p.L, p.L));
    } else {
        out.F = traces_to_f(fac, fac.stacked);
    }
    // (1/M) tr(Rbar^k_nn), the diagonal of F~ before any interference.
    std::vector<RVec> natural;
    for (const CMat& f : traces_to_f(fac, fac.stacked)) natural.push_back(f.diagonal().real());
    for (const RVec& n : natural) {
        out.load.push_back(mode == Mode::Limit ? RVec(opt.limit_loading * n) : RVec(RVec::Zero(n.size())));
    }
    auto weights = [&](const std::vector<CMat>& F) {
        std::vector<CMat> G(F.size());
        for (std::size_t k = 0; k < F.size(); ++k) G[k] = weight_matrix(F[k], mode, p, static_cast<int>(k), out.load[k]);
        return G;
    };
    auto map = [&](const std::vector<CMat>& F) {
        return traces_to_f(fac, whiten_factors(fac, cholesky_factor(assemble_t(fac, weights(F), mode, z), p)));
    };
    const int depth = std::max(0, opt.anderson_depth);
    double omega = opt.damping;
    double previous = std::numeric_limits<double>::infinity();
    // Anderson history: iterates and their residuals g(F) - F.
    std::vector<std::vector<CMat>> xs;
    std::vector<std::vector<CMat>> rs;
    std::vector<CMat> best;
    double best_r = std::numeric_limits<double>::infinity();
    int best_it = 0;
    for (int it = 1; it <= opt.max_iterations; ++it) {
        const std::vector<CMat> g = map(out.F);
        const double r = normalized_gap(g, out.F, natural);
        out.history.push_back(r);
        out.iterations = it;
        out.residual = r;
        const std::size_t h = out.history.size();
        if (h > 10 && r > out.history[h - 2] && r > opt.tolerance) out.monotone_tail = false;
        if (r < best_r) {
            if (r < 0.5 * best_r) best_it = it;
            best_r = r;
            best = g;
        }
        // Stagnation at the rounding floor of an ill-conditioned T.
        const bool stalled = opt.stagnation_tolerance > 0.0 && best_r < opt.stagnation_tolerance &&
                             it - best_it >= kStallWindow;
        if (r < opt.tolerance || stalled) {
            if (stalled) {
                out.residual = best_r;
                out.floor_limited = true;
            }
            out.F = stalled ? best : g;
            out.G = weights(out.F);
            out.T = assemble_t(fac, out.G, mode, z);
            for (std::size_t k = 0; k < out.F.size(); ++k) {
                for (Eigen::Index n = 0; n < out.F[k].rows(); ++n) {
                    if (out.F[k](n, n).real() < kCollapseThreshold * natural[k](n)) ++out.collapsed;
                }
            }
            return out;
        }
        if (depth == 0 && r > previous) omega = std::max(omega * 0.5, 1.0 / 64.0);
        previous = r;
        const std::vector<CMat> res = difference(g, out.F);
        std::vector<CMat> next = combine(out.F, omega, res);
        if (depth > 0) {
            xs.push_back(out.F);
            rs.push_back(res);
            if (static_cast<int>(xs.size()) > depth + 1) {
                xs.erase(xs.begin());
                rs.erase(rs.begin());
            }
            const int m = static_cast<int>(xs.size()) - 1;
            if (m > 0) {
                const RVec w = diagonal_weights(g);
                const RVec f = flatten(res, w);
                RMat dr(f.size(), m);
                for (int i = 0; i < m; ++i) {
                    dr.col(i) = flatten(rs[static_cast<std::size_t>(i) + 1], w) - flatten(rs[static_cast<std::size_t>(i)], w);
                }
                const RVec gamma = dr.completeOrthogonalDecomposition().solve(f);
                std::vector<CMat> trial = next;
                for (int i = 0; i < m; ++i) {
                    const auto si = static_cast<std::size_t>(i);
                    const std::vector<CMat> dx = difference(xs[si + 1], xs[si]);
                    const std::vector<CMat> dg = difference(rs[si + 1], rs[si]);
                    for (std::size_t k = 0; k < trial.size(); ++k) trial[k] -= gamma(i) * (dx[k] + omega * dg[k]);
                }
                for (CMat& t : trial) t = hermitian_part(t);
                if (gamma.allFinite() && admissible(trial, mode) && within_trust(trial, out.F, g)) {
                    next = std::move(trial);
                } else {
                    xs.clear();
                    rs.clear();
                }
            }
        }
        out.F = std::move(next);
    }
    std::ostringstream msg;
    msg << "det_equiv: fixed point did not converge" << where(p) << " after " << opt.max_iterations
        << " iterations (residual " << out.residual << ")";
    throw NumericError(msg.str());
}

// Solves the KL^2 linear equations for Fbar, one right-hand side per Lambda.
//   fbar_x = (1/M) tr(Rbar_u T^{-1} Lambda T^{-1})
//          + (1/M) sum_m sum_{p,l} v_{x,(m,p,l)} [G_m Fbar_m G_m]_{pl}
// with v_{x,y} = (1/M) tr(Rbar_u T^{-1} Rbar_y T^{-1}) and u the transpose
// index of x. In the whitened basis Y_u = C^{-1} Rbar_u C^{-H} (T = C C^H)
// every trace is an inner product of columns of the stacked Y.
std::vector<std::vector<CMat>> derivative_core(const DetEquivProblem& p, const std::vector<CMat>& G, const CMat& T,
                                               const std::vector<CMat>& lambdas) {
    const int M = p.M;
    const int L = p.L;
    const auto n = static_cast<Eigen::Index>(p.rbar.size());
    Eigen::LLT<CMat> llt(T);
    if (llt.info() != Eigen::Success) {
        throw NumericError("det_equiv: resolvent matrix T is not positive definite" + where(p));
    }
    const auto Lf = llt.matrixL();
    auto whiten = [&](const CMat& x) -> CMat {
        const CMat a = Lf.solve(x);
        return Lf.solve(a.adjoint()).adjoint();
    };
    const Factors fac = factorize(p);
    const std::vector<CMat> zf = whiten_factors(fac, llt.matrixL());
    CMat ystack(static_cast<Eigen::Index>(M) * M, n);
    for (int k = 0; k < p.K; ++k) {
        const CMat& zk = zf[static_cast<std::size_t>(k)];
        const Eigen::Index r = fac.width(static_cast<std::size_t>(k));
        for (int q = 0; q < L; ++q) {
            for (int nn = 0; nn < L; ++nn) {
                const CMat y = zk.middleCols(q * r, r) * zk.middleCols(nn * r, r).adjoint();
                ystack.col(static_cast<Eigen::Index>(p.index(k, q, nn))) = Eigen::Map<const CVec>(y.data(), y.size());
            }
        }
    }
    CMat gram = CMat::Zero(n, n);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(ystack.adjoint());
    gram = CMat(gram.selfadjointView<Eigen::Lower>());

    const double inv_m2 = 1.0 / (static_cast<double>(M) * M);
    CMat system = CMat::Identity(n, n);
    CMat v(L, L);
    for (Eigen::Index x = 0; x < n; ++x) {
        for (int m = 0; m < p.K; ++m) {
            for (int pp = 0; pp < L; ++pp) {
                for (int l = 0; l < L; ++l) v(pp, l) = gram(x, static_cast<Eigen::Index>(p.index(m, pp, l)));
            }
            const CMat& g = G[static_cast<std::size_t>(m)];
            const CMat coeff = g.transpose() * v * g.transpose();
            for (int r = 0; r < L; ++r) {
                for (int s = 0; s < L; ++s) {
                    system(x, static_cast<Eigen::Index>(p.index(m, r, s))) -= inv_m2 * coeff(r, s);
                }
            }
        }
    }

    CMat zstack(static_cast<Eigen::Index>(M) * M, static_cast<Eigen::Index>(lambdas.size()));
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        const CMat zi = whiten(lambdas[i]);
        zstack.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const CVec>(zi.data(), zi.size());
    }
    const CMat rhs = ystack.adjoint() * zstack / static_cast<double>(M);

    // Ruiz equilibration: the unknowns span many orders of magnitude.
    RVec dr = RVec::Ones(n);
    RVec dc = RVec::Ones(n);
    for (int sweep = 0; sweep < 10; ++sweep) {
        const RVec rows = system.cwiseAbs().rowwise().maxCoeff();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double f = rows(i) > 0.0 ? 1.0 / std::sqrt(rows(i)) : 1.0;
            dr(i) *= f;
            system.row(i) *= f;
        }
        const RVec cols = system.cwiseAbs().colwise().maxCoeff().transpose();
        for (Eigen::Index j = 0; j < n; ++j) {
            const double f = cols(j) > 0.0 ? 1.0 / std::sqrt(cols(j)) : 1.0;
            dc(j) *= f;
            system.col(j) *= f;
        }
    }
    Eigen::PartialPivLU<CMat> lu(system);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-14)) {
        std::ostringstream msg;
        msg << "det_equiv: derivative system is singular" << where(p) << " (condition estimate "
            << (rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity()) << ")";
        throw NumericError(msg.str());
    }
    const CMat sol = dc.asDiagonal() * lu.solve(dr.asDiagonal() * rhs);

    std::vector<std::vector<CMat>> out(lambdas.size());
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        out[i].assign(static_cast<std::size_t>(p.K), CMat::Zero(L, L));
        for (int k = 0; k < p.K; ++k) {
            CMat& fb = out[i][static_cast<std::size_t>(k)];
            for (int nn = 0; nn < L; ++nn) {
                for (int q = 0; q < L; ++q) {
                    fb(nn, q) = sol(static_cast<Eigen::Index>(p.index(k, nn, q)), static_cast<Eigen::Index>(i));
                }
            }
            fb = hermitian_part(fb);
        }
    }
    return out;
}

std::vector<CMat> finite_weights(const DetEquivProblem& p, const std::vector<CMat>& F) {
    std::vector<CMat> G(F.size());
    for (int k = 0; k < p.K; ++k) {
        G[static_cast<std::size_t>(k)] = weight_matrix(F[static_cast<std::size_t>(k)], Mode::Finite, p, k, RVec::Zero(p.L));
    }
    return G;
}

CMat loaded(const CMat& f, const RVec& load) {
    return load.size() == 0 ? f : CMat(f + CMat(load.cast<cd>().asDiagonal()));
}

void require_zf_dims(const DetEquivProblem& p) {
    if (p.M < p.K * p.L) {
        throw DomainError("det_equiv: the z -> 0 limit requires M >= K*L" + where(p));
    }
}

CMat gamma_entry(const CMat& f_tilde, const CMat& fbar_tilde, int M, bool check_asymmetry) {
    const CMat inv = hermitian_part(f_tilde).partialPivLu().inverse();
    CMat g = inv * fbar_tilde * inv / static_cast<double>(M);
    const double norm = g.norm();
    if (check_asymmetry && norm > 0.0) {
        const double asym = (g - g.adjoint()).norm() / norm;
        if (asym > 1e-6) {
            throw NumericError("det_equiv: ZF kernel asymmetry " + std::to_string(asym) + " exceeds 1e-6");
        }
    }
    return hermitian_part(g);
}

}  // namespace

void DetEquivProblem::validate() const {
    if (M < 1 || K < 1 || L < 1) throw DomainError("det_equiv: dimensions must be positive");
    if (rbar.size() != static_cast<std::size_t>(K * L * L)) throw DomainError("det_equiv: expected K*L^2 matrices");
    for (const auto& r : rbar) {
        if (r.rows() != M || r.cols() != M || !r.allFinite()) {
            throw DomainError("det_equiv: effective covariances must be finite M x M matrices");
        }
    }
    if (lambda.rows() != M || lambda.cols() != M || !lambda.allFinite()) {
        throw DomainError("det_equiv: Lambda must be a finite M x M matrix");
    }
    if (!factors.empty()) {
        if (factors.size() != static_cast<std::size_t>(K * L)) throw DomainError("det_equiv: expected K*L factors");
        for (int k = 0; k < K; ++k) {
            const Eigen::Index r = factors[static_cast<std::size_t>(k * L)].cols();
            for (int n = 0; n < L; ++n) {
                const CMat& f = factors[static_cast<std::size_t>(k * L + n)];
                if (f.rows() != M || f.cols() != r || r < 1 || !f.allFinite()) {
                    throw DomainError("det_equiv: factors of one pilot must be finite M x r matrices of equal width");
                }
            }
        }
    }
}

DetEquivProblem make_det_equiv_problem(const EstimationModel& est, const RVec& data_powers, int j,
                                       bool with_lambda_terms) {
    const Dims d = est.dims();
    if (j < 0 || j >= d.L) throw DomainError("det_equiv: BS index out of range");
    if (data_powers.size() != static_cast<Eigen::Index>(d.num_users())) {
        throw DomainError("det_equiv: expected K*L data powers");
    }
    DetEquivProblem p;
    p.M = d.M;
    p.K = d.K;
    p.L = d.L;
    p.cell = j;
    p.rbar.resize(static_cast<std::size_t>(d.K * d.L * d.L));
    for (int k = 0; k < d.K; ++k) {
        for (int q = 0; q < d.L; ++q) {
            for (int n = 0; n < d.L; ++n) {
                p.rbar[p.index(k, q, n)] = est.cross_covariance(j, k, q, n);
            }
            const std::size_t diag = p.index(k, q, q);
            p.rbar[diag] = hermitian_part(p.rbar[diag]);
        }
    }
    p.factors.resize(static_cast<std::size_t>(d.K * d.L));
    for (int k = 0; k < d.K; ++k) {
        const CMat root = Eigen::LLT<CMat>(est.k_inverse(j, k)).matrixL();
        for (int n = 0; n < d.L; ++n) {
            const double pp = est.pilot_powers()(static_cast<Eigen::Index>(d.user(k, n)));
            p.factors[static_cast<std::size_t>(k * d.L + n)] = std::sqrt(pp) * (est.covariance(j, k, n) * root);
        }
    }
    p.lambda = CMat::Identity(d.M, d.M);
    if (with_lambda_terms) p.lambda_terms.resize(d.num_users());
    for (int m = 0; m < d.K; ++m) {
        for (int n = 0; n < d.L; ++n) {
            const double q = data_powers(static_cast<Eigen::Index>(d.user(m, n)));
            if (!with_lambda_terms && q == 0.0) continue;
            CMat err = est.error_covariance(j, m, n);
            if (q != 0.0) p.lambda.noalias() += q * err;
            if (with_lambda_terms) p.lambda_terms[d.user(m, n)] = std::move(err);
        }
    }
    p.lambda = hermitian_part(p.lambda);
    return p;
}

FixedPointSolution solve_fixed_point(const DetEquivProblem& problem, double z, const FixedPointOptions& options) {
    problem.validate();
    if (!(z < 0.0)) throw DomainError("det_equiv: z must be negative");
    CoreSolution core = iterate(problem, Mode::Finite, z, options);
    FixedPointSolution out;
    out.z = z;
    out.F = std::move(core.F);
    out.T = std::move(core.T);
    out.iterations = core.iterations;
    out.residual = core.residual;
    out.residual_history = std::move(core.history);
    out.monotone_tail = core.monotone_tail;
    out.floor_limited = core.floor_limited;
    return out;
}

std::vector<CMat> solve_derivative_system(const DetEquivProblem& problem, const FixedPointSolution& solution,
                                          const CMat& lambda) {
    problem.validate();
    if (lambda.rows() != problem.M || lambda.cols() != problem.M) {
        throw DomainError("det_equiv: Lambda must be M x M");
    }
    return derivative_core(problem, finite_weights(problem, solution.F), solution.T, {lambda}).front();
}

LimitSolution solve_limit_system(const DetEquivProblem& problem, const FixedPointOptions& options) {
    problem.validate();
    require_zf_dims(problem);
    CoreSolution core = iterate(problem, Mode::Limit, 0.0, options);
    LimitSolution out;
    out.Fbar_tilde = derivative_core(problem, core.G, core.T, {problem.lambda}).front();
    out.F_tilde = std::move(core.F);
    out.T_tilde = std::move(core.T);
    out.loading = std::move(core.load);
    out.collapsed = core.collapsed;
    out.floor_limited = core.floor_limited;
    out.iterations = core.iterations;
    out.residual = core.residual;
    out.residual_history = std::move(core.history);
    for (std::size_t k = 0; k < out.F_tilde.size(); ++k) {
        out.condition = std::max(out.condition, scaled_condition(loaded(out.F_tilde[k], out.loading[k])));
    }
    return out;
}

ZLimitCheck take_z_limits(const DetEquivProblem& problem, const std::vector<double>& eps,
                          const FixedPointOptions& options) {
    if (eps.size() < 2) throw DomainError("det_equiv: need at least two points for extrapolation");
    ZLimitCheck out;
    out.direct = solve_limit_system(problem, options);

    double scale = std::numeric_limits<double>::infinity();
    for (int k = 0; k < problem.K; ++k) {
        for (int nn = 0; nn < problem.L; ++nn) {
            const double t = problem.at(k, nn, nn).trace().real() / problem.M;
            if (t > 0.0) scale = std::min(scale, t);
        }
    }
    if (!std::isfinite(scale)) throw DomainError("det_equiv: all effective covariances vanish");

    const std::size_t npts = eps.size();
    std::vector<std::vector<CMat>> f_pts(npts);
    std::vector<std::vector<CMat>> fb_pts(npts);
    FixedPointOptions fp = options;
    fp.max_iterations = std::max(fp.max_iterations, 2000);
    for (std::size_t i = 0; i < npts; ++i) {
        const double z = -eps[i] * scale;
        out.z_values.push_back(z);
        const FixedPointSolution sol = solve_fixed_point(problem, z, fp);
        const std::vector<CMat> fbar = solve_derivative_system(problem, sol, problem.lambda);
        f_pts[i].resize(sol.F.size());
        fb_pts[i].resize(sol.F.size());
        for (std::size_t k = 0; k < sol.F.size(); ++k) {
            f_pts[i][k] = -z * sol.F[k];
            fb_pts[i][k] = z * z * fbar[k];
        }
    }

    // Neville's scheme evaluated at z = 0.
    auto extrapolate = [&](const std::vector<std::vector<CMat>>& pts, std::size_t first) {
        std::vector<std::vector<CMat>> tab(pts.begin() + static_cast<std::ptrdiff_t>(first), pts.end());
        const std::size_t m = tab.size();
        for (std::size_t level = 1; level < m; ++level) {
            for (std::size_t i = 0; i + level < m; ++i) {
                const double xi = out.z_values[first + i];
                const double xj = out.z_values[first + i + level];
                for (std::size_t k = 0; k < tab[i].size(); ++k) {
                    tab[i][k] = (xj * tab[i][k] - xi * tab[i + 1][k]) / (xj - xi);
                }
            }
        }
        return tab.front();
    };
    out.F_tilde = extrapolate(f_pts, 0);
    out.Fbar_tilde = extrapolate(fb_pts, 0);
    const std::vector<CMat> f_tail = extrapolate(f_pts, 1);
    const std::vector<CMat> fb_tail = extrapolate(fb_pts, 1);
    out.extrapolation_residual = std::max(normalized_gap(out.F_tilde, f_tail), normalized_gap(out.Fbar_tilde, fb_tail));
    out.warning = out.extrapolation_residual > 1e-4;
    out.disagreement = std::max(normalized_gap(out.direct.F_tilde, out.F_tilde),
                                normalized_gap(out.direct.Fbar_tilde, out.Fbar_tilde));
    if (out.disagreement > 1e-3) {
        std::ostringstream msg;
        msg << "det_equiv: direct and extrapolated z -> 0 limits disagree" << where(problem) << " (relative gap "
            << out.disagreement << ")";
        throw NumericError(msg.str());
    }
    return out;
}

std::vector<CMat> gamma_from_limits(const LimitSolution& limits, int M) {
    std::vector<CMat> out(limits.F_tilde.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const RVec load = k < limits.loading.size() ? limits.loading[k] : RVec();
        out[k] = gamma_entry(loaded(limits.F_tilde[k], load), limits.Fbar_tilde[k], M, true);
    }
    return out;
}

GammaBasis::GammaBasis(const EstimationModel& est, const ZfKernelOptions& options) : dims_(est.dims()) {
    const Dims d = dims_;
    const auto users = d.num_users();
    constant_.resize(static_cast<std::size_t>(d.L * d.K));
    slope_.resize(static_cast<std::size_t>(d.L * d.K));
    condition_.assign(static_cast<std::size_t>(d.L), 1.0);
    disagreement_.assign(static_cast<std::size_t>(d.L), 0.0);
    collapsed_.assign(static_cast<std::size_t>(d.L), 0);
    for (int j = 0; j < d.L; ++j) {
        const DetEquivProblem p = make_det_equiv_problem(est, RVec::Zero(static_cast<Eigen::Index>(users)), j, true);
        p.validate();
        require_zf_dims(p);
        std::vector<CMat> lambdas;
        lambdas.reserve(users + 1);
        lambdas.push_back(CMat::Identity(d.M, d.M));
        for (const auto& t : p.lambda_terms) lambdas.push_back(t);
        const CoreSolution core = iterate(p, Mode::Limit, 0.0, options.fixed_point);
        const auto fbars = derivative_core(p, core.G, core.T, lambdas);
        collapsed_[static_cast<std::size_t>(j)] = core.collapsed;
        if (core.collapsed > 0) {
            warnings_.push_back("BS " + std::to_string(j) + ": " + std::to_string(core.collapsed) +
                                " user(s) unresolvable by ZF; their kernels reflect the limit loading");
        }
        if (core.floor_limited) {
            std::ostringstream msg;
            msg << "BS " << j << ": limit fixed point stalled at residual " << core.residual;
            warnings_.push_back(msg.str());
        }
        for (int k = 0; k < d.K; ++k) {
            const auto idx = d.bs_pilot(j, k);
            const auto kk = static_cast<std::size_t>(k);
            const CMat f = loaded(core.F[kk], core.load[kk]);
            condition_[static_cast<std::size_t>(j)] = std::max(condition_[static_cast<std::size_t>(j)], scaled_condition(f));
            constant_[idx] = gamma_entry(f, fbars[0][kk], d.M, true);
            slope_[idx].resize(users);
            for (std::size_t u = 0; u < users; ++u) {
                slope_[idx][u] = gamma_entry(f, fbars[u + 1][kk], d.M, true);
            }
        }
        if (options.cross_check) {
            disagreement_[static_cast<std::size_t>(j)] = take_z_limits(p, {1e-2, 1e-3, 1e-4, 1e-5}, options.fixed_point).disagreement;
        }
    }
}

std::vector<CMat> GammaBasis::evaluate(const RVec& data_powers) const {
    const Dims d = dims_;
    if (data_powers.size() != static_cast<Eigen::Index>(d.num_users())) {
        throw DomainError("GammaBasis: expected K*L data powers");
    }
    std::vector<CMat> out(constant_.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = constant_[i];
        for (std::size_t u = 0; u < d.num_users(); ++u) {
            const double q = data_powers(static_cast<Eigen::Index>(u));
            if (q != 0.0) out[i] += q * slope_[i][u];
        }
    }
    return out;
}

std::vector<CMat> zf_gamma(const EstimationModel& est, const RVec& data_powers, const ZfKernelOptions& options) {
    const Dims d = est.dims();
    std::vector<CMat> out(static_cast<std::size_t>(d.L * d.K));
    for (int j = 0; j < d.L; ++j) {
        const DetEquivProblem p = make_det_equiv_problem(est, data_powers, j, false);
        p.validate();
        require_zf_dims(p);
        const std::vector<CMat> g = gamma_from_limits(solve_limit_system(p, options.fixed_point), d.M);
        for (int k = 0; k < d.K; ++k) out[d.bs_pilot(j, k)] = g[static_cast<std::size_t>(k)];
        if (options.cross_check) take_z_limits(p, {1e-2, 1e-3, 1e-4, 1e-5}, options.fixed_point);
    }
    return out;
}

}  // namespace umimo
