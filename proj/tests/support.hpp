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

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "umimo/common.hpp"
#include "umimo/estimation.hpp"
#include "umimo/geometry.hpp"

namespace umimo::testing {

inline CMat random_complex(int rows, int cols, std::mt19937_64& rng) {
    CMat a(rows, cols);
    for (int c = 0; c < cols; ++c) a.col(c) = complex_normal(rng, rows);
    return a;
}

// W W^H / cols with W an M x rank Gaussian, scaled to trace M * scale.
inline CMat random_psd(int M, int rank, std::mt19937_64& rng, double scale = 1.0) {
    const CMat w = random_complex(M, rank, rng);
    CMat r = w * w.adjoint();
    r *= scale * M / r.trace().real();
    return hermitian_part(r);
}

// Scenario small enough for unit tests but with the default radio parameters.
inline NetworkScenario small_scenario(int L, int K, int M, std::uint64_t seed,
                                      CorrelationMode mode = CorrelationMode::OneRing) {
    NetworkScenario s;
    s.L = L;
    s.K = K;
    s.M = M;
    s.seed = seed;
    s.correlation = mode;
    return s;
}

inline CovarianceSet scenario_covariances(const NetworkScenario& s) { return build_covariance_set(s, drop_users(s)); }

// Every R_jkl = beta_jkl I_M.
inline CovarianceSet identity_covariances(const Dims& d, const std::vector<double>& beta) {
    CovarianceSet c;
    c.dims = d;
    c.correlation = CorrelationMode::Uncorrelated;
    c.beta = beta;
    for (double b : beta) c.R.push_back(b * CMat::Identity(d.M, d.M));
    return c;
}

// Random full-rank covariances with path gains spread over two decades.
inline CovarianceSet random_covariances(const Dims& d, std::mt19937_64& rng, int rank = -1) {
    CovarianceSet c;
    c.dims = d;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < d.num_triples(); ++i) {
        const double b = std::pow(10.0, u(rng));
        c.beta.push_back(b);
        c.R.push_back(random_psd(d.M, rank > 0 ? rank : d.M, rng, b));
    }
    return c;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

}  // namespace umimo::testing
