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
#include <complex>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace umimo {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

// Error hierarchy. The CLI maps ConfigError/DomainError to exit code 2 and
// NumericError (and subclasses) to exit code 3.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Invalid arguments or inputs outside an operation's domain.
class DomainError : public Error {
  public:
    using Error::Error;
};

// Inconsistent or incomplete configuration (missing inputs, bad spec file).
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Iterative methods that fail to converge, quadrature that fails to settle.
class NumericError : public Error {
  public:
    using Error::Error;
};

// Singular or numerically rank-deficient linear systems.
class SingularityError : public NumericError {
  public:
    using NumericError::NumericError;
};

// Raised when a procedure that is proven to terminate does not. Indicates a
// bug in the caller-supplied model rather than a hard problem instance.
class AnomalyError : public NumericError {
  public:
    using NumericError::NumericError;
};

// Network dimensions with the flattening conventions shared by every module.
//
//   (j, k, l)  BS j, user k of cell l           -> (j * K + k) * L + l
//   (k, l)     user k of cell l                  -> k * L + l
//   (j, k)     BS j, pilot k                      -> j * K + k
//
// LSFP vectors and the c / eta vectors of length L^2 are indexed by
// (j, p) -> j * L + p, i.e. BS-major, cell-minor.
struct Dims {
    int L = 1;
    int K = 1;
    int M = 1;

    [[nodiscard]] std::size_t triple(int j, int k, int l) const {
        return static_cast<std::size_t>((j * K + k) * L + l);
    }
    [[nodiscard]] std::size_t user(int k, int l) const { return static_cast<std::size_t>(k * L + l); }
    [[nodiscard]] std::size_t bs_pilot(int j, int k) const { return static_cast<std::size_t>(j * K + k); }
    [[nodiscard]] std::size_t num_triples() const { return static_cast<std::size_t>(L * K * L); }
    [[nodiscard]] std::size_t num_users() const { return static_cast<std::size_t>(K * L); }

    friend bool operator==(const Dims&, const Dims&) = default;
};

inline double to_db(double linear) { return 10.0 * std::log10(linear); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

// tr(A * B) in O(n^2) without forming the product.
inline cd trace_of_product(const CMat& a, const CMat& b) {
    return (a.transpose().array() * b.array()).sum();
}

// Hermitian part (A + A^H) / 2.
inline CMat hermitian_part(const CMat& a) { return 0.5 * (a + a.adjoint()); }

// Condition number of a Hermitian matrix after symmetric diagonal (Jacobi)
// scaling. Infinite when the matrix is not positive definite.
inline double scaled_condition(const CMat& a) {
    const RVec d = a.diagonal().real();
    if (d.size() == 0) return 1.0;
    if ((d.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
    const RVec s = d.cwiseSqrt().cwiseInverse();
    const CMat scaled = s.asDiagonal() * hermitian_part(a) * s.asDiagonal();
    const RVec ev = Eigen::SelfAdjointEigenSolver<CMat>(scaled, Eigen::EigenvaluesOnly).eigenvalues();
    if (!(ev(0) > 0.0)) return std::numeric_limits<double>::infinity();
    return ev(ev.size() - 1) / ev(0);
}

}  // namespace umimo
