#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace recon {

using Real = double;
using Cplx = std::complex<double>;

using Vec  = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;
using Mat  = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;

using SpMat  = Eigen::SparseMatrix<Real>;
using SpCMat = Eigen::SparseMatrix<Cplx>;
using Triplet  = Eigen::Triplet<Real>;
using CTriplet = Eigen::Triplet<Cplx>;

// Guarded access to masked boundary data was denied.
struct MaskViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The requested weight exponent would push |zeta|^|tau| past the overflow guard.
struct TauTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A volume factorization met a condition estimate beyond the trust threshold
// (potential too close to a Dirichlet eigenvalue of the discrete operator).
struct NearSingular : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A dense boundary system exceeded the conditioning threshold.
struct IllConditioned : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fixed-point mode was requested but the contraction estimate is >= 1.
struct NotContracting : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace recon
