#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace ccorbit {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Thrown when a state enters a dynamically singular region (zero radius).
struct SingularStateError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Thrown when numerical propagation cannot continue (step underflow, blowup).
struct PropagationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when a matrix that must be PSD/PD fails that requirement beyond tolerance.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown on malformed models, configs, or dimension mismatches.
struct ModelError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline MatX symmetrize(const MatX& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const MatX& sym) {
    Eigen::SelfAdjointEigenSolver<MatX> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

/// Square factor F of a symmetric PSD matrix with F*F^T = P, via eigendecomposition.
/// Eigenvalues in [-clip*scale, 0) are zeroed; anything more negative throws.
/// The factor is full-size square (zero columns where eigenvalues vanish), so the
/// Gram matrix is reproduced without changing dimensions.
inline MatX psd_factor(const MatX& p, double clip = 1e-12) {
    if (p.rows() != p.cols()) throw ModelError("psd_factor: matrix not square");
    Eigen::SelfAdjointEigenSolver<MatX> es(symmetrize(p));
    if (es.info() != Eigen::Success) throw NumericalError("psd_factor: eigendecomposition failed");
    VecX lam = es.eigenvalues();
    const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
    for (int i = 0; i < lam.size(); ++i) {
        if (lam[i] < -clip * scale)
            throw NumericalError("psd_factor: matrix not PSD (min eigenvalue " +
                                 std::to_string(lam.minCoeff()) + ")");
        if (lam[i] < 0.0) lam[i] = 0.0;
    }
    return es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
}

/// Spectral norm of a (possibly rectangular) matrix.
inline double spectral_norm(const MatX& m) {
    if (m.size() == 0) return 0.0;
    // Work on the smaller Gram to keep the eigensolve cheap.
    if (m.rows() <= m.cols()) {
        Eigen::SelfAdjointEigenSolver<MatX> es(MatX(m * m.transpose()), Eigen::EigenvaluesOnly);
        return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
    }
    Eigen::SelfAdjointEigenSolver<MatX> es(MatX(m.transpose() * m), Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

}  // namespace ccorbit
