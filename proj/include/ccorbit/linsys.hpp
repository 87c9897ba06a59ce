#pragma once

#include <functional>
#include <vector>

#include "ccorbit/core.hpp"
#include "ccorbit/ode.hpp"

namespace ccorbit {

/// One interval of a discrete-time linear stochastic system
///   x_{k+1} = A x_k + B u_k + c + G_exe w_exe + G w.
/// Dimension-generic so the statistics stack can be exercised on arbitrary
/// systems; orbital DiscreteSegments convert into this.
struct LinearSegment {
    MatX A;      // nx x nx
    MatX B;      // nx x nu
    VecX c;      // nx
    MatX G;      // nx x nx process-noise factor
    MatX G_exe;  // nx x nu execution-noise factor

    int nx() const { return static_cast<int>(A.rows()); }
    int nu() const { return static_cast<int>(B.cols()); }

    static LinearSegment zero(int nx, int nu) {
        LinearSegment s;
        s.A = MatX::Identity(nx, nx);
        s.B = MatX::Zero(nx, nu);
        s.c = VecX::Zero(nx);
        s.G = MatX::Zero(nx, nx);
        s.G_exe = MatX::Zero(nx, nu);
        return s;
    }
};

/// Initial estimate mean, dispersion of the estimate, and estimation-error covariance.
struct InitialUncertainty {
    VecX x0_mean;
    MatX P_hat0_minus;    // dispersion of the initial estimate
    MatX P_tilde0_minus;  // initial estimation-error covariance

    void validate() const {
        const int n = static_cast<int>(x0_mean.size());
        if (n == 0) throw ModelError("InitialUncertainty: empty");
        if (P_hat0_minus.rows() != n || P_hat0_minus.cols() != n ||
            P_tilde0_minus.rows() != n || P_tilde0_minus.cols() != n)
            throw ModelError("InitialUncertainty: dimension mismatch");
        if (min_eigenvalue(P_hat0_minus) < -1e-12 * std::max(1.0, P_hat0_minus.trace()) ||
            min_eigenvalue(P_tilde0_minus) < -1e-12 * std::max(1.0, P_tilde0_minus.trace()))
            throw ModelError("InitialUncertainty: covariances must be PSD");
    }
};

/// Continuous control-affine system dx = (f0(x,t) + B u) dt + G(t) dw used by the
/// generic discretizer. f0/jac are evaluated along the co-integrated reference.
struct LtvSystem {
    int nx = 0;
    int nu = 0;
    std::function<VecX(const VecX&, double)> f0;
    std::function<MatX(const VecX&, double)> jac;    // df0/dx, nx x nx
    std::function<MatX(double)> noise;               // G(t), nx x nw (may be empty)
    MatX B;                                          // constant input matrix nx x nu
};

struct DiscretizedLtv {
    LinearSegment seg;    // A, B, c filled; G holds a factor of the integrated covariance
    VecX x_end;           // reference state at the end of the interval
    MatX q_gram_raw;      // integrated process-noise covariance before symmetrization
};

/// Integrate one interval of the variational system. The transition matrix, its
/// inverse, and the convolution integrals for B (zoh), c, and the process noise
/// are propagated together with the reference state in a single augmented ODE.
/// For impulsive control the caller applies the burn to x_start beforehand and
/// passes u_ref = 0; for zoh the constant u_ref acts across the interval.
inline DiscretizedLtv discretize_ltv(const LtvSystem& sys, const VecX& x_start, double t0,
                                     double t1, bool zoh, const VecX& u_ref,
                                     const OdeOptions& opt) {
    const int nx = sys.nx;
    const int nw = sys.noise ? static_cast<int>(sys.noise(t0).cols()) : 0;
    const int n2 = nx * nx;
    // Layout: x (nx), Phi (n2), Psi = Phi^-1 (n2), yc (nx), Qw (n2), [YB (nx*nu)]
    const int off_phi = nx;
    const int off_psi = nx + n2;
    const int off_yc = nx + 2 * n2;
    const int off_qw = 2 * nx + 2 * n2;
    const int off_yb = 2 * nx + 3 * n2;
    const int dim = 2 * nx + 3 * n2 + (zoh ? nx * sys.nu : 0);

    VecX y = VecX::Zero(dim);
    y.head(nx) = x_start;
    Eigen::Map<MatX>(y.data() + off_phi, nx, nx).setIdentity();
    Eigen::Map<MatX>(y.data() + off_psi, nx, nx).setIdentity();

    const VecX bu = zoh ? VecX(sys.B * u_ref) : VecX(VecX::Zero(nx));
    auto rhs = [&](double t, const VecX& s, VecX& ds) {
        ds.resize(dim);
        const VecX x = s.head(nx);
        const VecX f0 = sys.f0(x, t);
        const MatX a = sys.jac(x, t);
        Eigen::Map<const MatX> phi(s.data() + off_phi, nx, nx);
        Eigen::Map<const MatX> psi(s.data() + off_psi, nx, nx);
        ds.head(nx) = f0 + bu;
        Eigen::Map<MatX>(ds.data() + off_phi, nx, nx) = a * phi;
        Eigen::Map<MatX>(ds.data() + off_psi, nx, nx) = -psi * a;
        ds.segment(off_yc, nx) = psi * (f0 - a * x);
        if (nw > 0) {
            const MatX pg = psi * sys.noise(t);
            Eigen::Map<MatX>(ds.data() + off_qw, nx, nx) = pg * pg.transpose();
        } else {
            ds.segment(off_qw, n2).setZero();
        }
        if (zoh) Eigen::Map<MatX>(ds.data() + off_yb, nx, sys.nu) = psi * sys.B;
    };

    y = integrate_ode(rhs, t0, t1, y, opt);

    DiscretizedLtv out;
    out.seg.A = Eigen::Map<const MatX>(y.data() + off_phi, nx, nx);
    out.seg.B = zoh ? MatX(out.seg.A * Eigen::Map<const MatX>(y.data() + off_yb, nx, sys.nu))
                    : MatX(out.seg.A * sys.B);
    out.seg.c = out.seg.A * y.segment(off_yc, nx);
    out.q_gram_raw =
        out.seg.A * Eigen::Map<const MatX>(y.data() + off_qw, nx, nx) * out.seg.A.transpose();
    const MatX q_sym = symmetrize(out.q_gram_raw);
    const double asym = (out.q_gram_raw - out.q_gram_raw.transpose()).norm();
    if (asym > 1e-9 * std::max(1e-300, q_sym.norm()))
        throw NumericalError("discretize_ltv: integrated covariance asymmetric");
    out.seg.G = psd_factor(q_sym);
    out.seg.G_exe = MatX::Zero(nx, sys.nu);
    out.x_end = y.head(nx);
    return out;
}

}  // namespace ccorbit
