#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "ccorbit/core.hpp"

namespace ccorbit {

struct OdeOptions {
    double rtol = 1e-10;
    double atol = 1e-10;
    double h_initial = 0.0;   // 0 => automatic
    long max_steps = 4000000;
};

/// Adaptive Dormand-Prince 5(4) integration of dy/dt = f(t, y) from t0 to t1.
/// Supports both integration directions. Throws PropagationError on step
/// underflow or non-finite states.
template <class F>
VecX integrate_ode(F&& f, double t0, double t1, VecX y, const OdeOptions& opt = {}) {
    if (t1 == t0) return y;
    const int n = static_cast<int>(y.size());
    const double dir = (t1 > t0) ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);

    // Dormand-Prince 5(4) tableau
    static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static const double a21 = 1.0 / 5;
    static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
    static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static const double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                        e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                        e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

    VecX k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), err(n);

    double t = t0;
    f(t, y, k1);
    double h = opt.h_initial;
    if (h == 0.0) {
        const double ynorm = y.cwiseAbs().maxCoeff() + opt.atol;
        const double fnorm = k1.cwiseAbs().maxCoeff() + 1e-300;
        h = std::min(span, 0.01 * ynorm / fnorm);
        h = std::min(std::max(h, 1e-10 * span), span);
    }
    h = std::abs(h);

    const double hmin = std::max(span * 1e-15, 1e-300);
    bool first_same_as_last_valid = true;  // k1 holds f(t, y)

    for (long step = 0; step < opt.max_steps; ++step) {
        if (dir * (t - t1) >= 0.0) return y;
        h = std::min(h, std::abs(t1 - t));
        const double hs = dir * h;

        if (!first_same_as_last_valid) f(t, y, k1);

        ytmp = y + hs * (a21 * k1);
        f(t + c2 * hs, ytmp, k2);
        ytmp = y + hs * (a31 * k1 + a32 * k2);
        f(t + c3 * hs, ytmp, k3);
        ytmp = y + hs * (a41 * k1 + a42 * k2 + a43 * k3);
        f(t + c4 * hs, ytmp, k4);
        ytmp = y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        f(t + c5 * hs, ytmp, k5);
        ytmp = y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        f(t + hs, ytmp, k6);
        ynew = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        f(t + hs, ynew, k7);
        err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double errnorm = 0.0;
        for (int i = 0; i < n; ++i) {
            const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            const double e = err[i] / sc;
            errnorm += e * e;
        }
        errnorm = std::sqrt(errnorm / n);

        if (!std::isfinite(errnorm)) {
            h *= 0.25;
            first_same_as_last_valid = false;
            if (h < hmin) throw PropagationError("integrate_ode: non-finite state");
            continue;
        }

        if (errnorm <= 1.0) {
            t += hs;
            y.swap(ynew);
            k1 = k7;  // FSAL
            first_same_as_last_valid = true;
            const double fac = std::clamp(0.9 * std::pow(std::max(errnorm, 1e-10), -0.2), 0.2, 5.0);
            h *= fac;
        } else {
            const double fac = std::clamp(0.9 * std::pow(errnorm, -0.2), 0.1, 1.0);
            h *= fac;
            first_same_as_last_valid = true;  // k1 unchanged, step rejected
            if (h < hmin) throw PropagationError("integrate_ode: step size underflow");
        }
    }
    throw PropagationError("integrate_ode: max step count exceeded");
}

}  // namespace ccorbit
