#pragma once

// Independent reference implementations used to validate derived behavior.
// Deliberately naive: clarity over speed.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "hkd/tensor.hpp"

namespace oracle {

// Scaling-and-squaring matrix exponential with a Taylor series on the scaled
// matrix. Accurate to ~1e-14 for moderate norms.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& A) {
    double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
    int s = 0;
    while (norm > 0.5) {
        norm *= 0.5;
        ++s;
    }
    Eigen::MatrixXd B = A / std::pow(2.0, s);
    Eigen::MatrixXd term = Eigen::MatrixXd::Identity(A.rows(), A.cols());
    Eigen::MatrixXd sum = term;
    for (int k = 1; k <= 24; ++k) {
        term = (term * B) / double(k);
        sum += term;
    }
    for (int i = 0; i < s; ++i) sum = sum * sum;
    return sum;
}

// Plain nested-loop cross-correlation with floor output sizing, double
// accumulation.
inline std::vector<float> conv2d(const std::vector<float>& input, int N, int Cin, int H,
                                 int W, const std::vector<float>& kernel, int Cout, int kh,
                                 int kw, const std::vector<float>& bias, int stride,
                                 int pad) {
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<float> out(static_cast<size_t>(N) * Cout * Ho * Wo);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = bias[co];
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                int iy = oy * stride + ky - pad;
                                int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += double(input[((size_t(n) * Cin + ci) * H + iy) * W +
                                                    ix]) *
                                       kernel[((size_t(co) * Cin + ci) * kh + ky) * kw + kx];
                            }
                    out[((size_t(n) * Cout + co) * Ho + oy) * Wo + ox] =
                        static_cast<float>(acc);
                }
    return out;
}

// Central finite differences of a scalar-valued function with respect to one
// tensor, compared against the autodiff gradient. Returns the worst
// scale-normalized deviation: max_i |ad_i - fd_i| / max(1, max_i |fd_i|).
inline double fd_gradient_error(const std::function<double()>& eval_loss, hkd::Tensor& x,
                                const std::vector<float>& autodiff_grad,
                                double h = 1e-3) {
    std::vector<float> fd(x.vec().size());
    for (size_t i = 0; i < x.vec().size(); ++i) {
        float saved = x.vec()[i];
        x.vec()[i] = saved + static_cast<float>(h);
        double up = eval_loss();
        x.vec()[i] = saved - static_cast<float>(h);
        double down = eval_loss();
        x.vec()[i] = saved;
        fd[i] = static_cast<float>((up - down) / (2.0 * h));
    }
    double scale = 1.0;
    for (float g : fd) scale = std::max(scale, double(std::abs(g)));
    double worst = 0.0;
    for (size_t i = 0; i < fd.size(); ++i)
        worst = std::max(worst, std::abs(double(autodiff_grad[i]) - fd[i]) / scale);
    return worst;
}

// x_t = mu + sqrt((s^2 + t^2) / (s^2 + T^2)) (x_T - mu): the exact solution of
// the single-Gaussian VE probability-flow ODE dx/dt = t (x - mu) / (s^2 + t^2).
inline std::vector<double> single_gaussian_pf_ode(const std::vector<double>& x_T,
                                                  const std::vector<float>& mu, double s,
                                                  double T, double t) {
    double scale = std::sqrt((s * s + t * t) / (s * s + T * T));
    std::vector<double> out(x_T.size());
    for (size_t i = 0; i < x_T.size(); ++i) out[i] = mu[i] + scale * (x_T[i] - mu[i]);
    return out;
}

}  // namespace oracle
