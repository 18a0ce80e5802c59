#include "hkd/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numeric>

namespace hkd {

KoopmanLevelOp KoopmanLevelOp::zeros(int level, int d, int h, int w, bool trainable) {
    if (d % 2 != 0) throw shape_error("KoopmanLevelOp: channel count must be even, got " +
                                      std::to_string(d));
    KoopmanLevelOp op;
    op.level = level;
    op.alpha = Tensor::zeros({d / 2, h, w}, trainable);
    op.beta = Tensor::zeros({d / 2, h, w}, trainable);
    op.trainable = trainable;
    return op;
}

std::array<double, 4> block_exp(double alpha, double beta, double dt) {
    if (std::abs(alpha * dt) > kAlphaExpGuard)
        throw numeric_error("block_exp: |alpha*dt| = " + std::to_string(std::abs(alpha * dt)) +
                            " exceeds exponent guard " + std::to_string(kAlphaExpGuard));
    double e = std::exp(alpha * dt);
    double c = std::cos(beta * dt);
    double s = std::sin(beta * dt);
    return {e * c, e * s, -e * s, e * c};
}

static void check_level_shapes(const Tensor& z, const KoopmanLevelOp& op, int& N, int& d,
                               int& h, int& w, const char* who) {
    const Shape& zs = z.shape();
    if (zs.size() == 3) {
        N = 1;
        d = zs[0];
        h = zs[1];
        w = zs[2];
    } else if (zs.size() == 4) {
        N = zs[0];
        d = zs[1];
        h = zs[2];
        w = zs[3];
    } else {
        throw shape_error(std::string(who) + ": latent must be 3-D or 4-D, got " +
                          shape_str(zs));
    }
    if (op.alpha.shape() != op.beta.shape())
        throw shape_error(std::string(who) + ": alpha/beta shape mismatch");
    if (op.alpha.shape() != Shape{d / 2, h, w} || d % 2 != 0)
        throw shape_error(std::string(who) + ": latent " + shape_str(zs) +
                          " incompatible with operator " + shape_str(op.alpha.shape()));
}

Tensor evolve(const Tensor& z, const KoopmanLevelOp& op, float dt) {
    int N, d, h, w;
    check_level_shapes(z, op, N, d, h, w, "evolve");
    const int nb = d / 2;
    const size_t plane = static_cast<size_t>(h) * w;
    const float* pa = op.alpha.data();
    for (size_t i = 0; i < static_cast<size_t>(nb) * plane; ++i)
        if (std::abs(static_cast<double>(pa[i]) * dt) > kAlphaExpGuard)
            throw numeric_error("evolve: |alpha*dt| exceeds exponent guard");

    const float* pb = op.beta.data();
    const float* pz = z.data();
    std::vector<float> out(z.vec().size());
    for (int n = 0; n < N; ++n) {
        for (int k = 0; k < nb; ++k) {
            const float* z0 = pz + (static_cast<size_t>(n) * d + 2 * k) * plane;
            const float* z1 = z0 + plane;
            float* o0 = out.data() + (static_cast<size_t>(n) * d + 2 * k) * plane;
            float* o1 = o0 + plane;
            const float* a = pa + static_cast<size_t>(k) * plane;
            const float* b = pb + static_cast<size_t>(k) * plane;
            for (size_t i = 0; i < plane; ++i) {
                double e = std::exp(static_cast<double>(a[i]) * dt);
                double c = std::cos(static_cast<double>(b[i]) * dt);
                double s = std::sin(static_cast<double>(b[i]) * dt);
                o0[i] = static_cast<float>(e * (c * z0[i] + s * z1[i]));
                o1[i] = static_cast<float>(e * (-s * z0[i] + c * z1[i]));
            }
        }
    }

    auto bwd = [N, d, h, w, dt](TensorNode& node) {
        const int nb = d / 2;
        const size_t plane = static_cast<size_t>(h) * w;
        auto& pz = node.parents[0];
        auto& palpha = node.parents[1];
        auto& pbeta = node.parents[2];
        pz->ensure_grad();
        palpha->ensure_grad();
        pbeta->ensure_grad();
        for (int n = 0; n < N; ++n) {
            for (int k = 0; k < nb; ++k) {
                const size_t base = (static_cast<size_t>(n) * d + 2 * k) * plane;
                const float* g0 = node.grad.data() + base;
                const float* g1 = g0 + plane;
                const float* y0 = node.data.data() + base;
                const float* y1 = y0 + plane;
                float* gz0 = pz->grad.data() + base;
                float* gz1 = gz0 + plane;
                const float* a = palpha->data.data() + static_cast<size_t>(k) * plane;
                const float* b = pbeta->data.data() + static_cast<size_t>(k) * plane;
                float* ga = palpha->grad.data() + static_cast<size_t>(k) * plane;
                float* gb = pbeta->grad.data() + static_cast<size_t>(k) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    double e = std::exp(static_cast<double>(a[i]) * dt);
                    double c = std::cos(static_cast<double>(b[i]) * dt);
                    double s = std::sin(static_cast<double>(b[i]) * dt);
                    // transpose of the block
                    gz0[i] += static_cast<float>(e * (c * g0[i] - s * g1[i]));
                    gz1[i] += static_cast<float>(e * (s * g0[i] + c * g1[i]));
                    // d(out)/d(alpha) = dt*out, d(out0)/d(beta) = dt*out1,
                    // d(out1)/d(beta) = -dt*out0
                    ga[i] += static_cast<float>(dt * (static_cast<double>(g0[i]) * y0[i] +
                                                      static_cast<double>(g1[i]) * y1[i]));
                    gb[i] += static_cast<float>(dt * (static_cast<double>(g0[i]) * y1[i] -
                                                      static_cast<double>(g1[i]) * y0[i]));
                }
            }
        }
    };
    return detail::make_result(z.shape(), std::move(out), {z, op.alpha, op.beta},
                               std::move(bwd));
}

LatentPyramid evolve_pyramid(const LatentPyramid& p, const std::vector<KoopmanLevelOp>& ops,
                             float dt) {
    if (p.levels.size() != ops.size())
        throw shape_error("evolve_pyramid: pyramid has " + std::to_string(p.levels.size()) +
                          " levels, operators " + std::to_string(ops.size()));
    LatentPyramid out;
    out.levels.reserve(p.levels.size());
    for (size_t l = 0; l < p.levels.size(); ++l)
        out.levels.push_back(evolve(p.levels[l], ops[l], dt));
    out.time_tag = p.time_tag + dt;
    return out;
}

KoopmanSpectrum koopman_eigenvalues(const KoopmanLevelOp& op, float dt) {
    const auto& a = op.alpha.vec();
    const auto& b = op.beta.vec();
    std::vector<float> mag(a.size()), ph(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        if (std::abs(static_cast<double>(a[i]) * dt) > kAlphaExpGuard)
            throw numeric_error("koopman_eigenvalues: |alpha*dt| exceeds exponent guard");
        mag[i] = static_cast<float>(std::exp(static_cast<double>(a[i]) * dt));
        ph[i] = static_cast<float>(static_cast<double>(b[i]) * dt);
    }
    KoopmanSpectrum sp;
    sp.magnitude = Tensor::from_data(op.alpha.shape(), std::move(mag));
    sp.phase = Tensor::from_data(op.alpha.shape(), std::move(ph));
    return sp;
}

std::vector<uint8_t> band_keep_mask(const KoopmanLevelOp& op, const SpectralBand& band) {
    const int nb = op.blocks();
    const size_t plane = static_cast<size_t>(op.height()) * op.width();
    if (band.lo < 0 || band.lo > band.hi || band.hi > nb)
        throw shape_error("band_keep_mask: invalid band [" + std::to_string(band.lo) + "," +
                          std::to_string(band.hi) + ") for " + std::to_string(nb) + " blocks");
    // per-location keep mask over blocks, rank descending by alpha (stable)
    std::vector<uint8_t> keep(static_cast<size_t>(nb) * plane, 0);
    const float* pa = op.alpha.data();
    std::vector<int> order(nb);
    for (size_t loc = 0; loc < plane; ++loc) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
            return pa[static_cast<size_t>(i) * plane + loc] >
                   pa[static_cast<size_t>(j) * plane + loc];
        });
        for (int r = band.lo; r < band.hi; ++r)
            keep[static_cast<size_t>(order[r]) * plane + loc] = 1;
    }
    return keep;
}

Tensor spectral_mask(const Tensor& z, const KoopmanLevelOp& op, const SpectralBand& band) {
    int N, d, h, w;
    check_level_shapes(z, op, N, d, h, w, "spectral_mask");
    const int nb = d / 2;
    const size_t plane = static_cast<size_t>(h) * w;
    std::vector<uint8_t> keep = band_keep_mask(op, band);
    const float* pz = z.data();
    std::vector<float> out(z.vec().size(), 0.0f);
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < nb; ++k)
            for (size_t i = 0; i < plane; ++i)
                if (keep[static_cast<size_t>(k) * plane + i]) {
                    size_t i0 = (static_cast<size_t>(n) * d + 2 * k) * plane + i;
                    out[i0] = pz[i0];
                    out[i0 + plane] = pz[i0 + plane];
                }
    auto bwd = [N, d, plane, keep](TensorNode& node) {
        const int nb = d / 2;
        auto& pz = node.parents[0];
        pz->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < nb; ++k)
                for (size_t i = 0; i < plane; ++i)
                    if (keep[static_cast<size_t>(k) * plane + i]) {
                        size_t i0 = (static_cast<size_t>(n) * d + 2 * k) * plane + i;
                        pz->grad[i0] += node.grad[i0];
                        pz->grad[i0 + plane] += node.grad[i0 + plane];
                    }
    };
    return detail::make_result(z.shape(), std::move(out), {z}, std::move(bwd));
}

BlockDiagResult block_diagonalize(const Eigen::MatrixXd& K) {
    const int m = static_cast<int>(K.rows());
    if (K.cols() != m) throw shape_error("block_diagonalize: matrix must be square");
    if (m % 2 != 0) throw shape_error("block_diagonalize: dimension must be even");

    Eigen::EigenSolver<Eigen::MatrixXd> es(K);
    if (es.info() != Eigen::Success)
        throw conditioning_error("block_diagonalize: eigendecomposition failed");
    Eigen::MatrixXcd V = es.eigenvectors();
    Eigen::VectorXcd lam = es.eigenvalues();

    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(V);
    double smax = svd.singularValues()(0);
    double smin = svd.singularValues()(m - 1);
    if (smin <= 0.0 || smax / smin >= 1e8)
        throw conditioning_error(
            "block_diagonalize: eigenvector matrix condition number " +
            std::to_string(smin > 0 ? smax / smin : std::numeric_limits<double>::infinity()) +
            " indicates a defective or ill-conditioned matrix");
    Eigen::MatrixXcd Vinv = V.inverse();

    const double scale = lam.cwiseAbs().maxCoeff() + 1.0;
    const double imag_tol = 1e-9 * scale;

    std::vector<int> complex_rep;  // index with Im > 0, one per conjugate pair
    std::vector<int> real_idx;
    std::vector<char> used(m, 0);
    for (int i = 0; i < m; ++i) {
        if (used[i]) continue;
        if (std::abs(lam(i).imag()) < imag_tol) {
            used[i] = 1;
            real_idx.push_back(i);
            continue;
        }
        // find the conjugate partner
        int best = -1;
        double best_d = std::numeric_limits<double>::max();
        for (int j = i + 1; j < m; ++j) {
            if (used[j]) continue;
            double dd = std::abs(lam(j) - std::conj(lam(i)));
            if (dd < best_d) {
                best_d = dd;
                best = j;
            }
        }
        if (best < 0 || best_d > 1e-6 * scale)
            throw conditioning_error("block_diagonalize: unpaired complex eigenvalue");
        used[i] = used[best] = 1;
        complex_rep.push_back(lam(i).imag() > 0 ? i : best);
    }
    if (real_idx.size() % 2 != 0)
        throw conditioning_error("block_diagonalize: odd count of real eigenvalues "
                                 "cannot form 2x2 blocks");

    BlockDiagResult r;
    r.P = Eigen::MatrixXd::Zero(m, m);
    r.Q = Eigen::MatrixXd::Zero(m, m);
    r.K_tilde = Eigen::MatrixXd::Identity(m, m);

    int col = 0;
    for (int idx : complex_rep) {
        Eigen::VectorXcd p = V.col(idx);
        Eigen::RowVectorXcd q = Vinv.row(idx);
        r.P.col(col) = p.real();
        r.P.col(col + 1) = p.imag();
        r.Q.row(col) = 2.0 * q.real();
        r.Q.row(col + 1) = -2.0 * q.imag();
        double a = lam(idx).real() - 1.0;
        double b = lam(idx).imag();
        r.K_tilde(col, col) += a;
        r.K_tilde(col, col + 1) += b;
        r.K_tilde(col + 1, col) += -b;
        r.K_tilde(col + 1, col + 1) += a;
        col += 2;
    }
    for (size_t t = 0; t + 1 < real_idx.size(); t += 2) {
        int ia = real_idx[t];
        int ib = real_idx[t + 1];
        for (int pick : {ia, ib}) {
            Eigen::VectorXcd p = V.col(pick);
            Eigen::RowVectorXcd q = Vinv.row(pick);
            // cancel the arbitrary complex phase of a real-eigenvalue eigenvector
            int imax = 0;
            p.cwiseAbs().maxCoeff(&imax);
            std::complex<double> ph = p(imax) / std::abs(p(imax));
            p /= ph;
            q *= ph;
            r.P.col(col) = p.real();
            r.Q.row(col) = q.real();
            r.K_tilde(col, col) += lam(pick).real() - 1.0;
            col += 1;
        }
    }
    return r;
}

void clamp_alpha(KoopmanLevelOp& op, float span) {
    const float limit = static_cast<float>(kAlphaExpGuard) / span;
    for (float& a : op.alpha.vec()) a = std::clamp(a, -limit, limit);
}

void export_spectra_csv(const std::vector<KoopmanLevelOp>& ops, float dt,
                        const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("export_spectra_csv: cannot open " + path);
    f << "level,i,j,block,alpha,beta,magnitude,phase\n";
    for (const auto& op : ops) {
        KoopmanSpectrum sp = koopman_eigenvalues(op, dt);
        const int nb = op.blocks(), h = op.height(), w = op.width();
        const size_t plane = static_cast<size_t>(h) * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int k = 0; k < nb; ++k) {
                    size_t at = static_cast<size_t>(k) * plane + static_cast<size_t>(i) * w + j;
                    f << op.level << ',' << i << ',' << j << ',' << k << ','
                      << op.alpha.vec()[at] << ',' << op.beta.vec()[at] << ','
                      << sp.magnitude.vec()[at] << ',' << sp.phase.vec()[at] << '\n';
                }
    }
}

}  // namespace hkd
