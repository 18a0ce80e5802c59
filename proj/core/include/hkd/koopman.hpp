#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

// Per-level, per-location block-diagonal generator. Block k occupies channel
// pair (2k, 2k+1); alpha/beta are shaped [d/2, h, w].
struct KoopmanLevelOp {
    int level = 1;
    Tensor alpha;
    Tensor beta;
    bool trainable = true;

    int blocks() const { return alpha.shape()[0]; }
    int height() const { return alpha.shape()[1]; }
    int width() const { return alpha.shape()[2]; }

    static KoopmanLevelOp zeros(int level, int d, int h, int w, bool trainable = true);
};

struct LatentPyramid {
    std::vector<Tensor> levels;  // level l: [N, d_l, h_l, w_l]
    float time_tag = 0.0f;
};

// Half-open range [lo, hi) of block ranks, per-location descending by alpha.
struct SpectralBand {
    int level = 1;
    int lo = 0;
    int hi = 0;
};

inline constexpr double kAlphaExpGuard = 50.0;

// exp(dt * [[a, b], [-b, a]]), row-major {m00, m01, m10, m11}
std::array<double, 4> block_exp(double alpha, double beta, double dt);

// z: [d,h,w] or [N,d,h,w]; applies block_exp per (block, location).
// Differentiable with respect to z, alpha and beta.
Tensor evolve(const Tensor& z, const KoopmanLevelOp& op, float dt);

LatentPyramid evolve_pyramid(const LatentPyramid& p, const std::vector<KoopmanLevelOp>& ops,
                             float dt);

// Eigenvalues of the time-dt Koopman matrix per block and location:
// lambda = e^{alpha dt} (cos(beta dt) +- i sin(beta dt)).
struct KoopmanSpectrum {
    Tensor magnitude;  // [d/2, h, w], exp(alpha*dt)
    Tensor phase;      // [d/2, h, w], beta*dt (conjugate partner is -phase)
};
KoopmanSpectrum koopman_eigenvalues(const KoopmanLevelOp& op, float dt);

// [d/2 * h * w] flags, 1 where the block's per-location alpha rank
// (descending, stable over ties) falls in [band.lo, band.hi).
std::vector<uint8_t> band_keep_mask(const KoopmanLevelOp& op, const SpectralBand& band);

// Keeps channel pairs whose per-location alpha rank (descending) falls in
// [band.lo, band.hi), zeroes the rest. Differentiable with respect to z.
Tensor spectral_mask(const Tensor& z, const KoopmanLevelOp& op, const SpectralBand& band);

// Prop-style construction: P * e^{-t(Kt - I)} * Q == e^{-t(K - I)} for all t.
// Kt = I + diag of 2x2 blocks: rotation-scale for conjugate pairs, diagonal
// for paired real eigenvalues.
struct BlockDiagResult {
    Eigen::MatrixXd P;
    Eigen::MatrixXd K_tilde;
    Eigen::MatrixXd Q;
};
BlockDiagResult block_diagonalize(const Eigen::MatrixXd& K);

struct conditioning_error : numeric_error {
    using numeric_error::numeric_error;
};

// Projects |alpha| to the exponent guard for the given horizon: |alpha * span| <= 50.
void clamp_alpha(KoopmanLevelOp& op, float span);

// CSV: level,i,j,block,alpha,beta,magnitude,phase (magnitude/phase at dt).
void export_spectra_csv(const std::vector<KoopmanLevelOp>& ops, float dt,
                        const std::string& path);

}  // namespace hkd
