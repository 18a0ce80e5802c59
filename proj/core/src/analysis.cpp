#include "hkd/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "hkd/persist.hpp"
#include "hkd/trainer.hpp"

namespace hkd {

std::vector<std::pair<float, Tensor>> consistency_series(const HkdModel& model,
                                                         const TrajectoryDataset& ds,
                                                         int traj) {
    if (traj < 0 || traj >= ds.n_traj)
        throw shape_error("consistency_series: trajectory index out of range");
    std::vector<std::pair<float, Tensor>> out;
    for (int g = 0; g < ds.n_grid(); ++g) {
        float t = ds.times[g];
        out.emplace_back(t, hkd_forward(model, ds.state_tensor(traj, g), t));
    }
    return out;
}

void CeReport::write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << "level,band,time,magnitude,share\n";
    for (const auto& e : entries)
        f << e.level << ',' << e.band_index << ',' << e.time << ',' << e.magnitude << ','
          << e.share << '\n';
}

static std::map<int, std::vector<SpectralBand>> group_bands(
    const std::vector<SpectralBand>& bands) {
    std::map<int, std::vector<SpectralBand>> by_level;
    for (const auto& b : bands) by_level[b.level].push_back(b);
    return by_level;
}

static void check_partition(std::vector<SpectralBand> bands, int n_blocks, int level) {
    std::sort(bands.begin(), bands.end(),
              [](const SpectralBand& a, const SpectralBand& b) { return a.lo < b.lo; });
    int cursor = 0;
    for (const auto& b : bands) {
        if (b.lo != cursor || b.hi <= b.lo)
            throw shape_error("cumulative_effect: bands do not partition level " +
                              std::to_string(level) + " (gap or overlap at block " +
                              std::to_string(cursor) + ")");
        cursor = b.hi;
    }
    if (cursor != n_blocks)
        throw shape_error("cumulative_effect: bands cover " + std::to_string(cursor) +
                          " of " + std::to_string(n_blocks) + " blocks at level " +
                          std::to_string(level));
}

static double sq_norm(const Tensor& t) {
    double s = 0.0;
    for (float v : t.vec()) s += double(v) * v;
    return s;
}

CeReport cumulative_effect(const HkdModel& model, const Tensor& x_T,
                           const std::vector<SpectralBand>& bands,
                           const std::vector<float>& times) {
    const ModelConfig& mc = model.config();
    auto by_level = group_bands(bands);
    for (const auto& op : model.koopman()) {
        auto it = by_level.find(op.level);
        if (it == by_level.end())
            throw shape_error("cumulative_effect: no bands for level " +
                              std::to_string(op.level));
        check_partition(it->second, op.blocks(), op.level);
    }

    LatentPyramid z_T = model.encode(x_T, mc.horizon);
    CeReport report;
    for (float t : times) {
        LatentPyramid z_t = evolve_pyramid(z_T, model.koopman(), t - mc.horizon);
        for (size_t l = 0; l < z_t.levels.size(); ++l) {
            const KoopmanLevelOp& op = model.koopman()[l];
            double total = sq_norm(z_t.levels[l]);
            const auto& level_bands = by_level.at(op.level);
            for (size_t b = 0; b < level_bands.size(); ++b) {
                Tensor masked = spectral_mask(z_t.levels[l], op, level_bands[b]);
                double m2 = sq_norm(masked);
                CeEntry e;
                e.level = op.level;
                e.band_index = static_cast<int>(b);
                e.time = t;
                e.magnitude = std::sqrt(m2);
                e.share = total > 0.0 ? m2 / total : 0.0;
                report.entries.push_back(e);
            }
        }
    }
    return report;
}

std::vector<SpectralBand> default_bands(const ModelConfig& cfg, int n_bands) {
    if (n_bands < 1) throw shape_error("default_bands: need at least one band");
    std::vector<SpectralBand> out;
    for (int l = 1; l <= cfg.levels; ++l) {
        int nb = cfg.latent_channels[l - 1] / 2;
        int k = std::min(n_bands, nb);
        for (int b = 0; b < k; ++b) {
            SpectralBand sb;
            sb.level = l;
            sb.lo = b * nb / k;
            sb.hi = (b + 1) * nb / k;
            out.push_back(sb);
        }
    }
    return out;
}

Tensor band_decode(const HkdModel& model, const Tensor& x_T,
                   const std::vector<SpectralBand>& band_per_level) {
    const ModelConfig& mc = model.config();
    if (static_cast<int>(band_per_level.size()) != mc.levels)
        throw shape_error("band_decode: need exactly one band per level");
    LatentPyramid z = model.encode(x_T, mc.horizon);
    z = evolve_pyramid(z, model.koopman(), mc.epsilon - mc.horizon);
    for (size_t l = 0; l < z.levels.size(); ++l) {
        const SpectralBand& b = band_per_level[l];
        if (b.level != static_cast<int>(l) + 1)
            throw shape_error("band_decode: band " + std::to_string(l) + " targets level " +
                              std::to_string(b.level));
        z.levels[l] = spectral_mask(z.levels[l], model.koopman()[l], b);
    }
    return model.decode(z);
}

void EditSpec::validate(const ModelConfig& cfg) const {
    if (!(ratio >= 0.0f && ratio <= 1.0f))
        throw shape_error("EditSpec: ratio must lie in [0, 1]");
    if (static_cast<int>(bands.size()) != cfg.levels)
        throw shape_error("EditSpec: need exactly one band per level");
    if (!region.empty() && static_cast<int>(region.size()) != cfg.levels)
        throw shape_error("EditSpec: region must have one mask per level (or be empty)");
    for (int l = 1; l <= cfg.levels; ++l) {
        if (bands[l - 1].level != l)
            throw shape_error("EditSpec: band " + std::to_string(l - 1) +
                              " targets level " + std::to_string(bands[l - 1].level));
        if (!region.empty() && region[l - 1].defined()) {
            int hl = cfg.level_size(l);
            Shape expect = {hl, hl};
            if (region[l - 1].shape() != expect)
                throw shape_error("EditSpec: region mask for level " + std::to_string(l) +
                                  " has shape " + shape_str(region[l - 1].shape()) +
                                  ", expected " + shape_str(expect));
        }
    }
    if (t_edit >= 0.0f && !(t_edit >= cfg.epsilon && t_edit <= cfg.horizon))
        throw shape_error("EditSpec: t_edit outside [epsilon, horizon]");
}

Tensor frequency_edit(const HkdModel& model, const Tensor& x_T_orig, const Tensor& x_T_ref,
                      const EditSpec& spec) {
    const ModelConfig& mc = model.config();
    spec.validate(mc);

    // Blending at t_edit commutes with the remaining evolution: the evolution
    // matrix is block-diagonal per (block, location), exactly the granularity
    // of the band/region selection. Evolving both pyramids straight to epsilon
    // and blending there is therefore equivalent, and makes the rho = 0 and
    // rho = 1 endpoints bit-identical to the corresponding plain samples.
    float dt = mc.epsilon - mc.horizon;
    LatentPyramid zo =
        evolve_pyramid(model.encode(x_T_orig, mc.horizon), model.koopman(), dt);
    LatentPyramid zr =
        evolve_pyramid(model.encode(x_T_ref, mc.horizon), model.koopman(), dt);

    float rho = spec.ratio;
    if (rho > 0.0f)
        for (size_t l = 0; l < zo.levels.size(); ++l) {
            const KoopmanLevelOp& op = model.koopman()[l];
            std::vector<uint8_t> keep = band_keep_mask(op, spec.bands[l]);
            const int nb = op.blocks();
            const size_t plane = static_cast<size_t>(op.height()) * op.width();
            const float* mask =
                (!spec.region.empty() && spec.region[l].defined()) ? spec.region[l].data()
                                                                   : nullptr;
            const Shape& zs = zo.levels[l].shape();
            int N = zs[0];
            std::vector<float> mixed = zo.levels[l].vec();
            const float* pr = zr.levels[l].data();
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < nb; ++k)
                    for (size_t i = 0; i < plane; ++i) {
                        if (!keep[static_cast<size_t>(k) * plane + i]) continue;
                        if (mask && mask[i] == 0.0f) continue;
                        size_t i0 = (static_cast<size_t>(n) * 2 * nb + 2 * k) * plane + i;
                        for (size_t c : {i0, i0 + plane})
                            mixed[c] = rho == 1.0f
                                           ? pr[c]
                                           : (1.0f - rho) * mixed[c] + rho * pr[c];
                    }
            zo.levels[l] = Tensor::from_data(zs, std::move(mixed));
        }
    return model.decode(zo);
}

std::vector<Tensor> lower_left_region(const ModelConfig& cfg) {
    std::vector<Tensor> out;
    for (int l = 1; l <= cfg.levels; ++l) {
        int hl = cfg.level_size(l);
        std::vector<float> m(static_cast<size_t>(hl) * hl, 0.0f);
        for (int i = hl / 2; i < hl; ++i)
            for (int j = 0; j < hl / 2; ++j) m[static_cast<size_t>(i) * hl + j] = 1.0f;
        out.push_back(Tensor::from_data({hl, hl}, std::move(m)));
    }
    return out;
}

int decoder_receptive_radius(const ModelConfig& cfg, int level) {
    if (level < 1 || level > cfg.levels)
        throw shape_error("decoder_receptive_radius: level out of range");
    // Injection at `level` enters just before that stage's 3x3 conv. Upward
    // stages then apply nearest x2 (r -> 2r+1) and another 3x3 (r -> r+1);
    // the head 3x3 adds one more pixel.
    int r = 1;  // the stage conv at the injection level
    for (int l = level - 1; l >= 1; --l) r = 2 * r + 1 + 1;
    return r + 1;
}

double frechet_gaussian(const Tensor& samples_a, const Tensor& samples_b) {
    if (samples_a.shape().size() != 2 || samples_b.shape().size() != 2 ||
        samples_a.shape()[1] != samples_b.shape()[1])
        throw shape_error("frechet_gaussian: inputs must be [N, D] with equal D");
    if (!all_finite(samples_a) || !all_finite(samples_b))
        throw numeric_error("frechet_gaussian: non-finite input");
    const int D = samples_a.shape()[1];

    auto fit = [D](const Tensor& s, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        const int N = s.shape()[0];
        if (N < 2) throw shape_error("frechet_gaussian: need at least 2 samples per set");
        Eigen::MatrixXd X(N, D);
        const float* p = s.data();
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < D; ++j) X(i, j) = p[static_cast<size_t>(i) * D + j];
        mu = X.colwise().mean();
        Eigen::MatrixXd C = X.rowwise() - mu.transpose();
        cov = (C.adjoint() * C) / double(N - 1);
        cov += 1e-6 * Eigen::MatrixXd::Identity(D, D);
    };

    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    fit(samples_a, mu_a, cov_a);
    fit(samples_b, mu_b, cov_b);

    // sqrt(Sa Sb) via the symmetric form sqrt(Sa)^T: Sa^{1/2} Sb Sa^{1/2} is
    // symmetric PSD, and Tr sqrt(Sa Sb) = Tr sqrt(Sa^{1/2} Sb Sa^{1/2}).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
    Eigen::VectorXd ev = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sqrt_a =
        es_a.eigenvectors() * ev.asDiagonal() * es_a.eigenvectors().transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(sqrt_a * cov_b * sqrt_a);
    double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double d2 = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, d2);
}

Tensor feature_rows(const PerceptualExtractor& F, const Tensor& images) {
    Tensor feats = F.features(images);
    const Shape& s = feats.shape();
    int N = s[0];
    int D = static_cast<int>(feats.numel() / N);
    return Tensor::from_data({N, D}, feats.vec());
}

}  // namespace hkd
