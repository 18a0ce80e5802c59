#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hkd/koopman.hpp"
#include "hkd/netarch.hpp"
#include "hkd/teacher.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

// Per-timestep reconstruction: hkd_forward at every stored grid time, ordered
// from the horizon down to epsilon.
std::vector<std::pair<float, Tensor>> consistency_series(const HkdModel& model,
                                                         const TrajectoryDataset& ds,
                                                         int traj);

struct CeEntry {
    int level = 1;
    int band_index = 0;
    float time = 0.0f;
    double magnitude = 0.0;  // ||masked z_t||_2
    double share = 0.0;      // ||masked z_t||^2 / ||z_t||^2
};

struct CeReport {
    std::vector<CeEntry> entries;

    void write_csv(const std::string& path) const;
};

// Evolves the encoded pyramid of x_T to each grid time and records every
// band's latent energy share. bands must partition [0, d_l/2) per level.
CeReport cumulative_effect(const HkdModel& model, const Tensor& x_T,
                           const std::vector<SpectralBand>& bands,
                           const std::vector<float>& times);

// Splits every level's block range into n_bands near-equal contiguous bands
// of the per-location alpha ranking.
std::vector<SpectralBand> default_bands(const ModelConfig& cfg, int n_bands);

// Encode x_T, evolve to epsilon, keep only the given band per level, decode.
Tensor band_decode(const HkdModel& model, const Tensor& x_T,
                   const std::vector<SpectralBand>& band_per_level);

struct EditSpec {
    // One band per level; lo=0, hi=d_l/2 means the whole spectrum.
    std::vector<SpectralBand> bands;
    float ratio = 0.5f;
    // Binary [h_l, w_l] mask per level; an undefined tensor means the full
    // spatial extent.
    std::vector<Tensor> region;
    float t_edit = -1.0f;  // < 0 selects the midpoint (horizon + epsilon) / 2

    void validate(const ModelConfig& cfg) const;
};

// Evolve both encodings from the horizon to t_edit, blend the selected
// band/region coordinates as (1-ratio) original + ratio reference, evolve the
// blend to epsilon, decode.
Tensor frequency_edit(const HkdModel& model, const Tensor& x_T_orig, const Tensor& x_T_ref,
                      const EditSpec& spec);

// Builds the lower-left-half image mask downsampled to every level.
std::vector<Tensor> lower_left_region(const ModelConfig& cfg);

// Radius in image pixels of decoder output influenced by one latent cell at
// the given level, on top of the cell's own 2^(level-1) pixel footprint.
int decoder_receptive_radius(const ModelConfig& cfg, int level);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}) between Gaussian fits of
// the two sample sets ([N, D] rows); covariances regularized by +1e-6 I.
double frechet_gaussian(const Tensor& samples_a, const Tensor& samples_b);

class PerceptualExtractor;

// Flattens extractor features of a [N,C,H,W] batch into [N, D] rows.
Tensor feature_rows(const PerceptualExtractor& F, const Tensor& images);

}  // namespace hkd
