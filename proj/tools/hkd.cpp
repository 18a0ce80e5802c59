#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "hkd/analysis.hpp"
#include "hkd/config.hpp"
#include "hkd/image_io.hpp"
#include "hkd/koopman.hpp"
#include "hkd/netarch.hpp"
#include "hkd/persist.hpp"
#include "hkd/teacher.hpp"
#include "hkd/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

struct LoadedModel {
    hkd::Checkpoint ckpt;
    hkd::RunConfig run;
    hkd::HkdModel model;

    explicit LoadedModel(const std::string& path)
        : ckpt(hkd::read_checkpoint(path)),
          run(hkd::RunConfig::from_text(ckpt.config_echo)),
          model(hkd::model_config_from(run)) {
        hkd::load_into_model(ckpt, model);
    }
};

std::string out_path(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / name).string();
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 int64_t seed_override) {
    hkd::RunConfig run = hkd::RunConfig::from_file(config_path);
    hkd::GmmSpec gmm = hkd::gmm_from(run);
    hkd::Schedule sched = hkd::schedule_from(run);
    uint64_t seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override)
                                       : run.get_u64("teacher.seed");
    hkd::TrajectoryDataset ds =
        hkd::generate_dataset(gmm, sched, run.get_int("teacher.n_traj"),
                              run.get_int("teacher.n_grid"),
                              run.get_int("teacher.substeps"), seed);
    hkd::write_dataset(ds, out);
    std::cout << "wrote " << out << ": " << ds.n_traj << " trajectories, grid "
              << ds.n_grid() << " from " << sched.horizon << " to " << sched.epsilon
              << ", VE schedule sigma(t)=t\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out) {
    hkd::RunConfig run = hkd::RunConfig::from_file(config_path);
    hkd::TrajectoryDataset ds = hkd::read_dataset(data);
    hkd::HkdModel model(hkd::model_config_from(run));
    hkd::PerceptualExtractor F = hkd::extractor_from(run);
    hkd::TrainConfig tc = hkd::train_config_from(run);
    tc.checkpoint_path = out;
    tc.metrics_path = out + ".metrics.csv";
    hkd::TrainResult res = hkd::train(model, tc, ds, F, run.text());
    std::cout << "wrote " << out << " and " << tc.metrics_path << "; initial loss "
              << res.initial_loss << ", final loss " << res.final_loss << "\n";
    return kExitOk;
}

int cmd_sample(const std::string& ckpt, int n, uint64_t seed, const std::string& out) {
    LoadedModel lm(ckpt);
    float noise_std = static_cast<float>(hkd::gmm_from(lm.run).mean_stddev());
    hkd::Tensor samples = hkd::one_step_sample(lm.model, noise_std, n, seed);
    std::string path = out_path(out, "samples.png");
    hkd::save_contact_sheet(path, samples, 0);
    std::cout << path << "\n";
    return kExitOk;
}

int cmd_analyze_spectrum(const std::string& ckpt, const std::string& out) {
    LoadedModel lm(ckpt);
    const hkd::ModelConfig& mc = lm.model.config();
    std::string path = out_path(out, "spectra.csv");
    hkd::export_spectra_csv(lm.model.koopman(), mc.epsilon - mc.horizon, path);
    std::cout << path << "\n";
    return kExitOk;
}

int cmd_band_decode(const std::string& ckpt, uint64_t seed, int band, int n_bands,
                    const std::string& out) {
    LoadedModel lm(ckpt);
    const hkd::ModelConfig& mc = lm.model.config();
    if (band < 0 || band >= n_bands)
        throw hkd::config_error("--band must lie in [0, --bands)");
    hkd::Tensor x_T = hkd::draw_terminal_noise(
        mc, static_cast<float>(hkd::gmm_from(lm.run).mean_stddev()), 1, seed);
    std::vector<hkd::SpectralBand> all = hkd::default_bands(mc, n_bands);
    std::vector<hkd::SpectralBand> chosen;
    for (int l = 1; l <= mc.levels; ++l) {
        std::vector<hkd::SpectralBand> level_bands;
        for (const auto& b : all)
            if (b.level == l) level_bands.push_back(b);
        int idx = std::min(band, static_cast<int>(level_bands.size()) - 1);
        chosen.push_back(level_bands[idx]);
    }
    hkd::Tensor img = hkd::band_decode(lm.model, x_T, chosen);
    std::string path = out_path(out, "band_" + std::to_string(band) + ".png");
    hkd::save_image_png(path, img);
    std::cout << path << "\n";
    return kExitOk;
}

int cmd_ce(const std::string& ckpt, uint64_t seed, int n_bands, int n_times,
           const std::string& out) {
    LoadedModel lm(ckpt);
    const hkd::ModelConfig& mc = lm.model.config();
    hkd::Tensor x_T = hkd::draw_terminal_noise(
        mc, static_cast<float>(hkd::gmm_from(lm.run).mean_stddev()), 1, seed);
    std::vector<float> times;
    for (int i = 0; i < n_times; ++i)
        times.push_back(mc.horizon +
                        (mc.epsilon - mc.horizon) * float(i) / float(n_times - 1));
    hkd::CeReport report =
        hkd::cumulative_effect(lm.model, x_T, hkd::default_bands(mc, n_bands), times);
    std::string path = out_path(out, "ce.csv");
    report.write_csv(path);
    std::cout << path << "\n";
    return kExitOk;
}

int cmd_edit(const std::string& ckpt, uint64_t seed, uint64_t ref_seed, double ratio,
             const std::string& band, const std::string& region, double t_edit,
             const std::string& out) {
    LoadedModel lm(ckpt);
    const hkd::ModelConfig& mc = lm.model.config();
    if (ratio < 0.0 || ratio > 1.0)
        throw hkd::config_error("--ratio must lie in [0, 1], got " + std::to_string(ratio));

    hkd::EditSpec spec;
    spec.ratio = static_cast<float>(ratio);
    spec.t_edit = static_cast<float>(t_edit);
    for (int l = 1; l <= mc.levels; ++l) {
        hkd::SpectralBand b;
        b.level = l;
        int nb = mc.latent_channels[l - 1] / 2;
        if (band == "all") {
            b.lo = 0;
            b.hi = nb;
        } else if (band == "high") {
            b.lo = 2 * nb / 3;
            b.hi = nb;
        } else if (band == "mid") {
            b.lo = nb / 3;
            b.hi = 2 * nb / 3;
        } else if (band == "low") {
            b.lo = 0;
            b.hi = nb / 3;
        } else {
            throw hkd::config_error("--band must be all|low|mid|high, got " + band);
        }
        spec.bands.push_back(b);
    }
    if (region == "lower-left") {
        spec.region = hkd::lower_left_region(mc);
    } else if (region != "full") {
        throw hkd::config_error("--region must be full|lower-left, got " + region);
    }

    float noise_std = static_cast<float>(hkd::gmm_from(lm.run).mean_stddev());
    hkd::Tensor x_orig = hkd::draw_terminal_noise(mc, noise_std, 1, seed);
    hkd::Tensor x_ref = hkd::draw_terminal_noise(mc, noise_std, 1, ref_seed);
    hkd::Tensor img = hkd::frequency_edit(lm.model, x_orig, x_ref, spec);
    std::string path = out_path(out, "edit.png");
    hkd::save_image_png(path, img);
    std::cout << path << "\n";
    return kExitOk;
}

int cmd_consistency(const std::string& ckpt, const std::string& data, int traj,
                    const std::string& out) {
    LoadedModel lm(ckpt);
    hkd::TrajectoryDataset ds = hkd::read_dataset(data);
    auto series = hkd::consistency_series(lm.model, ds, traj);
    const hkd::ModelConfig& mc = lm.model.config();
    int n = static_cast<int>(series.size());
    std::vector<float> sheet(static_cast<size_t>(n) * mc.image_channels * mc.image_size *
                             mc.image_size);
    int64_t per = static_cast<int64_t>(mc.image_channels) * mc.image_size * mc.image_size;
    for (int i = 0; i < n; ++i)
        std::copy(series[i].second.vec().begin(), series[i].second.vec().end(),
                  sheet.begin() + i * per);
    hkd::Tensor batch = hkd::Tensor::from_data(
        {n, mc.image_channels, mc.image_size, mc.image_size}, std::move(sheet));
    std::string path = out_path(out, "consistency.png");
    hkd::save_contact_sheet(path, batch, n);
    std::cout << path << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& ckpt, int n, uint64_t seed, const std::string& out) {
    LoadedModel lm(ckpt);
    hkd::GmmSpec gmm = hkd::gmm_from(lm.run);
    hkd::Schedule sched = hkd::schedule_from(lm.run);
    float noise_std = static_cast<float>(gmm.mean_stddev());
    hkd::Tensor samples = hkd::one_step_sample(lm.model, noise_std, n, seed);
    hkd::Tensor teacher = hkd::sample_terminal(gmm, sched, n, seed + 1);
    hkd::PerceptualExtractor F = hkd::extractor_from(lm.run);
    double fd = hkd::frechet_gaussian(hkd::feature_rows(F, samples),
                                      hkd::feature_rows(F, teacher));
    if (!out.empty()) {
        std::string path = out_path(out, "eval_samples.png");
        hkd::save_contact_sheet(path, samples, 0);
        std::cout << path << "\n";
    }
    std::cout << "fd_lite " << fd << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical Koopman one-step diffusion laboratory"};
    app.require_subcommand(1);

    std::string config_path, data_path, ckpt_path, out = "out";
    int64_t seed_override = -1;
    uint64_t seed = 1, ref_seed = 2;
    int n = 16, traj = 0, band = 0, n_bands = 3, n_times = 9;
    double ratio = 0.5, t_edit = -1.0;
    std::string band_name = "all", region = "full";

    auto* gen = app.add_subcommand("gen-data", "Integrate teacher trajectories to a dataset");
    gen->add_option("--config", config_path, "Run configuration file")->required();
    gen->add_option("--out", out, "Output dataset path")->required();
    gen->add_option("--seed", seed_override, "Override teacher.seed (default: config value)");

    auto* tr = app.add_subcommand("train", "Train the model on a trajectory dataset");
    tr->add_option("--config", config_path, "Run configuration file")->required();
    tr->add_option("--data", data_path, "Trajectory dataset path")->required();
    tr->add_option("--out", ckpt_path, "Output checkpoint path")->required();

    auto* sm = app.add_subcommand("sample", "One-step sampling from a checkpoint");
    sm->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    sm->add_option("--n", n, "Number of samples")->capture_default_str();
    sm->add_option("--seed", seed, "Noise seed")->capture_default_str();
    sm->add_option("--out", out, "Output directory")->capture_default_str();

    auto* sp = app.add_subcommand("analyze-spectrum", "Export per-location Koopman spectra");
    sp->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    sp->add_option("--out", out, "Output directory")->capture_default_str();

    auto* bd = app.add_subcommand("band-decode", "Decode one spectral band of a sample");
    bd->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    bd->add_option("--seed", seed, "Noise seed")->capture_default_str();
    bd->add_option("--band", band, "Band index to keep")->capture_default_str();
    bd->add_option("--bands", n_bands, "Number of bands per level")->capture_default_str();
    bd->add_option("--out", out, "Output directory")->capture_default_str();

    auto* ce = app.add_subcommand("ce", "Cumulative-effect band shares over time");
    ce->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    ce->add_option("--seed", seed, "Noise seed")->capture_default_str();
    ce->add_option("--bands", n_bands, "Number of bands per level")->capture_default_str();
    ce->add_option("--times", n_times, "Time grid points")->capture_default_str();
    ce->add_option("--out", out, "Output directory")->capture_default_str();

    auto* ed = app.add_subcommand("edit", "Frequency-aware latent editing");
    ed->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    ed->add_option("--seed", seed, "Original noise seed")->capture_default_str();
    ed->add_option("--ref-seed", ref_seed, "Reference noise seed")->capture_default_str();
    ed->add_option("--ratio", ratio, "Mixing ratio in [0,1]")->capture_default_str();
    ed->add_option("--band", band_name, "all|low|mid|high")->capture_default_str();
    ed->add_option("--region", region, "full|lower-left")->capture_default_str();
    ed->add_option("--t-edit", t_edit, "Intervention time (<0 = midpoint)")
        ->capture_default_str();
    ed->add_option("--out", out, "Output directory")->capture_default_str();

    auto* cs = app.add_subcommand("consistency", "Per-timestep reconstruction series");
    cs->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    cs->add_option("--data", data_path, "Trajectory dataset path")->required();
    cs->add_option("--traj", traj, "Trajectory index")->capture_default_str();
    cs->add_option("--out", out, "Output directory")->capture_default_str();

    auto* ev = app.add_subcommand("eval", "FD-lite against the teacher terminal law");
    ev->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    ev->add_option("--n", n, "Samples per side")->capture_default_str();
    ev->add_option("--seed", seed, "Noise seed")->capture_default_str();
    ev->add_option("--out", out, "Output directory (optional)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out, seed_override);
        if (tr->parsed()) return cmd_train(config_path, data_path, ckpt_path);
        if (sm->parsed()) return cmd_sample(ckpt_path, n, seed, out);
        if (sp->parsed()) return cmd_analyze_spectrum(ckpt_path, out);
        if (bd->parsed()) return cmd_band_decode(ckpt_path, seed, band, n_bands, out);
        if (ce->parsed()) return cmd_ce(ckpt_path, seed, n_bands, n_times, out);
        if (ed->parsed())
            return cmd_edit(ckpt_path, seed, ref_seed, ratio, band_name, region, t_edit, out);
        if (cs->parsed()) return cmd_consistency(ckpt_path, data_path, traj, out);
        if (ev->parsed()) return cmd_eval(ckpt_path, n, seed, out);
    } catch (const hkd::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const hkd::shape_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const hkd::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hkd::format_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hkd::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}
