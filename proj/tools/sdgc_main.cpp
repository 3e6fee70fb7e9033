// sdgc command-line front end: dataset generation, staged training, one-shot
// denoising runs, SNR-sweep experiments, metric scoring, and checkpoint
// inspection.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdgc/sdgc.hpp"

namespace fs = std::filesystem;

namespace {

sdgc::PipelineConfig load_or_default(const std::string& path) {
    if (path.empty()) {
        sdgc::PipelineConfig cfg;
        if (const char* env = std::getenv("SDGC_SEED")) {
            cfg.seed = sdgc::detail::parse_uint("SDGC_SEED", env);
        }
        sdgc::validate(cfg);
        return cfg;
    }
    return sdgc::load_config(path);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw sdgc::config_error("cannot write '" + path + "'");
    f << text;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    const sdgc::PipelineConfig cfg = load_or_default(config_path);
    fs::create_directories(out_dir);
    const auto clips = sdgc::gen_synthetic(cfg.dataset, cfg.seed);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%04zu.fsq", i);
        sdgc::save_fsq((fs::path(out_dir) / name).string(), clips[i]);
    }
    std::cout << "wrote " << clips.size() << " clips (" << cfg.dataset.frames << "x"
              << cfg.dataset.height << "x" << cfg.dataset.width << ") to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, int stage, bool resume) {
    const sdgc::PipelineConfig cfg = load_or_default(config_path);
    sdgc::TrainOptions opt;
    opt.out_dir = out_dir;
    opt.only_stage = stage;
    opt.resume = resume;
    const sdgc::ModelBundle bundle = sdgc::run_training_pipeline(cfg, opt, std::cout);

    // freeze measured compute times next to the checkpoints for later reuse
    const sdgc::ComputeTimeModel ct = sdgc::measure_compute_times(cfg, bundle);
    std::string text;
    text += "compute.t_fe = " + sdgc::format_double(ct.t_fe) + "\n";
    text += "compute.t_ks = " + sdgc::format_double(ct.t_ks) + "\n";
    text += "compute.t_sd = " + sdgc::format_double(ct.t_sd) + "\n";
    text += "compute.t_sr = " + sdgc::format_double(ct.t_sr) + "\n";
    text += "compute.t_fi = " + sdgc::format_double(ct.t_fi) + "\n";
    write_text((fs::path(out_dir) / "compute_times.cfg").string(), text);
    std::cout << "bundle written to " << out_dir << " (measured compute times in compute_times.cfg)\n";
    return 0;
}

int cmd_denoise(const std::string& config_path, const std::string& bundle_dir,
                const std::string& kind_name, double snr_db, std::size_t trial) {
    const sdgc::PipelineConfig cfg = load_or_default(config_path);
    const sdgc::ModelBundle bundle = sdgc::load_bundle(cfg, bundle_dir);
    const sdgc::DenoiserKind kind = sdgc::denoiser_from_name(kind_name);
    const auto clips = sdgc::gen_synthetic(cfg.dataset, cfg.seed);
    const sdgc::TrialRow row =
        sdgc::run_trial(cfg, bundle, clips[trial % clips.size()], kind, snr_db, trial);
    std::cout << "denoiser " << sdgc::denoiser_name(row.kind) << " @ " << row.snr_db << " dB, trial "
              << row.trial << "\n";
    if (!row.feasible) {
        std::cout << "  infeasible latency budget (t_max = " << row.t_max_s << " s)\n";
        return 3;
    }
    std::cout << "  true gain      " << row.true_gain << "\n"
              << "  used gain      " << row.est_gain << "\n"
              << "  keyframes      " << row.keyframe_count << "\n"
              << "  t_com          " << row.t_com << " s\n"
              << "  t_exe          " << row.t_exe << " s (budget " << row.t_max_s << " s)\n"
              << "  video mse      " << row.mse << "\n"
              << "  video psnr     " << row.psnr_db << " dB\n"
              << "  latent frechet " << row.latent_frechet << "\n";
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& bundle_dir,
                   const std::string& kind_name, double snr_min, double snr_max, double snr_step,
                   std::size_t trials, double t_max, const std::string& out_path) {
    sdgc::PipelineConfig cfg = load_or_default(config_path);
    if (t_max > 0.0) cfg.t_max_s = t_max;
    const sdgc::ModelBundle bundle = sdgc::load_bundle(cfg, bundle_dir);
    const sdgc::DenoiserKind kind = sdgc::denoiser_from_name(kind_name);
    std::vector<double> snrs;
    if (snr_step <= 0.0) throw sdgc::config_error("experiment: --snr-step must be > 0");
    for (double s = snr_min; s <= snr_max + 1e-9; s += snr_step) snrs.push_back(s);
    const sdgc::ExperimentResult res = sdgc::run_experiment(cfg, bundle, kind, snrs, trials);
    const std::string csv = sdgc::result_csv(res);
    if (out_path.empty() || out_path == "-") {
        std::cout << csv;
    } else {
        write_text(out_path, csv);
        std::cout << "wrote " << res.rows.size() << " rows to " << out_path << "\n";
    }
    std::size_t infeasible = 0;
    for (const auto& r : res.rows) {
        if (!r.feasible) ++infeasible;
    }
    if (infeasible > 0) std::cout << infeasible << " trials were latency-infeasible\n";
    return 0;
}

int cmd_metrics(const std::string& a_path, const std::string& b_path,
                const std::string& encoder_path) {
    const sdgc::FrameSequence a = sdgc::load_fsq(a_path);
    const sdgc::FrameSequence b = sdgc::load_fsq(b_path);
    const sdgc::MetricReport rep = sdgc::score(a, b);
    std::cout << "mse " << sdgc::format_double(rep.mse) << "\n";
    std::cout << "psnr_db " << sdgc::format_double(rep.psnr_db) << "\n";
    for (std::size_t f = 0; f < rep.per_frame_mse.size(); ++f) {
        std::cout << "frame " << f << " mse " << sdgc::format_double(rep.per_frame_mse[f]) << "\n";
    }
    if (!encoder_path.empty()) {
        const sdgc::MlpModel enc =
            sdgc::load_model(encoder_path, sdgc::Activation::tanh, sdgc::Activation::identity);
        const double lf = sdgc::latent_frechet(sdgc::extract_features(a, enc).mu,
                                               sdgc::extract_features(b, enc).mu);
        std::cout << "latent_frechet " << sdgc::format_double(lf) << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& path) {
    const std::string bytes = sdgc::detail::read_file_bytes(path);
    sdgc::detail::ByteReader r(bytes, path);
    if (r.raw(4) != std::string(sdgc::kCheckpointMagic, 4)) {
        throw sdgc::config_error("'" + path + "': bad magic");
    }
    const std::uint32_t version = r.u32();
    std::cout << "magic SDGC, version " << version << "\n";
    if (version == 2) {
        std::string tag = r.raw(8);
        tag = tag.substr(0, tag.find('\0'));
        const std::uint32_t steps = r.u32();
        const double b1 = r.f64();
        const double bt = r.f64();
        std::cout << "branch " << tag << ", schedule T=" << steps << " beta1=" << b1
                  << " betaT=" << bt << "\n";
    } else if (version != 1) {
        throw sdgc::config_error("'" + path + "': unsupported version");
    }
    const std::uint32_t layers = r.u32();
    std::cout << "layers " << layers << ", widths";
    std::vector<std::uint32_t> widths(layers + 1);
    for (auto& w : widths) {
        w = r.u32();
        std::cout << " " << w;
    }
    std::cout << "\n";
    std::size_t params = 0;
    double checksum = 0.0;
    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::size_t n = static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
        for (std::size_t i = 0; i < n; ++i) checksum += r.f64();
        params += n;
    }
    r.expect_exhausted();
    std::cout << "parameters " << params << ", sum " << sdgc::format_double(checksum) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale semantic video transmission laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "bundle", bundle_dir = "bundle", out_path;
    std::string kind = "sd", a_path, b_path, encoder_path, ckpt_path;
    int stage = 0;
    bool resume = false;
    double snr = 10.0, snr_min = 0.0, snr_max = 20.0, snr_step = 5.0, t_max = 0.0;
    std::size_t trials = 10, trial = 0;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset as .fsq files");
    gen->add_option("--config", config_path, "configuration file");
    gen->add_option("--out", out_dir, "output directory")->capture_default_str();

    auto* train = app.add_subcommand("train", "run the staged training pipeline");
    train->add_option("--config", config_path, "configuration file");
    train->add_option("--out", out_dir, "bundle directory")->capture_default_str();
    train->add_option("--stage", stage, "run a single stage (1-4), 0 = all")->capture_default_str();
    train->add_flag("--resume", resume, "skip stages whose checkpoints exist");

    auto* den = app.add_subcommand("denoise", "run one transmission trial with diagnostics");
    den->add_option("--config", config_path, "configuration file");
    den->add_option("--bundle", bundle_dir, "trained bundle directory")->capture_default_str();
    den->add_option("--denoiser", kind, "sd|msd|psd|none|mmse-only")->capture_default_str();
    den->add_option("--snr", snr, "SNR in dB")->capture_default_str();
    den->add_option("--trial", trial, "trial index")->capture_default_str();

    auto* exp = app.add_subcommand("experiment", "SNR sweep, CSV output");
    exp->add_option("--config", config_path, "configuration file");
    exp->add_option("--bundle", bundle_dir, "trained bundle directory")->capture_default_str();
    exp->add_option("--denoiser", kind, "sd|msd|psd|none|mmse-only")->capture_default_str();
    exp->add_option("--snr-min", snr_min, "sweep start, dB")->capture_default_str();
    exp->add_option("--snr-max", snr_max, "sweep end, dB")->capture_default_str();
    exp->add_option("--snr-step", snr_step, "sweep step, dB")->capture_default_str();
    exp->add_option("--trials", trials, "trials per SNR point")->capture_default_str();
    exp->add_option("--t-max", t_max, "latency budget override, seconds");
    exp->add_option("--out", out_path, "CSV path ('-' for stdout)");

    auto* met = app.add_subcommand("metrics", "score two .fsq sequences");
    met->add_option("a", a_path, "reference sequence")->required();
    met->add_option("b", b_path, "candidate sequence")->required();
    met->add_option("--encoder", encoder_path, "encoder checkpoint for the latent Frechet proxy");

    auto* ins = app.add_subcommand("inspect-checkpoint", "print checkpoint header and stats");
    ins->add_option("path", ckpt_path, "checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
        if (train->parsed()) return cmd_train(config_path, out_dir, stage, resume);
        if (den->parsed()) return cmd_denoise(config_path, bundle_dir, kind, snr, trial);
        if (exp->parsed()) {
            return cmd_experiment(config_path, bundle_dir, kind, snr_min, snr_max, snr_step, trials,
                                  t_max, out_path);
        }
        if (met->parsed()) return cmd_metrics(a_path, b_path, encoder_path);
        if (ins->parsed()) return cmd_inspect(ckpt_path);
    } catch (const sdgc::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const sdgc::infeasible_error& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const sdgc::divergence_error& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
