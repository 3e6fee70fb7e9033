#pragma once

// Line-oriented `key = value` configuration with dotted section keys.
// Unknown keys are errors; SDGC_SEED in the environment overrides the seed.

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdgc/channel.hpp"
#include "sdgc/errors.hpp"
#include "sdgc/synthetic.hpp"
#include "sdgc/textio.hpp"

namespace sdgc {

struct PipelineConfig {
    std::uint64_t seed = 1;

    DatasetConfig dataset;

    std::vector<std::size_t> encoder_hidden{128};
    std::size_t latent_dim = 64;
    std::vector<std::size_t> decoder_hidden{128};
    double kl_weight = 1e-3;

    std::size_t keyframe_k = 8;
    double t_max_s = 0.01;
    bool priority_raw_cosine = false;

    ChannelModel channel;
    LinkBudget link;
    ComputeTimeModel compute;

    std::size_t schedule_steps = 200;
    double beta1 = 1e-4;
    double beta_t = 0.02;

    double zeta_z = 1.0;
    double zeta_h = 1.0;
    double psd_zeta_z = 0.15;
    double psd_zeta_h = 0.5;

    double reg_alpha_step = 0.05;
    double reg_phi = 0.01;

    double learning_rate = 1e-3;       // autoencoder/decoder stages
    double eps_learning_rate = 2e-3;    // noise-estimator training
    double interp_learning_rate = 2e-3; // refinement training
    std::size_t batch_size = 16;
    std::size_t stage1_steps = 4000;
    std::size_t stage2_steps = 6000;
    std::size_t stage3_steps = 1500;
    std::size_t stage4_steps = 1500;

    std::vector<std::size_t> eps_hidden{96, 96};
    std::size_t pilot_length = 16;

    int interp_window = 5;
    std::size_t refine_hidden = 24;

    std::size_t threads = 0;  // 0 = hardware concurrency
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        const unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' expects a nonnegative integer, got '" + v + "'");
    }
}

inline std::vector<std::size_t> parse_uint_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw config_error("config: key '" + key + "' has an empty list entry");
        out.push_back(static_cast<std::size_t>(parse_uint(key, item)));
    }
    if (out.empty()) throw config_error("config: key '" + key + "' expects a comma list");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config: key '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace detail

inline void apply_config_entry(PipelineConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_real;
    using detail::parse_uint;
    using detail::parse_uint_list;

    if (key == "seed") c.seed = parse_uint(key, value);
    else if (key == "dataset.clips") c.dataset.clips = parse_uint(key, value);
    else if (key == "dataset.frames") c.dataset.frames = parse_uint(key, value);
    else if (key == "dataset.height") c.dataset.height = parse_uint(key, value);
    else if (key == "dataset.width") c.dataset.width = parse_uint(key, value);
    else if (key == "dataset.motion") c.dataset.motion = motion_from_name(value);
    else if (key == "encoder.hidden") c.encoder_hidden = parse_uint_list(key, value);
    else if (key == "encoder.latent_dim") c.latent_dim = parse_uint(key, value);
    else if (key == "decoder.hidden") c.decoder_hidden = parse_uint_list(key, value);
    else if (key == "autoencoder.kl_weight") c.kl_weight = parse_real(key, value);
    else if (key == "keyframe.k") c.keyframe_k = parse_uint(key, value);
    else if (key == "keyframe.t_max_s") c.t_max_s = parse_real(key, value);
    else if (key == "keyframe.priority") {
        if (value == "sparse") c.priority_raw_cosine = false;
        else if (value == "cosine") c.priority_raw_cosine = true;
        else throw config_error("config: keyframe.priority must be sparse or cosine");
    }
    else if (key == "channel.kind") c.channel.kind = fading_from_name(value);
    else if (key == "channel.m") c.channel.m = parse_real(key, value);
    else if (key == "channel.omega") c.channel.omega = parse_real(key, value);
    else if (key == "link.bandwidth_hz") c.link.bandwidth_hz = parse_real(key, value);
    else if (key == "link.power") c.link.power = parse_real(key, value);
    else if (key == "link.snr_db") c.link.snr_db = parse_real(key, value);
    else if (key == "compute.t_fe") c.compute.t_fe = parse_real(key, value);
    else if (key == "compute.t_ks") c.compute.t_ks = parse_real(key, value);
    else if (key == "compute.t_sd") c.compute.t_sd = parse_real(key, value);
    else if (key == "compute.t_sr") c.compute.t_sr = parse_real(key, value);
    else if (key == "compute.t_fi") c.compute.t_fi = parse_real(key, value);
    else if (key == "schedule.steps") c.schedule_steps = parse_uint(key, value);
    else if (key == "schedule.beta1") c.beta1 = parse_real(key, value);
    else if (key == "schedule.beta_t") c.beta_t = parse_real(key, value);
    else if (key == "guidance.zeta_z") c.zeta_z = parse_real(key, value);
    else if (key == "guidance.zeta_h") c.zeta_h = parse_real(key, value);
    else if (key == "guidance.psd_zeta_z") c.psd_zeta_z = parse_real(key, value);
    else if (key == "guidance.psd_zeta_h") c.psd_zeta_h = parse_real(key, value);
    else if (key == "reg.alpha_step") c.reg_alpha_step = parse_real(key, value);
    else if (key == "reg.phi") c.reg_phi = parse_real(key, value);
    else if (key == "sgd.learning_rate") c.learning_rate = parse_real(key, value);
    else if (key == "eps.learning_rate") c.eps_learning_rate = parse_real(key, value);
    else if (key == "interp.learning_rate") c.interp_learning_rate = parse_real(key, value);
    else if (key == "sgd.batch_size") c.batch_size = parse_uint(key, value);
    else if (key == "train.stage1_steps") c.stage1_steps = parse_uint(key, value);
    else if (key == "train.stage2_steps") c.stage2_steps = parse_uint(key, value);
    else if (key == "train.stage3_steps") c.stage3_steps = parse_uint(key, value);
    else if (key == "train.stage4_steps") c.stage4_steps = parse_uint(key, value);
    else if (key == "eps.hidden") c.eps_hidden = parse_uint_list(key, value);
    else if (key == "pilot.length") c.pilot_length = parse_uint(key, value);
    else if (key == "interp.window") c.interp_window = static_cast<int>(parse_uint(key, value));
    else if (key == "interp.refine_hidden") c.refine_hidden = parse_uint(key, value);
    else if (key == "experiment.threads") c.threads = parse_uint(key, value);
    else throw config_error("config: unknown key '" + key + "'");
}

// Desk-scale envelope. Values beyond it (full-resolution datasets, 65-frame
// clips) are rejected rather than attempted.
inline void validate(const PipelineConfig& c) {
    auto desk = [](bool ok, const std::string& what) {
        if (!ok) throw config_error("config: " + what + " is out of desk scope");
    };
    desk(c.dataset.frames >= 2 && c.dataset.frames <= 32,
         "dataset.frames = " + std::to_string(c.dataset.frames) + " (supported 2..32)");
    desk(c.dataset.height >= 8 && c.dataset.height <= 128,
         "dataset.height = " + std::to_string(c.dataset.height) + " (supported 8..128)");
    desk(c.dataset.width >= 8 && c.dataset.width <= 128,
         "dataset.width = " + std::to_string(c.dataset.width) + " (supported 8..128)");
    desk(c.dataset.clips >= 1 && c.dataset.clips <= 4096, "dataset.clips (supported 1..4096)");
    if (c.dataset.height % 4 != 0 || c.dataset.width % 4 != 0) {
        throw config_error("config: frame extents must be divisible by 4");
    }
    desk(c.latent_dim >= 2 && c.latent_dim <= 4096,
         "encoder.latent_dim = " + std::to_string(c.latent_dim) + " (supported 2..4096)");
    if (c.keyframe_k == 0 || c.keyframe_k > c.latent_dim) {
        throw config_error("config: keyframe.k must lie in [1, latent_dim]");
    }
    if (!(c.t_max_s > 0.0)) throw config_error("config: keyframe.t_max_s must be > 0");
    validate(c.channel);
    validate(c.link);
    validate(c.compute);
    if (c.schedule_steps == 0 || c.schedule_steps > 10000) {
        throw config_error("config: schedule.steps must lie in [1, 10000]");
    }
    if (!(c.beta1 > 0.0 && c.beta1 <= c.beta_t && c.beta_t < 1.0)) {
        throw config_error("config: need 0 < schedule.beta1 <= schedule.beta_t < 1");
    }
    if (!(c.zeta_z >= 0.0 && c.zeta_h >= 0.0 && c.psd_zeta_z >= 0.0 && c.psd_zeta_h >= 0.0)) {
        throw config_error("config: guidance weights must be >= 0");
    }
    if (!(c.reg_alpha_step > 0.0)) throw config_error("config: reg.alpha_step must be > 0");
    if (!(c.reg_phi >= 0.0)) throw config_error("config: reg.phi must be >= 0");
    if (!(c.learning_rate > 0.0)) throw config_error("config: sgd.learning_rate must be > 0");
    if (!(c.eps_learning_rate > 0.0)) throw config_error("config: eps.learning_rate must be > 0");
    if (!(c.interp_learning_rate > 0.0)) {
        throw config_error("config: interp.learning_rate must be > 0");
    }
    if (c.batch_size == 0) throw config_error("config: sgd.batch_size must be positive");
    if (c.pilot_length == 0) throw config_error("config: pilot.length must be positive");
    if (c.interp_window < 1 || c.interp_window % 2 == 0) {
        throw config_error("config: interp.window must be odd and positive");
    }
    for (std::size_t wdt : c.encoder_hidden) {
        if (wdt == 0) throw config_error("config: encoder.hidden widths must be positive");
    }
    for (std::size_t wdt : c.decoder_hidden) {
        if (wdt == 0) throw config_error("config: decoder.hidden widths must be positive");
    }
    for (std::size_t wdt : c.eps_hidden) {
        if (wdt == 0) throw config_error("config: eps.hidden widths must be positive");
    }
}

inline PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig c;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw config_error("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw config_error("config line " + std::to_string(lineno) + ": empty key or value");
        }
        apply_config_entry(c, key, value);
    }
    if (const char* env = std::getenv("SDGC_SEED")) {
        c.seed = detail::parse_uint("SDGC_SEED", env);
    }
    validate(c);
    return c;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

// Canonical snapshot: fixed key order, shortest round-trip numbers. Feeding it
// back through parse_config_text reproduces the configuration.
inline std::string config_snapshot(const PipelineConfig& c) {
    std::string out;
    auto put = [&out](const std::string& key, const std::string& value) {
        out += key;
        out += " = ";
        out += value;
        out += "\n";
    };
    auto put_list = [&put](const std::string& key, const std::vector<std::size_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ",";
            s += format_u64(v[i]);
        }
        put(key, s);
    };
    put("seed", format_u64(c.seed));
    put("dataset.clips", format_u64(c.dataset.clips));
    put("dataset.frames", format_u64(c.dataset.frames));
    put("dataset.height", format_u64(c.dataset.height));
    put("dataset.width", format_u64(c.dataset.width));
    put("dataset.motion", motion_name(c.dataset.motion));
    put_list("encoder.hidden", c.encoder_hidden);
    put("encoder.latent_dim", format_u64(c.latent_dim));
    put_list("decoder.hidden", c.decoder_hidden);
    put("autoencoder.kl_weight", format_double(c.kl_weight));
    put("keyframe.k", format_u64(c.keyframe_k));
    put("keyframe.t_max_s", format_double(c.t_max_s));
    put("keyframe.priority", c.priority_raw_cosine ? "cosine" : "sparse");
    put("channel.kind", fading_name(c.channel.kind));
    put("channel.m", format_double(c.channel.m));
    put("channel.omega", format_double(c.channel.omega));
    put("link.bandwidth_hz", format_double(c.link.bandwidth_hz));
    put("link.power", format_double(c.link.power));
    put("link.snr_db", format_double(c.link.snr_db));
    put("compute.t_fe", format_double(c.compute.t_fe));
    put("compute.t_ks", format_double(c.compute.t_ks));
    put("compute.t_sd", format_double(c.compute.t_sd));
    put("compute.t_sr", format_double(c.compute.t_sr));
    put("compute.t_fi", format_double(c.compute.t_fi));
    put("schedule.steps", format_u64(c.schedule_steps));
    put("schedule.beta1", format_double(c.beta1));
    put("schedule.beta_t", format_double(c.beta_t));
    put("guidance.zeta_z", format_double(c.zeta_z));
    put("guidance.zeta_h", format_double(c.zeta_h));
    put("guidance.psd_zeta_z", format_double(c.psd_zeta_z));
    put("guidance.psd_zeta_h", format_double(c.psd_zeta_h));
    put("reg.alpha_step", format_double(c.reg_alpha_step));
    put("reg.phi", format_double(c.reg_phi));
    put("sgd.learning_rate", format_double(c.learning_rate));
    put("eps.learning_rate", format_double(c.eps_learning_rate));
    put("interp.learning_rate", format_double(c.interp_learning_rate));
    put("sgd.batch_size", format_u64(c.batch_size));
    put("train.stage1_steps", format_u64(c.stage1_steps));
    put("train.stage2_steps", format_u64(c.stage2_steps));
    put("train.stage3_steps", format_u64(c.stage3_steps));
    put("train.stage4_steps", format_u64(c.stage4_steps));
    put_list("eps.hidden", c.eps_hidden);
    put("pilot.length", format_u64(c.pilot_length));
    put("interp.window", format_u64(static_cast<std::uint64_t>(c.interp_window)));
    put("interp.refine_hidden", format_u64(c.refine_hidden));
    put("experiment.threads", format_u64(c.threads));
    return out;
}

}  // namespace sdgc
