#pragma once

// Fading-channel models, corruption of transmitted latents, MMSE equalization,
// and the rate/latency bookkeeping of the link.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdgc/errors.hpp"
#include "sdgc/ndarray.hpp"
#include "sdgc/rng.hpp"

namespace sdgc {

enum class FadingKind { awgn, rayleigh, nakagami };

inline const char* fading_name(FadingKind k) {
    switch (k) {
        case FadingKind::awgn: return "awgn";
        case FadingKind::rayleigh: return "rayleigh";
        case FadingKind::nakagami: return "nakagami";
    }
    return "?";
}

inline FadingKind fading_from_name(const std::string& s) {
    if (s == "awgn") return FadingKind::awgn;
    if (s == "rayleigh") return FadingKind::rayleigh;
    if (s == "nakagami") return FadingKind::nakagami;
    throw config_error("unknown channel kind '" + s + "'");
}

struct ChannelModel {
    FadingKind kind = FadingKind::rayleigh;
    double m = 1.0;      // Nakagami shape, used only for kind == nakagami
    double omega = 1.0;  // mean-square gain E[h^2]
};

inline void validate(const ChannelModel& c) {
    if (!(c.omega > 0.0)) throw config_error("channel: omega must be > 0");
    if (c.kind == FadingKind::nakagami && !(c.m >= 0.5)) {
        throw config_error("channel: nakagami shape m must be >= 0.5, got " + std::to_string(c.m));
    }
}

struct ChannelRealization {
    double h = 1.0;       // amplitude gain, >= 0
    double sigma2 = 1.0;  // noise power, > 0
};

struct LinkBudget {
    double bandwidth_hz = 5e6;
    double power = 1.0;
    double snr_db = 10.0;
};

inline void validate(const LinkBudget& l) {
    if (!(l.bandwidth_hz > 0.0)) throw config_error("link: bandwidth must be > 0");
    if (!(l.power > 0.0)) throw config_error("link: power must be > 0");
}

// Per-stage compute times entering the execution-time sum.
struct ComputeTimeModel {
    double t_fe = 0.0;  // feature extraction
    double t_ks = 0.0;  // keyframe selection
    double t_sd = 0.0;  // semantic denoising
    double t_sr = 0.0;  // semantic reconstruction
    double t_fi = 0.0;  // frame interpolation
};

inline void validate(const ComputeTimeModel& ct) {
    if (ct.t_fe < 0 || ct.t_ks < 0 || ct.t_sd < 0 || ct.t_sr < 0 || ct.t_fi < 0) {
        throw config_error("compute times must be nonnegative");
    }
}

// Noise power for a target SNR: sigma^2 = p * omega / 10^(snr_db/10).
inline double noise_power(const LinkBudget& link, double omega) {
    return link.power * omega / std::pow(10.0, link.snr_db / 10.0);
}

// Amplitude gain draw. awgn is the no-fading case (h = 1); rayleigh and
// nakagami sample the fading magnitude with E[h^2] = omega. Nakagami-m uses
// h = sqrt(G), G ~ Gamma(m, omega/m), which reduces to Rayleigh at m = 1.
inline double sample_gain(const ChannelModel& model, Rng& rng) {
    validate(model);
    switch (model.kind) {
        case FadingKind::awgn:
            return 1.0;
        case FadingKind::rayleigh: {
            const double x = rng.normal();
            const double y = rng.normal();
            return std::sqrt(model.omega * 0.5 * (x * x + y * y));
        }
        case FadingKind::nakagami: {
            const double g = rng.gamma(model.m) * (model.omega / model.m);
            return std::sqrt(g);
        }
    }
    return 1.0;
}

// z' = h*z + n with n ~ N(0, sigma2) i.i.d. per element.
inline NdArray transmit(const NdArray& z, const ChannelRealization& real, Rng& rng) {
    if (!(real.sigma2 > 0.0)) throw std::invalid_argument("transmit: sigma2 must be > 0");
    const double sigma = std::sqrt(real.sigma2);
    NdArray out(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = real.h * z[i] + sigma * rng.normal();
    }
    return out;
}

// R = B * log2(1 + p*h^2/sigma^2), bits per second.
inline double rate(const LinkBudget& link, double h, double sigma2) {
    validate(link);
    if (!(sigma2 > 0.0)) throw std::invalid_argument("rate: sigma2 must be > 0");
    return link.bandwidth_hz * std::log2(1.0 + link.power * h * h / sigma2);
}

// t = sum_i 32*d_i / R; every transmitted element is accounted at 32 bits.
inline double comm_time(const std::vector<std::size_t>& payload_dims, double rate_bps) {
    if (!(rate_bps > 0.0)) {
        throw std::invalid_argument("comm_time: rate must be > 0, got " + std::to_string(rate_bps));
    }
    double bits = 0.0;
    for (std::size_t d : payload_dims) bits += 32.0 * static_cast<double>(d);
    return bits / rate_bps;
}

inline double exec_time(const ComputeTimeModel& ct, double t_com) {
    validate(ct);
    if (t_com < 0.0) throw std::invalid_argument("exec_time: t_com must be >= 0");
    return ct.t_fe + ct.t_ks + t_com + ct.t_sd + ct.t_sr + ct.t_fi;
}

// zhat = h_hat * z' / (h_hat^2 + sigma2/p), elementwise. h_hat = 0 gives zero.
inline NdArray mmse_equalize(const NdArray& zprime, double h_hat, double sigma2, double p) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("mmse_equalize: sigma2 must be > 0");
    if (!(p > 0.0)) throw std::invalid_argument("mmse_equalize: power must be > 0");
    const double denom = h_hat * h_hat + sigma2 / p;
    NdArray out(zprime.shape());
    for (std::size_t i = 0; i < zprime.size(); ++i) out[i] = h_hat * zprime[i] / denom;
    return out;
}

// Linear MMSE estimate of the scalar gain from a pilot observation:
// h_hat = <pilot, received> / (<pilot, pilot> + sigma2).
inline double mmse_estimate_gain(const NdArray& pilot, const NdArray& received, double sigma2) {
    if (pilot.size() != received.size()) {
        throw std::invalid_argument("mmse_estimate_gain: pilot " + pilot.shape().str() +
                                    " vs received " + received.shape().str());
    }
    const double energy = dot(pilot, pilot);
    if (energy == 0.0) throw std::invalid_argument("mmse_estimate_gain: pilot is identically zero");
    return dot(pilot, received) / (energy + sigma2);
}

}  // namespace sdgc
