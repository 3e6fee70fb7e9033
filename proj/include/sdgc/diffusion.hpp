#pragma once

// Noise schedules, forward diffusion, score-matching training, and the three
// semantic denoisers (known-gain SD, pilot-assisted MSD, parallel PSD with
// joint gain estimation).

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdgc/channel.hpp"
#include "sdgc/errors.hpp"
#include "sdgc/ndarray.hpp"
#include "sdgc/nn.hpp"
#include "sdgc/rng.hpp"

namespace sdgc {

struct NoiseSchedule {
    std::size_t steps = 0;
    std::vector<double> beta;       // beta[t-1] for t = 1..T
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // prod_{i<=t} alpha_i

    // Linear beta_1..beta_T variance schedule.
    static NoiseSchedule linear(std::size_t steps, double beta1, double beta_t) {
        if (steps == 0) throw config_error("schedule: step count must be positive");
        if (!(beta1 > 0.0 && beta1 <= beta_t && beta_t < 1.0)) {
            throw config_error("schedule: need 0 < beta1 <= beta_T < 1");
        }
        NoiseSchedule s;
        s.steps = steps;
        s.beta.resize(steps);
        s.alpha.resize(steps);
        s.alpha_bar.resize(steps);
        double prod = 1.0;
        for (std::size_t i = 0; i < steps; ++i) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
            s.beta[i] = beta1 + (beta_t - beta1) * frac;
            s.alpha[i] = 1.0 - s.beta[i];
            prod *= s.alpha[i];
            s.alpha_bar[i] = prod;
        }
        return s;
    }

    double beta1() const { return beta.front(); }
    double beta_last() const { return beta.back(); }

    void check_step(std::size_t t, const char* where) const {
        if (t < 1 || t > steps) {
            throw std::invalid_argument(std::string(where) + ": step " + std::to_string(t) +
                                        " outside [1, " + std::to_string(steps) + "]");
        }
    }

    // alpha_bar with the convention alpha_bar(0) = 1.
    double alpha_bar_at(std::size_t t) const {
        if (t == 0) return 1.0;
        check_step(t, "alpha_bar_at");
        return alpha_bar[t - 1];
    }
};

// Per-step likelihood-guidance weights. A single entry means one constant for
// every step; otherwise one entry per step t = 1..T.
struct GuidanceWeights {
    std::vector<double> zeta{1.0};

    static GuidanceWeights constant(double z) {
        if (!(z >= 0.0)) throw config_error("guidance: weight must be >= 0");
        GuidanceWeights g;
        g.zeta = {z};
        return g;
    }

    static GuidanceWeights per_step(std::vector<double> z) {
        if (z.empty()) throw config_error("guidance: empty per-step weights");
        for (double v : z) {
            if (!(v >= 0.0)) throw config_error("guidance: weight must be >= 0");
        }
        GuidanceWeights g;
        g.zeta = std::move(z);
        return g;
    }

    double at(std::size_t t, std::size_t steps) const {
        if (zeta.size() == 1) return zeta[0];
        if (zeta.size() != steps) {
            throw std::invalid_argument("guidance: weight table has " + std::to_string(zeta.size()) +
                                        " entries for " + std::to_string(steps) + " steps");
        }
        return zeta[t - 1];
    }
};

// Per-step guidance profile zeta_t = zeta0 * (1 - abar_{t-1}) / sqrt(1 - abar_t).
// It cancels the growth of the likelihood weight near t = 1, keeping the
// guidance term on the same beta_t/sqrt(1 - abar_t) scale as the prior score;
// a constant zeta with the likelihood weight makes the discretized update
// expansive for gains above one.
inline GuidanceWeights tapered_guidance(const NoiseSchedule& sch, double zeta0) {
    if (!(zeta0 >= 0.0)) throw config_error("guidance: weight must be >= 0");
    std::vector<double> z(sch.steps);
    for (std::size_t t = 1; t <= sch.steps; ++t) {
        const double prev = t == 1 ? 1.0 - sch.alpha_bar_at(1) : 1.0 - sch.alpha_bar_at(t - 1);
        z[t - 1] = zeta0 * prev / std::sqrt(1.0 - sch.alpha_bar_at(t));
    }
    return GuidanceWeights::per_step(std::move(z));
}

struct RegParams {
    double alpha_step = 0.05;  // gain-update step size
    double phi = 0.01;         // l1 regularization strength
};

// alpha_step = 0 is accepted as the degenerate no-refinement case.
inline void validate(const RegParams& r) {
    if (!(r.alpha_step >= 0.0)) throw config_error("reg: alpha_step must be >= 0");
    if (!(r.phi >= 0.0)) throw config_error("reg: phi must be >= 0");
}

// Closed form of the iterated forward step:
// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
inline NdArray forward_sample(const NdArray& z0, std::size_t t, const NdArray& eps,
                              const NoiseSchedule& sch) {
    sch.check_step(t, "forward_sample");
    if (eps.shape() != z0.shape()) {
        throw std::invalid_argument("forward_sample: eps shape " + eps.shape().str() +
                                    " vs z0 " + z0.shape().str());
    }
    const double abar = sch.alpha_bar_at(t);
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    NdArray out(z0.shape());
    for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

// Posterior-mean reconstruction of the clean latent from (z_t, eps_hat):
// z0_hat = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
inline NdArray tweedie_z0(const NdArray& z_t, std::size_t t, const NdArray& eps_hat,
                          const NoiseSchedule& sch) {
    sch.check_step(t, "tweedie_z0");
    if (eps_hat.shape() != z_t.shape()) {
        throw std::invalid_argument("tweedie_z0: eps shape " + eps_hat.shape().str() +
                                    " vs z_t " + z_t.shape().str());
    }
    const double abar = sch.alpha_bar_at(t);
    const double inv = 1.0 / std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    NdArray out(z_t.shape());
    for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = (z_t[i] - b * eps_hat[i]) * inv;
    return out;
}

// Weight of the observation-likelihood gradient,
// w_t = (1 - abar_t) / (beta_t (1 - abar_{t-1})).
// At t = 1 the convention abar_0 = 1 empties the denominator; the trailing
// factor is replaced by (1 - abar_1) there, giving the finite limit 1/beta_1.
inline double likelihood_weight(const NoiseSchedule& sch, std::size_t t) {
    sch.check_step(t, "likelihood_weight");
    const double num = 1.0 - sch.alpha_bar_at(t);
    const double prev = t == 1 ? num : 1.0 - sch.alpha_bar_at(t - 1);
    return num / (sch.beta[t - 1] * prev);
}

// Gradient of log p(z'|z_t, h) w.r.t. z_t:
// -w_t * grad ||z' - h z_t||^2  =  2 h w_t (z' - h z_t).
inline NdArray likelihood_grad_z(const NdArray& z_t, const NdArray& zprime, double h,
                                 std::size_t t, const NoiseSchedule& sch) {
    if (zprime.shape() != z_t.shape()) {
        throw std::invalid_argument("likelihood_grad_z: z' shape " + zprime.shape().str() +
                                    " vs z_t " + z_t.shape().str());
    }
    const double w = likelihood_weight(sch, t);
    NdArray out(z_t.shape());
    const double c = 2.0 * h * w;
    for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = c * (zprime[i] - h * z_t[i]);
    return out;
}

// Same likelihood term differentiated w.r.t. the scalar gain:
// -w_t * d/dh ||z' - h z_t||^2  =  2 w_t <z_t, z' - h z_t>.
inline double likelihood_grad_h(double h_t, const NdArray& z_t, const NdArray& zprime,
                                std::size_t t, const NoiseSchedule& sch) {
    if (zprime.shape() != z_t.shape()) {
        throw std::invalid_argument("likelihood_grad_h: z' shape " + zprime.shape().str() +
                                    " vs z_t " + z_t.shape().str());
    }
    const double w = likelihood_weight(sch, t);
    double acc = 0.0;
    for (std::size_t i = 0; i < z_t.size(); ++i) acc += z_t[i] * (zprime[i] - h_t * z_t[i]);
    return 2.0 * w * acc;
}

// Noise estimators come in two wirings. A "full" model consumes the whole
// latent plus t/T (input d+1, output d); a "coordinatewise" model is a shared
// scalar rule (input 2, output 1) broadcast over coordinates. The scalar rule
// cannot express cross-coordinate structure but trains to much higher
// precision at desk scale.
inline bool eps_is_coordinatewise(const MlpModel& model) {
    return model.input_width() == 2 && model.output_width() == 1;
}

namespace detail {

// Builds the model input for one latent: either the latent with t/T appended,
// or one (z_j, t/T) row per coordinate. Both yield a flat length-d output.
inline NdArray eps_input(const MlpModel& model, const NdArray& z, std::size_t t,
                         std::size_t steps) {
    const double tf = static_cast<double>(t) / static_cast<double>(steps);
    if (eps_is_coordinatewise(model)) {
        NdArray rows(Shape{z.size(), 2});
        for (std::size_t j = 0; j < z.size(); ++j) {
            rows[j * 2] = z[j];
            rows[j * 2 + 1] = tf;
        }
        return rows;
    }
    std::vector<double> v(z.values());
    v.push_back(tf);
    return NdArray(Shape{z.size() + 1}, std::move(v));
}

inline void check_eps_model(const MlpModel& model, std::size_t dim, const char* where) {
    if (eps_is_coordinatewise(model)) return;
    if (model.input_width() != dim + 1 || model.output_width() != dim) {
        throw std::invalid_argument(std::string(where) + ": model (" +
                                    std::to_string(model.input_width()) + " -> " +
                                    std::to_string(model.output_width()) +
                                    ") matches neither the full d+1 -> d wiring for d = " +
                                    std::to_string(dim) + " nor the coordinatewise 2 -> 1 wiring");
    }
}

}  // namespace detail

inline NdArray eval_eps(const MlpModel& model, const NdArray& z_t, std::size_t t,
                        const NoiseSchedule& sch) {
    detail::check_eps_model(model, z_t.size(), "eval_eps");
    NdArray out = forward(model, detail::eps_input(model, z_t, t, sch.steps));
    return NdArray(z_t.shape(), std::move(out.values()));
}

struct TrainEpsReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t steps_run = 0;
};

// Denoising score-matching loop: sample z0, t, eps; descend on
// ||eps_theta(z_t, t) - eps||^2. The sampler supplies clean latents.
inline TrainEpsReport train_eps(MlpModel& model, const std::function<NdArray(Rng&)>& sampler,
                                const NoiseSchedule& sch, const SgdConfig& cfg, Rng& rng) {
    validate(cfg);

    auto batch_loss = [&](const MlpModel& m, Rng& r, MlpGradients* grads_out) {
        double loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            NdArray z0 = sampler(r);
            const std::size_t dim = z0.size();
            detail::check_eps_model(m, dim, "train_eps");
            const std::size_t t = 1 + static_cast<std::size_t>(r.uniform_int(sch.steps));
            NdArray eps(z0.shape());
            for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = r.normal();
            const NdArray z_t = forward_sample(z0, t, eps, sch);
            const NdArray inp = detail::eps_input(m, z_t, t, sch.steps);
            const NdArray pred = forward(m, inp);
            NdArray upstream(pred.shape());
            const double scale = 1.0 / (static_cast<double>(cfg.batch_size) * static_cast<double>(dim));
            for (std::size_t i = 0; i < dim; ++i) {
                const double diff = pred[i] - eps[i];
                loss += diff * diff * scale;
                upstream[i] = 2.0 * diff * scale;
            }
            if (grads_out) {
                MlpGradients g = grad(m, inp, upstream);
                if (grads_out->d_weights.empty()) {
                    *grads_out = std::move(g);
                } else {
                    for (std::size_t l = 0; l < g.d_weights.size(); ++l) {
                        for (std::size_t i = 0; i < g.d_weights[l].size(); ++i) {
                            grads_out->d_weights[l][i] += g.d_weights[l][i];
                        }
                        for (std::size_t i = 0; i < g.d_biases[l].size(); ++i) {
                            grads_out->d_biases[l][i] += g.d_biases[l][i];
                        }
                    }
                }
            }
        }
        return loss;
    };

    TrainEpsReport rep;
    {
        Rng probe = Rng::split(rng.next_u64(), {0x65766c /*"evl"*/});
        rep.initial_loss = batch_loss(model, probe, nullptr);
        rep.final_loss = rep.initial_loss;
    }
    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        MlpGradients grads;
        const double loss = batch_loss(model, rng, &grads);
        if (!std::isfinite(loss) || loss > 1e6) {
            throw divergence_error("train_eps: loss " + std::to_string(loss) + " at step " +
                                   std::to_string(step));
        }
        // step decay: the configured rate is the initial one
        double lr = cfg.learning_rate;
        if (step * 10 >= cfg.max_steps * 6) lr *= 0.5;
        if (step * 20 >= cfg.max_steps * 17) lr *= 0.5;
        sgd_step(model, grads, lr);
        rep.final_loss = loss;
        rep.steps_run = step + 1;
    }
    return rep;
}

namespace detail {

inline void check_finite_state(const NdArray& z, std::size_t t, const char* branch) {
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!std::isfinite(z[i])) {
            throw divergence_error(std::string(branch) + ": non-finite state at step " +
                                   std::to_string(t));
        }
    }
}

}  // namespace detail

// Known-gain reverse chain. Starts from pure noise and walks t = T..1 with
//   s   = zeta_t * grad log p(z'|z_t, h) - eps_hat / sqrt(1 - abar_t)
//   z_{t-1} = (z_t + beta_t s)/sqrt(alpha_t) + sqrt(beta_t) * phi,
// phi = 0 at t = 1. Returns the final z_0 state.
inline NdArray sd_denoise(const NdArray& zprime, double h, const MlpModel& model,
                          const NoiseSchedule& sch, const GuidanceWeights& zeta, Rng& rng) {
    if (sch.steps == 0) throw std::invalid_argument("sd_denoise: empty schedule");
    const std::size_t dim = zprime.size();
    detail::check_eps_model(model, dim, "sd_denoise");

    NdArray z(zprime.shape());
    for (std::size_t i = 0; i < dim; ++i) z[i] = rng.normal();

    for (std::size_t t = sch.steps; t >= 1; --t) {
        const NdArray eps_hat = eval_eps(model, z, t, sch);
        const NdArray g = likelihood_grad_z(z, zprime, h, t, sch);
        const double zt = zeta.at(t, sch.steps);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(sch.alpha[t - 1]);
        const double beta = sch.beta[t - 1];
        const double score_scale = 1.0 / std::sqrt(1.0 - sch.alpha_bar_at(t));
        const double noise_scale = t > 1 ? std::sqrt(beta) : 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double s = zt * g[i] - eps_hat[i] * score_scale;
            z[i] = (z[i] + beta * s) * inv_sqrt_alpha + (noise_scale > 0.0 ? noise_scale * rng.normal() : 0.0);
        }
        detail::check_finite_state(z, t, "sd_denoise");
    }
    return z;
}

struct PsdResult {
    NdArray z;
    double h_hat = 0.0;
};

// Guidance for the known-gain chain: tapered profile normalized by the
// curvature 2 h^2 of the data-fit term so the update stays contractive for
// every fading gain.
inline GuidanceWeights stable_guidance(const NoiseSchedule& sch, double zeta0, double h) {
    return tapered_guidance(sch, zeta0 / (2.0 * (1.0 + h * h)));
}

// Parallel reverse chains over the latent and the scalar gain. After each gain
// step a subgradient step on ||z' - h z||_2 + phi*|h| is applied and the gain
// is clamped to >= 0. The supplied weights are normalized per step by each
// branch's own data-fit curvature (2 h_t^2 for the latent, 2 ||z_t||^2 for the
// gain); the joint chain visits arbitrary intermediate states, and without
// this the update turns expansive whenever the running gain exceeds one.
inline PsdResult psd_denoise(const NdArray& zprime, const MlpModel& eps_z, const MlpModel& eps_h,
                             const NoiseSchedule& sch, const GuidanceWeights& zeta_z,
                             const GuidanceWeights& zeta_h, const RegParams& reg, Rng& rng) {
    if (sch.steps == 0) throw std::invalid_argument("psd_denoise: empty schedule");
    validate(reg);
    const std::size_t dim = zprime.size();
    detail::check_eps_model(eps_z, dim, "psd_denoise[z]");
    detail::check_eps_model(eps_h, 1, "psd_denoise[h]");

    NdArray z(zprime.shape());
    for (std::size_t i = 0; i < dim; ++i) z[i] = rng.normal();
    NdArray h(Shape{1});
    h[0] = rng.normal();

    for (std::size_t t = sch.steps; t >= 1; --t) {
        const NdArray eps_hat_z = eval_eps(eps_z, z, t, sch);
        const NdArray eps_hat_h = eval_eps(eps_h, h, t, sch);
        const double zz = zeta_z.at(t, sch.steps) / (2.0 * (1.0 + h[0] * h[0]));
        const double zh = zeta_h.at(t, sch.steps) / (2.0 * (1.0 + dot(z, z)));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(sch.alpha[t - 1]);
        const double beta = sch.beta[t - 1];
        const double score_scale = 1.0 / std::sqrt(1.0 - sch.alpha_bar_at(t));
        const double noise_scale = t > 1 ? std::sqrt(beta) : 0.0;

        const NdArray g_z = likelihood_grad_z(z, zprime, h[0], t, sch);
        const double g_h = likelihood_grad_h(h[0], z, zprime, t, sch);

        for (std::size_t i = 0; i < dim; ++i) {
            const double s = zz * g_z[i] - eps_hat_z[i] * score_scale;
            z[i] = (z[i] + beta * s) * inv_sqrt_alpha + (noise_scale > 0.0 ? noise_scale * rng.normal() : 0.0);
        }
        {
            const double s = zh * g_h - eps_hat_h[0] * score_scale;
            h[0] = (h[0] + beta * s) * inv_sqrt_alpha + (noise_scale > 0.0 ? noise_scale * rng.normal() : 0.0);
            // the gain is a magnitude; a sign-flipped state would also flip
            // the latent guidance into the wrong basin
            if (h[0] < 0.0) h[0] = 0.0;
        }

        // l1-regularized data-fit refinement of the gain estimate.
        {
            double resid2 = 0.0;
            double zdotr = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double r = zprime[i] - h[0] * z[i];
                resid2 += r * r;
                zdotr += z[i] * r;
            }
            const double resid_norm = std::sqrt(resid2);
            double sub = 0.0;
            if (resid_norm > 0.0) sub -= zdotr / resid_norm;
            if (h[0] > 0.0) sub += reg.phi;
            else if (h[0] < 0.0) sub -= reg.phi;
            h[0] -= reg.alpha_step * sub;
            if (h[0] < 0.0) h[0] = 0.0;
        }

        detail::check_finite_state(z, t, "psd_denoise[z]");
        detail::check_finite_state(h, t, "psd_denoise[h]");
    }
    return PsdResult{std::move(z), h[0]};
}

// MMSE-equalizer-enhanced SD: the pilot pair yields the gain estimate that is
// fed to the known-gain chain.
inline NdArray msd_denoise(const NdArray& zprime, const NdArray& pilot, const NdArray& received_pilot,
                           double sigma2, const MlpModel& model, const NoiseSchedule& sch,
                           const GuidanceWeights& zeta, Rng& rng) {
    const double h_hat = mmse_estimate_gain(pilot, received_pilot, sigma2);
    return sd_denoise(zprime, h_hat, model, sch, zeta, rng);
}

// Cheap reuse path for keyframes after the first: the gain recovered by the
// full denoiser equalizes the remaining payloads.
inline std::vector<NdArray> denoise_subsequent(const std::vector<NdArray>& zprimes, double h_hat,
                                               double sigma2, double p) {
    std::vector<NdArray> out;
    out.reserve(zprimes.size());
    for (const NdArray& zp : zprimes) out.push_back(mmse_equalize(zp, h_hat, sigma2, p));
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser checkpoints: ndnet format, version 2, with a branch tag and the
// schedule parameters for compatibility checking at load.
// ---------------------------------------------------------------------------

inline void save_denoiser(const std::string& path, const MlpModel& m, const std::string& branch,
                          const NoiseSchedule& sch) {
    if (branch != "eps_z" && branch != "eps_h") {
        throw std::invalid_argument("save_denoiser: branch must be eps_z or eps_h");
    }
    std::string out(kCheckpointMagic, 4);
    detail::put_u32(out, 2);
    std::string tag = branch;
    tag.resize(8, '\0');
    out += tag;
    detail::put_u32(out, static_cast<std::uint32_t>(sch.steps));
    detail::put_f64(out, sch.beta1());
    detail::put_f64(out, sch.beta_last());
    detail::serialize_body(out, m);
    detail::write_file_bytes(path, out);
}

inline MlpModel load_denoiser(const std::string& path, const std::string& branch,
                              const NoiseSchedule& sch, Activation hidden, Activation output) {
    const std::string bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes, path);
    if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw config_error("'" + path + "': bad magic");
    const std::uint32_t version = r.u32();
    if (version != 2) throw config_error("'" + path + "': expected version 2, got " + std::to_string(version));
    std::string tag = r.raw(8);
    tag = tag.substr(0, tag.find('\0'));
    if (tag != branch) {
        throw config_error("'" + path + "': branch '" + tag + "' does not match requested '" + branch + "'");
    }
    const std::uint32_t steps = r.u32();
    const double beta1 = r.f64();
    const double beta_t = r.f64();
    if (steps != sch.steps || beta1 != sch.beta1() || beta_t != sch.beta_last()) {
        throw config_error("'" + path + "': schedule (T=" + std::to_string(steps) + ", beta1=" +
                           std::to_string(beta1) + ", betaT=" + std::to_string(beta_t) +
                           ") incompatible with configured schedule");
    }
    MlpModel m = detail::deserialize_body(r, hidden, output);
    r.expect_exhausted();
    return m;
}

}  // namespace sdgc
