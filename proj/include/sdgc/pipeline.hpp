#pragma once

// Staged training, end-to-end experiment orchestration, and result emission.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "sdgc/channel.hpp"
#include "sdgc/config.hpp"
#include "sdgc/decoder.hpp"
#include "sdgc/diffusion.hpp"
#include "sdgc/encoder.hpp"
#include "sdgc/frames.hpp"
#include "sdgc/metrics.hpp"
#include "sdgc/ndarray.hpp"
#include "sdgc/nn.hpp"
#include "sdgc/rng.hpp"
#include "sdgc/synthetic.hpp"
#include "sdgc/textio.hpp"

namespace sdgc {

struct ModelBundle {
    MlpModel encoder;
    DecoderNet decoder;
    MlpModel eps_z;
    MlpModel eps_h;
    InterpolationModel interp;
    NoiseSchedule schedule;
};

// Largest odd window that fits the coarse feature grid.
inline int effective_window(const PipelineConfig& cfg) {
    const std::size_t grid = std::min(cfg.dataset.height, cfg.dataset.width) / 4;
    int w = cfg.interp_window;
    if (static_cast<std::size_t>(w) > grid) w = static_cast<int>(grid);
    if (w % 2 == 0) --w;
    return std::max(w, 1);
}

namespace detail {

inline std::vector<std::size_t> mlp_widths(std::size_t in, const std::vector<std::size_t>& hidden,
                                           std::size_t out) {
    std::vector<std::size_t> w;
    w.push_back(in);
    for (std::size_t x : hidden) w.push_back(x);
    w.push_back(out);
    return w;
}

// All frames of all clips as rows normalized to [0, 1].
inline NdArray frame_pool(const std::vector<FrameSequence>& data) {
    if (data.empty()) throw config_error("training: empty dataset");
    const std::size_t p = data.front().frame_elems();
    std::size_t rows = 0;
    for (const FrameSequence& fs : data) rows += fs.frames;
    NdArray pool(Shape{rows, p});
    std::size_t r = 0;
    for (const FrameSequence& fs : data) {
        for (std::size_t i = 0; i < fs.pixels.size(); ++i) {
            pool[r * p + i] = static_cast<double>(fs.pixels[i]) / 255.0;
        }
        r += fs.frames;
    }
    return pool;
}

inline NdArray rows_subset(const NdArray& pool, const std::vector<std::size_t>& idx) {
    const std::size_t p = pool.shape().dims[1];
    NdArray out(Shape{idx.size(), p});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy(pool.data() + idx[r] * p, pool.data() + (idx[r] + 1) * p, out.data() + r * p);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: variational autoencoder
// ---------------------------------------------------------------------------

// KL divergence of the diagonal-Gaussian latent against the unit Gaussian:
// -1/2 sum_i (1 + log sigma_i^2 - mu_i^2 - sigma_i^2).
inline double kl_divergence(const NdArray& mu, const NdArray& log_sigma) {
    if (mu.shape() != log_sigma.shape()) {
        throw std::invalid_argument("kl_divergence: mu/log_sigma shape mismatch");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        kl += -0.5 * (1.0 + 2.0 * log_sigma[i] - mu[i] * mu[i] - std::exp(2.0 * log_sigma[i]));
    }
    return kl;
}

struct AutoencoderResult {
    MlpModel encoder;
    DecoderNet decoder;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Joint reconstruction + KL training: loss = mean squared pixel error of the
// reparameterized decode plus kl_weight * (-1/2 sum(1 + log s^2 - mu^2 - s^2)).
inline AutoencoderResult train_autoencoder(const std::vector<FrameSequence>& data,
                                           const PipelineConfig& cfg) {
    const std::size_t p = data.front().frame_elems();
    const std::size_t d = cfg.latent_dim;
    AutoencoderResult res;
    res.encoder = make_mlp(detail::mlp_widths(p, cfg.encoder_hidden, 2 * d), Activation::tanh,
                           Activation::identity, Rng::split(cfg.seed, {1, 0}).next_u64());
    res.decoder.net = make_mlp(detail::mlp_widths(d, cfg.decoder_hidden, p), Activation::tanh,
                               Activation::sigmoid, Rng::split(cfg.seed, {1, 1}).next_u64());
    {
        // start the posterior narrow so the latent carries signal from step one
        const std::size_t last = res.encoder.layer_count() - 1;
        for (std::size_t j = 0; j < d; ++j) res.encoder.biases[last][d + j] = -2.0;
    }

    const NdArray pool = detail::frame_pool(data);
    const std::size_t n = pool.shape().dims[0];
    Rng rng = Rng::split(cfg.seed, {1, 2});

    // one VAE step over a batch of frame rows; returns the batch loss and, when
    // train = true, updates both networks
    auto vae_pass = [&](const NdArray& batch, Rng& noise, bool train) {
        const std::size_t b = batch.shape().dims[0];
        const NdArray enc_out = forward(res.encoder, batch);
        NdArray mu(Shape{b, d});
        NdArray ls(Shape{b, d});
        NdArray z(Shape{b, d});
        NdArray eps(Shape{b, d});
        for (std::size_t i = 0; i < b * d; ++i) eps[i] = noise.normal();
        for (std::size_t r = 0; r < b; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                mu[r * d + j] = enc_out[r * 2 * d + j];
                ls[r * d + j] = enc_out[r * 2 * d + d + j];
                z[r * d + j] = mu[r * d + j] + std::exp(ls[r * d + j]) * eps[r * d + j];
            }
        }
        const NdArray xhat = forward(res.decoder.net, z);
        double loss = 0.0;
        NdArray up_dec(xhat.shape());
        // reconstruction term is the per-sample sum of squared pixel errors,
        // averaged over the batch
        const double pix_scale = 1.0 / static_cast<double>(b);
        for (std::size_t i = 0; i < b * p; ++i) {
            const double diff = xhat[i] - batch[i];
            loss += diff * diff * pix_scale;
            up_dec[i] = 2.0 * diff * pix_scale;
        }
        loss += cfg.kl_weight * kl_divergence(mu, ls) / static_cast<double>(b);
        if (!train) return loss;

        MlpGradients g_dec = grad(res.decoder.net, z, up_dec);
        NdArray up_enc(enc_out.shape());
        const double klw = cfg.kl_weight / static_cast<double>(b);
        for (std::size_t r = 0; r < b; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                const double m = mu[r * d + j];
                const double s = ls[r * d + j];
                const double dz = g_dec.d_input[r * d + j];
                up_enc[r * 2 * d + j] = dz + klw * m;
                up_enc[r * 2 * d + d + j] =
                    dz * std::exp(s) * eps[r * d + j] + klw * (std::exp(2.0 * s) - 1.0);
            }
        }
        MlpGradients g_enc = grad(res.encoder, batch, up_enc);
        sgd_step(res.decoder.net, g_dec, cfg.learning_rate);
        sgd_step(res.encoder, g_enc, cfg.learning_rate);
        return loss;
    };

    auto full_loss = [&]() {
        Rng eval = Rng::split(cfg.seed, {1, 3});
        return vae_pass(pool, eval, false);
    };

    res.initial_loss = full_loss();
    for (std::size_t step = 0; step < cfg.stage1_steps; ++step) {
        std::vector<std::size_t> idx(cfg.batch_size);
        for (std::size_t& i : idx) i = rng.uniform_int(n);
        const NdArray batch = detail::rows_subset(pool, idx);
        const double loss = vae_pass(batch, rng, true);
        if (!std::isfinite(loss) || loss > 1e6) {
            throw divergence_error("stage1 autoencoder: loss " + std::to_string(loss) + " at step " +
                                   std::to_string(step));
        }
    }
    res.final_loss = full_loss();
    return res;
}

// ---------------------------------------------------------------------------
// Stage 2: denoiser training (encoder frozen)
// ---------------------------------------------------------------------------

// First-keyframe latents of every clip under the frozen encoder.
inline std::vector<NdArray> first_frame_latents(const std::vector<FrameSequence>& data,
                                                const MlpModel& encoder) {
    std::vector<NdArray> out;
    out.reserve(data.size());
    for (const FrameSequence& fs : data) {
        out.push_back(extract_features(fs, encoder).mu_row(0));
    }
    return out;
}

struct DenoiserTrainingResult {
    MlpModel eps_z;
    MlpModel eps_h;
    TrainEpsReport report_z;
    TrainEpsReport report_h;
};

inline DenoiserTrainingResult train_denoisers(const std::vector<NdArray>& latents,
                                              const PipelineConfig& cfg, const NoiseSchedule& sch) {
    if (latents.empty()) throw config_error("stage2: no latents to train on");
    const std::size_t d = latents.front().size();
    DenoiserTrainingResult res;
    res.eps_z = make_mlp(detail::mlp_widths(d + 1, cfg.eps_hidden, d), Activation::tanh,
                         Activation::identity, Rng::split(cfg.seed, {2, 0}).next_u64());
    res.eps_h = make_mlp(detail::mlp_widths(2, cfg.eps_hidden, 1), Activation::tanh,
                         Activation::identity, Rng::split(cfg.seed, {2, 1}).next_u64());

    SgdConfig sgd{cfg.eps_learning_rate, cfg.stage2_steps, cfg.batch_size};
    {
        Rng rng = Rng::split(cfg.seed, {2, 2});
        auto sampler = [&latents](Rng& r) { return latents[r.uniform_int(latents.size())]; };
        res.report_z = train_eps(res.eps_z, sampler, sch, sgd, rng);
    }
    {
        Rng rng = Rng::split(cfg.seed, {2, 3});
        const ChannelModel chan = cfg.channel;
        auto sampler = [chan](Rng& r) {
            NdArray h(Shape{1});
            h[0] = sample_gain(chan, r);
            return h;
        };
        res.report_h = train_eps(res.eps_h, sampler, sch, sgd, rng);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Stage 3: interpolation refinement on 3-consecutive-frame samples
// ---------------------------------------------------------------------------

namespace detail {

struct RefineSample {
    NdArray rows;     // refine-net inputs per pixel
    NdArray targets;  // residual targets, (pixels, 3), in [0,1] units
};

// Interpolates the middle of a 3-frame window from its endpoints and pairs the
// refine inputs with the ground-truth residual.
inline RefineSample make_refine_sample(const NdArray& first, const NdArray& middle,
                                       const NdArray& last, const InterpolationModel& model) {
    const std::size_t h = first.shape().dims[0];
    const std::size_t w = first.shape().dims[1];
    const AppearanceFeatures apa = extract_appearance(first, model.appearance);
    const AppearanceFeatures apb = extract_appearance(last, model.appearance);
    const AttentionResult att =
        interframe_attention(apa.fused, apb.fused, model.window, model.projections);
    const std::size_t gh = apa.fused.shape().dims[0];
    const std::size_t gw = apa.fused.shape().dims[1];
    const NdArray motion =
        detail::replicate_interior(motion_vector(att.scores, identity_coords(gh, gw), model.window));
    const double cell = static_cast<double>(h) / static_cast<double>(gh);

    NdArray mask_grid(Shape{gh, gw, 1});
    {
        NdArray rows(Shape{gh * gw, kFusedChannels});
        std::copy(apa.fused.data(), apa.fused.data() + apa.fused.size(), rows.data());
        const NdArray m = forward(model.mask_layer, rows);
        std::copy(m.data(), m.data() + m.size(), mask_grid.data());
    }
    const NdArray mask_field = upsample_bilinear(mask_grid, h, w);
    NdArray mask_px(Shape{h, w});
    for (std::size_t i = 0; i < h * w; ++i) mask_px[i] = mask_field[i];

    const NdArray m_target = splat_motion(motion, 0.5);
    const NdArray m_half = scale_motion(m_target, 1.0, 2.0);
    NdArray flow_prev = upsample_bilinear(m_half, h, w);
    NdArray flow_next = flow_prev;
    for (std::size_t i = 0; i < flow_prev.size(); ++i) {
        flow_prev[i] *= -cell;
        flow_next[i] *= cell;
    }
    const NdArray fused = warp_fuse(first, last, FlowMask{flow_prev, flow_next, mask_px});
    const AppearanceFeatures apf = extract_appearance(fused, model.appearance);
    const NdArray appearance_px = upsample_bilinear(
        appearance_channels(att.refined, model.appearance.appearance_scale), h, w);

    RefineSample s;
    s.rows = refine_inputs(fused, upsample_bilinear(apf.l1, h, w), appearance_px);
    s.targets = NdArray(Shape{h * w, 3});
    for (std::size_t i = 0; i < h * w * 3; ++i) {
        s.targets[i] = (middle[i] - fused[i]) / 255.0;
    }
    return s;
}

inline double refine_sgd_pass(MlpModel& net, const RefineSample& s, double lr, bool train) {
    const NdArray pred = forward(net, s.rows);
    const std::size_t rows = pred.shape().dims[0];
    double loss = 0.0;
    NdArray up(pred.shape());
    // channel sums per pixel, averaged over pixel rows
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double diff = pred[i] - s.targets[i];
        loss += diff * diff / static_cast<double>(rows);
        up[i] = 2.0 * diff / static_cast<double>(rows);
    }
    if (train) {
        MlpGradients g = grad(net, s.rows, up);
        sgd_step(net, g, lr);
    }
    return loss;
}

}  // namespace detail

struct InterpTrainingReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Trains the refine net on (first, middle, last) windows; frames come in as
// [0,255] doubles. The attention projections and mask stay at their
// deterministic initialization.
inline InterpTrainingReport train_interpolation(const std::vector<FrameSequence>& data,
                                                InterpolationModel& model, const PipelineConfig& cfg,
                                                std::size_t steps, std::uint64_t stage_tag) {
    std::vector<detail::RefineSample> samples;
    for (const FrameSequence& fs : data) {
        for (std::size_t c = 1; c + 1 < fs.frames; c += 2) {
            samples.push_back(detail::make_refine_sample(frame_to_real(fs, c - 1), frame_to_real(fs, c),
                                                         frame_to_real(fs, c + 1), model));
        }
    }
    if (samples.empty()) throw config_error("stage3: dataset has no 3-frame windows");

    InterpTrainingReport rep;
    for (const auto& s : samples) {
        rep.initial_loss += detail::refine_sgd_pass(model.refine_net.net, s, 0.0, false);
    }
    rep.initial_loss /= static_cast<double>(samples.size());

    Rng rng = Rng::split(cfg.seed, {stage_tag, 0});
    for (std::size_t step = 0; step < steps; ++step) {
        const auto& s = samples[rng.uniform_int(samples.size())];
        const double loss =
            detail::refine_sgd_pass(model.refine_net.net, s, cfg.interp_learning_rate, true);
        if (!std::isfinite(loss) || loss > 1e6) {
            throw divergence_error("stage3 interpolation: loss " + std::to_string(loss) +
                                   " at step " + std::to_string(step));
        }
    }
    double fin = 0.0;
    for (const auto& s : samples) {
        fin += detail::refine_sgd_pass(model.refine_net.net, s, 0.0, false);
    }
    rep.final_loss = fin / static_cast<double>(samples.size());
    return rep;
}

// ---------------------------------------------------------------------------
// Noiseless end-to-end evaluation (used by stage 4 and tests)
// ---------------------------------------------------------------------------

// Runs the noiseless pipeline with keyframes at every `stride`-th frame plus
// the last one, and returns the mean video MSE over the dataset.
inline double noiseless_pipeline_mse(const std::vector<FrameSequence>& data,
                                     const ModelBundle& bundle, std::size_t stride,
                                     std::size_t keyframe_k) {
    if (stride == 0) throw std::invalid_argument("noiseless_pipeline_mse: stride must be positive");
    double acc = 0.0;
    for (const FrameSequence& fs : data) {
        const VariationalLatent lat = extract_features(fs, bundle.encoder);
        KeyframePlan plan;
        plan.latent_dim = lat.dim();
        plan.k = keyframe_k;
        for (std::size_t f = 0; f < fs.frames; f += stride) plan.keyframes.push_back(f);
        if (plan.keyframes.back() != fs.frames - 1) plan.keyframes.push_back(fs.frames - 1);
        const KeyframePayload payload = build_payload(lat, plan);
        ReceivedPayload received{payload.first_latent, payload.residuals};
        const ReconstructedKeyframes recon =
            reconstruct_keyframes(received, bundle.decoder, fs.height, fs.width);
        const FrameSequence video =
            interpolate_video(recon.frames, plan.keyframes, fs.frames, bundle.interp);
        acc += mse(fs, video);
    }
    return acc / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Stage 4: joint decoder + interpolation fine-tune (encoder, denoisers frozen)
// ---------------------------------------------------------------------------

struct FinetuneReport {
    double mse_before = 0.0;
    double mse_after = 0.0;
};

inline FinetuneReport finetune(const std::vector<FrameSequence>& data, ModelBundle& bundle,
                               const PipelineConfig& cfg) {
    FinetuneReport rep;
    rep.mse_before = noiseless_pipeline_mse(data, bundle, 2, cfg.keyframe_k);

    // frozen-encoder latents and pixel targets
    const NdArray pool = detail::frame_pool(data);
    const std::size_t n = pool.shape().dims[0];
    const std::size_t d = cfg.latent_dim;
    NdArray latents(Shape{n, d});
    {
        std::size_t r = 0;
        for (const FrameSequence& fs : data) {
            const VariationalLatent lat = extract_features(fs, bundle.encoder);
            for (std::size_t f = 0; f < fs.frames; ++f, ++r) {
                for (std::size_t j = 0; j < d; ++j) latents[r * d + j] = lat.mu[f * d + j];
            }
        }
    }

    const DecoderNet best_dec = bundle.decoder;
    const RefineNet best_refine = bundle.interp.refine_net;
    double best_mse = rep.mse_before;

    Rng rng = Rng::split(cfg.seed, {4, 0});
    const std::size_t rebuild_every = std::max<std::size_t>(cfg.stage4_steps / 4, 1);
    std::vector<detail::RefineSample> samples;
    auto rebuild_samples = [&]() {
        samples.clear();
        for (const FrameSequence& fs : data) {
            const VariationalLatent lat = extract_features(fs, bundle.encoder);
            for (std::size_t c = 1; c + 1 < fs.frames; c += 2) {
                // decoded endpoints so refinement adapts to decoder artifacts
                const NdArray za = lat.mu_row(c - 1);
                const NdArray zb = lat.mu_row(c + 1);
                ReceivedPayload rp;
                rp.first_latent = za;
                const ReconstructedKeyframes ra =
                    reconstruct_keyframes(rp, bundle.decoder, fs.height, fs.width);
                rp.first_latent = zb;
                const ReconstructedKeyframes rb =
                    reconstruct_keyframes(rp, bundle.decoder, fs.height, fs.width);
                samples.push_back(detail::make_refine_sample(ra.frames[0], frame_to_real(fs, c),
                                                             rb.frames[0], bundle.interp));
            }
        }
    };
    rebuild_samples();

    for (std::size_t step = 0; step < cfg.stage4_steps; ++step) {
        if (step > 0 && step % rebuild_every == 0) rebuild_samples();
        if (step % 2 == 0) {
            // decoder pass on (mu -> frame) pairs
            std::vector<std::size_t> idx(cfg.batch_size);
            for (std::size_t& i : idx) i = rng.uniform_int(n);
            NdArray zb(Shape{idx.size(), d});
            NdArray xb(Shape{idx.size(), pool.shape().dims[1]});
            for (std::size_t r = 0; r < idx.size(); ++r) {
                std::copy(latents.data() + idx[r] * d, latents.data() + (idx[r] + 1) * d,
                          zb.data() + r * d);
                std::copy(pool.data() + idx[r] * pool.shape().dims[1],
                          pool.data() + (idx[r] + 1) * pool.shape().dims[1],
                          xb.data() + r * pool.shape().dims[1]);
            }
            const NdArray xhat = forward(bundle.decoder.net, zb);
            NdArray up(xhat.shape());
            double loss = 0.0;
            for (std::size_t i = 0; i < xhat.size(); ++i) {
                const double diff = xhat[i] - xb[i];
                loss += diff * diff / static_cast<double>(xhat.size());
                up[i] = 2.0 * diff / static_cast<double>(xhat.size());
            }
            if (!std::isfinite(loss) || loss > 1e6) {
                throw divergence_error("stage4 finetune: decoder loss diverged at step " +
                                       std::to_string(step));
            }
            MlpGradients g = grad(bundle.decoder.net, zb, up);
            sgd_step(bundle.decoder.net, g, cfg.learning_rate);
        } else {
            const auto& s = samples[rng.uniform_int(samples.size())];
            const double loss = detail::refine_sgd_pass(bundle.interp.refine_net.net, s,
                                                        cfg.interp_learning_rate, true);
            if (!std::isfinite(loss) || loss > 1e6) {
                throw divergence_error("stage4 finetune: interpolation loss diverged at step " +
                                       std::to_string(step));
            }
        }
    }

    const double tuned = noiseless_pipeline_mse(data, bundle, 2, cfg.keyframe_k);
    if (tuned <= best_mse) {
        rep.mse_after = tuned;
    } else {
        // keep the better snapshot rather than regressing
        bundle.decoder = best_dec;
        bundle.interp.refine_net = best_refine;
        rep.mse_after = best_mse;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Full training pipeline with checkpointing
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string out_dir = "bundle";
    int only_stage = 0;  // 0 = all stages
    bool resume = false;
};

inline InterpolationModel make_interp_from_config(const PipelineConfig& cfg) {
    return make_interpolation_model(effective_window(cfg), cfg.refine_hidden,
                                    Rng::split(cfg.seed, {3, 7}).next_u64());
}

inline ModelBundle load_bundle(const PipelineConfig& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    ModelBundle b;
    b.schedule = NoiseSchedule::linear(cfg.schedule_steps, cfg.beta1, cfg.beta_t);
    b.encoder = load_model((fs::path(dir) / "encoder.ckpt").string(), Activation::tanh,
                           Activation::identity);
    b.decoder.net = load_model((fs::path(dir) / "decoder.ckpt").string(), Activation::tanh,
                               Activation::sigmoid);
    b.eps_z = load_denoiser((fs::path(dir) / "eps_z.ckpt").string(), "eps_z", b.schedule,
                            Activation::tanh, Activation::identity);
    b.eps_h = load_denoiser((fs::path(dir) / "eps_h.ckpt").string(), "eps_h", b.schedule,
                            Activation::tanh, Activation::identity);
    b.interp = make_interp_from_config(cfg);
    b.interp.refine_net.net = load_model((fs::path(dir) / "refine.ckpt").string(), Activation::tanh,
                                         Activation::identity);
    b.interp.mask_layer = load_model((fs::path(dir) / "mask.ckpt").string(), Activation::identity,
                                     Activation::sigmoid);
    return b;
}

// Runs the requested stages, loading earlier results from out_dir. Stage RNG
// streams derive from (seed, stage), so a resumed run reproduces an
// uninterrupted one bit for bit.
inline ModelBundle run_training_pipeline(const PipelineConfig& cfg, const TrainOptions& opt,
                                         std::ostream& log) {
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    const auto path = [&](const char* name) { return (fs::path(opt.out_dir) / name).string(); };
    const auto have = [&](const char* name) { return fs::exists(fs::path(opt.out_dir) / name); };
    auto runs = [&](int stage) {
        if (opt.only_stage != 0) return opt.only_stage == stage;
        return true;
    };

    const std::vector<FrameSequence> data = gen_synthetic(cfg.dataset, cfg.seed);
    ModelBundle bundle;
    bundle.schedule = NoiseSchedule::linear(cfg.schedule_steps, cfg.beta1, cfg.beta_t);

    // stage 1
    if (runs(1) && !(opt.resume && have("encoder.ckpt") && have("decoder.ckpt"))) {
        AutoencoderResult ae = train_autoencoder(data, cfg);
        log << "stage1: loss " << ae.initial_loss << " -> " << ae.final_loss << "\n";
        bundle.encoder = std::move(ae.encoder);
        bundle.decoder = std::move(ae.decoder);
        save_model(path("encoder.ckpt"), bundle.encoder);
        save_model(path("decoder.ckpt"), bundle.decoder.net);
    } else {
        bundle.encoder = load_model(path("encoder.ckpt"), Activation::tanh, Activation::identity);
        bundle.decoder.net = load_model(path("decoder.ckpt"), Activation::tanh, Activation::sigmoid);
        log << "stage1: loaded checkpoints\n";
    }

    // stage 2
    if (runs(2) && !(opt.resume && have("eps_z.ckpt") && have("eps_h.ckpt"))) {
        DenoiserTrainingResult dn = train_denoisers(first_frame_latents(data, bundle.encoder), cfg,
                                                    bundle.schedule);
        log << "stage2: eps_z loss " << dn.report_z.initial_loss << " -> " << dn.report_z.final_loss
            << ", eps_h loss " << dn.report_h.initial_loss << " -> " << dn.report_h.final_loss << "\n";
        bundle.eps_z = std::move(dn.eps_z);
        bundle.eps_h = std::move(dn.eps_h);
        save_denoiser(path("eps_z.ckpt"), bundle.eps_z, "eps_z", bundle.schedule);
        save_denoiser(path("eps_h.ckpt"), bundle.eps_h, "eps_h", bundle.schedule);
    } else {
        bundle.eps_z = load_denoiser(path("eps_z.ckpt"), "eps_z", bundle.schedule, Activation::tanh,
                                     Activation::identity);
        bundle.eps_h = load_denoiser(path("eps_h.ckpt"), "eps_h", bundle.schedule, Activation::tanh,
                                     Activation::identity);
        log << "stage2: loaded checkpoints\n";
    }

    // stage 3
    bundle.interp = make_interp_from_config(cfg);
    if (runs(3) && !(opt.resume && have("refine.ckpt") && have("mask.ckpt"))) {
        InterpTrainingReport ir = train_interpolation(data, bundle.interp, cfg, cfg.stage3_steps, 3);
        log << "stage3: residual loss " << ir.initial_loss << " -> " << ir.final_loss << "\n";
        save_model(path("refine.ckpt"), bundle.interp.refine_net.net);
        save_model(path("mask.ckpt"), bundle.interp.mask_layer);
    } else {
        bundle.interp.refine_net.net =
            load_model(path("refine.ckpt"), Activation::tanh, Activation::identity);
        bundle.interp.mask_layer = load_model(path("mask.ckpt"), Activation::identity,
                                              Activation::sigmoid);
        log << "stage3: loaded checkpoints\n";
    }

    // stage 4
    if (runs(4) && !(opt.resume && have("finetune.done"))) {
        FinetuneReport fr = finetune(data, bundle, cfg);
        log << "stage4: end-to-end mse " << fr.mse_before << " -> " << fr.mse_after << "\n";
        save_model(path("decoder.ckpt"), bundle.decoder.net);
        save_model(path("refine.ckpt"), bundle.interp.refine_net.net);
        detail::write_file_bytes(path("finetune.done"), "ok\n");
    } else if (opt.resume && have("finetune.done")) {
        log << "stage4: loaded checkpoints\n";
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class DenoiserKind { sd, msd, psd, none, mmse_only };

inline const char* denoiser_name(DenoiserKind k) {
    switch (k) {
        case DenoiserKind::sd: return "sd";
        case DenoiserKind::msd: return "msd";
        case DenoiserKind::psd: return "psd";
        case DenoiserKind::none: return "none";
        case DenoiserKind::mmse_only: return "mmse-only";
    }
    return "?";
}

inline DenoiserKind denoiser_from_name(const std::string& s) {
    if (s == "sd") return DenoiserKind::sd;
    if (s == "msd") return DenoiserKind::msd;
    if (s == "psd") return DenoiserKind::psd;
    if (s == "none") return DenoiserKind::none;
    if (s == "mmse-only") return DenoiserKind::mmse_only;
    throw config_error("unknown denoiser '" + s + "' (sd|msd|psd|none|mmse-only)");
}

struct TrialRow {
    double snr_db = 0.0;
    DenoiserKind kind = DenoiserKind::sd;
    double t_max_s = 0.0;
    bool feasible = true;
    double mse = 0.0;
    double psnr_db = 0.0;
    double latent_frechet = 0.0;
    std::uint64_t trial_seed = 0;
    std::size_t trial = 0;
    std::size_t keyframe_count = 0;
    double t_com = 0.0;
    double t_exe = 0.0;
    double true_gain = 0.0;
    double est_gain = 0.0;
};

struct ExperimentResult {
    std::string config;
    std::vector<TrialRow> rows;
};

// Guidance kept stable under the discretized update: the per-step pull of the
// likelihood term scales with 2 h^2, so the configured weight is normalized by
// 2 (1 + h^2) before entering the chain.
inline GuidanceWeights gain_scaled_guidance(double base, double h) {
    return GuidanceWeights::constant(base / (2.0 * (1.0 + h * h)));
}

inline TrialRow run_trial(const PipelineConfig& cfg, const ModelBundle& bundle,
                          const FrameSequence& clip, DenoiserKind kind, double snr_db,
                          std::size_t trial) {
    LinkBudget link = cfg.link;
    link.snr_db = snr_db;
    const double sigma2 = noise_power(link, cfg.channel.omega);
    const std::uint64_t snr_key =
        static_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(snr_db * 1000.0)));

    TrialRow row;
    row.snr_db = snr_db;
    row.kind = kind;
    row.t_max_s = cfg.t_max_s;
    row.trial = trial;

    // the gain stream depends only on the trial so SNR sweeps share fading
    Rng rng_gain = Rng::split(cfg.seed, {0x6761696e /*"gain"*/, trial});
    row.trial_seed = Rng::split(cfg.seed, {0x74726c /*"trl"*/, trial}).next_u64();
    const double h = sample_gain(cfg.channel, rng_gain);
    row.true_gain = h;

    const VariationalLatent lat = extract_features(clip, bundle.encoder);
    KeyframePlan plan;
    try {
        plan = select_keyframes(lat, cfg.t_max_s, link, h, sigma2, cfg.compute, cfg.keyframe_k,
                                cfg.priority_raw_cosine ? SelectionPriority::raw_cosine
                                                        : SelectionPriority::sparse_residual_norm);
    } catch (const infeasible_error&) {
        row.feasible = false;
        row.mse = std::numeric_limits<double>::quiet_NaN();
        row.psnr_db = std::numeric_limits<double>::quiet_NaN();
        row.latent_frechet = std::numeric_limits<double>::quiet_NaN();
        return row;
    }
    row.keyframe_count = plan.keyframes.size();
    row.t_com = comm_time(payload_dims(plan), rate(link, h, sigma2));
    row.t_exe = exec_time(cfg.compute, row.t_com);

    const KeyframePayload payload = build_payload(lat, plan);
    const ChannelRealization real{h, sigma2};

    Rng rng_noise = Rng::split(cfg.seed, {0x6e6f697a /*"noiz"*/, snr_key, trial});
    const NdArray z1p = transmit(payload.first_latent, real, rng_noise);
    std::vector<NdArray> residual_obs;
    for (const SparseDiff& sd : payload.residuals) {
        NdArray v(Shape{sd.values.size()});
        for (std::size_t i = 0; i < sd.values.size(); ++i) v[i] = sd.values[i];
        residual_obs.push_back(transmit(v, real, rng_noise));
    }
    NdArray pilot(Shape{cfg.pilot_length});
    for (std::size_t i = 0; i < cfg.pilot_length; ++i) pilot[i] = i % 2 == 0 ? 1.0 : -1.0;
    const NdArray rpilot = transmit(pilot, real, rng_noise);

    Rng rng_den = Rng::split(cfg.seed, {0x64656e6f /*"deno"*/, snr_key, trial});
    NdArray z1_hat;
    double h_used = h;
    switch (kind) {
        case DenoiserKind::sd:
            z1_hat = sd_denoise(z1p, h, bundle.eps_z, bundle.schedule,
                                gain_scaled_guidance(cfg.zeta_z, h), rng_den);
            break;
        case DenoiserKind::msd: {
            h_used = mmse_estimate_gain(pilot, rpilot, sigma2);
            z1_hat = sd_denoise(z1p, h_used, bundle.eps_z, bundle.schedule,
                                gain_scaled_guidance(cfg.zeta_z, h_used), rng_den);
            break;
        }
        case DenoiserKind::psd: {
            // the h-branch likelihood gradient scales with the latent norm,
            // hence the 1/d normalization
            const double zh = cfg.psd_zeta_h / static_cast<double>(z1p.size());
            const PsdResult pr = psd_denoise(z1p, bundle.eps_z, bundle.eps_h, bundle.schedule,
                                             GuidanceWeights::constant(cfg.psd_zeta_z),
                                             GuidanceWeights::constant(zh),
                                             RegParams{cfg.reg_alpha_step, cfg.reg_phi}, rng_den);
            z1_hat = pr.z;
            h_used = pr.h_hat;
            break;
        }
        case DenoiserKind::none:
            z1_hat = z1p;
            break;
        case DenoiserKind::mmse_only:
            z1_hat = mmse_equalize(z1p, h, sigma2, link.power);
            break;
    }
    row.est_gain = h_used;

    ReceivedPayload received;
    received.first_latent = z1_hat;
    for (std::size_t i = 0; i < payload.residuals.size(); ++i) {
        SparseDiff sd = payload.residuals[i];
        NdArray vals = kind == DenoiserKind::none
                           ? residual_obs[i]
                           : mmse_equalize(residual_obs[i], h_used, sigma2, link.power);
        for (std::size_t j = 0; j < sd.values.size(); ++j) sd.values[j] = vals[j];
        received.residuals.push_back(std::move(sd));
    }

    const ReconstructedKeyframes recon =
        reconstruct_keyframes(received, bundle.decoder, clip.height, clip.width);
    const FrameSequence video =
        interpolate_video(recon.frames, plan.keyframes, clip.frames, bundle.interp);

    const MetricReport met = score(clip, video);
    row.mse = met.mse;
    row.psnr_db = met.psnr_db;
    row.latent_frechet = latent_frechet(lat.mu, extract_features(video, bundle.encoder).mu);
    return row;
}

// Sweeps (snr, trial) pairs, fanning trials out across workers. Rows come back
// sorted by (snr, trial); identical (config, seed) give identical rows.
inline ExperimentResult run_experiment(const PipelineConfig& cfg, const ModelBundle& bundle,
                                       DenoiserKind kind, const std::vector<double>& snrs,
                                       std::size_t trials) {
    ExperimentResult res;
    res.config = config_snapshot(cfg);
    if (trials == 0 || snrs.empty()) return res;

    const std::vector<FrameSequence> data = gen_synthetic(cfg.dataset, cfg.seed);
    const std::size_t total = snrs.size() * trials;
    res.rows.resize(total);

    std::size_t workers = cfg.threads != 0 ? cfg.threads : std::thread::hardware_concurrency();
    if (workers == 0) workers = 1;
    workers = std::min(workers, total);

    std::vector<std::thread> pool;
    for (std::size_t wk = 0; wk < workers; ++wk) {
        pool.emplace_back([&, wk]() {
            for (std::size_t job = wk; job < total; job += workers) {
                const std::size_t si = job / trials;
                const std::size_t trial = job % trials;
                const FrameSequence& clip = data[trial % data.size()];
                res.rows[job] = run_trial(cfg, bundle, clip, kind, snrs[si], trial);
            }
        });
    }
    for (std::thread& t : pool) t.join();
    return res;
}

inline std::string result_csv(const ExperimentResult& res) {
    std::string out = "snr_db,denoiser,t_max_s,mse,psnr_db,latent_frechet,seed\n";
    for (const TrialRow& r : res.rows) {
        out += format_double(r.snr_db);
        out += ",";
        out += denoiser_name(r.kind);
        out += ",";
        out += format_double(r.t_max_s);
        out += ",";
        out += format_double(r.mse);
        out += ",";
        out += format_double(r.psnr_db);
        out += ",";
        out += format_double(r.latent_frechet);
        out += ",";
        out += format_u64(r.trial_seed);
        out += "\n";
    }
    return out;
}

// Wall-clock measurement of the per-stage compute times on this machine; the
// result is meant to be frozen into the configuration.
inline ComputeTimeModel measure_compute_times(const PipelineConfig& cfg, const ModelBundle& bundle) {
    using clock = std::chrono::steady_clock;
    const std::vector<FrameSequence> data = gen_synthetic(cfg.dataset, cfg.seed);
    const FrameSequence& clip = data.front();
    ComputeTimeModel ct;

    auto timed = [](auto&& fn) {
        const auto t0 = clock::now();
        fn();
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    VariationalLatent lat;
    ct.t_fe = timed([&]() { lat = extract_features(clip, bundle.encoder); });
    LinkBudget link = cfg.link;
    KeyframePlan plan;
    ct.t_ks = timed([&]() {
        plan = select_keyframes(lat, std::numeric_limits<double>::infinity(), link, 1.0,
                                noise_power(link, cfg.channel.omega), ComputeTimeModel{},
                                cfg.keyframe_k);
    });
    const KeyframePayload payload = build_payload(lat, plan);
    Rng rng(cfg.seed);
    NdArray z1_hat;
    ct.t_sd = timed([&]() {
        z1_hat = sd_denoise(payload.first_latent, 1.0, bundle.eps_z, bundle.schedule,
                            gain_scaled_guidance(cfg.zeta_z, 1.0), rng);
    });
    ReceivedPayload received{payload.first_latent, payload.residuals};
    ReconstructedKeyframes recon;
    ct.t_sr = timed([&]() {
        recon = reconstruct_keyframes(received, bundle.decoder, clip.height, clip.width);
    });
    ct.t_fi = timed([&]() {
        interpolate_video(recon.frames, plan.keyframes, clip.frames, bundle.interp);
    });
    return ct;
}

}  // namespace sdgc
