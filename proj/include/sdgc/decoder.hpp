#pragma once

// Semantic decoder: keyframe reconstruction from received payloads and
// attention-based interpolation of the remaining frames.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdgc/encoder.hpp"
#include "sdgc/errors.hpp"
#include "sdgc/frames.hpp"
#include "sdgc/ndarray.hpp"
#include "sdgc/nn.hpp"

namespace sdgc {

// ---------------------------------------------------------------------------
// Keyframe reconstruction
// ---------------------------------------------------------------------------

// Decoder network: latent d -> H*W*C in [0,1] via sigmoid, denormalized to
// [0,255] by the reconstruction step.
struct DecoderNet {
    MlpModel net;
};

inline DecoderNet make_decoder(std::vector<std::size_t> widths, std::uint64_t seed) {
    DecoderNet d;
    d.net = make_mlp(std::move(widths), Activation::tanh, Activation::sigmoid, seed);
    return d;
}

// Denoised payload as handed to the receiver-side reconstruction.
struct ReceivedPayload {
    NdArray first_latent;
    std::vector<SparseDiff> residuals;  // values post-equalization/denoising
};

struct ReconstructedKeyframes {
    std::vector<NdArray> latents;  // chained latent per keyframe
    std::vector<NdArray> frames;   // (H, W, C) doubles in [0, 255]
};

// Recovers latents by chaining sparse residuals onto the first keyframe's
// latent, then decodes each through the decoder network.
inline ReconstructedKeyframes reconstruct_keyframes(const ReceivedPayload& payload,
                                                    const DecoderNet& dec, std::size_t height,
                                                    std::size_t width, std::size_t channels = 3) {
    if (payload.first_latent.size() == 0) {
        throw std::invalid_argument("reconstruct_keyframes: missing base latent");
    }
    const std::size_t d = payload.first_latent.size();
    if (dec.net.input_width() != d) {
        throw std::invalid_argument("reconstruct_keyframes: decoder input width " +
                                    std::to_string(dec.net.input_width()) + " != latent dim " +
                                    std::to_string(d));
    }
    if (dec.net.output_width() != height * width * channels) {
        throw std::invalid_argument("reconstruct_keyframes: decoder output width " +
                                    std::to_string(dec.net.output_width()) + " != H*W*C");
    }

    ReconstructedKeyframes out;
    NdArray latent = payload.first_latent;
    out.latents.push_back(latent);
    for (const SparseDiff& sd : payload.residuals) {
        if (sd.dim != d) {
            throw std::invalid_argument("reconstruct_keyframes: residual dim " + std::to_string(sd.dim) +
                                        " != latent dim " + std::to_string(d));
        }
        const NdArray dense = densify(sd);
        for (std::size_t i = 0; i < d; ++i) latent[i] += dense[i];
        out.latents.push_back(latent);
    }
    for (const NdArray& z : out.latents) {
        const NdArray unit = forward(dec.net, z);
        NdArray frame(Shape{height, width, channels});
        for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = 255.0 * unit[i];
        out.frames.push_back(std::move(frame));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Appearance features
// ---------------------------------------------------------------------------

// Multi-scale appearance maps. l^k lives on the (H/2^k, W/2^k) grid with
// 2^k * base_channels channels; `fused` is the cross-scale map on the
// coarsest grid that attention operates on.
//
// Fused channel layout (9 channels):
//   0..3  scaled patch-mean r, g, b, luma in [0, appearance_scale]
//   4     squared norm of channels 0..3
//   5, 6  cell coordinates x, y
//   7     x^2 + y^2
//   8     constant 1
// Channels 4 and 7 let fixed query/key projections turn dot-product scores
// into negative squared distances, so exact matches always win.
struct AppearanceFeatures {
    NdArray l0, l1, l2;  // per-scale maps
    NdArray fused;       // (H/4, W/4, 9)
};

struct AppearanceConfig {
    std::size_t base_channels = 4;   // channels of l0; scale k has 2^k times more
    double appearance_scale = 10.0;  // weight of appearance distance in attention
    double position_scale2 = 60.0;   // weight (gamma^2) of positional distance
    std::uint64_t seed = 17;         // seeds the texture projections of l1/l2
};

inline constexpr std::size_t kFusedChannels = 9;

namespace detail {

inline double luma(double r, double g, double b) {
    return 0.299 * r + 0.587 * g + 0.114 * b;
}

// Patch features at stride `cell`: mean r,g,b,luma first, then seeded random
// projections of the raw patch up to `channels`.
inline NdArray patch_features(const NdArray& frame, std::size_t cell, std::size_t channels,
                              std::uint64_t seed) {
    const std::size_t h = frame.shape().dims[0];
    const std::size_t w = frame.shape().dims[1];
    const std::size_t c = frame.shape().dims[2];
    if (h % cell != 0 || w % cell != 0) {
        throw std::invalid_argument("patch_features: frame extents must be divisible by " +
                                    std::to_string(cell));
    }
    const std::size_t gh = h / cell;
    const std::size_t gw = w / cell;
    const std::size_t patch = cell * cell * c;

    // fixed projection bank for the texture channels
    std::size_t extra = channels > 4 ? channels - 4 : 0;
    std::vector<double> proj(extra * patch);
    if (extra > 0) {
        Rng rng = Rng::split(seed, {0x706a /*"pj"*/, cell});
        for (double& v : proj) v = rng.normal() / std::sqrt(static_cast<double>(patch));
    }

    NdArray out(Shape{gh, gw, channels});
    std::vector<double> buf(patch);
    for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
            double mr = 0.0, mg = 0.0, mb = 0.0;
            std::size_t bi = 0;
            for (std::size_t py = 0; py < cell; ++py) {
                for (std::size_t px = 0; px < cell; ++px) {
                    const std::size_t y = gy * cell + py;
                    const std::size_t x = gx * cell + px;
                    const double r = frame[(y * w + x) * c + 0] / 255.0;
                    const double g = frame[(y * w + x) * c + 1] / 255.0;
                    const double b = frame[(y * w + x) * c + 2] / 255.0;
                    mr += r;
                    mg += g;
                    mb += b;
                    buf[bi++] = r;
                    buf[bi++] = g;
                    buf[bi++] = b;
                }
            }
            const double inv = 1.0 / static_cast<double>(cell * cell);
            mr *= inv;
            mg *= inv;
            mb *= inv;
            double* dst = out.data() + (gy * gw + gx) * channels;
            dst[0] = mr;
            dst[1] = mg;
            dst[2] = mb;
            if (channels > 3) dst[3] = luma(mr, mg, mb);
            for (std::size_t e = 0; e < extra; ++e) {
                double acc = 0.0;
                const double* p = proj.data() + e * patch;
                for (std::size_t i = 0; i < patch; ++i) acc += p[i] * buf[i];
                dst[4 + e] = acc;
            }
        }
    }
    return out;
}

}  // namespace detail

inline AppearanceFeatures extract_appearance(const NdArray& frame, const AppearanceConfig& cfg) {
    if (frame.shape().rank() != 3) {
        throw std::invalid_argument("extract_appearance: frame must be (H, W, C)");
    }
    AppearanceFeatures f;
    f.l0 = detail::patch_features(frame, 1, cfg.base_channels, cfg.seed);
    f.l1 = detail::patch_features(frame, 2, 2 * cfg.base_channels, cfg.seed);
    f.l2 = detail::patch_features(frame, 4, 4 * cfg.base_channels, cfg.seed);

    const std::size_t gh = f.l2.shape().dims[0];
    const std::size_t gw = f.l2.shape().dims[1];
    f.fused = NdArray(Shape{gh, gw, kFusedChannels});
    // cross-scale fusion: average of the per-scale mean-color channels,
    // scaled for the attention metric, plus positional channels
    const std::size_t c0 = cfg.base_channels;
    const std::size_t c1 = 2 * cfg.base_channels;
    const std::size_t c2 = 4 * cfg.base_channels;
    for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
            double app[4] = {0, 0, 0, 0};
            for (std::size_t ch = 0; ch < 4; ++ch) {
                // pool the two finer scales over the 4x4 cell
                double a0 = 0.0;
                for (std::size_t py = 0; py < 4; ++py) {
                    for (std::size_t px = 0; px < 4; ++px) {
                        a0 += f.l0[((gy * 4 + py) * (gw * 4) + gx * 4 + px) * c0 + ch];
                    }
                }
                a0 /= 16.0;
                double a1 = 0.0;
                for (std::size_t py = 0; py < 2; ++py) {
                    for (std::size_t px = 0; px < 2; ++px) {
                        a1 += f.l1[((gy * 2 + py) * (gw * 2) + gx * 2 + px) * c1 + ch];
                    }
                }
                a1 /= 4.0;
                const double a2 = f.l2[(gy * gw + gx) * c2 + ch];
                app[ch] = cfg.appearance_scale * (a0 + a1 + a2) / 3.0;
            }
            double* dst = f.fused.data() + (gy * gw + gx) * kFusedChannels;
            double n2 = 0.0;
            for (std::size_t ch = 0; ch < 4; ++ch) {
                dst[ch] = app[ch];
                n2 += app[ch] * app[ch];
            }
            const double x = static_cast<double>(gx);
            const double y = static_cast<double>(gy);
            dst[4] = n2;
            dst[5] = x;
            dst[6] = y;
            dst[7] = x * x + y * y;
            dst[8] = 1.0;
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// Inter-frame attention and motion
// ---------------------------------------------------------------------------

struct AttentionProjections {
    NdArray mq, mk, mv;  // (C, C) each; q = a * M_Q etc.
};

// Fixed projections matched to the fused-feature layout: query/key pairs
// evaluate const - s_a^2 ||a_i - a_j||^2 - gamma^2 ||p_i - p_j||^2, values
// carry only the appearance channels.
inline AttentionProjections make_projections(double position_scale2) {
    const std::size_t c = kFusedChannels;
    AttentionProjections p;
    p.mq = NdArray(Shape{c, c});
    p.mk = NdArray(Shape{c, c});
    p.mv = NdArray(Shape{c, c});
    auto set = [c](NdArray& m, std::size_t row, std::size_t col, double v) { m[row * c + col] = v; };
    const double g2 = position_scale2;
    // query: (2a, -1*, 2 g2 x, 2 g2 y, -g2, 0) pulling the constants from channel 8
    for (std::size_t ch = 0; ch < 4; ++ch) set(p.mq, ch, ch, 2.0);
    set(p.mq, 8, 4, -1.0);
    set(p.mq, 5, 5, 2.0 * g2);
    set(p.mq, 6, 6, 2.0 * g2);
    set(p.mq, 8, 7, -g2);
    // key: (a, ||a||^2, x, y, x^2+y^2, 0)
    for (std::size_t ch = 0; ch < 4; ++ch) set(p.mk, ch, ch, 1.0);
    set(p.mk, 4, 4, 1.0);
    set(p.mk, 5, 5, 1.0);
    set(p.mk, 6, 6, 1.0);
    set(p.mk, 7, 7, 1.0);
    // value: appearance channels only
    for (std::size_t ch = 0; ch < 4; ++ch) set(p.mv, ch, ch, 1.0);
    return p;
}

struct AttentionResult {
    NdArray refined;  // \tilde A: A_i with blended appearance, same shape
    NdArray scores;   // (H, W, W*W) softmax rows over window offsets
};

// Per position (m,n): Q from A_i, K/V from the clamped WxW neighborhood of
// A_j; S = softmax(QK^T / sqrt(C)); refined = A_i + S V.
inline AttentionResult interframe_attention(const NdArray& ai, const NdArray& aj, int window,
                                            const AttentionProjections& proj) {
    if (ai.shape() != aj.shape() || ai.shape().rank() != 3) {
        throw std::invalid_argument("interframe_attention: feature maps must share an (H, W, C) shape");
    }
    if (window < 1 || window % 2 == 0) {
        throw std::invalid_argument("interframe_attention: window must be odd and positive");
    }
    const std::size_t h = ai.shape().dims[0];
    const std::size_t w = ai.shape().dims[1];
    const std::size_t c = ai.shape().dims[2];
    if (static_cast<std::size_t>(window) > h || static_cast<std::size_t>(window) > w) {
        throw std::invalid_argument("interframe_attention: window " + std::to_string(window) +
                                    " exceeds feature grid " + std::to_string(h) + "x" + std::to_string(w));
    }
    if (proj.mq.shape() != Shape{c, c} || proj.mk.shape() != Shape{c, c} ||
        proj.mv.shape() != Shape{c, c}) {
        throw std::invalid_argument("interframe_attention: projections must be (C, C)");
    }

    const int r = window / 2;
    const std::size_t w2 = static_cast<std::size_t>(window) * static_cast<std::size_t>(window);
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));

    // precompute key/value maps of A_j
    NdArray keys(Shape{h, w, c});
    NdArray vals(Shape{h, w, c});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double* a = aj.data() + (y * w + x) * c;
            double* kd = keys.data() + (y * w + x) * c;
            double* vd = vals.data() + (y * w + x) * c;
            for (std::size_t o = 0; o < c; ++o) {
                double acck = 0.0, accv = 0.0;
                for (std::size_t i = 0; i < c; ++i) {
                    acck += a[i] * proj.mk[i * c + o];
                    accv += a[i] * proj.mv[i * c + o];
                }
                kd[o] = acck;
                vd[o] = accv;
            }
        }
    }

    AttentionResult res;
    res.refined = ai;
    res.scores = NdArray(Shape{h, w, w2});
    std::vector<double> q(c), logits(w2);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double* a = ai.data() + (y * w + x) * c;
            for (std::size_t o = 0; o < c; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < c; ++i) acc += a[i] * proj.mq[i * c + o];
                q[o] = acc;
            }
            std::size_t oi = 0;
            double maxv = -std::numeric_limits<double>::infinity();
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx, ++oi) {
                    const std::size_t ny = static_cast<std::size_t>(
                        std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
                    const std::size_t nx = static_cast<std::size_t>(
                        std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
                    const double* kd = keys.data() + (ny * w + nx) * c;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < c; ++i) acc += q[i] * kd[i];
                    logits[oi] = acc * inv_sqrt_c;
                    maxv = std::max(maxv, logits[oi]);
                }
            }
            double denom = 0.0;
            for (std::size_t i = 0; i < w2; ++i) {
                logits[i] = std::exp(logits[i] - maxv);
                denom += logits[i];
            }
            double* srow = res.scores.data() + (y * w + x) * w2;
            for (std::size_t i = 0; i < w2; ++i) srow[i] = logits[i] / denom;

            double* rrow = res.refined.data() + (y * w + x) * c;
            oi = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx, ++oi) {
                    const std::size_t ny = static_cast<std::size_t>(
                        std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
                    const std::size_t nx = static_cast<std::size_t>(
                        std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
                    const double* vd = vals.data() + (ny * w + nx) * c;
                    const double s = srow[oi];
                    for (std::size_t i = 0; i < c; ++i) rrow[i] += s * vd[i];
                }
            }
        }
    }
    return res;
}

// Unit-spaced cell coordinate map; channel 0 = x (column), channel 1 = y (row).
inline NdArray identity_coords(std::size_t h, std::size_t w) {
    NdArray b(Shape{h, w, 2});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            b[(y * w + x) * 2 + 0] = static_cast<double>(x);
            b[(y * w + x) * 2 + 1] = static_cast<double>(y);
        }
    }
    return b;
}

// Expected neighbor coordinate under the attention rows minus the own
// coordinate: M = S B^w - B. Neighbor coordinates extend the map by unit
// offsets, so a uniform row over the symmetric window yields exactly zero.
inline NdArray motion_vector(const NdArray& scores, const NdArray& coords, int window) {
    if (scores.shape().rank() != 3 || coords.shape().rank() != 3 || coords.shape().dims[2] != 2) {
        throw std::invalid_argument("motion_vector: scores must be (H,W,W^2), coords (H,W,2)");
    }
    const std::size_t h = scores.shape().dims[0];
    const std::size_t w = scores.shape().dims[1];
    const std::size_t w2 = scores.shape().dims[2];
    if (coords.shape().dims[0] != h || coords.shape().dims[1] != w) {
        throw std::invalid_argument("motion_vector: scores/coords grid mismatch");
    }
    if (window < 1 || static_cast<std::size_t>(window) * static_cast<std::size_t>(window) != w2) {
        throw std::invalid_argument("motion_vector: window does not match score rows");
    }
    const int r = window / 2;
    NdArray m(Shape{h, w, 2});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double* srow = scores.data() + (y * w + x) * w2;
            const double bx = coords[(y * w + x) * 2 + 0];
            const double by = coords[(y * w + x) * 2 + 1];
            double ex = 0.0, ey = 0.0;
            std::size_t oi = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx, ++oi) {
                    ex += srow[oi] * (bx + static_cast<double>(dx));
                    ey += srow[oi] * (by + static_cast<double>(dy));
                }
            }
            m[(y * w + x) * 2 + 0] = ex - bx;
            m[(y * w + x) * 2 + 1] = ey - by;
        }
    }
    return m;
}

// Local-linear-motion scaling: M_{i+delta} = (delta/gap) * M, 0 < delta < gap.
inline NdArray scale_motion(const NdArray& motion, double delta, double gap) {
    if (!(delta > 0.0 && delta < gap)) {
        throw std::invalid_argument("scale_motion: need 0 < delta < gap, got delta=" +
                                    std::to_string(delta) + " gap=" + std::to_string(gap));
    }
    NdArray out(motion.shape());
    const double s = delta / gap;
    for (std::size_t i = 0; i < motion.size(); ++i) out[i] = s * motion[i];
    return out;
}

// Forward-splats the motion field to the target timestep: each cell deposits
// its motion at (cell + frac*M) with bilinear weights. Cells nothing lands on
// stay zero. Without this, flows sampled at target positions would describe
// the content that used to be there rather than the content arriving.
inline NdArray splat_motion(const NdArray& motion, double frac) {
    if (motion.shape().rank() != 3 || motion.shape().dims[2] != 2) {
        throw std::invalid_argument("splat_motion: motion must be (H, W, 2)");
    }
    const std::size_t h = motion.shape().dims[0];
    const std::size_t w = motion.shape().dims[1];
    NdArray acc(Shape{h, w, 2});
    NdArray wsum(Shape{h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double mx = motion[(y * w + x) * 2 + 0];
            const double my = motion[(y * w + x) * 2 + 1];
            const double tx = static_cast<double>(x) + frac * mx;
            const double ty = static_cast<double>(y) + frac * my;
            const long x0 = static_cast<long>(std::floor(tx));
            const long y0 = static_cast<long>(std::floor(ty));
            const double fx = tx - static_cast<double>(x0);
            const double fy = ty - static_cast<double>(y0);
            const double ww[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
            for (int i = 0; i < 4; ++i) {
                if (xs[i] < 0 || ys[i] < 0 || xs[i] >= static_cast<long>(w) ||
                    ys[i] >= static_cast<long>(h) || ww[i] == 0.0) {
                    continue;
                }
                const std::size_t idx = static_cast<std::size_t>(ys[i]) * w + static_cast<std::size_t>(xs[i]);
                acc[idx * 2 + 0] += ww[i] * mx;
                acc[idx * 2 + 1] += ww[i] * my;
                wsum[idx] += ww[i];
            }
        }
    }
    for (std::size_t i = 0; i < h * w; ++i) {
        if (wsum[i] > 1e-12) {
            acc[i * 2 + 0] /= wsum[i];
            acc[i * 2 + 1] /= wsum[i];
        } else {
            acc[i * 2 + 0] = 0.0;
            acc[i * 2 + 1] = 0.0;
        }
    }
    return acc;
}

// Bilinear upsampling of a grid field to pixel resolution.
inline NdArray upsample_bilinear(const NdArray& grid, std::size_t out_h, std::size_t out_w) {
    if (grid.shape().rank() != 3) throw std::invalid_argument("upsample_bilinear: field must be (h, w, c)");
    const std::size_t gh = grid.shape().dims[0];
    const std::size_t gw = grid.shape().dims[1];
    const std::size_t c = grid.shape().dims[2];
    const double sy = static_cast<double>(gh) / static_cast<double>(out_h);
    const double sx = static_cast<double>(gw) / static_cast<double>(out_w);
    NdArray out(Shape{out_h, out_w, c});
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            const double gy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            const double gx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            const double cy = std::clamp(gy, 0.0, static_cast<double>(gh - 1));
            const double cx = std::clamp(gx, 0.0, static_cast<double>(gw - 1));
            const std::size_t y0 = static_cast<std::size_t>(cy);
            const std::size_t x0 = static_cast<std::size_t>(cx);
            const std::size_t y1 = std::min(y0 + 1, gh - 1);
            const std::size_t x1 = std::min(x0 + 1, gw - 1);
            const double fy = cy - static_cast<double>(y0);
            const double fx = cx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v00 = grid[(y0 * gw + x0) * c + ch];
                const double v01 = grid[(y0 * gw + x1) * c + ch];
                const double v10 = grid[(y1 * gw + x0) * c + ch];
                const double v11 = grid[(y1 * gw + x1) * c + ch];
                out[(y * out_w + x) * c + ch] =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

// Bilinear backward warp with border clamping: out(p) = img(p + flow(p)).
inline NdArray backward_warp(const NdArray& img, const NdArray& flow) {
    if (img.shape().rank() != 3 || flow.shape().rank() != 3 || flow.shape().dims[2] != 2) {
        throw std::invalid_argument("backward_warp: img (H,W,C), flow (H,W,2)");
    }
    const std::size_t h = img.shape().dims[0];
    const std::size_t w = img.shape().dims[1];
    const std::size_t c = img.shape().dims[2];
    if (flow.shape().dims[0] != h || flow.shape().dims[1] != w) {
        throw std::invalid_argument("backward_warp: flow grid mismatch");
    }
    NdArray out(img.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double sx = std::clamp(static_cast<double>(x) + flow[(y * w + x) * 2 + 0], 0.0,
                                         static_cast<double>(w - 1));
            const double sy = std::clamp(static_cast<double>(y) + flow[(y * w + x) * 2 + 1], 0.0,
                                         static_cast<double>(h - 1));
            const std::size_t x0 = static_cast<std::size_t>(sx);
            const std::size_t y0 = static_cast<std::size_t>(sy);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const double fx = sx - static_cast<double>(x0);
            const double fy = sy - static_cast<double>(y0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v00 = img[(y0 * w + x0) * c + ch];
                const double v01 = img[(y0 * w + x1) * c + ch];
                const double v10 = img[(y1 * w + x0) * c + ch];
                const double v11 = img[(y1 * w + x1) * c + ch];
                out[(y * w + x) * c + ch] =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

// Bidirectional pixel-space flows and occlusion mask for one target frame.
struct FlowMask {
    NdArray flow_to_prev;  // (H, W, 2)
    NdArray flow_to_next;  // (H, W, 2)
    NdArray mask;          // (H, W) in [0, 1]
};

// O .* BW(x_i, F_prev) + (1 - O) .* BW(x_j, F_next).
inline NdArray warp_fuse(const NdArray& xi, const NdArray& xj, const FlowMask& fm) {
    if (xi.shape() != xj.shape()) throw std::invalid_argument("warp_fuse: frame shape mismatch");
    const std::size_t h = xi.shape().dims[0];
    const std::size_t w = xi.shape().dims[1];
    const std::size_t c = xi.shape().dims[2];
    if (fm.mask.shape() != Shape{h, w}) throw std::invalid_argument("warp_fuse: mask must be (H, W)");
    for (std::size_t i = 0; i < fm.mask.size(); ++i) {
        if (!(fm.mask[i] >= 0.0 && fm.mask[i] <= 1.0)) {
            throw std::invalid_argument("warp_fuse: mask values must lie in [0, 1]");
        }
    }
    const NdArray wi = backward_warp(xi, fm.flow_to_prev);
    const NdArray wj = backward_warp(xj, fm.flow_to_next);
    NdArray out(xi.shape());
    for (std::size_t p = 0; p < h * w; ++p) {
        const double o = fm.mask[p];
        for (std::size_t ch = 0; ch < c; ++ch) {
            out[p * c + ch] = o * wi[p * c + ch] + (1.0 - o) * wj[p * c + ch];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

// Per-pixel residual network over (rgb, low-level, appearance) inputs. The
// final layer starts zeroed, so an untrained net is the identity.
struct RefineNet {
    MlpModel net;
};

inline constexpr std::size_t kRefineInputs = 3 + 8 + 4;  // rgb + l1 features + appearance

inline RefineNet make_refine_net(std::size_t hidden, std::uint64_t seed) {
    RefineNet r;
    r.net = make_mlp({kRefineInputs, hidden, hidden, 3}, Activation::tanh, Activation::identity, seed);
    const std::size_t last = r.net.layer_count() - 1;
    for (std::size_t i = 0; i < r.net.weights[last].size(); ++i) r.net.weights[last][i] = 0.0;
    for (std::size_t i = 0; i < r.net.biases[last].size(); ++i) r.net.biases[last][i] = 0.0;
    return r;
}

// Builds the refine-net input rows for a frame: normalized rgb, the frame's
// own low-level texture features (upsampled to pixel resolution), and the
// upsampled inter-frame appearance.
inline NdArray refine_inputs(const NdArray& frame, const NdArray& lowlevel_px,
                             const NdArray& appearance_px) {
    const std::size_t h = frame.shape().dims[0];
    const std::size_t w = frame.shape().dims[1];
    if (lowlevel_px.shape() != Shape{h, w, 8} || appearance_px.shape() != Shape{h, w, 4}) {
        throw std::invalid_argument("refine_inputs: want low-level (H,W,8) and appearance (H,W,4)");
    }
    NdArray rows(Shape{h * w, kRefineInputs});
    for (std::size_t p = 0; p < h * w; ++p) {
        double* dst = rows.data() + p * kRefineInputs;
        for (std::size_t ch = 0; ch < 3; ++ch) dst[ch] = frame[p * 3 + ch] / 255.0;
        for (std::size_t ch = 0; ch < 8; ++ch) dst[3 + ch] = lowlevel_px[p * 8 + ch];
        for (std::size_t ch = 0; ch < 4; ++ch) dst[11 + ch] = appearance_px[p * 4 + ch];
    }
    return rows;
}

// frame + 255 * net(inputs), clamped to [0, 255]. Bit-exact identity while the
// final layer is zero.
inline NdArray refine(const NdArray& frame, const NdArray& lowlevel_px,
                      const NdArray& appearance_px, const RefineNet& rn) {
    const std::size_t h = frame.shape().dims[0];
    const std::size_t w = frame.shape().dims[1];
    const NdArray rows = refine_inputs(frame, lowlevel_px, appearance_px);
    const NdArray res = forward(rn.net, rows);
    NdArray out(frame.shape());
    bool all_zero = true;
    for (std::size_t i = 0; i < res.size() && all_zero; ++i) all_zero = res[i] == 0.0;
    for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = frame[p * 3 + ch] + 255.0 * res[p * 3 + ch];
            out[p * 3 + ch] = all_zero ? frame[p * 3 + ch] : std::clamp(v, 0.0, 255.0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full-video interpolation
// ---------------------------------------------------------------------------

struct InterpolationModel {
    AppearanceConfig appearance;
    AttentionProjections projections;
    MlpModel mask_layer;  // fused-feature -> occlusion logit, zero-init
    RefineNet refine_net;
    int window = 5;
};

inline InterpolationModel make_interpolation_model(int window, std::size_t refine_hidden,
                                                   std::uint64_t seed,
                                                   AppearanceConfig app = AppearanceConfig{}) {
    InterpolationModel m;
    app.seed = seed;
    m.appearance = app;
    m.projections = make_projections(app.position_scale2);
    m.mask_layer = make_mlp({kFusedChannels, 1}, Activation::identity, Activation::sigmoid, seed + 1);
    for (std::size_t i = 0; i < m.mask_layer.weights[0].size(); ++i) m.mask_layer.weights[0][i] = 0.0;
    m.mask_layer.biases[0][0] = 0.0;  // sigmoid(0) = 0.5
    m.refine_net = make_refine_net(refine_hidden, seed + 2);
    m.window = window;
    return m;
}

namespace detail {

// Border cells attend through clamped neighborhoods whose keys keep their own
// positions, which biases their motion toward the frame interior; replicate
// the nearest interior motion instead.
inline NdArray replicate_interior(const NdArray& motion) {
    const std::size_t h = motion.shape().dims[0];
    const std::size_t w = motion.shape().dims[1];
    if (h <= 2 || w <= 2) return motion;
    NdArray out = motion;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sy = std::clamp<std::size_t>(y, 1, h - 2);
            const std::size_t sx = std::clamp<std::size_t>(x, 1, w - 2);
            if (sy == y && sx == x) continue;
            out[(y * w + x) * 2 + 0] = motion[(sy * w + sx) * 2 + 0];
            out[(y * w + x) * 2 + 1] = motion[(sy * w + sx) * 2 + 1];
        }
    }
    return out;
}

// Appearance channels rescaled back to unit range so downstream nets see
// saturation-free inputs; the attention blend can double the magnitude.
inline NdArray appearance_channels(const NdArray& fused, double appearance_scale) {
    const std::size_t h = fused.shape().dims[0];
    const std::size_t w = fused.shape().dims[1];
    const double inv = 1.0 / (2.0 * appearance_scale);
    NdArray out(Shape{h, w, 4});
    for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t ch = 0; ch < 4; ++ch) {
            out[p * 4 + ch] = inv * fused[p * kFusedChannels + ch];
        }
    }
    return out;
}

}  // namespace detail

// Fills every non-keyframe position of an F-frame video by attention ->
// motion -> scaling -> warp/fuse -> refine between the enclosing keyframes.
// Keyframe positions carry the supplied frames verbatim.
inline std::vector<NdArray> interpolate_video_real(const std::vector<NdArray>& keyframes,
                                                   const std::vector<std::size_t>& indices,
                                                   std::size_t frame_count,
                                                   const InterpolationModel& model) {
    if (indices.size() < 2) {
        throw std::invalid_argument("interpolate_video: need at least 2 keyframes");
    }
    if (indices.size() != keyframes.size()) {
        throw std::invalid_argument("interpolate_video: index/frame count mismatch");
    }
    if (indices.front() != 0 || indices.back() != frame_count - 1) {
        throw std::invalid_argument("interpolate_video: keyframes must cover the first and last frame");
    }
    for (std::size_t i = 1; i < indices.size(); ++i) {
        if (indices[i] <= indices[i - 1]) {
            throw std::invalid_argument("interpolate_video: keyframe indices must be strictly increasing");
        }
    }

    const Shape frame_shape = keyframes.front().shape();
    const std::size_t h = frame_shape.dims[0];
    const std::size_t w = frame_shape.dims[1];

    std::vector<NdArray> out(frame_count);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require_shape(keyframes[i], frame_shape, "interpolate_video");
        out[indices[i]] = keyframes[i];
    }

    for (std::size_t seg = 0; seg + 1 < indices.size(); ++seg) {
        const std::size_t ia = indices[seg];
        const std::size_t ib = indices[seg + 1];
        const std::size_t gap = ib - ia;
        if (gap < 2) continue;

        const NdArray& fa = keyframes[seg];
        const NdArray& fb = keyframes[seg + 1];
        const AppearanceFeatures apa = extract_appearance(fa, model.appearance);
        const AppearanceFeatures apb = extract_appearance(fb, model.appearance);
        const AttentionResult att = interframe_attention(apa.fused, apb.fused, model.window,
                                                         model.projections);
        const std::size_t gh = apa.fused.shape().dims[0];
        const std::size_t gw = apa.fused.shape().dims[1];
        const NdArray coords = identity_coords(gh, gw);
        const NdArray motion = detail::replicate_interior(
            motion_vector(att.scores, coords, model.window));
        const double cell = static_cast<double>(h) / static_cast<double>(gh);

        // occlusion mask from the fused features of the earlier keyframe
        NdArray mask_grid(Shape{gh, gw, 1});
        {
            NdArray rows(Shape{gh * gw, kFusedChannels});
            std::copy(apa.fused.data(), apa.fused.data() + apa.fused.size(), rows.data());
            const NdArray m = forward(model.mask_layer, rows);
            std::copy(m.data(), m.data() + m.size(), mask_grid.data());
        }
        const NdArray mask_px_field = upsample_bilinear(mask_grid, h, w);
        NdArray mask_px(Shape{h, w});
        for (std::size_t p = 0; p < h * w; ++p) mask_px[p] = mask_px_field[p];

        const NdArray appearance_px = upsample_bilinear(
            detail::appearance_channels(att.refined, model.appearance.appearance_scale), h, w);

        for (std::size_t delta = 1; delta < gap; ++delta) {
            const double dfrac = static_cast<double>(delta) / static_cast<double>(gap);
            const NdArray m_target = splat_motion(motion, dfrac);
            const NdArray m_prev = scale_motion(m_target, static_cast<double>(delta),
                                                static_cast<double>(gap));
            const NdArray m_next = scale_motion(m_target, static_cast<double>(gap - delta),
                                                static_cast<double>(gap));
            NdArray flow_prev = upsample_bilinear(m_prev, h, w);
            NdArray flow_next = upsample_bilinear(m_next, h, w);
            for (std::size_t i = 0; i < flow_prev.size(); ++i) {
                flow_prev[i] *= -cell;  // content arrived from behind
                flow_next[i] *= cell;   // and continues forward
            }
            FlowMask fm{std::move(flow_prev), std::move(flow_next), mask_px};
            const NdArray fused_frame = warp_fuse(fa, fb, fm);
            const AppearanceFeatures apf = extract_appearance(fused_frame, model.appearance);
            const NdArray lowlevel_px = upsample_bilinear(apf.l1, h, w);
            out[ia + delta] = refine(fused_frame, lowlevel_px, appearance_px, model.refine_net);
        }
    }
    return out;
}

inline FrameSequence interpolate_video(const std::vector<NdArray>& keyframes,
                                       const std::vector<std::size_t>& indices,
                                       std::size_t frame_count, const InterpolationModel& model) {
    return quantize_video(interpolate_video_real(keyframes, indices, frame_count, model));
}

}  // namespace sdgc
