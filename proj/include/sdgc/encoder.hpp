#pragma once

// Semantic encoder: variational feature extraction, cosine inter-frame
// differencing, top-k sparse residual coding, and latency-budgeted greedy
// keyframe selection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdgc/channel.hpp"
#include "sdgc/errors.hpp"
#include "sdgc/frames.hpp"
#include "sdgc/ndarray.hpp"
#include "sdgc/nn.hpp"

namespace sdgc {

// Per-frame (mu, log sigma) pairs, each F x d.
struct VariationalLatent {
    NdArray mu;
    NdArray log_sigma;

    std::size_t frame_count() const { return mu.shape().dims[0]; }
    std::size_t dim() const { return mu.shape().dims[1]; }

    NdArray mu_row(std::size_t f) const {
        const std::size_t d = dim();
        std::vector<double> v(mu.data() + f * d, mu.data() + (f + 1) * d);
        return NdArray(Shape{d}, std::move(v));
    }
};

// Runs the encoder over every frame. Pixel inputs are normalized to [0, 1];
// the model output splits into mu (first d) and log sigma (last d).
inline VariationalLatent extract_features(const FrameSequence& x, const MlpModel& enc) {
    x.validate();
    const std::size_t in = x.frame_elems();
    if (enc.input_width() != in) {
        throw std::invalid_argument("extract_features: encoder input width " +
                                    std::to_string(enc.input_width()) + " != H*W*C = " +
                                    std::to_string(in));
    }
    if (enc.output_width() % 2 != 0) {
        throw std::invalid_argument("extract_features: encoder output width must be even (mu, log sigma)");
    }
    const std::size_t d = enc.output_width() / 2;

    NdArray batch(Shape{x.frames, in});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        batch[i] = static_cast<double>(x.pixels[i]) / 255.0;
    }
    const NdArray out = forward(enc, batch);

    VariationalLatent lat;
    lat.mu = NdArray(Shape{x.frames, d});
    lat.log_sigma = NdArray(Shape{x.frames, d});
    for (std::size_t f = 0; f < x.frames; ++f) {
        for (std::size_t j = 0; j < d; ++j) {
            lat.mu[f * d + j] = out[f * 2 * d + j];
            lat.log_sigma[f * d + j] = out[f * 2 * d + d + j];
        }
    }
    return lat;
}

// m = 1 - <a,b>/(|a||b|), in [0, 2].
inline double cosine_diff(const NdArray& a, const NdArray& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("cosine_diff: size mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
    }
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na == 0.0) throw std::invalid_argument("cosine_diff: first vector has zero norm");
    if (nb == 0.0) throw std::invalid_argument("cosine_diff: second vector has zero norm");
    return 1.0 - dot(a, b) / (na * nb);
}

// k-sparse residual: the k largest-magnitude coefficients, ties broken by
// lower index.
struct SparseDiff {
    std::size_t base_index = 0;  // keyframe the residual is relative to
    std::vector<std::size_t> indices;
    std::vector<double> values;
    std::size_t dim = 0;

    std::size_t k() const { return indices.size(); }
};

inline SparseDiff sparsify(const NdArray& residual, std::size_t k) {
    const std::size_t d = residual.size();
    if (k == 0) throw std::invalid_argument("sparsify: k must be positive");
    if (k > d) throw std::invalid_argument("sparsify: k = " + std::to_string(k) +
                                           " exceeds dimension " + std::to_string(d));
    std::vector<std::size_t> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::fabs(residual[a]) > std::fabs(residual[b]);
    });
    order.resize(k);
    std::sort(order.begin(), order.end());
    SparseDiff sd;
    sd.dim = d;
    sd.indices = order;
    sd.values.reserve(k);
    for (std::size_t i : order) sd.values.push_back(residual[i]);
    return sd;
}

inline NdArray densify(const SparseDiff& sd) {
    NdArray out(Shape{sd.dim});
    for (std::size_t i = 0; i < sd.indices.size(); ++i) out[sd.indices[i]] = sd.values[i];
    return out;
}

enum class SelectionPriority { sparse_residual_norm, raw_cosine };

struct KeyframePlan {
    std::vector<std::size_t> keyframes;  // 0-based, sorted, contains 0 and F-1
    double projected_exec_time_s = 0.0;
    std::size_t latent_dim = 0;
    std::size_t k = 0;
};

// First entry is the full first-keyframe latent; each subsequent keyframe
// contributes 2k transmitted elements (index/value pairs).
inline std::vector<std::size_t> payload_dims(const KeyframePlan& plan) {
    if (plan.keyframes.empty()) throw std::invalid_argument("payload_dims: empty plan");
    std::vector<std::size_t> dims;
    dims.reserve(plan.keyframes.size());
    dims.push_back(plan.latent_dim);
    for (std::size_t i = 1; i < plan.keyframes.size(); ++i) dims.push_back(2 * plan.k);
    return dims;
}

namespace detail {

// Pairwise selection scores: norm of the k-sparse latent residual, or the raw
// cosine difference.
inline std::vector<std::vector<double>> selection_scores(const VariationalLatent& lat,
                                                         std::size_t k, SelectionPriority mode) {
    const std::size_t f_count = lat.frame_count();
    const std::size_t d = lat.dim();
    std::vector<NdArray> rows(f_count);
    for (std::size_t f = 0; f < f_count; ++f) rows[f] = lat.mu_row(f);

    std::vector<std::vector<double>> s(f_count, std::vector<double>(f_count, 0.0));
    for (std::size_t i = 0; i < f_count; ++i) {
        for (std::size_t j = i + 1; j < f_count; ++j) {
            double v = 0.0;
            if (mode == SelectionPriority::raw_cosine) {
                if (norm2(rows[i]) == 0.0 || norm2(rows[j]) == 0.0) {
                    throw std::invalid_argument("select_keyframes: zero-norm feature at frame " +
                                                std::to_string(norm2(rows[i]) == 0.0 ? i : j));
                }
                v = cosine_diff(rows[i], rows[j]);
            } else {
                NdArray resid(Shape{d});
                for (std::size_t e = 0; e < d; ++e) resid[e] = rows[i][e] - rows[j][e];
                v = norm2(densify(sparsify(resid, std::min(k, d))));
            }
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    return s;
}

// Priority of candidate i against the current keyframe set, summed in index
// order so the heap path and plain re-implementations produce identical
// doubles.
inline double priority_against(const std::vector<std::vector<double>>& s, std::size_t i,
                               const std::vector<std::size_t>& selected) {
    double p = 0.0;
    for (std::size_t j : selected) p += s[i][j];
    return p;
}

}  // namespace detail

// Greedy latency-budgeted keyframe selection. Starts from {first, last},
// repeatedly admits the remaining frame with the largest summed score against
// the current set while the projected execution time stays within t_max.
// Scores for remaining frames are recomputed after each admission; stale heap
// entries are lazily discarded. Ties prefer the lower frame index.
inline KeyframePlan select_keyframes(const VariationalLatent& lat, double t_max_s,
                                     const LinkBudget& link, double h, double sigma2,
                                     const ComputeTimeModel& ct, std::size_t k,
                                     SelectionPriority mode = SelectionPriority::sparse_residual_norm) {
    const std::size_t f_count = lat.frame_count();
    if (f_count < 2) throw std::invalid_argument("select_keyframes: need at least 2 frames");
    const std::size_t d = lat.dim();
    if (k == 0 || k > d) throw std::invalid_argument("select_keyframes: k must be in [1, d]");

    const double r = rate(link, h, sigma2);
    KeyframePlan plan;
    plan.latent_dim = d;
    plan.k = k;
    plan.keyframes = {0, f_count - 1};

    auto projected_time = [&](std::size_t keyframe_count) {
        std::vector<std::size_t> dims;
        dims.push_back(d);
        for (std::size_t i = 1; i < keyframe_count; ++i) dims.push_back(2 * k);
        if (!(r > 0.0)) return std::numeric_limits<double>::infinity();
        return exec_time(ct, comm_time(dims, r));
    };

    const double base_time = projected_time(2);
    if (!(base_time <= t_max_s)) {
        throw infeasible_error("select_keyframes: latency budget " + std::to_string(t_max_s) +
                                   " s cannot cover the minimal {first,last} plan; minimum achievable " +
                                   std::to_string(base_time) + " s",
                               base_time);
    }
    plan.projected_exec_time_s = base_time;
    if (f_count == 2) return plan;

    const auto scores = detail::selection_scores(lat, k, mode);

    // max-heap of (priority, frame); lazily invalidated by the version map
    struct Entry {
        double priority;
        std::size_t frame;
        bool operator<(const Entry& o) const {
            if (priority != o.priority) return priority < o.priority;
            return frame > o.frame;  // lower index wins on ties
        }
    };
    std::priority_queue<Entry> heap;
    std::vector<double> current(f_count, 0.0);
    std::vector<char> selected(f_count, 0);
    selected[0] = 1;
    selected[f_count - 1] = 1;

    for (std::size_t i = 0; i < f_count; ++i) {
        if (selected[i]) continue;
        current[i] = detail::priority_against(scores, i, plan.keyframes);
        heap.push({current[i], i});
    }

    while (!heap.empty()) {
        const Entry e = heap.top();
        heap.pop();
        if (selected[e.frame] || e.priority != current[e.frame]) continue;  // stale
        const double t_with = projected_time(plan.keyframes.size() + 1);
        if (!(t_with <= t_max_s)) break;  // uniform candidate cost: nothing else fits either
        selected[e.frame] = 1;
        plan.keyframes.push_back(e.frame);
        std::sort(plan.keyframes.begin(), plan.keyframes.end());
        plan.projected_exec_time_s = t_with;
        for (std::size_t i = 0; i < f_count; ++i) {
            if (selected[i]) continue;
            current[i] = detail::priority_against(scores, i, plan.keyframes);
            heap.push({current[i], i});
        }
    }
    return plan;
}

// Transmit payload: the first keyframe's full latent plus one sparse residual
// per subsequent keyframe, each taken against the previous selected keyframe.
struct KeyframePayload {
    NdArray first_latent;
    std::vector<SparseDiff> residuals;
};

inline KeyframePayload build_payload(const VariationalLatent& lat, const KeyframePlan& plan) {
    if (plan.keyframes.empty()) throw std::invalid_argument("build_payload: empty plan");
    KeyframePayload p;
    p.first_latent = lat.mu_row(plan.keyframes.front());
    const std::size_t d = lat.dim();
    for (std::size_t i = 1; i < plan.keyframes.size(); ++i) {
        const NdArray prev = lat.mu_row(plan.keyframes[i - 1]);
        const NdArray cur = lat.mu_row(plan.keyframes[i]);
        NdArray resid(Shape{d});
        for (std::size_t e = 0; e < d; ++e) resid[e] = cur[e] - prev[e];
        SparseDiff sd = sparsify(resid, plan.k);
        sd.base_index = plan.keyframes[i - 1];
        p.residuals.push_back(std::move(sd));
    }
    return p;
}

}  // namespace sdgc
