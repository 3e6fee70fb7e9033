#pragma once

// Synthetic clip generator: moving geometric shapes with piecewise-linear
// motion and optional abrupt jumps, deterministic per seed.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sdgc/errors.hpp"
#include "sdgc/frames.hpp"
#include "sdgc/rng.hpp"

namespace sdgc {

enum class MotionKind { static_scene, linear, jump, mixed };

inline const char* motion_name(MotionKind k) {
    switch (k) {
        case MotionKind::static_scene: return "static";
        case MotionKind::linear: return "linear";
        case MotionKind::jump: return "jump";
        case MotionKind::mixed: return "mixed";
    }
    return "?";
}

inline MotionKind motion_from_name(const std::string& s) {
    if (s == "static") return MotionKind::static_scene;
    if (s == "linear") return MotionKind::linear;
    if (s == "jump") return MotionKind::jump;
    if (s == "mixed") return MotionKind::mixed;
    throw config_error("unknown motion kind '" + s + "'");
}

struct DatasetConfig {
    std::size_t clips = 64;
    std::size_t frames = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    MotionKind motion = MotionKind::mixed;
};

namespace detail {

struct Sprite {
    double cx, cy;     // center, pixels
    double half;       // half extent
    double vx, vy;     // velocity, pixels/frame
    double rgb[3];
    bool circle;
};

inline void draw_sprite(FrameSequence& fs, std::size_t f, const Sprite& s) {
    const long x0 = static_cast<long>(std::floor(s.cx - s.half));
    const long x1 = static_cast<long>(std::ceil(s.cx + s.half));
    const long y0 = static_cast<long>(std::floor(s.cy - s.half));
    const long y1 = static_cast<long>(std::ceil(s.cy + s.half));
    for (long y = y0; y <= y1; ++y) {
        if (y < 0 || y >= static_cast<long>(fs.height)) continue;
        for (long x = x0; x <= x1; ++x) {
            if (x < 0 || x >= static_cast<long>(fs.width)) continue;
            if (s.circle) {
                const double dx = static_cast<double>(x) + 0.5 - s.cx;
                const double dy = static_cast<double>(y) + 0.5 - s.cy;
                if (dx * dx + dy * dy > s.half * s.half) continue;
            }
            for (std::size_t c = 0; c < 3; ++c) {
                fs.at(f, static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
                    static_cast<std::uint8_t>(s.rgb[c] * 255.0);
            }
        }
    }
}

}  // namespace detail

// One clip of a given motion kind. "jump" clips teleport and recolor their
// sprite between frames 3 and 4 (0-based) to force a strong feature change.
inline FrameSequence gen_clip(std::size_t frames, std::size_t height, std::size_t width,
                              MotionKind kind, Rng& rng) {
    FrameSequence fs(frames, height, width, 3);
    const double bg = 0.75 + 0.2 * rng.uniform();
    for (std::uint8_t& p : fs.pixels) p = static_cast<std::uint8_t>(bg * 255.0);

    detail::Sprite s;
    s.half = 0.12 * static_cast<double>(std::min(height, width)) * (1.0 + 0.5 * rng.uniform());
    s.cx = rng.uniform(s.half + 1.0, static_cast<double>(width) - s.half - 1.0);
    s.cy = rng.uniform(s.half + 1.0, static_cast<double>(height) - s.half - 1.0);
    s.circle = rng.uniform() < 0.5;
    for (double& c : s.rgb) c = 0.1 + 0.4 * rng.uniform();  // dark against light bg

    const double speed = 0.05 * static_cast<double>(std::min(height, width));
    const double ang = rng.uniform(0.0, 6.283185307179586);
    s.vx = kind == MotionKind::static_scene ? 0.0 : speed * std::cos(ang);
    s.vy = kind == MotionKind::static_scene ? 0.0 : speed * std::sin(ang);

    for (std::size_t f = 0; f < frames; ++f) {
        if (kind == MotionKind::jump && f == 4 && frames > 4) {
            s.cx = rng.uniform(s.half + 1.0, static_cast<double>(width) - s.half - 1.0);
            s.cy = rng.uniform(s.half + 1.0, static_cast<double>(height) - s.half - 1.0);
            for (double& c : s.rgb) c = 0.1 + 0.4 * rng.uniform();
        }
        detail::draw_sprite(fs, f, s);
        s.cx += s.vx;
        s.cy += s.vy;
        // bounce off frame borders
        if (s.cx - s.half < 0.0 || s.cx + s.half > static_cast<double>(width)) s.vx = -s.vx;
        if (s.cy - s.half < 0.0 || s.cy + s.half > static_cast<double>(height)) s.vy = -s.vy;
    }
    return fs;
}

// Deterministic dataset: clip i draws from the (seed, i) stream, so the set is
// reproducible regardless of generation order.
inline std::vector<FrameSequence> gen_synthetic(const DatasetConfig& cfg, std::uint64_t seed) {
    if (cfg.frames < 2) throw config_error("dataset: need at least 2 frames per clip");
    std::vector<FrameSequence> clips;
    clips.reserve(cfg.clips);
    for (std::size_t i = 0; i < cfg.clips; ++i) {
        MotionKind kind = cfg.motion;
        if (kind == MotionKind::mixed) {
            switch (i % 4) {
                case 0: kind = MotionKind::linear; break;
                case 1: kind = MotionKind::jump; break;
                case 2: kind = MotionKind::linear; break;
                default: kind = MotionKind::static_scene; break;
            }
        }
        Rng rng = Rng::split(seed, {0x636c6970 /*"clip"*/, i});
        clips.push_back(gen_clip(cfg.frames, cfg.height, cfg.width, kind, rng));
    }
    return clips;
}

}  // namespace sdgc
