#pragma once

// Raw video container plus the .fsq and binary PPM (P6) interchange formats.

#include <cfenv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdgc/errors.hpp"
#include "sdgc/ndarray.hpp"

namespace sdgc {

// F x H x W x C block of 8-bit pixels, frame-major.
struct FrameSequence {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    FrameSequence() = default;

    FrameSequence(std::size_t f, std::size_t h, std::size_t w, std::size_t c)
        : frames(f), height(h), width(w), channels(c), pixels(f * h * w * c, 0) {
        validate();
    }

    void validate() const {
        if (frames < 2) throw std::invalid_argument("FrameSequence: need at least 2 frames");
        if (channels != 3) throw std::invalid_argument("FrameSequence: channels must be 3");
        if (height == 0 || width == 0) throw std::invalid_argument("FrameSequence: empty frame extents");
        if (pixels.size() != frames * height * width * channels) {
            throw std::invalid_argument("FrameSequence: pixel count does not match extents");
        }
    }

    std::size_t frame_elems() const { return height * width * channels; }

    std::uint8_t at(std::size_t f, std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[((f * height + y) * width + x) * channels + c];
    }
    std::uint8_t& at(std::size_t f, std::size_t y, std::size_t x, std::size_t c) {
        return pixels[((f * height + y) * width + x) * channels + c];
    }

    bool operator==(const FrameSequence& o) const {
        return frames == o.frames && height == o.height && width == o.width &&
               channels == o.channels && pixels == o.pixels;
    }
};

// One frame as an (H, W, C) block of doubles in [0, 255].
inline NdArray frame_to_real(const FrameSequence& fs, std::size_t f) {
    if (f >= fs.frames) throw std::invalid_argument("frame_to_real: frame index out of range");
    NdArray out(Shape{fs.height, fs.width, fs.channels});
    const std::uint8_t* src = fs.pixels.data() + f * fs.frame_elems();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(src[i]);
    return out;
}

inline std::uint8_t quantize_pixel(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 255.0) v = 255.0;
    // round half to even
    return static_cast<std::uint8_t>(std::nearbyint(v));
}

inline FrameSequence quantize_video(const std::vector<NdArray>& real_frames) {
    if (real_frames.size() < 2) throw std::invalid_argument("quantize_video: need at least 2 frames");
    const Shape& s = real_frames.front().shape();
    if (s.rank() != 3) throw std::invalid_argument("quantize_video: frames must be (H,W,C)");
    FrameSequence fs(real_frames.size(), s.dims[0], s.dims[1], s.dims[2]);
    for (std::size_t f = 0; f < real_frames.size(); ++f) {
        require_shape(real_frames[f], s, "quantize_video");
        std::uint8_t* dst = fs.pixels.data() + f * fs.frame_elems();
        for (std::size_t i = 0; i < real_frames[f].size(); ++i) dst[i] = quantize_pixel(real_frames[f][i]);
    }
    return fs;
}

// --- .fsq: "FSQ1", then F,H,W,C as u32 LE, then raw pixels ---

inline void save_fsq(const std::string& path, const FrameSequence& fs) {
    fs.validate();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw config_error("cannot write '" + path + "'");
    f.write("FSQ1", 4);
    auto put_u32 = [&](std::uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        f.write(b, 4);
    };
    put_u32(static_cast<std::uint32_t>(fs.frames));
    put_u32(static_cast<std::uint32_t>(fs.height));
    put_u32(static_cast<std::uint32_t>(fs.width));
    put_u32(static_cast<std::uint32_t>(fs.channels));
    f.write(reinterpret_cast<const char*>(fs.pixels.data()),
            static_cast<std::streamsize>(fs.pixels.size()));
    if (!f) throw config_error("short write to '" + path + "'");
}

inline FrameSequence load_fsq(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "'");
    char magic[4];
    if (!f.read(magic, 4) || std::string(magic, 4) != "FSQ1") {
        throw config_error("'" + path + "': not an FSQ1 file");
    }
    auto get_u32 = [&]() {
        char b[4];
        if (!f.read(b, 4)) throw config_error("'" + path + "': truncated header");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    };
    FrameSequence fs;
    fs.frames = get_u32();
    fs.height = get_u32();
    fs.width = get_u32();
    fs.channels = get_u32();
    const std::size_t n = fs.frames * fs.height * fs.width * fs.channels;
    fs.pixels.resize(n);
    if (!f.read(reinterpret_cast<char*>(fs.pixels.data()), static_cast<std::streamsize>(n))) {
        throw config_error("'" + path + "': truncated pixel data");
    }
    char extra;
    if (f.read(&extra, 1)) throw config_error("'" + path + "': trailing bytes");
    fs.validate();
    return fs;
}

// --- binary PPM (P6), one frame per file ---

inline void save_ppm(const std::string& path, const FrameSequence& fs, std::size_t frame) {
    if (frame >= fs.frames) throw std::invalid_argument("save_ppm: frame index out of range");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw config_error("cannot write '" + path + "'");
    f << "P6\n" << fs.width << " " << fs.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(fs.pixels.data() + frame * fs.frame_elems()),
            static_cast<std::streamsize>(fs.frame_elems()));
    if (!f) throw config_error("short write to '" + path + "'");
}

// Reads a single P6 frame; returned as an (H, W, 3) pixel block.
inline std::vector<std::uint8_t> load_ppm(const std::string& path, std::size_t& height,
                                          std::size_t& width) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "'");
    std::string magic;
    f >> magic;
    if (magic != "P6") throw config_error("'" + path + "': not a P6 PPM");
    std::size_t w = 0, h = 0, maxv = 0;
    f >> w >> h >> maxv;
    if (!f || w == 0 || h == 0) throw config_error("'" + path + "': bad PPM header");
    if (maxv != 255) throw config_error("'" + path + "': only maxval 255 supported");
    f.get();  // single whitespace after maxval
    std::vector<std::uint8_t> px(w * h * 3);
    if (!f.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()))) {
        throw config_error("'" + path + "': truncated pixel data");
    }
    height = h;
    width = w;
    return px;
}

}  // namespace sdgc
