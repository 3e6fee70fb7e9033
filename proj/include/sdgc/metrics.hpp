#pragma once

// Reconstruction-quality metrics: MSE, PSNR, and the diagonal-covariance
// Frechet distance between latent clouds.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sdgc/frames.hpp"
#include "sdgc/ndarray.hpp"

namespace sdgc {

struct MetricReport {
    double mse = 0.0;
    double psnr_db = 0.0;  // +infinity when mse == 0
    std::vector<double> per_frame_mse;
};

inline double mse(const FrameSequence& a, const FrameSequence& b) {
    if (a.frames != b.frames || a.height != b.height || a.width != b.width ||
        a.channels != b.channels) {
        throw std::invalid_argument("mse: extent mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.pixels.size());
}

// 10*log10(255^2 / mse); mse = 0 maps to the +infinity sentinel.
inline double psnr(double mse_value) {
    if (mse_value < 0.0) throw std::invalid_argument("psnr: mse must be >= 0");
    if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse_value);
}

inline MetricReport score(const FrameSequence& a, const FrameSequence& b) {
    MetricReport r;
    r.mse = mse(a, b);
    r.psnr_db = psnr(r.mse);
    r.per_frame_mse.resize(a.frames);
    const std::size_t n = a.frame_elems();
    for (std::size_t f = 0; f < a.frames; ++f) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(a.pixels[f * n + i]) -
                             static_cast<double>(b.pixels[f * n + i]);
            acc += d * d;
        }
        r.per_frame_mse[f] = acc / static_cast<double>(n);
    }
    return r;
}

// Frechet distance between Gaussian fits of two latent clouds with diagonal
// covariances: ||mu_a - mu_b||^2 + sum_i (va_i + vb_i - 2 sqrt(va_i vb_i)).
// Rows of each (N, d) array are samples; variances are the population fit.
inline double latent_frechet(const NdArray& a, const NdArray& b) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2) {
        throw std::invalid_argument("latent_frechet: inputs must be (N, d) sample sets");
    }
    const std::size_t na = a.shape().dims[0];
    const std::size_t nb = b.shape().dims[0];
    const std::size_t d = a.shape().dims[1];
    if (b.shape().dims[1] != d) throw std::invalid_argument("latent_frechet: dimension mismatch");
    if (na < 2 || nb < 2) throw std::invalid_argument("latent_frechet: need at least 2 samples each");

    double out = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < na; ++i) ma += a[i * d + j];
        for (std::size_t i = 0; i < nb; ++i) mb += b[i * d + j];
        ma /= static_cast<double>(na);
        mb /= static_cast<double>(nb);
        double va = 0.0, vb = 0.0;
        for (std::size_t i = 0; i < na; ++i) {
            const double c = a[i * d + j] - ma;
            va += c * c;
        }
        for (std::size_t i = 0; i < nb; ++i) {
            const double c = b[i * d + j] - mb;
            vb += c * c;
        }
        va /= static_cast<double>(na);
        vb /= static_cast<double>(nb);
        const double dm = ma - mb;
        out += dm * dm + va + vb - 2.0 * std::sqrt(va * vb);
    }
    return out;
}

}  // namespace sdgc
