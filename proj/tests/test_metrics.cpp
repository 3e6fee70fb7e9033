#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdgc/metrics.hpp"
#include "sdgc/rng.hpp"

using namespace sdgc;

TEST_CASE("mse basics and brute-force oracle") {
    FrameSequence a(2, 1, 1, 3), b(2, 1, 1, 3);
    CHECK(mse(a, a) == 0.0);
    for (auto& p : b.pixels) p = 255;
    CHECK(mse(a, b) == Catch::Approx(65025.0).margin(1e-12));

    Rng rng(1);
    FrameSequence x(3, 4, 5, 3), y(3, 4, 5, 3);
    for (auto& p : x.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    for (auto& p : y.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    double acc = 0.0;
    for (std::size_t f = 0; f < 3; ++f) {
        for (std::size_t yy = 0; yy < 4; ++yy) {
            for (std::size_t xx = 0; xx < 5; ++xx) {
                for (std::size_t c = 0; c < 3; ++c) {
                    const double d = static_cast<double>(x.at(f, yy, xx, c)) -
                                     static_cast<double>(y.at(f, yy, xx, c));
                    acc += d * d;
                }
            }
        }
    }
    acc /= static_cast<double>(x.pixels.size());
    CHECK(mse(x, y) == Catch::Approx(acc).margin(1e-9));
    CHECK(mse(y, x) == Catch::Approx(acc).margin(1e-9));

    FrameSequence other(2, 4, 5, 3);
    CHECK_THROWS_AS(mse(x, other), std::invalid_argument);
}

TEST_CASE("psnr decades and sentinel") {
    CHECK(psnr(65025.0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(psnr(650.25) == Catch::Approx(20.0).margin(1e-12));
    CHECK(std::isinf(psnr(0.0)));
    CHECK(psnr(0.0) > 0.0);
    CHECK_THROWS_AS(psnr(-1.0), std::invalid_argument);
    // strictly decreasing in mse
    CHECK(psnr(10.0) > psnr(20.0));
}

TEST_CASE("latent_frechet closed forms") {
    NdArray a(Shape{4, 1}, {0.0, 1.0, -1.0, 0.5});
    CHECK(latent_frechet(a, a) == Catch::Approx(0.0).margin(1e-12));

    // unit-variance clouds with means 0 and 3 in 1-D: distance 9
    const int n = 20000;
    Rng rng(2);
    NdArray x(Shape{n, 1}), y(Shape{n, 1});
    for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        y[i] = 3.0 + rng.normal();
    }
    CHECK(latent_frechet(x, y) == Catch::Approx(9.0).margin(0.15));

    CHECK_THROWS_AS(latent_frechet(NdArray(Shape{1, 2}), a), std::invalid_argument);
}

TEST_CASE("latent_frechet matches the direct formula") {
    Rng rng(3);
    const std::size_t na = 7, nb = 9, d = 4;
    NdArray a(Shape{na, d}), b(Shape{nb, d});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal() * 1.7 + 0.3;

    double want = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double ma = 0, mb = 0;
        for (std::size_t i = 0; i < na; ++i) ma += a[i * d + j] / na;
        for (std::size_t i = 0; i < nb; ++i) mb += b[i * d + j] / nb;
        double va = 0, vb = 0;
        for (std::size_t i = 0; i < na; ++i) va += (a[i * d + j] - ma) * (a[i * d + j] - ma) / na;
        for (std::size_t i = 0; i < nb; ++i) vb += (b[i * d + j] - mb) * (b[i * d + j] - mb) / nb;
        want += (ma - mb) * (ma - mb) + va + vb - 2.0 * std::sqrt(va * vb);
    }
    CHECK(latent_frechet(a, b) == Catch::Approx(want).margin(1e-9));
    CHECK(latent_frechet(a, b) >= 0.0);
}

TEST_CASE("score reports per-frame breakdown") {
    FrameSequence a(2, 2, 2, 3), b(2, 2, 2, 3);
    for (std::size_t i = 0; i < 12; ++i) b.pixels[i] = 10;  // first frame differs
    const MetricReport rep = score(a, b);
    REQUIRE(rep.per_frame_mse.size() == 2);
    CHECK(rep.per_frame_mse[0] == Catch::Approx(100.0).margin(1e-12));
    CHECK(rep.per_frame_mse[1] == 0.0);
    CHECK(rep.mse == Catch::Approx(50.0).margin(1e-12));
}
