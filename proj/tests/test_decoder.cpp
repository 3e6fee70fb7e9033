#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sdgc/decoder.hpp"
#include "sdgc/rng.hpp"
#include "oracles.hpp"

using namespace sdgc;
using oracles::bruteforce_attention;
using oracles::dark_centroid_x;
using oracles::square_frame;

namespace {

NdArray random_features(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
    NdArray a(Shape{h, w, c});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
    return a;
}

NdArray random_projection(std::size_t c, Rng& rng) {
    NdArray m(Shape{c, c});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("reconstruct_keyframes chains residuals and rejects a missing base") {
    DecoderNet dec = make_decoder({4, 8, 12}, 1);
    ReceivedPayload payload;
    CHECK_THROWS_AS(reconstruct_keyframes(payload, dec, 2, 2), std::invalid_argument);

    payload.first_latent = NdArray(Shape{4}, {0.1, -0.2, 0.3, 0.4});
    SparseDiff zero;
    zero.dim = 4;
    payload.residuals.push_back(zero);
    const ReconstructedKeyframes out = reconstruct_keyframes(payload, dec, 2, 2);
    REQUIRE(out.frames.size() == 2);
    for (std::size_t i = 0; i < out.frames[0].size(); ++i) {
        CHECK(out.frames[0][i] == out.frames[1][i]);  // zero residual repeats the frame
        CHECK(out.frames[0][i] >= 0.0);
        CHECK(out.frames[0][i] <= 255.0);
    }
}

TEST_CASE("attention rows are probability vectors") {
    Rng rng(2);
    const auto ai = random_features(5, 5, 6, rng);
    const auto aj = random_features(5, 5, 6, rng);
    AttentionProjections proj{random_projection(6, rng), random_projection(6, rng),
                              random_projection(6, rng)};
    const AttentionResult res = interframe_attention(ai, aj, 3, proj);
    for (std::size_t p = 0; p < 25; ++p) {
        double sum = 0.0;
        for (std::size_t o = 0; o < 9; ++o) {
            const double s = res.scores[p * 9 + o];
            CHECK(s >= 0.0);
            sum += s;
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("attention over a constant neighbor map is uniform") {
    Rng rng(3);
    const auto ai = random_features(4, 4, 5, rng);
    const NdArray aj = NdArray::full(Shape{4, 4, 5}, 0.37);
    AttentionProjections proj{random_projection(5, rng), random_projection(5, rng),
                              random_projection(5, rng)};
    const AttentionResult res = interframe_attention(ai, aj, 3, proj);
    for (std::size_t p = 0; p < 16; ++p) {
        for (std::size_t o = 0; o < 9; ++o) {
            CHECK(res.scores[p * 9 + o] == Catch::Approx(1.0 / 9.0).margin(1e-12));
        }
    }
}

TEST_CASE("attention matches the brute-force evaluation") {
    Rng rng(4);
    const auto ai = random_features(4, 4, 5, rng);
    const auto aj = random_features(4, 4, 5, rng);
    AttentionProjections proj{random_projection(5, rng), random_projection(5, rng),
                              random_projection(5, rng)};
    const AttentionResult res = interframe_attention(ai, aj, 3, proj);
    NdArray scores, refined;
    bruteforce_attention(ai, aj, 3, proj, scores, refined);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        CHECK(std::fabs(res.scores[i] - scores[i]) < 1e-10);
    }
    for (std::size_t i = 0; i < refined.size(); ++i) {
        CHECK(std::fabs(res.refined[i] - refined[i]) < 1e-10);
    }
}

TEST_CASE("attention rejects invalid windows") {
    Rng rng(5);
    const auto ai = random_features(4, 4, 5, rng);
    AttentionProjections proj{random_projection(5, rng), random_projection(5, rng),
                              random_projection(5, rng)};
    CHECK_THROWS_AS(interframe_attention(ai, ai, 5, proj), std::invalid_argument);  // > grid
    CHECK_THROWS_AS(interframe_attention(ai, ai, 2, proj), std::invalid_argument);  // even
}

TEST_CASE("motion_vector on uniform scores is zero everywhere") {
    const std::size_t h = 4, w = 4;
    NdArray scores = NdArray::full(Shape{h, w, 9}, 1.0 / 9.0);
    const NdArray m = motion_vector(scores, identity_coords(h, w), 3);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(std::fabs(m[i]) < 1e-14);
}

TEST_CASE("motion_vector point mass gives the offset") {
    const std::size_t h = 3, w = 3;
    NdArray scores(Shape{h, w, 9});
    // offset (+1, 0): dy = 0, dx = +1 -> window index (0+1)*3 + (1+1) = 5
    for (std::size_t p = 0; p < h * w; ++p) scores[p * 9 + 5] = 1.0;
    const NdArray m = motion_vector(scores, identity_coords(h, w), 3);
    for (std::size_t p = 0; p < h * w; ++p) {
        CHECK(m[p * 2 + 0] == Catch::Approx(1.0).margin(1e-14));
        CHECK(m[p * 2 + 1] == Catch::Approx(0.0).margin(1e-14));
    }
}

TEST_CASE("motion_vector matches a nested-loop evaluation") {
    Rng rng(6);
    const std::size_t h = 4, w = 4;
    NdArray scores(Shape{h, w, 9});
    for (std::size_t p = 0; p < h * w; ++p) {
        double sum = 0.0;
        for (std::size_t o = 0; o < 9; ++o) {
            scores[p * 9 + o] = rng.uniform();
            sum += scores[p * 9 + o];
        }
        for (std::size_t o = 0; o < 9; ++o) scores[p * 9 + o] /= sum;
    }
    const NdArray coords = identity_coords(h, w);
    const NdArray m = motion_vector(scores, coords, 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double ex = 0.0, ey = 0.0;
            std::size_t oi = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx, ++oi) {
                    const double s = scores[(y * w + x) * 9 + oi];
                    ex += s * (static_cast<double>(x) + dx);
                    ey += s * (static_cast<double>(y) + dy);
                }
            }
            CHECK(std::fabs(m[(y * w + x) * 2 + 0] - (ex - x)) < 1e-10);
            CHECK(std::fabs(m[(y * w + x) * 2 + 1] - (ey - y)) < 1e-10);
        }
    }
}

TEST_CASE("scale_motion is exact and homogeneous") {
    Rng rng(7);
    NdArray m(Shape{3, 3, 2});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
    const NdArray half = scale_motion(m, 2.0, 4.0);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(half[i] == 0.5 * m[i]);
    const NdArray quarter = scale_motion(m, 1.0, 4.0);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(quarter[i] == 0.25 * m[i]);

    NdArray twice(m.shape());
    for (std::size_t i = 0; i < m.size(); ++i) twice[i] = 2.0 * m[i];
    const NdArray a = scale_motion(twice, 1.0, 4.0);
    const NdArray b = scale_motion(m, 1.0, 4.0);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(a[i] == 2.0 * b[i]);

    CHECK_THROWS_AS(scale_motion(m, 0.0, 4.0), std::invalid_argument);
    CHECK_THROWS_AS(scale_motion(m, 4.0, 4.0), std::invalid_argument);
}

TEST_CASE("warp_fuse masks select the expected frame") {
    Rng rng(8);
    NdArray xi(Shape{6, 6, 3}), xj(Shape{6, 6, 3});
    for (std::size_t i = 0; i < xi.size(); ++i) {
        xi[i] = rng.uniform(0.0, 255.0);
        xj[i] = rng.uniform(0.0, 255.0);
    }
    const NdArray zero_flow(Shape{6, 6, 2});
    FlowMask keep_i{zero_flow, zero_flow, NdArray::full(Shape{6, 6}, 1.0)};
    const NdArray oi = warp_fuse(xi, xj, keep_i);
    for (std::size_t i = 0; i < xi.size(); ++i) CHECK(oi[i] == xi[i]);

    FlowMask keep_j{zero_flow, zero_flow, NdArray::full(Shape{6, 6}, 0.0)};
    const NdArray oj = warp_fuse(xi, xj, keep_j);
    for (std::size_t i = 0; i < xi.size(); ++i) CHECK(oj[i] == xj[i]);

    // equal frames: any valid mask returns the common frame
    NdArray mask(Shape{6, 6});
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform();
    FlowMask blend{zero_flow, zero_flow, mask};
    const NdArray same = warp_fuse(xi, xi, blend);
    for (std::size_t i = 0; i < xi.size(); ++i) CHECK(same[i] == Catch::Approx(xi[i]).margin(1e-12));

    FlowMask bad{zero_flow, zero_flow, NdArray::full(Shape{6, 6}, 1.5)};
    CHECK_THROWS_AS(warp_fuse(xi, xj, bad), std::invalid_argument);
}

TEST_CASE("backward_warp shifts by integer flows") {
    NdArray img(Shape{4, 6, 3});
    Rng rng(9);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(0.0, 255.0);
    NdArray flow(Shape{4, 6, 2});
    for (std::size_t p = 0; p < 24; ++p) flow[p * 2 + 0] = 1.0;  // sample one column right
    const NdArray out = backward_warp(img, flow);
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x + 1 < 6; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK(out[(y * 6 + x) * 3 + c] == img[(y * 6 + x + 1) * 3 + c]);
            }
        }
        // border clamp
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(out[(y * 6 + 5) * 3 + c] == img[(y * 6 + 5) * 3 + c]);
        }
    }
}

TEST_CASE("splat_motion keeps a uniform field and re-centers moved cells") {
    NdArray motion(Shape{4, 4, 2});
    for (std::size_t p = 0; p < 16; ++p) motion[p * 2 + 0] = 2.0;
    const NdArray out = splat_motion(motion, 0.5);
    // every cell receives the value from one cell to its left; interior cells all 2
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 1; x < 4; ++x) {
            CHECK(out[(y * 4 + x) * 2 + 0] == Catch::Approx(2.0).margin(1e-12));
        }
        CHECK(out[(y * 4 + 0) * 2 + 0] == 0.0);  // hole at the vacated border
    }
}

TEST_CASE("refine with a zero-initialized net is the identity bit for bit") {
    const RefineNet rn = make_refine_net(16, 77);
    Rng rng(10);
    NdArray frame(Shape{8, 8, 3});
    for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = rng.uniform(0.0, 255.0);
    NdArray low(Shape{8, 8, 8}), app(Shape{8, 8, 4});
    for (std::size_t i = 0; i < low.size(); ++i) low[i] = rng.normal();
    for (std::size_t i = 0; i < app.size(); ++i) app[i] = rng.normal();
    const NdArray out = refine(frame, low, app, rn);
    for (std::size_t i = 0; i < frame.size(); ++i) CHECK(out[i] == frame[i]);
}

TEST_CASE("refine clamps to the pixel range") {
    RefineNet rn = make_refine_net(4, 78);
    const std::size_t last = rn.net.layer_count() - 1;
    for (std::size_t i = 0; i < rn.net.biases[last].size(); ++i) rn.net.biases[last][i] = 10.0;
    NdArray frame = NdArray::full(Shape{2, 2, 3}, 250.0);
    NdArray low(Shape{2, 2, 8}), app(Shape{2, 2, 4});
    const NdArray out = refine(frame, low, app, rn);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 255.0);
}

TEST_CASE("interpolation of identical keyframes reproduces the frame") {
    const InterpolationModel model = make_interpolation_model(3, 8, 123);
    Rng rng(11);
    // textured frame so the attention self-match actually matters
    NdArray frame(Shape{16, 16, 3});
    for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = rng.uniform(0.0, 255.0);
    const std::vector<NdArray> keyframes{frame, frame};
    const auto out = interpolate_video_real(keyframes, {0, 4}, 5, model);
    REQUIRE(out.size() == 5);
    for (std::size_t f = 0; f < 5; ++f) {
        for (std::size_t i = 0; i < frame.size(); ++i) {
            CHECK(std::fabs(out[f][i] - frame[i]) < 1e-5);
        }
    }
}

TEST_CASE("all-keyframe interpolation returns the inputs verbatim") {
    const InterpolationModel model = make_interpolation_model(3, 8, 124);
    Rng rng(12);
    std::vector<NdArray> frames;
    for (int f = 0; f < 3; ++f) {
        NdArray fr(Shape{8, 8, 3});
        for (std::size_t i = 0; i < fr.size(); ++i) fr[i] = rng.uniform(0.0, 255.0);
        frames.push_back(std::move(fr));
    }
    const auto out = interpolate_video_real(frames, {0, 1, 2}, 3, model);
    for (std::size_t f = 0; f < 3; ++f) {
        for (std::size_t i = 0; i < frames[f].size(); ++i) CHECK(out[f][i] == frames[f][i]);
    }
}

TEST_CASE("interpolation validates the keyframe cover") {
    const InterpolationModel model = make_interpolation_model(3, 8, 125);
    const NdArray frame(Shape{8, 8, 3});
    CHECK_THROWS_AS(interpolate_video_real({frame}, {0}, 3, model), std::invalid_argument);
    CHECK_THROWS_AS(interpolate_video_real({frame, frame}, {0, 1}, 3, model), std::invalid_argument);
    CHECK_THROWS_AS(interpolate_video_real({frame, frame}, {1, 2}, 3, model), std::invalid_argument);
}

TEST_CASE("translating square lands within one pixel at the midpoint") {
    const InterpolationModel model = make_interpolation_model(5, 8, 126);
    // 2 px/frame rightward translation, keyframes at t=0 and t=4
    const NdArray f0 = square_frame(32, 32, 6, 12, 8);
    const NdArray f4 = square_frame(32, 32, 14, 12, 8);
    const NdArray truth = square_frame(32, 32, 10, 12, 8);
    const auto out = interpolate_video_real({f0, f4}, {0, 4}, 5, model);
    const double got = dark_centroid_x(out[2]);
    const double want = dark_centroid_x(truth);
    CHECK(std::fabs(got - want) <= 1.0);
}
