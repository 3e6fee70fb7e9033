#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "sdgc/channel.hpp"
#include "sdgc/diffusion.hpp"
#include "sdgc/ndarray.hpp"
#include "sdgc/nn.hpp"
#include "sdgc/rng.hpp"

using namespace sdgc;

namespace {

constexpr std::size_t kToyDim = 16;

// shared fixture: a small latent codebook and denoisers trained on it once
struct ToyWorld {
    NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    std::vector<NdArray> latents;
    MlpModel eps_z;
    MlpModel eps_h;
    ChannelModel chan{FadingKind::rayleigh, 1.0, 1.0};

    ToyWorld() {
        Rng rng(515151);
        for (int i = 0; i < 24; ++i) {
            NdArray z(Shape{kToyDim});
            for (std::size_t j = 0; j < kToyDim; ++j) z[j] = rng.uniform(-1.7320508, 1.7320508);
            latents.push_back(std::move(z));
        }
        eps_z = make_mlp({kToyDim + 1, 64, 64, kToyDim}, Activation::tanh, Activation::identity, 8001);
        {
            Rng train_rng(727272);
            auto sampler = [this](Rng& r) { return latents[r.uniform_int(latents.size())]; };
            const SgdConfig cfg{2e-3, 12000, 16};
            train_eps(eps_z, sampler, sch, cfg, train_rng);
        }
        eps_h = make_mlp({2, 32, 32, 1}, Activation::tanh, Activation::identity, 8002);
        {
            Rng train_rng(737373);
            const ChannelModel c = chan;
            auto sampler = [c](Rng& r) {
                NdArray h(Shape{1});
                h[0] = sample_gain(c, r);
                return h;
            };
            const SgdConfig cfg{2e-3, 8000, 16};
            train_eps(eps_h, sampler, sch, cfg, train_rng);
        }
    }
};

const ToyWorld& toy() {
    static ToyWorld w;
    return w;
}

double sq_dist(const NdArray& a, const NdArray& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

TEST_CASE("noise schedule invariants") {
    const NoiseSchedule sch = NoiseSchedule::linear(1000, 1e-4, 0.02);
    CHECK(sch.alpha_bar_at(0) == 1.0);
    for (std::size_t t = 1; t <= sch.steps; ++t) {
        CHECK(sch.alpha_bar_at(t) < sch.alpha_bar_at(t - 1));
    }
    CHECK(sch.alpha_bar_at(1000) < 1e-4);
    CHECK_THROWS_AS(NoiseSchedule::linear(0, 1e-4, 0.02), config_error);
    CHECK_THROWS_AS(NoiseSchedule::linear(100, 0.0, 0.02), config_error);
    CHECK_THROWS_AS(NoiseSchedule::linear(100, 0.03, 0.02), config_error);
    CHECK_THROWS_AS(NoiseSchedule::linear(100, 1e-4, 1.0), config_error);
}

TEST_CASE("forward_sample limits") {
    const NoiseSchedule tiny = NoiseSchedule::linear(10, 1e-15, 1e-15);
    Rng rng(1);
    NdArray z0(Shape{4}, {1.0, -2.0, 0.5, 3.0});
    NdArray eps(Shape{4});
    for (std::size_t i = 0; i < 4; ++i) eps[i] = rng.normal();
    const NdArray zt = forward_sample(z0, 10, eps, tiny);
    for (std::size_t i = 0; i < 4; ++i) CHECK(zt[i] == Catch::Approx(z0[i]).margin(1e-6));

    const NoiseSchedule sch = NoiseSchedule::linear(100, 1e-4, 0.02);
    const NdArray zt2 = forward_sample(NdArray(Shape{4}), 60, eps, sch);
    const double scale = std::sqrt(1.0 - sch.alpha_bar_at(60));
    for (std::size_t i = 0; i < 4; ++i) CHECK(zt2[i] == Catch::Approx(scale * eps[i]).epsilon(1e-12));

    CHECK_THROWS_AS(forward_sample(z0, 0, eps, sch), std::invalid_argument);
    CHECK_THROWS_AS(forward_sample(z0, 101, eps, sch), std::invalid_argument);
}

TEST_CASE("forward_sample terminal variance Monte Carlo") {
    const NoiseSchedule sch = NoiseSchedule::linear(1000, 1e-4, 0.02);
    Rng rng(2);
    const NdArray z0(Shape{1}, {0.7});
    const int n = 100000;
    double m = 0.0, m2 = 0.0;
    NdArray eps(Shape{1});
    for (int i = 0; i < n; ++i) {
        eps[0] = rng.normal();
        const double v = forward_sample(z0, 1000, eps, sch)[0];
        m += v;
        m2 += v * v;
    }
    m /= n;
    const double var = m2 / n - m * m;
    CHECK(var == Catch::Approx(1.0).epsilon(0.03));
}

TEST_CASE("forward_sample marginal variance at interior steps") {
    const NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    Rng rng(3);
    const std::size_t t = 120;
    const double abar = sch.alpha_bar_at(t);
    // z0 drawn from a fixed distribution with variance v0
    const double v0 = 0.25;
    const int n = 100000;
    double m = 0.0, m2 = 0.0;
    NdArray z0(Shape{1}), eps(Shape{1});
    for (int i = 0; i < n; ++i) {
        z0[0] = 0.5 * rng.normal();
        eps[0] = rng.normal();
        const double v = forward_sample(z0, t, eps, sch)[0];
        m += v;
        m2 += v * v;
    }
    m /= n;
    const double var = m2 / n - m * m;
    CHECK(var == Catch::Approx(abar * v0 + (1.0 - abar)).epsilon(0.03));
}

TEST_CASE("tweedie_z0 inverts the forward closed form exactly") {
    const NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    Rng rng(4);
    NdArray z0(Shape{8}), eps(Shape{8});
    for (std::size_t i = 0; i < 8; ++i) {
        z0[i] = rng.normal();
        eps[i] = rng.normal();
    }
    for (std::size_t t : {std::size_t{1}, std::size_t{57}, std::size_t{200}}) {
        const NdArray zt = forward_sample(z0, t, eps, sch);
        const NdArray rec = tweedie_z0(zt, t, eps, sch);
        for (std::size_t i = 0; i < 8; ++i) {
            CHECK(std::fabs(rec[i] - z0[i]) <= 1e-12 * std::max(1.0, std::fabs(z0[i])));
        }
    }
    // eps_hat = 0 degenerates to z_t / sqrt(abar)
    const NdArray zt = forward_sample(z0, 100, eps, sch);
    const NdArray rec = tweedie_z0(zt, 100, NdArray(Shape{8}), sch);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(rec[i] == Catch::Approx(zt[i] / std::sqrt(sch.alpha_bar_at(100))).epsilon(1e-12));
    }
}

TEST_CASE("tweedie matches the analytic Gaussian posterior mean") {
    // data ~ N(mu0, v): the score-derived eps feeds tweedie_z0, which must
    // reproduce the closed-form posterior mean
    const NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    const double mu0 = 1.3, v = 0.49;
    Rng rng(5);
    for (std::size_t t : {std::size_t{5}, std::size_t{80}, std::size_t{200}}) {
        const double abar = sch.alpha_bar_at(t);
        const double marg_var = abar * v + (1.0 - abar);
        for (int i = 0; i < 10; ++i) {
            const double zt = std::sqrt(abar) * (mu0 + std::sqrt(v) * rng.normal()) +
                              std::sqrt(1 - abar) * rng.normal();
            const double score = -(zt - std::sqrt(abar) * mu0) / marg_var;
            NdArray eps_hat(Shape{1});
            eps_hat[0] = -std::sqrt(1.0 - abar) * score;
            const double posterior =
                (std::sqrt(abar) * v * zt + (1.0 - abar) * mu0) / (abar * v + 1.0 - abar);
            NdArray ztv(Shape{1});
            ztv[0] = zt;
            CHECK(tweedie_z0(ztv, t, eps_hat, sch)[0] == Catch::Approx(posterior).epsilon(1e-6));
        }
    }
}

TEST_CASE("likelihood gradient zeros and hand value") {
    const NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    NdArray zt(Shape{4}, {1.0, 2.0, -1.0, 0.5});
    const double h = 2.0;
    NdArray zp(zt.shape());
    for (std::size_t i = 0; i < 4; ++i) zp[i] = h * zt[i];
    const NdArray g = likelihood_grad_z(zt, zp, h, 50, sch);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == 0.0);

    const NdArray g0 = likelihood_grad_z(zt, zp, 0.0, 50, sch);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g0[i] == 0.0);

    // scalar: value = -w * (-2h(z'-hz)) with w from the schedule
    NdArray z1(Shape{1}, {1.0});
    NdArray zp1(Shape{1}, {3.0});
    const std::size_t t = 37;
    const double w = likelihood_weight(sch, t);
    CHECK(likelihood_grad_z(z1, zp1, 2.0, t, sch)[0] ==
          Catch::Approx(w * 2.0 * 2.0 * (3.0 - 2.0)).epsilon(1e-12));
}

TEST_CASE("likelihood gradient matches finite differences of the weighted misfit") {
    const NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    Rng rng(6);
    for (std::size_t t : {std::size_t{2}, std::size_t{50}, std::size_t{200}}) {
        const double w = likelihood_weight(sch, t);
        NdArray zt(Shape{5}), zp(Shape{5});
        for (std::size_t i = 0; i < 5; ++i) {
            zt[i] = rng.normal();
            zp[i] = rng.normal();
        }
        const double h = 1.3;
        const NdArray g = likelihood_grad_z(zt, zp, h, t, sch);
        auto f = [&](const NdArray& z) {
            double s = 0.0;
            for (std::size_t i = 0; i < 5; ++i) s += (zp[i] - h * z[i]) * (zp[i] - h * z[i]);
            return -w * s;
        };
        for (std::size_t i = 0; i < 5; ++i) {
            NdArray hi = zt, lo = zt;
            hi[i] += 1e-5;
            lo[i] -= 1e-5;
            const double fd = (f(hi) - f(lo)) / 2e-5;
            CHECK(std::fabs(g[i] - fd) / std::max({1.0, std::fabs(g[i]), std::fabs(fd)}) < 1e-6);
        }
        // gain derivative against the same oracle
        const double gh = likelihood_grad_h(h, zt, zp, t, sch);
        auto fh = [&](double hv) {
            double s = 0.0;
            for (std::size_t i = 0; i < 5; ++i) s += (zp[i] - hv * zt[i]) * (zp[i] - hv * zt[i]);
            return -w * s;
        };
        const double fdh = (fh(h + 1e-5) - fh(h - 1e-5)) / 2e-5;
        CHECK(std::fabs(gh - fdh) / std::max({1.0, std::fabs(gh), std::fabs(fdh)}) < 1e-6);
    }
}

TEST_CASE("likelihood weight stays finite at t=1") {
    const NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    const double w = likelihood_weight(sch, 1);
    CHECK(std::isfinite(w));
    CHECK(w == Catch::Approx(1.0 / sch.beta[0]).epsilon(1e-12));
}

TEST_CASE("train_eps zero steps leaves the model unchanged") {
    const NoiseSchedule sch = NoiseSchedule::linear(50, 1e-3, 0.05);
    MlpModel m = make_mlp({2, 8, 1}, Activation::tanh, Activation::identity, 404);
    const MlpModel before = m;
    Rng rng(7);
    auto sampler = [](Rng&) { return NdArray(Shape{1}); };
    const TrainEpsReport rep = train_eps(m, sampler, sch, SgdConfig{1e-3, 0, 4}, rng);
    CHECK(rep.steps_run == 0);
    CHECK(rep.final_loss == rep.initial_loss);
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        for (std::size_t i = 0; i < m.weights[l].size(); ++i) {
            CHECK(m.weights[l][i] == before.weights[l][i]);
        }
    }
}

TEST_CASE("train_eps learns the point-mass noise direction") {
    // data = point mass at 0 in 1-D: optimal eps-hat(z_t, t) = z_t/sqrt(1-abar_t)
    const NoiseSchedule sch = NoiseSchedule::linear(50, 1e-2, 0.2);
    MlpModel m = make_mlp({2, 48, 48, 1}, Activation::tanh, Activation::identity, 606);
    Rng rng(8);
    auto sampler = [](Rng&) { return NdArray(Shape{1}); };
    const TrainEpsReport rep = train_eps(m, sampler, sch, SgdConfig{3e-3, 20000, 16}, rng);
    CHECK(rep.final_loss < 0.05 * rep.initial_loss);

    Rng probe(9);
    for (int i = 0; i < 30; ++i) {
        const std::size_t t = 1 + probe.uniform_int(sch.steps);
        NdArray eps(Shape{1});
        eps[0] = probe.normal();
        const NdArray zt = forward_sample(NdArray(Shape{1}), t, eps, sch);
        const double want = zt[0] / std::sqrt(1.0 - sch.alpha_bar_at(t));
        const double got = eval_eps(m, zt, t, sch)[0];
        CHECK(std::fabs(got - want) < 0.25 * std::max(1.0, std::fabs(want)));
    }
}

TEST_CASE("train_eps is deterministic given the seed") {
    const NoiseSchedule sch = NoiseSchedule::linear(50, 1e-3, 0.05);
    auto run = [&]() {
        MlpModel m = make_mlp({2, 16, 1}, Activation::tanh, Activation::identity, 11);
        Rng rng(12);
        auto sampler = [](Rng& r) {
            NdArray z(Shape{1});
            z[0] = r.uniform(-1.0, 1.0);
            return z;
        };
        train_eps(m, sampler, sch, SgdConfig{1e-3, 200, 8}, rng);
        return m;
    };
    const MlpModel a = run();
    const MlpModel b = run();
    for (std::size_t l = 0; l < a.layer_count(); ++l) {
        for (std::size_t i = 0; i < a.weights[l].size(); ++i) {
            CHECK(a.weights[l][i] == b.weights[l][i]);
        }
    }
}

TEST_CASE("unconditional reverse sampling covers both mixture modes") {
    // 1-D mixture at +-2; zeta = 0 reduces sd_denoise to the unconditional chain
    const NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    MlpModel m = make_mlp({2, 48, 48, 1}, Activation::tanh, Activation::identity, 321);
    Rng rng(13);
    auto sampler = [](Rng& r) {
        NdArray z(Shape{1});
        z[0] = (r.uniform() < 0.5 ? -2.0 : 2.0) + 0.2 * r.normal();
        return z;
    };
    train_eps(m, sampler, sch, SgdConfig{3e-3, 15000, 16}, rng);

    Rng sample_rng(14);
    const NdArray dummy(Shape{1});
    int pos = 0;
    const int n = 500;
    for (int i = 0; i < n; ++i) {
        const NdArray out = sd_denoise(dummy, 1.0, m, sch, GuidanceWeights::constant(0.0), sample_rng);
        if (out[0] > 0.0) ++pos;
    }
    const double frac = static_cast<double>(pos) / n;
    CHECK(frac > 0.4);
    CHECK(frac < 0.6);
}

TEST_CASE("sd_denoise rejects an empty schedule") {
    const NoiseSchedule empty;
    const MlpModel m = make_mlp({2, 4, 1}, Activation::tanh, Activation::identity, 5);
    Rng rng(15);
    CHECK_THROWS_AS(sd_denoise(NdArray(Shape{1}), 1.0, m, empty, GuidanceWeights{}, rng),
                    std::invalid_argument);
}

TEST_CASE("sd_denoise near-noiseless recovery with strong guidance") {
    const ToyWorld& w = toy();
    Rng rng(16);
    int ok = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const NdArray& z = w.latents[trial % w.latents.size()];
        // sigma2 -> 0, h = 1: z' equals z
        Rng chain = Rng::split(99, {static_cast<std::uint64_t>(trial)});
        const NdArray out = sd_denoise(z, 1.0, w.eps_z, w.sch, GuidanceWeights::constant(0.45), chain);
        const double rel = std::sqrt(sq_dist(out, z) / sq_dist(z, NdArray(Shape{kToyDim})));
        if (rel < 0.05) ++ok;
    }
    CHECK(ok >= 18);
}

TEST_CASE("sd_denoise beats zero-forcing on point-mass data") {
    // 1-D point mass; |z_tilde - z| < |z'/h - z| in >= 90% of 200 trials at 10 dB
    const NoiseSchedule sch = NoiseSchedule::linear(200, 1e-4, 0.02);
    MlpModel m = make_mlp({2, 32, 32, 1}, Activation::tanh, Activation::identity, 999);
    Rng rng(17);
    const double z0 = 1.2;
    auto sampler = [z0](Rng&) {
        NdArray z(Shape{1});
        z[0] = z0;
        return z;
    };
    train_eps(m, sampler, sch, SgdConfig{3e-3, 12000, 16}, rng);

    const double sigma2 = 0.1;
    Rng trial_rng(18);
    int wins = 0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        const double h = sample_gain(ChannelModel{FadingKind::rayleigh, 1.0, 1.0}, trial_rng);
        if (h < 1e-3) continue;  // zero-forcing undefined at h ~ 0
        NdArray z(Shape{1});
        z[0] = z0;
        const NdArray zp = transmit(z, ChannelRealization{h, sigma2}, trial_rng);
        Rng chain = Rng::split(20, {static_cast<std::uint64_t>(i)});
        const NdArray out =
            sd_denoise(zp, h, m, sch, GuidanceWeights::constant(0.5 / (1.0 + h * h)), chain);
        const double err_sd = std::fabs(out[0] - z0);
        const double err_zf = std::fabs(zp[0] / h - z0);
        if (err_sd < err_zf) ++wins;
    }
    CHECK(wins >= 0.9 * n);
}

TEST_CASE("psd degeneracy: zero step size disables the l1 refinement") {
    const ToyWorld& w = toy();
    const NdArray& z = w.latents[0];
    Rng noise(21);
    const NdArray zp = transmit(z, ChannelRealization{1.2, 0.1}, noise);
    auto run = [&](double alpha_step, double phi) {
        Rng chain(22);
        return psd_denoise(zp, w.eps_z, w.eps_h, w.sch, GuidanceWeights::constant(0.15),
                           GuidanceWeights::constant(0.0), RegParams{alpha_step, phi}, chain);
    };
    const PsdResult a = run(0.0, 0.0);
    const PsdResult b = run(0.0, 7.0);  // phi is irrelevant once alpha_step = 0
    CHECK(a.h_hat == b.h_hat);
    for (std::size_t i = 0; i < kToyDim; ++i) CHECK(a.z[i] == b.z[i]);
    CHECK(a.h_hat >= 0.0);
}

TEST_CASE("psd estimates the channel gain") {
    const ToyWorld& w = toy();
    const double sigma2 = 0.1;
    const double h_true = 1.5;
    std::vector<double> errs;
    for (int trial = 0; trial < 60; ++trial) {
        const NdArray& z = w.latents[trial % w.latents.size()];
        Rng noise = Rng::split(23, {static_cast<std::uint64_t>(trial)});
        const NdArray zp = transmit(z, ChannelRealization{h_true, sigma2}, noise);
        Rng chain = Rng::split(24, {static_cast<std::uint64_t>(trial)});
        const PsdResult res = psd_denoise(zp, w.eps_z, w.eps_h, w.sch,
                                          GuidanceWeights::constant(0.15),
                                          GuidanceWeights::constant(0.5 / kToyDim),
                                          RegParams{0.05, 0.01}, chain);
        errs.push_back(std::fabs(res.h_hat - h_true) / h_true);
    }
    std::sort(errs.begin(), errs.end());
    CHECK(errs[errs.size() / 2] < 0.10);
}

TEST_CASE("psd is invariant to a joint scale of observation and gain") {
    const ToyWorld& w = toy();
    const double sigma2 = 1e-6;  // near-noiseless so the scale family is exact
    const NdArray& z = w.latents[3];
    auto run = [&](double scale) {
        NdArray zp(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) zp[i] = scale * 1.0 * z[i];
        Rng chain(26);
        return psd_denoise(zp, w.eps_z, w.eps_h, w.sch, GuidanceWeights::constant(0.15),
                           GuidanceWeights::constant(0.5 / kToyDim), RegParams{0.05, 0.01}, chain);
    };
    const PsdResult base = run(1.0);
    const PsdResult scaled = run(1.4);
    const double rel = std::sqrt(sq_dist(base.z, scaled.z) /
                                 std::max(1e-12, sq_dist(base.z, NdArray(Shape{kToyDim}))));
    CHECK(rel < 0.05);
}

TEST_CASE("msd with a noiseless pilot reproduces sd with the true gain") {
    const ToyWorld& w = toy();
    const double h = 1.1;
    const NdArray& z = w.latents[5];
    Rng noise(27);
    const NdArray zp = transmit(z, ChannelRealization{h, 0.05}, noise);
    NdArray pilot(Shape{64});
    for (std::size_t i = 0; i < 64; ++i) pilot[i] = i % 2 == 0 ? 1.0 : -1.0;
    NdArray rpilot(pilot.shape());
    for (std::size_t i = 0; i < 64; ++i) rpilot[i] = h * pilot[i];

    Rng chain_a(28), chain_b(28);
    const GuidanceWeights zeta = GuidanceWeights::constant(0.3);
    const NdArray a = msd_denoise(zp, pilot, rpilot, 1e-30, w.eps_z, w.sch, zeta, chain_a);
    const NdArray b = sd_denoise(zp, h, w.eps_z, w.sch, zeta, chain_b);
    for (std::size_t i = 0; i < kToyDim; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("msd with a zero estimate still produces a finite sample") {
    const ToyWorld& w = toy();
    const NdArray& z = w.latents[7];
    Rng noise(29);
    const NdArray zp = transmit(z, ChannelRealization{1.0, 0.1}, noise);
    NdArray pilot(Shape{16});
    for (std::size_t i = 0; i < 16; ++i) pilot[i] = i % 2 == 0 ? 1.0 : -1.0;
    Rng chain(30);
    const NdArray out = msd_denoise(zp, pilot, NdArray(pilot.shape()), 0.1, w.eps_z, w.sch,
                                    GuidanceWeights::constant(0.3), chain);
    CHECK(out.all_finite());
}

TEST_CASE("msd never beats sd with the true gain on average") {
    const ToyWorld& w = toy();
    const double sigma2 = 0.1;
    NdArray pilot(Shape{16});
    for (std::size_t i = 0; i < 16; ++i) pilot[i] = i % 2 == 0 ? 1.0 : -1.0;
    double mse_sd = 0.0, mse_msd = 0.0;
    const int n = 100;
    for (int trial = 0; trial < n; ++trial) {
        const NdArray& z = w.latents[trial % w.latents.size()];
        Rng noise = Rng::split(31, {static_cast<std::uint64_t>(trial)});
        const double h = sample_gain(w.chan, noise);
        const NdArray zp = transmit(z, ChannelRealization{h, sigma2}, noise);
        const NdArray rpilot = transmit(pilot, ChannelRealization{h, sigma2}, noise);
        Rng ca = Rng::split(32, {static_cast<std::uint64_t>(trial)});
        Rng cb = Rng::split(32, {static_cast<std::uint64_t>(trial)});
        const NdArray sd = sd_denoise(zp, h, w.eps_z, w.sch,
                                      GuidanceWeights::constant(0.5 / (1.0 + h * h)), ca);
        const double h_hat = mmse_estimate_gain(pilot, rpilot, sigma2);
        const NdArray md = sd_denoise(zp, h_hat, w.eps_z, w.sch,
                                      GuidanceWeights::constant(0.5 / (1.0 + h_hat * h_hat)), cb);
        mse_sd += sq_dist(sd, z) / n;
        mse_msd += sq_dist(md, z) / n;
    }
    CHECK(mse_msd >= mse_sd);
}

TEST_CASE("denoise_subsequent equalizes with the recovered gain") {
    Rng rng(33);
    NdArray z(Shape{8});
    for (std::size_t i = 0; i < 8; ++i) z[i] = rng.normal();
    // noiseless channel with the true gain recovers the payload
    NdArray zp(z.shape());
    for (std::size_t i = 0; i < 8; ++i) zp[i] = 2.0 * z[i];
    const auto out = denoise_subsequent({zp}, 2.0, 1e-30, 1.0);
    REQUIRE(out.size() == 1);
    for (std::size_t i = 0; i < 8; ++i) CHECK(out[0][i] == Catch::Approx(z[i]).epsilon(1e-10));

    // single keyframe: nothing to do
    CHECK(denoise_subsequent({}, 2.0, 0.1, 1.0).empty());

    // equalizer beats zero-forcing on average at 10 dB
    double mse_eq = 0.0, mse_zf = 0.0;
    const int n = 4000;
    Rng trial(34);
    for (int i = 0; i < n; ++i) {
        const double h = 1.5;
        const double sigma2 = 0.1;
        NdArray one(Shape{1});
        one[0] = trial.normal();
        const NdArray obs = transmit(one, ChannelRealization{h, sigma2}, trial);
        const NdArray eq = mmse_equalize(obs, h, sigma2, 1.0);
        mse_eq += (eq[0] - one[0]) * (eq[0] - one[0]) / n;
        const double zf = obs[0] / h;
        mse_zf += (zf - one[0]) * (zf - one[0]) / n;
    }
    CHECK(mse_eq < mse_zf);
}

TEST_CASE("denoiser checkpoints round-trip and validate compatibility") {
    const ToyWorld& w = toy();
    const std::string path = "test_eps_z.ckpt";
    save_denoiser(path, w.eps_z, "eps_z", w.sch);
    const MlpModel back = load_denoiser(path, "eps_z", w.sch, Activation::tanh, Activation::identity);
    for (std::size_t l = 0; l < back.layer_count(); ++l) {
        for (std::size_t i = 0; i < back.weights[l].size(); ++i) {
            CHECK(back.weights[l][i] == w.eps_z.weights[l][i]);
        }
    }
    CHECK_THROWS_AS(load_denoiser(path, "eps_h", w.sch, Activation::tanh, Activation::identity),
                    config_error);
    const NoiseSchedule other = NoiseSchedule::linear(100, 1e-4, 0.02);
    CHECK_THROWS_AS(load_denoiser(path, "eps_z", other, Activation::tanh, Activation::identity),
                    config_error);
    std::filesystem::remove(path);
}

TEST_CASE("denoisers replay bit-identically for a fixed seed") {
    const ToyWorld& w = toy();
    const NdArray& z = w.latents[2];
    Rng noise(35);
    const NdArray zp = transmit(z, ChannelRealization{1.3, 0.1}, noise);
    Rng a(36), b(36);
    const NdArray ra = sd_denoise(zp, 1.3, w.eps_z, w.sch, GuidanceWeights::constant(0.2), a);
    const NdArray rb = sd_denoise(zp, 1.3, w.eps_z, w.sch, GuidanceWeights::constant(0.2), b);
    for (std::size_t i = 0; i < kToyDim; ++i) CHECK(ra[i] == rb[i]);

    Rng c(37), d(37);
    const PsdResult pa = psd_denoise(zp, w.eps_z, w.eps_h, w.sch, GuidanceWeights::constant(0.15),
                                     GuidanceWeights::constant(0.03), RegParams{0.05, 0.01}, c);
    const PsdResult pb = psd_denoise(zp, w.eps_z, w.eps_h, w.sch, GuidanceWeights::constant(0.15),
                                     GuidanceWeights::constant(0.03), RegParams{0.05, 0.01}, d);
    CHECK(pa.h_hat == pb.h_hat);
    for (std::size_t i = 0; i < kToyDim; ++i) CHECK(pa.z[i] == pb.z[i]);
}
