#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include <erpkit/vae.hpp>

#include "testutil.hpp"

using namespace erpkit;

namespace {

// Small synthetic image set: smooth per-image waveforms in [0, 1].
std::vector<ErpImage> toy_dataset(int n, std::uint64_t seed = 11) {
    Rng rng(seed);
    std::vector<ErpImage> out(n);
    for (int i = 0; i < n; ++i) {
        const double f = rng.uniform(1.0, 5.0);
        const double phase = rng.uniform(0.0, 6.28);
        for (int r = 0; r < kImageRows; ++r)
            for (int c = 0; c < kImageCols; ++c)
                out[i].at(r, c) =
                    0.5 + 0.4 * std::sin(2.0 * 3.14159265 * f * c / 256.0 + phase + 0.3 * r);
    }
    return out;
}

} // namespace

TEST_CASE("encode is deterministic and finite") {
    VaeModel<double> model(VaeMode::bvae, 3);
    const auto ds = toy_dataset(1);
    const auto a = model.encode(ds[0]);
    const auto b = model.encode(ds[0]);
    CHECK(a.mean.values == b.mean.values);
    CHECK(a.logvar.values == b.logvar.values);
    for (double v : a.mean.values) CHECK(std::isfinite(v));
    for (double v : a.logvar.values) {
        CHECK(std::isfinite(v));
        CHECK(std::exp(v) > 0.0);
    }
}

TEST_CASE("sample_latent") {
    LatentPosterior<double> post{Tensor<double>({1, kLatentDim}), Tensor<double>({1, kLatentDim})};
    for (int d = 0; d < kLatentDim; ++d) {
        post.mean[d] = 0.1 * d;
        post.logvar[d] = -0.2 + 0.05 * d;
    }

    SECTION("zero noise returns the mean") {
        Tensor<double> zero({1, kLatentDim});
        const auto z = VaeModel<double>::sample_latent(post, zero);
        CHECK(z.values == post.mean.values);
    }
    SECTION("clamped-to-tiny variance pins the sample to the mean") {
        LatentPosterior<double> tight = post;
        tight.logvar.fill(kLogvarClampLo);
        Tensor<double> noise({1, kLatentDim});
        noise.fill(3.0);
        const auto z = VaeModel<double>::sample_latent(tight, noise);
        for (int d = 0; d < kLatentDim; ++d)
            CHECK(z[d] == Catch::Approx(tight.mean[d]).margin(0.03));
    }
    SECTION("empirical variance matches exp(logvar) within 2%") {
        Rng rng(41);
        const int draws = 100000;
        std::array<double, kLatentDim> acc{}, acc2{};
        Tensor<double> noise({1, kLatentDim});
        for (int s = 0; s < draws; ++s) {
            for (auto& v : noise.values) v = rng.normal();
            const auto z = VaeModel<double>::sample_latent(post, noise);
            for (int d = 0; d < kLatentDim; ++d) {
                acc[d] += z[d];
                acc2[d] += z[d] * z[d];
            }
        }
        for (int d = 0; d < kLatentDim; ++d) {
            const double mean = acc[d] / draws;
            const double var = acc2[d] / draws - mean * mean;
            CHECK(var == Catch::Approx(std::exp(post.logvar[d])).epsilon(0.02));
        }
    }
}

TEST_CASE("decode stays inside (0, 1) with the right shape") {
    VaeModel<double> model(VaeMode::bvae, 5);
    Rng rng(6);
    Tensor<double> z = testutil::random_tensor({1, kLatentDim}, rng, -2.0, 2.0);
    const auto a = model.decode(z);
    CHECK(a.shape == std::vector<int>{1, kImageRows, kImageCols});
    for (double v : a.values) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    const auto b = model.decode(z);
    CHECK(a.values == b.values);
}

TEST_CASE("vae_loss structure") {
    VaeModel<double> model(VaeMode::bvae, 7);
    const auto ds = toy_dataset(1, 21);
    Rng rng(9);
    Tensor<double> noise({1, kLatentDim});
    for (auto& v : noise.values) v = rng.normal();

    SECTION("posterior forced to the prior has zero KL") {
        LatentPosterior<double> prior{Tensor<double>({1, kLatentDim}),
                                      Tensor<double>({1, kLatentDim})};
        Tensor<double> x = ds[0].to_tensor<double>();
        const auto parts = model.loss_from_posterior(prior, x, 1.0, noise);
        CHECK(parts.kl == 0.0);
        CHECK(parts.total == parts.recon_nll);
    }
    SECTION("loss is linear in beta at fixed noise") {
        const auto p0 = vae_loss(model, ds[0], 0.0, noise);
        const auto p1 = vae_loss(model, ds[0], 1.0, noise);
        const auto p2 = vae_loss(model, ds[0], 2.0, noise);
        CHECK(p0.total == Catch::Approx(p0.recon_nll));
        const double excess1 = p1.total - p1.recon_nll;
        const double excess2 = p2.total - p2.recon_nll;
        CHECK(excess2 == Catch::Approx(2.0 * excess1).epsilon(1e-12));
    }
    SECTION("ELBO decomposition holds on the same pass") {
        const auto p = vae_loss(model, ds[0], 1.7, noise);
        CHECK(p.total - 1.7 * p.kl == Catch::Approx(p.recon_nll).margin(1e-10));
    }
}

TEST_CASE("reparameterization gradients match finite differences") {
    VaeModel<double> model(VaeMode::bvae, 13);
    const auto ds = toy_dataset(1, 22);
    Tensor<double> x = ds[0].to_tensor<double>();
    Rng rng(31);
    Tensor<double> noise({1, kLatentDim});
    for (auto& v : noise.values) v = rng.normal();

    LatentPosterior<double> post = model.encode(x);
    Tensor<double> dmean, dlogvar;
    model.loss_from_posterior(post, x, 1.0, noise, &dmean, &dlogvar);

    std::vector<double> flat(post.mean.values);
    flat.insert(flat.end(), post.logvar.values.begin(), post.logvar.values.end());
    std::vector<double> analytic(dmean.values);
    analytic.insert(analytic.end(), dlogvar.values.begin(), dlogvar.values.end());

    auto eval = [&](const std::vector<double>& v) {
        LatentPosterior<double> p{Tensor<double>({1, kLatentDim}, {v.begin(), v.begin() + 10}),
                                  Tensor<double>({1, kLatentDim}, {v.begin() + 10, v.end()})};
        return model.loss_from_posterior(p, x, 1.0, noise).total;
    };
    auto res = testutil::grad_check(eval, flat, analytic, rng, 40, 1e-5);
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("ae_loss") {
    const auto ds = toy_dataset(1, 23);

    SECTION("mode mismatch is rejected") {
        VaeModel<double> bvae(VaeMode::bvae, 3);
        CHECK_THROWS_AS(ae_loss(bvae, ds[0]), SpecError);
    }
    SECTION("fresh model has a positive loss") {
        VaeModel<double> ae(VaeMode::ae, 3);
        CHECK(ae_loss(ae, ds[0]) > 0.0);
    }
}

TEST_CASE("train_vae basics") {
    const auto ds = toy_dataset(2, 31);

    SECTION("zero iterations returns the initialization") {
        TrainConfig cfg;
        cfg.iterations = 0;
        cfg.seed = 77;
        const auto ckpt = train_vae<float>(ds, cfg);
        VaeModel<float> fresh(VaeMode::bvae, derive_seed(cfg.seed, "init"));
        CHECK(ckpt.parameters == fresh.dump_parameters());
        CHECK(ckpt.step == 0);
    }
    SECTION("identical configs give bit-identical checkpoints") {
        TrainConfig cfg;
        cfg.iterations = 30;
        cfg.batch = 4;
        cfg.seed = 123;
        const auto a = train_vae<float>(ds, cfg);
        const auto b = train_vae<float>(ds, cfg);
        REQUIRE(a.parameters.size() == b.parameters.size());
        CHECK(std::memcmp(a.parameters.data(), b.parameters.data(),
                          a.parameters.size() * sizeof(float)) == 0);
    }
    SECTION("empty dataset is rejected") {
        TrainConfig cfg;
        CHECK_THROWS_AS(train_vae<float>({}, cfg), SpecError);
    }
}

TEST_CASE("short overfit run learns the toy set") {
    const auto ds = toy_dataset(2, 37);
    TrainConfig cfg;
    cfg.iterations = 200;
    cfg.batch = 2;
    cfg.beta = 1.0;
    cfg.seed = 5;
    auto ckpt = train_vae<double>(ds, cfg);

    SECTION("loss decreases on average") {
        REQUIRE(ckpt.trace.size() >= 2);
        CHECK(ckpt.trace.back().total < ckpt.trace.front().total);
    }
    SECTION("distinct inputs get distinct posterior means") {
        auto model = VaeModel<double>::from_checkpoint(ckpt);
        const auto pa = model.encode(ds[0]);
        const auto pb = model.encode(ds[1]);
        double dist = 0.0;
        for (int d = 0; d < kLatentDim; ++d) {
            const double diff = pa.mean[d] - pb.mean[d];
            dist += diff * diff;
        }
        CHECK(dist > 1e-4);
    }
    SECTION("reconstruction beats decoding the prior mean") {
        auto model = VaeModel<double>::from_checkpoint(ckpt);
        Tensor<double> x = ds[0].to_tensor<double>();
        const auto post = model.encode(x);
        const auto recon = model.decode(post.mean);
        Tensor<double> zero({1, kLatentDim});
        const auto from_prior = model.decode(zero);
        CHECK(mse(recon, x) < mse(from_prior, x));
    }
}

TEST_CASE("ae overfit run decreases the squared error") {
    const auto ds = toy_dataset(1, 41);
    TrainConfig cfg;
    cfg.mode = VaeMode::ae;
    cfg.iterations = 200;
    cfg.batch = 1;
    cfg.seed = 6;
    const auto ckpt = train_vae<double>(ds, cfg);
    REQUIRE(ckpt.trace.size() >= 2);
    CHECK(ckpt.trace.back().total < 0.8 * ckpt.trace.front().total);
    CHECK(ckpt.mode == "ae");
    CHECK(ckpt.beta == 0.0);
}

TEST_CASE("sweep_vae trains the full grid") {
    const auto ds = toy_dataset(2, 43);
    TrainConfig base;
    base.iterations = 5;
    base.batch = 2;
    base.seed = 99;
    const auto betas = std::vector<double>{0.075, 2.0};
    const auto ckpts = sweep_vae<float>(ds, betas, 2, base, 2);
    REQUIRE(ckpts.size() == 4);
    CHECK(ckpts[0].beta == 0.075);
    CHECK(ckpts[1].beta == 0.075);
    CHECK(ckpts[2].beta == 2.0);
    CHECK(ckpts[3].beta == 2.0);
    CHECK(ckpts[0].seed != ckpts[1].seed);

    SECTION("default grid covers the endpoints") {
        const auto grid = uniform_beta_grid();
        REQUIRE(grid.size() == 10);
        CHECK(grid.front() == Catch::Approx(0.075));
        CHECK(grid.back() == Catch::Approx(2.0));
    }
    SECTION("parallel and serial sweeps agree bitwise") {
        const auto serial = sweep_vae<float>(ds, betas, 2, base, 1);
        REQUIRE(serial.size() == ckpts.size());
        for (std::size_t i = 0; i < serial.size(); ++i)
            CHECK(serial[i].parameters == ckpts[i].parameters);
    }
}

TEST_CASE("traverse") {
    VaeModel<double> model(VaeMode::bvae, 17);
    const auto ds = toy_dataset(1, 47);

    SECTION("output count equals steps") {
        const auto imgs = traverse(model, ds[0], 3, -2.0, 2.0, 7);
        CHECK(imgs.size() == 7);
        for (const auto& im : imgs) CHECK(im.shape == std::vector<int>{kImageRows, kImageCols});
    }
    SECTION("single step at the posterior mean reproduces the reconstruction") {
        const auto post = model.encode(ds[0]);
        const double v = post.mean[4];
        const auto imgs = traverse(model, ds[0], 4, v, v, 1);
        Tensor<double> z = post.mean;
        const auto recon = model.decode(z).reshaped({kImageRows, kImageCols});
        REQUIRE(imgs.size() == 1);
        CHECK(imgs[0].values == recon.values);
    }
    SECTION("dimension out of range is rejected") {
        CHECK_THROWS_AS(traverse(model, ds[0], 10, -2.0, 2.0, 3), SpecError);
    }
}

TEST_CASE("informative_latents") {
    const auto ds = toy_dataset(4, 53);

    SECTION("zeroed encoder head pins every dimension to the prior") {
        VaeModel<double> model(VaeMode::bvae, 19);
        for (auto* p : model.params())
            if (p->name == "enc.head.w" || p->name == "enc.head.b") p->value.zero();
        const auto info = informative_latents(model, ds);
        CHECK(info.count == 0);
        for (int d = 0; d < kLatentDim; ++d) {
            CHECK(info.mean_kl[d] == 0.0);
            CHECK_FALSE(info.informative[d]);
        }
    }
    SECTION("mask is monotone in the threshold") {
        VaeModel<double> model(VaeMode::bvae, 23);
        const auto loose = informative_latents(model, ds, 0.001);
        const auto tight = informative_latents(model, ds, 0.1);
        CHECK(tight.count <= loose.count);
        for (int d = 0; d < kLatentDim; ++d)
            if (tight.informative[d]) CHECK(loose.informative[d]);
    }
}

TEST_CASE("full model loss gradients match finite differences") {
    VaeModel<double> model(VaeMode::bvae, 29);
    const auto ds = toy_dataset(1, 59);
    Tensor<double> x = ds[0].to_tensor<double>();
    Rng rng(61);
    Tensor<double> noise({1, kLatentDim});
    for (auto& v : noise.values) v = rng.normal();
    const double beta = 0.7;

    // Pack all parameters into one vector and probe random coordinates.
    auto params = model.params();
    std::vector<double> flat;
    for (auto* p : params) flat.insert(flat.end(), p->value.values.begin(), p->value.values.end());

    auto eval = [&](const std::vector<double>& v) {
        VaeModel<double> m(VaeMode::bvae, 29);
        auto ps = m.params();
        std::size_t off = 0;
        for (auto* p : ps) {
            std::copy(v.begin() + off, v.begin() + off + p->value.numel(),
                      p->value.values.begin());
            off += p->value.numel();
        }
        auto post = m.encode(x);
        return m.loss_from_posterior(post, x, beta, noise).total;
    };

    // Analytic gradients via one full forward/backward.
    std::vector<double> analytic(flat.size());
    {
        VaeModel<double> m(VaeMode::bvae, 29);
        auto ps = m.params();
        std::size_t off = 0;
        for (auto* p : ps) {
            std::copy(flat.begin() + off, flat.begin() + off + p->value.numel(),
                      p->value.values.begin());
            off += p->value.numel();
        }
        m.zero_grad();
        m.accumulate_gradients(x, beta, noise);
        off = 0;
        for (auto* p : m.params()) {
            std::copy(p->grad.values.begin(), p->grad.values.end(), analytic.begin() + off);
            off += p->value.numel();
        }
    }

    auto res = testutil::grad_check(eval, flat, analytic, rng, 100, 1e-5);
    INFO("max relative error " << res.max_rel_err);
    CHECK(res.max_rel_err < 1e-4);
}
