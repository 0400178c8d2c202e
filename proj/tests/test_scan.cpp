#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include <erpkit/scan.hpp>

#include "testutil.hpp"

using namespace erpkit;

namespace {

std::uint64_t param_hash(const std::vector<float>& blob) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    for (std::size_t i = 0; i < blob.size() * sizeof(float); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<GroundingPair> toy_pairs(int n, std::uint64_t seed = 3) {
    Rng rng(seed);
    std::vector<GroundingPair> pairs(n);
    for (int i = 0; i < n; ++i) {
        pairs[i].y = LabelVector::full(int(rng.uniform_int(2)), int(rng.uniform_int(2)),
                                       int(rng.uniform_int(4)), i % 2, i % 2);
        for (int r = 0; r < kImageRows; ++r)
            for (int c = 0; c < kImageCols; ++c)
                pairs[i].x.at(r, c) = 0.5 + 0.3 * std::sin(0.05 * c + i + r);
    }
    return pairs;
}

} // namespace

TEST_CASE("scan_encode determinism and partial symbols") {
    ScanModel<double> scan(7);
    const auto y = LabelVector::full(1, 0, 2, 1, 1);
    const auto a = scan.encode(y);
    const auto b = scan.encode(y);
    CHECK(a.mean.values == b.mean.values);
    CHECK(a.logvar.values == b.logvar.values);

    LabelVector unset;
    const auto p = scan.encode(unset.to_tensor<double>());
    for (double v : p.mean.values) CHECK(std::isfinite(v));
    for (double v : p.logvar.values) CHECK(std::isfinite(v));
}

TEST_CASE("label encoding blocks") {
    const auto y = LabelVector::full(1, 0, 2, 1, 0);
    const auto slots = y.encode();
    const std::array<std::uint8_t, 12> want{0, 1, 1, 0, 0, 0, 1, 0, 0, 1, 1, 0};
    CHECK(slots == want);
    CHECK(LabelVector::decode(slots) == y);

    const auto partial = LabelVector::partial(3, 1); // depression = 1
    const auto pslots = partial.encode();
    for (int i = 0; i < 12; ++i) CHECK(pslots[i] == (i == 9 ? 1 : 0));
}

TEST_CASE("scan_loss structure") {
    ScanModel<double> scan(11);
    VaeModel<double> bvae(VaeMode::bvae, 13);
    const auto pairs = toy_pairs(2);
    Rng rng(17);
    Tensor<double> noise({1, kLatentDim});
    for (auto& v : noise.values) v = rng.normal();

    SECTION("posterior equal to the grounding posterior zeroes kl_ground") {
        Tensor<double> y = pairs[0].y.to_tensor<double>();
        const auto own = scan.encode(y);
        const auto parts = scan.accumulate_gradients(y, own, noise, false);
        CHECK(parts.kl_ground == 0.0);
    }
    SECTION("uniform logits give the closed-form label NLL") {
        ScanModel<double> zeroed(19);
        for (auto* p : zeroed.params())
            if (p->name == "dec.head.w" || p->name == "dec.head.b") p->value.zero();
        Tensor<double> y = pairs[0].y.to_tensor<double>();
        const auto post = zeroed.encode(y);
        const auto parts = zeroed.accumulate_gradients(y, post, noise, false);
        const double expected = 4.0 * std::log(2.0) + std::log(4.0);
        CHECK(parts.label_nll == Catch::Approx(expected).epsilon(1e-12));
    }
    SECTION("total is the unweighted sum of the three terms") {
        const auto parts = scan_loss(scan, pairs[0], bvae, noise);
        CHECK(parts.total ==
              Catch::Approx(parts.label_nll + parts.kl_prior + parts.kl_ground).margin(1e-12));
    }
    SECTION("grounding KL uses the image posterior as the reference") {
        Tensor<double> y = pairs[0].y.to_tensor<double>();
        const auto image_post = bvae.encode(pairs[0].x);
        const auto label_post = scan.encode(y);
        const auto parts = scan.accumulate_gradients(y, image_post, noise, false);
        const double forward = gaussian_kl_pair(image_post.mean, image_post.logvar,
                                                label_post.mean, label_post.logvar);
        const double swapped = gaussian_kl_pair(label_post.mean, label_post.logvar,
                                                image_post.mean, image_post.logvar);
        CHECK(parts.kl_ground == Catch::Approx(forward).epsilon(1e-12));
        CHECK(std::abs(forward - swapped) > 1e-9);
    }
}

TEST_CASE("train_scan basics") {
    const auto pairs = toy_pairs(4);
    VaeModel<float> bvae(VaeMode::bvae, 23);

    SECTION("zero iterations returns the initialization") {
        ScanTrainConfig cfg;
        cfg.iterations = 0;
        cfg.seed = 5;
        const auto ckpt = train_scan<float>(pairs, bvae, cfg);
        ScanModel<float> fresh(derive_seed(cfg.seed, "init"));
        CHECK(ckpt.parameters == fresh.dump_parameters());
    }
    SECTION("fixed seed is deterministic") {
        ScanTrainConfig cfg;
        cfg.iterations = 25;
        cfg.batch = 4;
        cfg.seed = 9;
        const auto a = train_scan<float>(pairs, bvae, cfg);
        const auto b = train_scan<float>(pairs, bvae, cfg);
        CHECK(a.parameters == b.parameters);
    }
    SECTION("the frozen image model is bit-identical after training") {
        ScanTrainConfig cfg;
        cfg.iterations = 50;
        cfg.batch = 4;
        cfg.seed = 11;
        const auto before = param_hash(bvae.dump_parameters());
        (void)train_scan<float>(pairs, bvae, cfg);
        const auto after = param_hash(bvae.dump_parameters());
        CHECK(before == after);
    }
    SECTION("empty pair list is rejected") {
        ScanTrainConfig cfg;
        CHECK_THROWS_AS(train_scan<float>({}, bvae, cfg), SpecError);
    }
}

TEST_CASE("classify") {
    VaeModel<double> bvae(VaeMode::bvae, 31);
    ScanModel<double> scan(37);
    const auto pairs = toy_pairs(1);

    const auto a = classify(pairs[0].x, bvae, scan);
    SECTION("per-block probabilities sum to one") {
        for (int f = 0; f < kNumFactors; ++f) {
            double sum = 0.0;
            for (double p : a.probabilities[f]) {
                CHECK(p >= 0.0);
                sum += p;
            }
            CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        }
    }
    SECTION("classification is deterministic and fully set") {
        const auto b = classify(pairs[0].x, bvae, scan);
        CHECK(a.predicted == b.predicted);
        CHECK(a.predicted.fully_set());
    }
}

TEST_CASE("sample_from_symbol") {
    VaeModel<double> bvae(VaeMode::bvae, 41);
    ScanModel<double> scan(43);

    SECTION("zero count gives an empty list") {
        const auto out = sample_from_symbol(LabelVector::partial(3, 1), scan, bvae, 0, 1);
        CHECK(out.empty());
    }
    SECTION("outputs live strictly inside (0, 1)") {
        const auto out = sample_from_symbol(LabelVector::partial(3, 0), scan, bvae, 3, 2);
        REQUIRE(out.size() == 3);
        for (const auto& img : out)
            for (double v : img.values) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
    }
    SECTION("fully unset symbol is rejected") {
        LabelVector unset;
        CHECK_THROWS_AS(sample_from_symbol(unset, scan, bvae, 1, 3), SpecError);
    }
    SECTION("samples are deterministic per seed") {
        const auto a = sample_from_symbol(LabelVector::partial(0, 1), scan, bvae, 2, 7);
        const auto b = sample_from_symbol(LabelVector::partial(0, 1), scan, bvae, 2, 7);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].values == b[i].values);
    }
}

TEST_CASE("factor_association") {
    SECTION("prior-pinned encoder gives sparsity 1") {
        ScanModel<double> scan(47);
        for (auto* p : scan.params())
            if (p->name == "enc.head.w" || p->name == "enc.head.b") p->value.zero();
        const auto assoc = factor_association(scan);
        CHECK(assoc.sparsity == 1.0);
        for (int f = 0; f < kNumFactors; ++f)
            for (int d = 0; d < kLatentDim; ++d) {
                CHECK(assoc.divergence[f][d] == 0.0);
                CHECK_FALSE(assoc.associated[f][d]);
            }
    }
    SECTION("divergence is a max over conditions, so condition order is irrelevant") {
        ScanModel<double> scan(53);
        const auto assoc = factor_association(scan);
        for (int f = 0; f < kNumFactors; ++f) {
            for (int d = 0; d < kLatentDim; ++d) {
                double mx = 0.0;
                for (int c = 0; c < kFactorCardinality[f]; ++c) {
                    const auto post = scan.encode(LabelVector::partial(f, c));
                    const double mu = post.mean[d];
                    const double lv = post.logvar[d];
                    mx = std::max(mx, 0.5 * (mu * mu + std::exp(lv) - lv - 1.0));
                }
                CHECK(assoc.divergence[f][d] == Catch::Approx(mx).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("scan full loss gradients match finite differences") {
    ScanModel<double> scan(59);
    VaeModel<double> bvae(VaeMode::bvae, 61);
    const auto pairs = toy_pairs(1, 8);
    Tensor<double> y = pairs[0].y.to_tensor<double>();
    const auto image_post = bvae.encode(pairs[0].x);
    Rng rng(67);
    Tensor<double> noise({1, kLatentDim});
    for (auto& v : noise.values) v = rng.normal();

    auto params = scan.params();
    std::vector<double> flat;
    for (auto* p : params) flat.insert(flat.end(), p->value.values.begin(), p->value.values.end());

    auto eval = [&](const std::vector<double>& v) {
        ScanModel<double> m(59);
        auto ps = m.params();
        std::size_t off = 0;
        for (auto* p : ps) {
            std::copy(v.begin() + off, v.begin() + off + p->value.numel(),
                      p->value.values.begin());
            off += p->value.numel();
        }
        return m.accumulate_gradients(y, image_post, noise, false).total;
    };

    std::vector<double> analytic(flat.size());
    {
        ScanModel<double> m(59);
        auto ps = m.params();
        std::size_t off = 0;
        for (auto* p : ps) {
            std::copy(flat.begin() + off, flat.begin() + off + p->value.numel(),
                      p->value.values.begin());
            off += p->value.numel();
        }
        m.zero_grad();
        m.accumulate_gradients(y, image_post, noise);
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
