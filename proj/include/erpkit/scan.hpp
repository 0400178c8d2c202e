#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "erpkit/adam.hpp"
#include "erpkit/domain.hpp"
#include "erpkit/nn.hpp"
#include "erpkit/rng.hpp"
#include "erpkit/vae.hpp"

namespace erpkit {

inline const std::string kScanArchitectureTag = "label-mlp-scan-v1";

struct ScanLossParts {
    double label_nll = 0.0;
    double kl_prior = 0.0;
    double kl_ground = 0.0;
    double total = 0.0;
};

/// A fully set label with its grounding image from the same participant.
struct GroundingPair {
    LabelVector y;
    ErpImage x;
};

namespace detail {

// Per-block log-softmax cross-entropy over the [2,2,4,2,2] label layout.
// Blocks that are all-zero in the target (partial symbols) contribute
// nothing. Returns the summed NLL; fills dlogits with softmax - y per set
// block when requested.
template <typename T>
double block_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target,
                           Tensor<T>* dlogits = nullptr) {
    require(logits.shape == target.shape && logits.shape.size() == 2 &&
                logits.shape[1] == kLabelSlots,
            "label logits shape mismatch");
    const int n = logits.shape[0];
    if (dlogits != nullptr) *dlogits = Tensor<T>(logits.shape);
    double nll = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int f = 0; f < kNumFactors; ++f) {
            const int off = kFactorOffset[f];
            const int card = kFactorCardinality[f];
            double block_mass = 0.0;
            for (int c = 0; c < card; ++c) block_mass += double(target.at(i, off + c));
            if (block_mass == 0.0) continue; // unset block
            double mx = -1e300;
            for (int c = 0; c < card; ++c) mx = std::max(mx, double(logits.at(i, off + c)));
            double denom = 0.0;
            for (int c = 0; c < card; ++c) denom += std::exp(double(logits.at(i, off + c)) - mx);
            const double log_denom = std::log(denom) + mx;
            for (int c = 0; c < card; ++c) {
                const double t = double(target.at(i, off + c));
                const double logp = double(logits.at(i, off + c)) - log_denom;
                nll -= t * logp;
                if (dlogits != nullptr)
                    dlogits->at(i, off + c) = static_cast<T>(std::exp(logp) - t);
            }
        }
    }
    return nll;
}

} // namespace detail

/// Symbol-concept association model: a VAE over 12-slot labels whose
/// posterior is pulled toward a frozen image-model posterior. Encoder and
/// decoder are MLPs with two 128-wide hidden layers; the latent matches the
/// image model's 10 dimensions.
template <typename T>
class ScanModel {
public:
    explicit ScanModel(std::uint64_t init_seed = 0) {
        encoder_.template add<Dense<T>>("enc.fc1", kLabelSlots, 128);
        encoder_.template add<Relu<T>>();
        encoder_.template add<Dense<T>>("enc.fc2", 128, 128);
        encoder_.template add<Relu<T>>();
        encoder_.template add<Dense<T>>("enc.head", 128, 2 * kLatentDim);

        decoder_.template add<Dense<T>>("dec.fc1", kLatentDim, 128);
        decoder_.template add<Relu<T>>();
        decoder_.template add<Dense<T>>("dec.fc2", 128, 128);
        decoder_.template add<Relu<T>>();
        decoder_.template add<Dense<T>>("dec.head", 128, kLabelSlots);

        Rng rng(derive_seed(init_seed, "scan-init"));
        encoder_.init(rng);
        decoder_.init(rng);
    }

    std::vector<Param<T>*> params() {
        auto ps = encoder_.params();
        auto dec = decoder_.params();
        ps.insert(ps.end(), dec.begin(), dec.end());
        return ps;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : params()) n += p->value.numel();
        return n;
    }

    void zero_grad() {
        for (auto* p : params()) p->grad.zero();
    }

    /// Deterministic label posterior for a batch [N, 12] of (possibly
    /// partial) multi-one-hot encodings.
    LatentPosterior<T> encode(const Tensor<T>& y) {
        Tensor<T> h = encoder_.forward(y);
        const int n = h.shape[0];
        LatentPosterior<T> post{Tensor<T>({n, kLatentDim}), Tensor<T>({n, kLatentDim})};
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < kLatentDim; ++d) {
                post.mean.at(i, d) = h.at(i, d);
                post.logvar.at(i, d) = std::clamp(h.at(i, d + kLatentDim), T(kLogvarClampLo),
                                                  T(kLogvarClampHi));
            }
        return post;
    }

    LatentPosterior<T> encode(const LabelVector& y) { return encode(y.template to_tensor<T>()); }

    /// Label logits from a latent batch [N, 10] -> [N, 12].
    Tensor<T> decode_logits(const Tensor<T>& z) { return decoder_.forward(z); }

    /// Loss over one batch given the frozen image posterior; gradients
    /// accumulate into this model only.
    ScanLossParts accumulate_gradients(const Tensor<T>& y, const LatentPosterior<T>& image_post,
                                       const Tensor<T>& noise, bool with_grads = true) {
        const int n = y.shape[0];
        LatentPosterior<T> post = encode(y);
        Tensor<T> z = VaeModel<T>::sample_latent(post, noise);
        Tensor<T> logits = decoder_.forward(z);

        ScanLossParts parts;
        Tensor<T> dlogits;
        parts.label_nll =
            detail::block_cross_entropy(logits, y, with_grads ? &dlogits : nullptr) / n;
        parts.kl_prior = gaussian_kl_prior(post.mean, post.logvar) / n;
        parts.kl_ground = gaussian_kl_pair(image_post.mean, image_post.logvar, post.mean,
                                           post.logvar) /
                          n;
        parts.total = parts.label_nll + parts.kl_prior + parts.kl_ground;
        if (!with_grads) return parts;

        const T scale = T(1.0 / n);
        for (auto& v : dlogits.values) v *= scale;
        Tensor<T> dz = decoder_.backward(dlogits);

        Tensor<T> prior_dm, prior_dl, ground_dm, ground_dl;
        gaussian_kl_prior_grad(post.mean, post.logvar, prior_dm, prior_dl);
        gaussian_kl_pair_grad_b(image_post.mean, image_post.logvar, post.mean, post.logvar,
                                ground_dm, ground_dl);

        Tensor<T> dh({n, 2 * kLatentDim});
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < kLatentDim; ++d) {
                const T dmean = dz.at(i, d) + scale * (prior_dm.at(i, d) + ground_dm.at(i, d));
                const T sigma_half = std::exp(post.logvar.at(i, d) / T(2)) / T(2);
                T dlogvar = dz.at(i, d) * noise.at(i, d) * sigma_half +
                            scale * (prior_dl.at(i, d) + ground_dl.at(i, d));
                const bool clamped = post.logvar.at(i, d) <= T(kLogvarClampLo) ||
                                     post.logvar.at(i, d) >= T(kLogvarClampHi);
                dh.at(i, d) = dmean;
                dh.at(i, d + kLatentDim) = clamped ? T(0) : dlogvar;
            }
        encoder_.backward(dh);
        return parts;
    }

    std::vector<T> dump_parameters() {
        std::vector<T> blob;
        for (auto* p : params())
            blob.insert(blob.end(), p->value.values.begin(), p->value.values.end());
        return blob;
    }

    void load_parameters(const std::vector<T>& blob) {
        std::size_t off = 0;
        for (auto* p : params()) {
            require(off + p->value.numel() <= blob.size(),
                    "parameter blob too short for architecture");
            std::copy(blob.begin() + off, blob.begin() + off + p->value.numel(),
                      p->value.values.begin());
            off += p->value.numel();
        }
        require(off == blob.size(), "parameter blob too long for architecture");
    }

    static ScanModel<T> from_checkpoint(const Checkpoint<T>& ckpt) {
        require(ckpt.architecture == kScanArchitectureTag,
                "checkpoint architecture mismatch: " + ckpt.architecture);
        ScanModel<T> model;
        model.load_parameters(ckpt.parameters);
        return model;
    }

private:
    Sequential<T> encoder_;
    Sequential<T> decoder_;
};

/// Loss parts for a single grounding pair at fixed noise.
template <typename T>
ScanLossParts scan_loss(ScanModel<T>& scan, const GroundingPair& pair, VaeModel<T>& frozen_bvae,
                        const Tensor<T>& noise) {
    Tensor<T> y = pair.y.template to_tensor<T>();
    LatentPosterior<T> image_post = frozen_bvae.encode(pair.x);
    Tensor<T> n2 = noise.shape.size() == 1 ? noise.reshaped({1, kLatentDim}) : noise;
    return scan.accumulate_gradients(y, image_post, n2, /*with_grads=*/false);
}

struct ScanTrainConfig {
    double lr = 1e-4;
    int batch = 16;
    long long iterations = 20000;
    std::uint64_t seed = 0;

    void validate() const {
        require(lr > 0.0, "learning rate must be positive");
        require(batch > 0, "batch size must be positive");
        require(iterations >= 0, "iteration count must be nonnegative");
    }
};

/// Trains SCAN against a frozen image model. The image posteriors are
/// computed once up front; the image model's parameters are never touched.
template <typename T>
Checkpoint<T> train_scan(const std::vector<GroundingPair>& pairs, VaeModel<T>& frozen_bvae,
                         const ScanTrainConfig& cfg) {
    require(!pairs.empty(), "train_scan needs at least one grounding pair");
    cfg.validate();

    const int n = static_cast<int>(pairs.size());
    Tensor<T> all_means({n, kLatentDim}), all_logvars({n, kLatentDim});
    {
        const std::size_t chunk = 64;
        for (std::size_t start = 0; start < pairs.size(); start += chunk) {
            const std::size_t stop = std::min(pairs.size(), start + chunk);
            Tensor<T> x({int(stop - start), kImageRows, kImageCols});
            for (std::size_t i = start; i < stop; ++i)
                for (int j = 0; j < kImageSize; ++j)
                    x[(i - start) * kImageSize + j] = static_cast<T>(pairs[i].x.values[j]);
            auto post = frozen_bvae.encode(x);
            for (std::size_t i = start; i < stop; ++i)
                for (int d = 0; d < kLatentDim; ++d) {
                    all_means.at(int(i), d) = post.mean.at(int(i - start), d);
                    all_logvars.at(int(i), d) = post.logvar.at(int(i - start), d);
                }
        }
    }

    ScanModel<T> model(derive_seed(cfg.seed, "init"));
    Adam<T> opt(model.params(), AdamConfig{.lr = cfg.lr});
    detail::BatchSampler sampler(pairs.size(), derive_seed(cfg.seed, "shuffle"));
    Rng noise_rng(derive_seed(cfg.seed, "latent-noise"));

    Checkpoint<T> ckpt;
    ckpt.architecture = kScanArchitectureTag;
    ckpt.mode = "scan";
    ckpt.seed = cfg.seed;

    for (long long step = 0; step < cfg.iterations; ++step) {
        const auto idx = sampler.next(cfg.batch);
        Tensor<T> y({cfg.batch, kLabelSlots});
        LatentPosterior<T> image_post{Tensor<T>({cfg.batch, kLatentDim}),
                                      Tensor<T>({cfg.batch, kLatentDim})};
        for (int i = 0; i < cfg.batch; ++i) {
            const auto slots = pairs[idx[i]].y.encode();
            for (int j = 0; j < kLabelSlots; ++j) y.at(i, j) = static_cast<T>(slots[j]);
            for (int d = 0; d < kLatentDim; ++d) {
                image_post.mean.at(i, d) = all_means.at(int(idx[i]), d);
                image_post.logvar.at(i, d) = all_logvars.at(int(idx[i]), d);
            }
        }
        Tensor<T> noise({cfg.batch, kLatentDim});
        for (auto& v : noise.values) v = static_cast<T>(noise_rng.normal());

        const ScanLossParts parts = model.accumulate_gradients(y, image_post, noise);
        auto ps = model.params();
        opt.step(ps);
        if (step % 100 == 0)
            ckpt.trace.push_back(
                {step, parts.label_nll, parts.kl_prior, parts.kl_ground, parts.total});
    }
    ckpt.step = cfg.iterations;
    ckpt.parameters = model.dump_parameters();
    return ckpt;
}

struct Classification {
    LabelVector predicted;
    std::array<std::vector<double>, kNumFactors> probabilities;
};

/// Deterministic label prediction: image posterior means through the SCAN
/// decoder, then a per-block softmax and argmax.
template <typename T>
Classification classify(const ErpImage& x, VaeModel<T>& bvae, ScanModel<T>& scan) {
    LatentPosterior<T> post = bvae.encode(x);
    Tensor<T> logits = scan.decode_logits(post.mean);
    Classification out;
    for (int f = 0; f < kNumFactors; ++f) {
        const int off = kFactorOffset[f];
        const int card = kFactorCardinality[f];
        double mx = -1e300;
        for (int c = 0; c < card; ++c) mx = std::max(mx, double(logits[off + c]));
        double denom = 0.0;
        std::vector<double> probs(card);
        for (int c = 0; c < card; ++c) {
            probs[c] = std::exp(double(logits[off + c]) - mx);
            denom += probs[c];
        }
        int best = 0;
        for (int c = 0; c < card; ++c) {
            probs[c] /= denom;
            if (probs[c] > probs[best]) best = c;
        }
        out.probabilities[f] = std::move(probs);
        out.predicted.factors[f] = best;
    }
    return out;
}

/// Draws count latents from the symbol posterior and decodes them through
/// the image model.
template <typename T>
std::vector<Tensor<T>> sample_from_symbol(const LabelVector& y_partial, ScanModel<T>& scan,
                                          VaeModel<T>& bvae, int count, std::uint64_t seed) {
    require(y_partial.any_set(), "symbol must have at least one block set");
    require(count >= 0, "sample count must be nonnegative");
    LatentPosterior<T> post = scan.encode(y_partial);
    Rng rng(derive_seed(seed, "symbol-samples"));
    std::vector<Tensor<T>> out;
    out.reserve(count);
    for (int s = 0; s < count; ++s) {
        Tensor<T> noise({1, kLatentDim});
        for (auto& v : noise.values) v = static_cast<T>(rng.normal());
        Tensor<T> z = VaeModel<T>::sample_latent(post, noise);
        out.push_back(bvae.decode(z).reshaped({kImageRows, kImageCols}));
    }
    return out;
}

struct FactorAssociation {
    // Per (factor, latent): max over the factor's conditions of the latent's
    // KL to the unit prior under the condition's one-hot symbol.
    std::array<std::array<double, kLatentDim>, kNumFactors> divergence{};
    std::array<std::array<bool, kLatentDim>, kNumFactors> associated{};
    double sparsity = 0.0; // fraction of (factor, latent) cells not associated
};

template <typename T>
FactorAssociation factor_association(ScanModel<T>& scan,
                                     double threshold = kInformativeKlThreshold) {
    FactorAssociation out;
    int associated_cells = 0;
    for (int f = 0; f < kNumFactors; ++f) {
        for (int c = 0; c < kFactorCardinality[f]; ++c) {
            const LabelVector symbol = LabelVector::partial(f, c);
            const LatentPosterior<T> post = scan.encode(symbol);
            for (int d = 0; d < kLatentDim; ++d) {
                const double mu = post.mean[d];
                const double lv = post.logvar[d];
                const double kl = 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
                out.divergence[f][d] = std::max(out.divergence[f][d], kl);
            }
        }
        for (int d = 0; d < kLatentDim; ++d) {
            out.associated[f][d] = out.divergence[f][d] > threshold;
            if (out.associated[f][d]) ++associated_cells;
        }
    }
    out.sparsity = 1.0 - double(associated_cells) / double(kNumFactors * kLatentDim);
    return out;
}

} // namespace erpkit
