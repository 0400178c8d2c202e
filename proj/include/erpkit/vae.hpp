#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "erpkit/adam.hpp"
#include "erpkit/domain.hpp"
#include "erpkit/nn.hpp"
#include "erpkit/rng.hpp"

namespace erpkit {

inline constexpr double kLogvarClampLo = -10.0;
inline constexpr double kLogvarClampHi = 10.0;
inline constexpr int kLatentDim = 10;
inline constexpr double kInformativeKlThreshold = 0.01;

inline const std::string kVaeArchitectureTag = "eeg-conv-vae-v1";

enum class VaeMode : std::uint8_t { ae = 0, bvae = 1 };

inline const char* to_string(VaeMode m) { return m == VaeMode::ae ? "ae" : "bvae"; }

inline VaeMode parse_vae_mode(const std::string& s) {
    if (s == "ae") return VaeMode::ae;
    if (s == "bvae") return VaeMode::bvae;
    throw SpecError("unknown model mode: " + s);
}

struct LossTraceEntry {
    long long step = 0;
    double recon = 0.0;
    double kl_prior = 0.0;
    double kl_ground = 0.0;
    double total = 0.0;
};

/// Versioned parameter snapshot plus the training metadata needed to rebuild
/// and audit the run.
template <typename T>
struct Checkpoint {
    std::string architecture;
    std::string mode;
    double beta = 0.0;
    std::uint64_t seed = 0;
    long long step = 0;
    std::vector<T> parameters;
    std::vector<LossTraceEntry> trace;
};

template <typename T>
struct LatentPosterior {
    Tensor<T> mean;   // [N, 10]
    Tensor<T> logvar; // [N, 10]
};

struct VaeLossParts {
    double recon_nll = 0.0;
    double kl = 0.0;
    double total = 0.0;
};

/// Convolutional autoencoder over 6 x 256 inputs: two stride-2 convolutions
/// with 32 size-6 filters, a 128-wide dense layer, and a 10-dimensional
/// latent head (mean + logvar). The decoder mirrors the encoder with
/// transposed convolutions and a sigmoid output.
template <typename T>
class VaeModel {
public:
    explicit VaeModel(VaeMode mode, std::uint64_t init_seed = 0) : mode_(mode) {
        encoder_.template add<Conv1d<T>>("enc.conv1", kImageRows, 32, 6, 2);
        encoder_.template add<Relu<T>>();
        encoder_.template add<Conv1d<T>>("enc.conv2", 32, 32, 6, 2);
        encoder_.template add<Relu<T>>();
        encoder_.template add<Reshape<T>>(std::vector<int>{2048});
        encoder_.template add<Dense<T>>("enc.fc1", 2048, 128);
        encoder_.template add<Relu<T>>();
        encoder_.template add<Dense<T>>("enc.head", 128, 2 * kLatentDim);

        decoder_.template add<Dense<T>>("dec.fc1", kLatentDim, 128);
        decoder_.template add<Relu<T>>();
        decoder_.template add<Dense<T>>("dec.fc2", 128, 2048);
        decoder_.template add<Relu<T>>();
        decoder_.template add<Reshape<T>>(std::vector<int>{32, 64});
        decoder_.template add<ConvTranspose1d<T>>("dec.convt1", 32, 32, 6, 2, 128);
        decoder_.template add<Relu<T>>();
        decoder_.template add<ConvTranspose1d<T>>("dec.convt2", 32, kImageRows, 6, 2,
                                                  kImageCols);
        decoder_.template add<Sigmoid<T>>();

        Rng rng(derive_seed(init_seed, "vae-init"));
        encoder_.init(rng);
        decoder_.init(rng);
    }

    VaeMode mode() const { return mode_; }

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

    /// Deterministic posterior for a batch [N, 6, 256].
    LatentPosterior<T> encode(const Tensor<T>& x) {
        Tensor<T> h = encoder_.forward(x);
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

    LatentPosterior<T> encode(const ErpImage& img) { return encode(img.template to_tensor<T>()); }

    /// Bernoulli means for a batch of latents [N, 10] -> [N, 6, 256].
    Tensor<T> decode(const Tensor<T>& z) { return decoder_.forward(z); }

    /// z = mean + exp(logvar / 2) * noise, elementwise.
    static Tensor<T> sample_latent(const LatentPosterior<T>& post, const Tensor<T>& noise) {
        require(noise.same_shape(post.mean), "latent noise shape mismatch");
        Tensor<T> z = post.mean;
        for (std::size_t i = 0; i < z.numel(); ++i)
            z[i] += std::exp(post.logvar[i] / T(2)) * noise[i];
        return z;
    }

    /// Loss and (optionally) gradients taken from an explicit posterior, with
    /// the latent noise held fixed. Accumulates decoder parameter gradients
    /// when grads are requested.
    VaeLossParts loss_from_posterior(const LatentPosterior<T>& post, const Tensor<T>& x,
                                     double beta, const Tensor<T>& noise,
                                     Tensor<T>* dmean = nullptr, Tensor<T>* dlogvar = nullptr) {
        const int n = x.shape[0];
        Tensor<T> z = sample_latent(post, noise);
        Tensor<T> recon = decoder_.forward(z);
        VaeLossParts parts;
        parts.recon_nll = bernoulli_nll(recon, x) / n;
        parts.kl = gaussian_kl_prior(post.mean, post.logvar) / n;
        parts.total = parts.recon_nll + beta * parts.kl;
        if (dmean != nullptr) {
            Tensor<T> dr = bernoulli_nll_grad(recon, x);
            const T scale = T(1.0 / n);
            for (auto& v : dr.values) v *= scale;
            Tensor<T> dz = decoder_.backward(dr);
            Tensor<T> kl_dm, kl_dl;
            gaussian_kl_prior_grad(post.mean, post.logvar, kl_dm, kl_dl);
            *dmean = dz;
            *dlogvar = Tensor<T>(post.logvar.shape);
            for (std::size_t i = 0; i < dz.numel(); ++i) {
                (*dmean)[i] += static_cast<T>(beta) * scale * kl_dm[i];
                (*dlogvar)[i] = dz[i] * noise[i] * std::exp(post.logvar[i] / T(2)) / T(2) +
                                static_cast<T>(beta) * scale * kl_dl[i];
            }
        }
        return parts;
    }

    void zero_grad() {
        for (auto* p : params()) p->grad.zero();
    }

    /// Full forward/backward over a batch; gradients accumulate into the
    /// parameter store. Returns the per-sample loss parts.
    VaeLossParts accumulate_gradients(const Tensor<T>& x, double beta, const Tensor<T>& noise) {
        LatentPosterior<T> post = encode(x);
        VaeLossParts parts;
        Tensor<T> dmean, dlogvar;
        if (mode_ == VaeMode::bvae) {
            parts = loss_from_posterior(post, x, beta, noise, &dmean, &dlogvar);
        } else {
            Tensor<T> recon = decoder_.forward(post.mean);
            const int n = x.shape[0];
            parts.recon_nll = mse(recon, x) / n;
            parts.kl = 0.0;
            parts.total = parts.recon_nll;
            Tensor<T> dr = mse_grad(recon, x);
            const T scale = T(1.0 / n);
            for (auto& v : dr.values) v *= scale;
            dmean = decoder_.backward(dr);
            dlogvar = Tensor<T>(post.logvar.shape);
        }
        // Pack posterior gradients back into the encoder head layout; the
        // logvar clamp contributes zero gradient where it saturates.
        const int n = x.shape[0];
        Tensor<T> dh({n, 2 * kLatentDim});
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < kLatentDim; ++d) {
                dh.at(i, d) = dmean.at(i, d);
                const bool clamped = post.logvar.at(i, d) <= T(kLogvarClampLo) ||
                                     post.logvar.at(i, d) >= T(kLogvarClampHi);
                dh.at(i, d + kLatentDim) = clamped ? T(0) : dlogvar.at(i, d);
            }
        encoder_.backward(dh);
        return parts;
    }

    /// One optimization step over a batch.
    VaeLossParts train_step(const Tensor<T>& x, double beta, const Tensor<T>& noise,
                            Adam<T>& opt) {
        const VaeLossParts parts = accumulate_gradients(x, beta, noise);
        auto ps = params();
        opt.step(ps);
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

    static VaeModel<T> from_checkpoint(const Checkpoint<T>& ckpt) {
        require(ckpt.architecture == kVaeArchitectureTag,
                "checkpoint architecture mismatch: " + ckpt.architecture);
        VaeModel<T> model(parse_vae_mode(ckpt.mode));
        model.load_parameters(ckpt.parameters);
        return model;
    }

private:
    VaeMode mode_;
    Sequential<T> encoder_;
    Sequential<T> decoder_;
};

struct TrainConfig {
    VaeMode mode = VaeMode::bvae;
    double beta = 1.0;
    double lr = 1e-4;
    int batch = 16;
    long long iterations = 20000;
    std::uint64_t seed = 0;

    void validate() const {
        require(beta >= 0.0, "beta must be nonnegative");
        require(lr > 0.0, "learning rate must be positive");
        require(batch > 0, "batch size must be positive");
        require(iterations >= 0, "iteration count must be nonnegative");
    }
};

namespace detail {

template <typename T>
Tensor<T> make_batch(const std::vector<ErpImage>& dataset, const std::vector<std::size_t>& idx) {
    Tensor<T> x({static_cast<int>(idx.size()), kImageRows, kImageCols});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < kImageSize; ++j)
            x[i * kImageSize + j] = static_cast<T>(dataset[idx[i]].values[j]);
    return x;
}

// Endless seeded shuffle: refills with a fresh permutation whenever fewer
// than a batch remains.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}

    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        out.reserve(batch);
        while (out.size() < batch) {
            if (queue_.empty()) {
                queue_.resize(n_);
                for (std::size_t i = 0; i < n_; ++i) queue_[i] = i;
                rng_.shuffle(queue_);
            }
            out.push_back(queue_.back());
            queue_.pop_back();
        }
        return out;
    }

private:
    std::size_t n_;
    Rng rng_;
    std::vector<std::size_t> queue_;
};

} // namespace detail

/// Trains an AE or beta-VAE; deterministic in (dataset order, config).
template <typename T>
Checkpoint<T> train_vae(const std::vector<ErpImage>& dataset, const TrainConfig& cfg) {
    require(!dataset.empty(), "training dataset is empty");
    cfg.validate();

    VaeModel<T> model(cfg.mode, derive_seed(cfg.seed, "init"));
    Adam<T> opt(model.params(), AdamConfig{.lr = cfg.lr});
    detail::BatchSampler sampler(dataset.size(), derive_seed(cfg.seed, "shuffle"));
    Rng noise_rng(derive_seed(cfg.seed, "latent-noise"));

    Checkpoint<T> ckpt;
    ckpt.architecture = kVaeArchitectureTag;
    ckpt.mode = to_string(cfg.mode);
    ckpt.beta = cfg.mode == VaeMode::bvae ? cfg.beta : 0.0;
    ckpt.seed = cfg.seed;

    for (long long step = 0; step < cfg.iterations; ++step) {
        const auto idx = sampler.next(cfg.batch);
        Tensor<T> x = detail::make_batch<T>(dataset, idx);
        Tensor<T> noise({cfg.batch, kLatentDim});
        if (cfg.mode == VaeMode::bvae)
            for (auto& v : noise.values) v = static_cast<T>(noise_rng.normal());
        const VaeLossParts parts = model.train_step(x, cfg.beta, noise, opt);
        if (step % 100 == 0)
            ckpt.trace.push_back({step, parts.recon_nll, parts.kl, 0.0, parts.total});
    }
    ckpt.step = cfg.iterations;
    ckpt.parameters = model.dump_parameters();
    return ckpt;
}

/// Per-sample loss parts at fixed noise for an existing model.
template <typename T>
VaeLossParts vae_loss(VaeModel<T>& model, const ErpImage& img, double beta,
                      const Tensor<T>& noise) {
    require(beta >= 0.0, "beta must be nonnegative");
    Tensor<T> x = img.template to_tensor<T>();
    auto post = model.encode(x);
    Tensor<T> n2 = noise.shape.size() == 1 ? noise.reshaped({1, kLatentDim}) : noise;
    return model.loss_from_posterior(post, x, beta, n2);
}

template <typename T>
double ae_loss(VaeModel<T>& model, const ErpImage& img) {
    require(model.mode() == VaeMode::ae, "ae_loss requires an AE-mode model");
    Tensor<T> x = img.template to_tensor<T>();
    auto post = model.encode(x);
    Tensor<T> recon = model.decode(post.mean);
    return mse(recon, x);
}

struct SweepEntry {
    double beta = 0.0;
    std::uint64_t seed = 0;
};

inline std::vector<double> uniform_beta_grid(double lo = 0.075, double hi = 2.0, int count = 10) {
    require(count >= 1, "beta grid needs at least one value");
    std::vector<double> betas(count);
    for (int i = 0; i < count; ++i)
        betas[i] = count == 1 ? lo : lo + (hi - lo) * double(i) / double(count - 1);
    return betas;
}

/// Trains betas x seeds models, parallelized across models; the result order
/// is (beta-major, seed-minor) regardless of scheduling.
template <typename T>
std::vector<Checkpoint<T>> sweep_vae(const std::vector<ErpImage>& dataset,
                                     const std::vector<double>& betas, int seeds_per_beta,
                                     const TrainConfig& base, unsigned workers = 0) {
    require(!betas.empty(), "beta list is empty");
    require(seeds_per_beta >= 1, "seeds_per_beta must be positive");

    std::vector<TrainConfig> jobs;
    for (std::size_t bi = 0; bi < betas.size(); ++bi)
        for (int si = 0; si < seeds_per_beta; ++si) {
            TrainConfig cfg = base;
            cfg.mode = VaeMode::bvae;
            cfg.beta = betas[bi];
            cfg.seed = derive_seed(base.seed, "sweep", bi * 1000 + std::size_t(si));
            jobs.push_back(cfg);
        }

    std::vector<Checkpoint<T>> out(jobs.size());
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, jobs.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            out[j] = train_vae<T>(dataset, jobs[j]);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return out;
}

/// Decodes a latent grid along one dimension, all other latents fixed to the
/// posterior mean of the reference image.
template <typename T>
std::vector<Tensor<T>> traverse(VaeModel<T>& model, const ErpImage& img, int dim, double lo,
                                double hi, int steps) {
    require(dim >= 0 && dim < kLatentDim, "latent dimension out of range");
    require(steps >= 1, "traversal needs at least one step");
    auto post = model.encode(img);
    std::vector<Tensor<T>> out;
    out.reserve(steps);
    for (int s = 0; s < steps; ++s) {
        const double v = steps == 1 ? lo : lo + (hi - lo) * double(s) / double(steps - 1);
        Tensor<T> z = post.mean; // [1, 10]
        z[dim] = static_cast<T>(v);
        Tensor<T> img_out = model.decode(z);
        out.push_back(img_out.reshaped({kImageRows, kImageCols}));
    }
    return out;
}

struct InformativeLatents {
    std::array<double, kLatentDim> mean_kl{};
    std::array<bool, kLatentDim> informative{};
    int count = 0;
};

/// Mean per-dimension KL-to-prior over a dataset; dimensions with mean KL
/// above 0.01 carry information, the rest have collapsed to the prior.
template <typename T>
InformativeLatents informative_latents(VaeModel<T>& model, const std::vector<ErpImage>& dataset,
                                       double threshold = kInformativeKlThreshold) {
    require(!dataset.empty(), "informative_latents needs a nonempty dataset");
    InformativeLatents out;
    const std::size_t chunk = 64;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < dataset.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(dataset.size(), start + chunk); ++i)
            idx.push_back(i);
        Tensor<T> x = detail::make_batch<T>(dataset, idx);
        auto post = model.encode(x);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int d = 0; d < kLatentDim; ++d) {
                const double mu = post.mean.at(int(i), d);
                const double lv = post.logvar.at(int(i), d);
                out.mean_kl[d] += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
            }
    }
    for (int d = 0; d < kLatentDim; ++d) {
        out.mean_kl[d] /= double(dataset.size());
        out.informative[d] = out.mean_kl[d] > threshold;
        if (out.informative[d]) ++out.count;
    }
    return out;
}

} // namespace erpkit
