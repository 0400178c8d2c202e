#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "erpkit/common.hpp"
#include "erpkit/tensor.hpp"
#include "erpkit/vae.hpp"

namespace erpkit {

/// Average ranks, ties resolved by midrank.
inline std::vector<double> rank_transform(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double mid = 0.5 * (double(i) + double(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
        i = j + 1;
    }
    return ranks;
}

/// Pearson correlation of the rank-transformed sequences. A constant
/// sequence has no ordering information; its correlation is defined as 0.
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size(), "spearman_rho needs equal lengths");
    require(x.size() >= 2, "spearman_rho needs at least two observations");
    const auto rx = rank_transform(x);
    const auto ry = rank_transform(y);
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = rx[i] - mx;
        const double dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

/// Latent responses of one model over a fixed dataset: posterior means per
/// datapoint plus the per-dimension mean KL used for the informativeness
/// mask.
struct ModelResponses {
    Tensor<double> means; // [n_datapoints, kLatentDim]
    std::array<double, kLatentDim> mean_kl{};
    double beta = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(means.shape.size() == 2 && means.shape[1] == kLatentDim,
                "latent response matrix must be [n, 10]");
        for (double k : mean_kl) require(k >= 0.0, "mean KL must be nonnegative");
    }
};

/// Entry (p, q) = |spearman_rho(column p of a, column q of b)|. Ranks are
/// computed once per column, then correlated pairwise.
inline Tensor<double> similarity_matrix(const ModelResponses& a, const ModelResponses& b) {
    a.validate();
    b.validate();
    require(a.means.shape[0] == b.means.shape[0],
            "response matrices cover different datapoint counts");
    const int n = a.means.shape[0];
    require(n >= 2, "similarity needs at least two datapoints");

    auto ranked_columns = [n](const Tensor<double>& m) {
        std::array<std::vector<double>, kLatentDim> cols;
        std::vector<double> buf(n);
        for (int c = 0; c < kLatentDim; ++c) {
            for (int i = 0; i < n; ++i) buf[i] = m.at(i, c);
            cols[c] = rank_transform(buf);
            double mean = 0.0;
            for (double v : cols[c]) mean += v;
            mean /= double(n);
            for (double& v : cols[c]) v -= mean;
        }
        return cols;
    };
    const auto ra = ranked_columns(a.means);
    const auto rb = ranked_columns(b.means);

    std::array<double, kLatentDim> norm_a{}, norm_b{};
    for (int c = 0; c < kLatentDim; ++c) {
        for (double v : ra[c]) norm_a[c] += v * v;
        for (double v : rb[c]) norm_b[c] += v * v;
    }

    Tensor<double> sim({kLatentDim, kLatentDim});
    for (int p = 0; p < kLatentDim; ++p)
        for (int q = 0; q < kLatentDim; ++q) {
            if (norm_a[p] == 0.0 || norm_b[q] == 0.0) {
                sim.at(p, q) = 0.0; // constant response carries no ordering
                continue;
            }
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += ra[p][i] * rb[q][i];
            sim.at(p, q) = std::abs(dot) / std::sqrt(norm_a[p] * norm_b[q]);
        }
    return sim;
}

/// Pairwise relative-strength score over an absolute similarity matrix.
/// Rows index model a's latents, columns model b's. Per informative column,
/// the squared column maximum over the column sum; same for rows; the two
/// sums normalized by the total informative count. Degenerate denominators
/// contribute zero; no informative latents at all scores zero.
inline double pair_score(const Tensor<double>& similarity,
                         const std::array<double, kLatentDim>& kl_a,
                         const std::array<double, kLatentDim>& kl_b,
                         double threshold = kInformativeKlThreshold) {
    require(similarity.shape == std::vector<int>{kLatentDim, kLatentDim},
            "similarity matrix must be 10 x 10");
    for (double v : similarity.values)
        require(v >= 0.0, "similarity entries must be nonnegative");

    std::array<bool, kLatentDim> inf_a{}, inf_b{};
    int d_a = 0, d_b = 0;
    for (int i = 0; i < kLatentDim; ++i) {
        inf_a[i] = kl_a[i] > threshold;
        inf_b[i] = kl_b[i] > threshold;
        d_a += inf_a[i] ? 1 : 0;
        d_b += inf_b[i] ? 1 : 0;
    }
    if (d_a + d_b == 0) return 0.0;

    double acc = 0.0;
    for (int b = 0; b < kLatentDim; ++b) {
        if (!inf_b[b]) continue;
        double col_max = 0.0, col_sum = 0.0;
        for (int a = 0; a < kLatentDim; ++a) {
            col_max = std::max(col_max, similarity.at(a, b));
            col_sum += similarity.at(a, b);
        }
        if (col_sum > 0.0) acc += col_max * col_max / col_sum;
    }
    for (int a = 0; a < kLatentDim; ++a) {
        if (!inf_a[a]) continue;
        double row_max = 0.0, row_sum = 0.0;
        for (int b = 0; b < kLatentDim; ++b) {
            row_max = std::max(row_max, similarity.at(a, b));
            row_sum += similarity.at(a, b);
        }
        if (row_sum > 0.0) acc += row_max * row_max / row_sum;
    }
    return acc / double(d_a + d_b);
}

struct UdrScore {
    std::size_t model_index = 0;
    double beta = 0.0;
    std::uint64_t seed = 0;
    double score = 0.0;
    int informative_count = 0;
};

struct UndefinedScoreError : SpecError {
    explicit UndefinedScoreError(const std::string& what) : SpecError(what) {}
};

/// Scores every model against its same-beta peers; the final score is the
/// median over peers. Every beta group needs at least two members.
inline std::vector<UdrScore> rank_models(const std::vector<ModelResponses>& models) {
    std::vector<UdrScore> out(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) {
        models[i].validate();
        std::vector<double> peer_scores;
        for (std::size_t j = 0; j < models.size(); ++j) {
            if (j == i || models[j].beta != models[i].beta) continue;
            const auto sim = similarity_matrix(models[i], models[j]);
            peer_scores.push_back(pair_score(sim, models[i].mean_kl, models[j].mean_kl));
        }
        if (peer_scores.empty())
            throw UndefinedScoreError("beta group of size 1 has no UDR score (beta = " +
                                      std::to_string(models[i].beta) + ")");
        std::sort(peer_scores.begin(), peer_scores.end());
        const std::size_t n = peer_scores.size();
        const double median = n % 2 == 1
                                  ? peer_scores[n / 2]
                                  : 0.5 * (peer_scores[n / 2 - 1] + peer_scores[n / 2]);
        UdrScore s;
        s.model_index = i;
        s.beta = models[i].beta;
        s.seed = models[i].seed;
        s.score = median;
        for (double k : models[i].mean_kl)
            if (k > kInformativeKlThreshold) ++s.informative_count;
        out[i] = s;
    }
    return out;
}

/// Posterior means over the dataset plus the per-dimension mean KL for one
/// trained checkpoint.
template <typename T>
ModelResponses compute_responses(const Checkpoint<T>& ckpt,
                                 const std::vector<ErpImage>& dataset) {
    require(!dataset.empty(), "compute_responses needs a nonempty dataset");
    VaeModel<T> model = VaeModel<T>::from_checkpoint(ckpt);
    ModelResponses out;
    out.beta = ckpt.beta;
    out.seed = ckpt.seed;
    out.means = Tensor<double>({static_cast<int>(dataset.size()), kLatentDim});

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
                out.means.at(int(idx[i]), d) = mu;
                out.mean_kl[d] += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
            }
    }
    for (auto& k : out.mean_kl) k /= double(dataset.size());
    return out;
}

} // namespace erpkit
