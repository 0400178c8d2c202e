#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "erpkit/common.hpp"
#include "erpkit/rng.hpp"
#include "erpkit/tensor.hpp"

namespace erpkit {

/// w_i = N / n_{y_i}. Requires every class in 0..max(y) to be present.
inline std::vector<double> class_weights(const std::vector<int>& labels) {
    require(!labels.empty(), "class_weights needs labels");
    const int k = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<double> counts(k, 0.0);
    for (int y : labels) {
        require(y >= 0, "negative class label");
        counts[y] += 1.0;
    }
    for (int c = 0; c < k; ++c)
        require(counts[c] > 0.0, "class " + std::to_string(c) + " has no samples");
    std::vector<double> w(labels.size());
    const double n = double(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) w[i] = n / counts[labels[i]];
    return w;
}

/// k disjoint index sets with per-class proportions preserved within one
/// sample. Deterministic per seed.
inline std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<int>& labels,
                                                              int k, std::uint64_t seed) {
    require(k >= 2, "stratified folds need k >= 2");
    require(!labels.empty(), "stratified_folds needs labels");
    const int n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::vector<std::size_t>> by_class(n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0, "negative class label");
        by_class[labels[i]].push_back(i);
    }
    Rng rng(derive_seed(seed, "folds"));
    std::vector<std::vector<std::size_t>> folds(k);
    for (int c = 0; c < n_classes; ++c) {
        require(static_cast<int>(by_class[c].size()) >= k,
                "class " + std::to_string(c) + " smaller than fold count");
        rng.shuffle(by_class[c]);
        for (std::size_t j = 0; j < by_class[c].size(); ++j)
            folds[j % k].push_back(by_class[c][j]);
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

/// Column-wise standardization fit on training rows only.
struct Standardizer {
    std::vector<double> mean, sd;

    void fit(const Tensor<double>& x, const std::vector<std::size_t>& rows) {
        const int d = x.shape[1];
        mean.assign(d, 0.0);
        sd.assign(d, 0.0);
        for (std::size_t r : rows)
            for (int j = 0; j < d; ++j) mean[j] += x.at(int(r), j);
        for (int j = 0; j < d; ++j) mean[j] /= double(rows.size());
        for (std::size_t r : rows)
            for (int j = 0; j < d; ++j) {
                const double v = x.at(int(r), j) - mean[j];
                sd[j] += v * v;
            }
        for (int j = 0; j < d; ++j) {
            sd[j] = std::sqrt(sd[j] / double(rows.size()));
            if (sd[j] == 0.0) sd[j] = 1.0; // constant column passes through
        }
    }

    Tensor<double> apply(const Tensor<double>& x, const std::vector<std::size_t>& rows) const {
        const int d = x.shape[1];
        Tensor<double> out({static_cast<int>(rows.size()), d});
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (int j = 0; j < d; ++j)
                out.at(int(i), j) = (x.at(int(rows[i]), j) - mean[j]) / sd[j];
        return out;
    }
};

enum class Penalty : std::uint8_t { l1, l2 };

struct LogregConfig {
    Penalty penalty = Penalty::l2;
    double strength = 1.0;
    int max_iter = 500;
    double tol = 1e-8;
};

struct LinearModel {
    std::vector<double> weights;
    double intercept = 0.0;

    double score(const double* x) const {
        double s = intercept;
        for (std::size_t j = 0; j < weights.size(); ++j) s += weights[j] * x[j];
        return s;
    }
};

namespace detail {

struct LogregObjective {
    const Tensor<double>& x;
    const std::vector<int>& y01;
    const std::vector<double>& wt;
    double wt_sum;

    // Weighted mean of softplus(-margin); numerically stable split.
    double value(const std::vector<double>& w, double b) const {
        const int n = x.shape[0];
        const int d = x.shape[1];
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            double s = b;
            for (int j = 0; j < d; ++j) s += w[j] * x.at(i, j);
            const double m = (y01[i] == 1 ? 1.0 : -1.0) * s;
            acc += wt[i] * (m >= 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)));
        }
        return acc / wt_sum;
    }

    void gradient(const std::vector<double>& w, double b, std::vector<double>& gw,
                  double& gb) const {
        const int n = x.shape[0];
        const int d = x.shape[1];
        gw.assign(d, 0.0);
        gb = 0.0;
        for (int i = 0; i < n; ++i) {
            double s = b;
            for (int j = 0; j < d; ++j) s += w[j] * x.at(i, j);
            const double sign = y01[i] == 1 ? 1.0 : -1.0;
            const double m = sign * s;
            const double sig = 1.0 / (1.0 + std::exp(m)); // sigmoid(-m)
            const double coef = -wt[i] * sign * sig;
            for (int j = 0; j < d; ++j) gw[j] += coef * x.at(i, j);
            gb += coef;
        }
        for (double& g : gw) g /= wt_sum;
        gb /= wt_sum;
    }
};

inline double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

} // namespace detail

/// Weighted regularized logistic regression on standardized features.
/// L2 runs gradient descent, L1 proximal gradient (soft-thresholding); both
/// use backtracking line search and stop when the objective decrease falls
/// below tol or max_iter is reached.
inline LinearModel train_logreg_binary(const Tensor<double>& x, const std::vector<int>& y01,
                                       const std::vector<double>& sample_weights,
                                       const LogregConfig& cfg = {}) {
    require(x.shape.size() == 2, "feature matrix must be 2-D");
    const int n = x.shape[0];
    const int d = x.shape[1];
    require(n == static_cast<int>(y01.size()) && n == static_cast<int>(sample_weights.size()),
            "feature/label/weight row mismatch");
    for (double v : x.values) require(std::isfinite(v), "non-finite feature value");

    double wt_sum = 0.0;
    for (double w : sample_weights) wt_sum += w;
    detail::LogregObjective obj{x, y01, sample_weights, wt_sum};

    std::vector<double> w(d, 0.0);
    double b = 0.0;
    auto smooth = [&](const std::vector<double>& wv, double bv) {
        double f = obj.value(wv, bv);
        if (cfg.penalty == Penalty::l2) {
            double sq = 0.0;
            for (double v : wv) sq += v * v;
            f += 0.5 * cfg.strength * sq;
        }
        return f;
    };
    auto full = [&](const std::vector<double>& wv, double bv) {
        double f = smooth(wv, bv);
        if (cfg.penalty == Penalty::l1) {
            double l1 = 0.0;
            for (double v : wv) l1 += std::abs(v);
            f += cfg.strength * l1;
        }
        return f;
    };

    std::vector<double> gw(d), w_new(d);
    double gb = 0.0;
    double f_old = full(w, b);
    double t = 1.0;
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        obj.gradient(w, b, gw, gb);
        if (cfg.penalty == Penalty::l2)
            for (int j = 0; j < d; ++j) gw[j] += cfg.strength * w[j];

        const double f_w = smooth(w, b);
        double b_new = 0.0;
        for (;;) {
            for (int j = 0; j < d; ++j) {
                const double step = w[j] - t * gw[j];
                w_new[j] = cfg.penalty == Penalty::l1
                               ? detail::soft_threshold(step, t * cfg.strength)
                               : step;
            }
            b_new = b - t * gb;
            double quad = 0.0, lin = 0.0;
            for (int j = 0; j < d; ++j) {
                const double dw = w_new[j] - w[j];
                quad += dw * dw;
                lin += gw[j] * dw;
            }
            const double db = b_new - b;
            quad += db * db;
            lin += gb * db;
            if (smooth(w_new, b_new) <= f_w + lin + quad / (2.0 * t) || t < 1e-12) break;
            t *= 0.5;
        }
        w.swap(w_new);
        b = b_new;
        const double f_new = full(w, b);
        if (std::abs(f_old - f_new) < cfg.tol) break;
        f_old = f_new;
        t = std::min(t * 1.3, 1e6);
    }
    return LinearModel{std::move(w), b};
}

/// One-vs-rest multiclass wrapper with per-label balanced weights.
struct LogregOvr {
    std::vector<LinearModel> models; // one per class

    int predict(const double* x) const {
        int best = 0;
        double best_score = -1e300;
        for (std::size_t c = 0; c < models.size(); ++c) {
            const double s = models[c].score(x);
            if (s > best_score) {
                best_score = s;
                best = static_cast<int>(c);
            }
        }
        return best;
    }
};

inline LogregOvr train_logreg(const Tensor<double>& x, const std::vector<int>& y,
                              const LogregConfig& cfg = {}) {
    const int k = *std::max_element(y.begin(), y.end()) + 1;
    LogregOvr ovr;
    if (k == 2) {
        ovr.models.resize(2);
        const auto w = class_weights(y);
        LinearModel pos = train_logreg_binary(x, y, w, cfg);
        LinearModel neg = pos;
        for (auto& v : neg.weights) v = -v;
        neg.intercept = -neg.intercept;
        ovr.models[0] = std::move(neg);
        ovr.models[1] = std::move(pos);
        return ovr;
    }
    for (int c = 0; c < k; ++c) {
        std::vector<int> bin(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) bin[i] = y[i] == c ? 1 : 0;
        ovr.models.push_back(train_logreg_binary(x, bin, class_weights(bin), cfg));
    }
    return ovr;
}

namespace detail {

// Cholesky factorization of a symmetric positive-definite matrix, row-major.
inline bool cholesky(std::vector<double>& a, int n) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = a[std::size_t(i) * n + j];
            for (int k = 0; k < j; ++k)
                sum -= a[std::size_t(i) * n + k] * a[std::size_t(j) * n + k];
            if (i == j) {
                if (sum <= 0.0) return false;
                a[std::size_t(i) * n + j] = std::sqrt(sum);
            } else {
                a[std::size_t(i) * n + j] = sum / a[std::size_t(j) * n + j];
            }
        }
    }
    return true;
}

inline void cholesky_solve(const std::vector<double>& l, int n, std::vector<double>& rhs) {
    for (int i = 0; i < n; ++i) {
        double sum = rhs[i];
        for (int k = 0; k < i; ++k) sum -= l[std::size_t(i) * n + k] * rhs[k];
        rhs[i] = sum / l[std::size_t(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double sum = rhs[i];
        for (int k = i + 1; k < n; ++k) sum -= l[std::size_t(k) * n + i] * rhs[k];
        rhs[i] = sum / l[std::size_t(i) * n + i];
    }
}

} // namespace detail

/// Linear discriminant analysis: class means, pooled covariance with a 1e-6
/// diagonal ridge, uniform class priors.
struct LdaModel {
    std::vector<std::vector<double>> class_means;
    std::vector<std::vector<double>> solved_means; // Sigma^-1 mu_k
    std::vector<double> offsets;                   // -0.5 mu_k' Sigma^-1 mu_k

    int predict(const double* x) const {
        int best = 0;
        double best_score = -1e300;
        for (std::size_t c = 0; c < solved_means.size(); ++c) {
            double s = offsets[c];
            for (std::size_t j = 0; j < solved_means[c].size(); ++j)
                s += solved_means[c][j] * x[j];
            if (s > best_score) {
                best_score = s;
                best = static_cast<int>(c);
            }
        }
        return best;
    }
};

inline LdaModel train_lda(const Tensor<double>& x, const std::vector<int>& y,
                          double ridge = 1e-6) {
    require(x.shape.size() == 2, "feature matrix must be 2-D");
    const int n = x.shape[0];
    const int d = x.shape[1];
    require(n == static_cast<int>(y.size()), "feature/label row mismatch");
    const int k = *std::max_element(y.begin(), y.end()) + 1;
    require(k >= 2, "LDA needs at least two classes");

    LdaModel model;
    model.class_means.assign(k, std::vector<double>(d, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
        ++counts[y[i]];
        for (int j = 0; j < d; ++j) model.class_means[y[i]][j] += x.at(i, j);
    }
    for (int c = 0; c < k; ++c) {
        require(counts[c] > 0, "class " + std::to_string(c) + " has no samples");
        for (double& v : model.class_means[c]) v /= double(counts[c]);
    }

    std::vector<double> cov(std::size_t(d) * d, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto& mu = model.class_means[y[i]];
        for (int a = 0; a < d; ++a) {
            const double da = x.at(i, a) - mu[a];
            for (int b = a; b < d; ++b)
                cov[std::size_t(a) * d + b] += da * (x.at(i, b) - mu[b]);
        }
    }
    const double denom = std::max(1, n - k);
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            const double v = cov[std::size_t(a) * d + b] / denom;
            cov[std::size_t(a) * d + b] = v;
            cov[std::size_t(b) * d + a] = v;
        }
    for (int a = 0; a < d; ++a) cov[std::size_t(a) * d + a] += ridge;

    if (!detail::cholesky(cov, d))
        throw SpecError("pooled covariance is singular even after ridge");

    model.solved_means.assign(k, {});
    model.offsets.assign(k, 0.0);
    for (int c = 0; c < k; ++c) {
        std::vector<double> rhs = model.class_means[c];
        detail::cholesky_solve(cov, d, rhs);
        double off = 0.0;
        for (int j = 0; j < d; ++j) off += model.class_means[c][j] * rhs[j];
        model.offsets[c] = -0.5 * off;
        model.solved_means[c] = std::move(rhs);
    }
    return model;
}

struct ConfusionMatrix {
    int k = 0;
    std::vector<long long> counts; // counts[true * k + predicted]

    explicit ConfusionMatrix(int classes = 2) : k(classes), counts(std::size_t(classes) * classes, 0) {}

    long long& at(int truth, int pred) { return counts[std::size_t(truth) * k + pred]; }
    long long at(int truth, int pred) const { return counts[std::size_t(truth) * k + pred]; }

    void add(int truth, int pred) { ++at(truth, pred); }

    long long total() const {
        long long acc = 0;
        for (long long c : counts) acc += c;
        return acc;
    }

    long long row_total(int truth) const {
        long long acc = 0;
        for (int p = 0; p < k; ++p) acc += at(truth, p);
        return acc;
    }
};

/// Mean per-class recall; for binary this is (TP/(TP+FN) + TN/(TN+FP)) / 2.
/// Chance level is 1/k.
inline double balanced_accuracy(const ConfusionMatrix& cm) {
    double acc = 0.0;
    for (int t = 0; t < cm.k; ++t) {
        const long long row = cm.row_total(t);
        require(row > 0, "true class " + std::to_string(t) + " has no samples");
        acc += double(cm.at(t, t)) / double(row);
    }
    return acc / cm.k;
}

struct BalancedAccuracyPosterior {
    std::vector<std::pair<double, double>> beta_params; // (correct+1, wrong+1) per class
    double mean = 0.0;
    double lower = 0.0; // 2.5%
    double upper = 0.0; // 97.5%
    std::uint64_t mc_seed = 0;
};

/// Posterior over the balanced accuracy: per-class recall ~ Beta(correct+1,
/// wrong+1), Monte Carlo over the mean recall.
inline BalancedAccuracyPosterior ba_posterior(const ConfusionMatrix& cm, int mc_samples = 100000,
                                              std::uint64_t seed = 0) {
    BalancedAccuracyPosterior out;
    out.mc_seed = seed;
    for (int t = 0; t < cm.k; ++t) {
        const long long correct = cm.at(t, t);
        const long long wrong = cm.row_total(t) - correct;
        out.beta_params.emplace_back(double(correct + 1), double(wrong + 1));
    }
    Rng rng(derive_seed(seed, "ba-posterior"));
    std::vector<double> draws(mc_samples);
    for (int s = 0; s < mc_samples; ++s) {
        double acc = 0.0;
        for (const auto& [a, b] : out.beta_params) acc += rng.beta(a, b);
        draws[s] = acc / cm.k;
    }
    std::sort(draws.begin(), draws.end());
    double sum = 0.0;
    for (double v : draws) sum += v;
    out.mean = sum / mc_samples;
    out.lower = draws[static_cast<std::size_t>(0.025 * (mc_samples - 1))];
    out.upper = draws[static_cast<std::size_t>(0.975 * (mc_samples - 1))];
    return out;
}

/// Precision-recall pairs swept over thresholds at each distinct score,
/// descending; the lowest threshold predicts everything positive.
inline std::vector<std::pair<double, double>> pr_curve(const std::vector<double>& scores,
                                                       const std::vector<int>& labels) {
    require(scores.size() == labels.size(), "score/label size mismatch");
    long long positives = 0;
    for (int y : labels) positives += y == 1 ? 1 : 0;
    require(positives > 0 && positives < static_cast<long long>(labels.size()),
            "pr_curve needs both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<std::pair<double, double>> curve;
    long long tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (labels[order[i]] == 1)
            ++tp;
        else
            ++fp;
        const bool last_at_threshold =
            i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]];
        if (last_at_threshold)
            curve.emplace_back(double(tp) / double(tp + fp), double(tp) / double(positives));
    }
    return curve;
}

/// Fraction of near-zero entries.
inline double sparsity(const std::vector<double>& w, double tol = 1e-6) {
    require(!w.empty(), "sparsity needs a nonempty vector");
    std::size_t zeros = 0;
    for (double v : w)
        if (std::abs(v) < tol) ++zeros;
    return double(zeros) / double(w.size());
}

/// Classifier factory: trains on standardized features, returns a predictor.
using TrainerFn = std::function<std::function<int(const double*)>(
    const Tensor<double>&, const std::vector<int>&)>;

inline TrainerFn logreg_trainer(const LogregConfig& cfg = {}) {
    return [cfg](const Tensor<double>& x, const std::vector<int>& y) {
        auto model = std::make_shared<LogregOvr>(train_logreg(x, y, cfg));
        return [model](const double* row) { return model->predict(row); };
    };
}

inline TrainerFn lda_trainer(double ridge = 1e-6) {
    return [ridge](const Tensor<double>& x, const std::vector<int>& y) {
        auto model = std::make_shared<LdaModel>(train_lda(x, y, ridge));
        return [model](const double* row) { return model->predict(row); };
    };
}

struct CvResult {
    ConfusionMatrix pooled{2};
    BalancedAccuracyPosterior posterior;
};

/// Stratified k-fold cross-validation with pooled held-out predictions.
/// Standardization statistics come from the training folds only.
inline CvResult cv_evaluate(const Tensor<double>& x, const std::vector<int>& y,
                            const TrainerFn& trainer, int k = 5, std::uint64_t seed = 0) {
    const int n_classes = *std::max_element(y.begin(), y.end()) + 1;
    const auto folds = stratified_folds(y, k, seed);

    CvResult result;
    result.pooled = ConfusionMatrix(n_classes);
    for (int fold = 0; fold < k; ++fold) {
        std::vector<std::size_t> train_rows;
        for (int f = 0; f < k; ++f)
            if (f != fold) train_rows.insert(train_rows.end(), folds[f].begin(), folds[f].end());
        std::sort(train_rows.begin(), train_rows.end());

        Standardizer std_fit;
        std_fit.fit(x, train_rows);
        Tensor<double> x_train = std_fit.apply(x, train_rows);
        std::vector<int> y_train;
        y_train.reserve(train_rows.size());
        for (std::size_t r : train_rows) y_train.push_back(y[r]);

        auto predict = trainer(x_train, y_train);

        Tensor<double> x_test = std_fit.apply(x, folds[fold]);
        for (std::size_t i = 0; i < folds[fold].size(); ++i)
            result.pooled.add(y[folds[fold][i]], predict(x_test.data() + i * x.shape[1]));
    }
    result.posterior = ba_posterior(result.pooled, 100000, derive_seed(seed, "posterior"));
    return result;
}

} // namespace erpkit
