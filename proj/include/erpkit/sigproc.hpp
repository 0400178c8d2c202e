#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <utility>
#include <vector>

#include "erpkit/common.hpp"
#include "erpkit/domain.hpp"
#include "erpkit/tensor.hpp"

namespace erpkit {

enum class FilterKind : std::uint8_t { high_pass, low_pass };

struct FilterCoefficients {
    std::vector<double> numerator;   // b0..bN
    std::vector<double> denominator; // a0..aN, a0 == 1
    FilterKind kind = FilterKind::low_pass;
    int order = 0;
    double cutoff_hz = 0.0;
    double fs_hz = 0.0;
};

namespace detail {

inline std::vector<double> poly_from_roots(const std::vector<std::complex<double>>& roots) {
    std::vector<std::complex<double>> c{1.0};
    for (const auto& r : roots) {
        std::vector<std::complex<double>> next(c.size() + 1, 0.0);
        for (std::size_t k = 0; k < c.size(); ++k) {
            next[k] += c[k];
            next[k + 1] -= r * c[k];
        }
        c = std::move(next);
    }
    std::vector<double> out(c.size());
    for (std::size_t k = 0; k < c.size(); ++k) out[k] = c[k].real();
    return out;
}

inline std::complex<double> eval_response(const std::vector<double>& coeffs,
                                          std::complex<double> z_inv) {
    std::complex<double> acc = 0.0;
    // Horner over powers of z^-1.
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * z_inv + *it;
    return acc;
}

} // namespace detail

/// Schur-Cohn test: all roots of 1 + a1 z^-1 + ... + aN z^-N strictly inside
/// the unit circle.
inline bool polynomial_is_stable(std::vector<double> a) {
    if (a.empty() || a[0] == 0.0) return false;
    for (auto& v : a) v /= a[0];
    a[0] = 1.0;
    while (a.size() > 1) {
        const double k = a.back();
        if (std::abs(k) >= 1.0) return false;
        const double denom = 1.0 - k * k;
        std::vector<double> next(a.size() - 1);
        next[0] = 1.0;
        for (std::size_t i = 1; i + 1 < a.size(); ++i)
            next[i] = (a[i] - k * a[a.size() - 1 - i]) / denom;
        a = std::move(next);
    }
    return true;
}

inline std::complex<double> filter_response(const FilterCoefficients& f, double freq_hz) {
    const double omega = 2.0 * std::numbers::pi * freq_hz / f.fs_hz;
    const std::complex<double> z_inv = std::exp(std::complex<double>(0.0, -omega));
    return detail::eval_response(f.numerator, z_inv) /
           detail::eval_response(f.denominator, z_inv);
}

inline double filter_magnitude(const FilterCoefficients& f, double freq_hz) {
    return std::abs(filter_response(f, freq_hz));
}

/// Digital Butterworth via the analog prototype and a prewarped bilinear
/// transform, so the -3 dB point lands exactly on the requested cutoff.
inline FilterCoefficients design_butterworth(FilterKind kind, int order, double cutoff_hz,
                                             double fs_hz) {
    require(order >= 1, "filter order must be at least 1");
    require(fs_hz > 0.0, "sampling rate must be positive");
    require(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0,
            "cutoff must lie strictly below the Nyquist frequency");

    const double warped = 2.0 * fs_hz * std::tan(std::numbers::pi * cutoff_hz / fs_hz);
    const double bilinear_k = 2.0 * fs_hz;

    std::vector<std::complex<double>> poles_z, zeros_z;
    poles_z.reserve(order);
    zeros_z.reserve(order);
    for (int k = 1; k <= order; ++k) {
        const double theta = std::numbers::pi * (2.0 * k + order - 1.0) / (2.0 * order);
        const std::complex<double> proto = std::exp(std::complex<double>(0.0, theta));
        const std::complex<double> pole_s =
            kind == FilterKind::low_pass ? warped * proto : warped / proto;
        poles_z.push_back((bilinear_k + pole_s) / (bilinear_k - pole_s));
        // Low-pass zeros sit at Nyquist, high-pass zeros at DC.
        zeros_z.push_back(kind == FilterKind::low_pass ? -1.0 : 1.0);
    }

    FilterCoefficients f;
    f.kind = kind;
    f.order = order;
    f.cutoff_hz = cutoff_hz;
    f.fs_hz = fs_hz;
    f.numerator = detail::poly_from_roots(zeros_z);
    f.denominator = detail::poly_from_roots(poles_z);

    // Unit gain at the passband reference: DC for low-pass, Nyquist for high-pass.
    const std::complex<double> ref = kind == FilterKind::low_pass ? 1.0 : -1.0;
    const double gain = (detail::eval_response(f.denominator, ref) /
                         detail::eval_response(f.numerator, ref))
                            .real();
    for (auto& b : f.numerator) b *= gain;
    return f;
}

/// Causal direct-form II transposed filtering; output length equals input
/// length.
inline std::vector<double> apply_filter(const FilterCoefficients& f,
                                        const std::vector<double>& x) {
    require(!x.empty(), "apply_filter needs a nonempty signal");
    require(!f.denominator.empty() && f.denominator[0] != 0.0,
            "denominator leading coefficient must be nonzero");
    require(polynomial_is_stable(f.denominator), "filter coefficients are unstable");

    const double a0 = f.denominator[0];
    std::vector<double> b(f.numerator);
    std::vector<double> a(f.denominator);
    for (auto& v : b) v /= a0;
    for (auto& v : a) v /= a0;

    const std::size_t n_state = std::max(b.size(), a.size());
    b.resize(n_state, 0.0);
    a.resize(n_state, 0.0);

    std::vector<double> state(n_state > 1 ? n_state - 1 : 1, 0.0);
    std::vector<double> y(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
        const double xn = x[n];
        const double yn = b[0] * xn + state[0];
        for (std::size_t i = 0; i + 1 < state.size(); ++i)
            state[i] = b[i + 1] * xn + state[i + 1] - a[i + 1] * yn;
        if (n_state > 1) state[state.size() - 1] = b[n_state - 1] * xn - a[n_state - 1] * yn;
        y[n] = yn;
    }
    return y;
}

/// Cuts the 256-sample model window around the stimulus onset:
/// samples event_index-62 .. event_index+193 inclusive.
inline Epoch segment_epochs(const TrialRecording& trial) {
    const int begin = trial.event_index - kPreOnsetSamples;
    const int end = trial.event_index + kPostOnsetSamples;
    if (begin < 0 || end >= trial.length())
        throw std::out_of_range("event index leaves insufficient margin for segmentation");
    Epoch epoch;
    epoch.condition = trial.condition;
    epoch.participant_id = trial.participant_id;
    for (int ch = 0; ch < kNumChannels; ++ch)
        for (int t = 0; t < kEpochLen; ++t) epoch.at(ch, t) = trial.channels[ch][begin + t];
    return epoch;
}

enum class RejectRule : std::uint8_t { amplitude = 0, sigma = 1, transient = 2 };

inline const char* to_string(RejectRule r) {
    switch (r) {
        case RejectRule::amplitude: return "amplitude";
        case RejectRule::sigma: return "sigma";
        default: return "transient";
    }
}

struct RejectionReport {
    std::vector<std::size_t> kept;
    std::vector<std::pair<std::size_t, RejectRule>> rejected;
    double pooled_mean = 0.0;
    double pooled_sd = 0.0;
};

/// Trial rejection, applied in this fixed order:
///   1. raw amplitude threshold at +-0.005 V;
///   2. z-normalization of the surviving pool (all epochs, channels, samples);
///   3. |z| >= 5 outlier rejection;
///   4. adjacent-sample transient rejection at |z(t+1) - z(t)| >= 3.
inline RejectionReport reject_epochs(const std::vector<Epoch>& epochs) {
    RejectionReport report;
    if (epochs.empty()) return report;

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        bool over = false;
        for (double v : epochs[i].samples)
            if (std::abs(v) > kAmplitudeThresholdVolts) {
                over = true;
                break;
            }
        if (over)
            report.rejected.emplace_back(i, RejectRule::amplitude);
        else
            pool.push_back(i);
    }

    if (pool.empty()) return report;

    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i : pool)
        for (double v : epochs[i].samples) {
            sum += v;
            sum_sq += v * v;
            ++count;
        }
    const double mean = sum / double(count);
    const double var = std::max(0.0, sum_sq / double(count) - mean * mean);
    const double sd = std::sqrt(var);
    report.pooled_mean = mean;
    report.pooled_sd = sd;

    auto zscore = [&](double v) { return sd > 0.0 ? (v - mean) / sd : 0.0; };

    for (std::size_t i : pool) {
        const Epoch& e = epochs[i];
        bool sigma_hit = false;
        for (double v : e.samples)
            if (std::abs(zscore(v)) >= 5.0) {
                sigma_hit = true;
                break;
            }
        if (sigma_hit) {
            report.rejected.emplace_back(i, RejectRule::sigma);
            continue;
        }
        bool transient_hit = false;
        for (int ch = 0; ch < kNumChannels && !transient_hit; ++ch)
            for (int t = 0; t + 1 < kEpochLen; ++t)
                if (std::abs(zscore(e.at(ch, t + 1)) - zscore(e.at(ch, t))) >= 3.0) {
                    transient_hit = true;
                    break;
                }
        if (transient_hit)
            report.rejected.emplace_back(i, RejectRule::transient);
        else
            report.kept.push_back(i);
    }
    return report;
}

struct EmptyConditionError : SpecError {
    explicit EmptyConditionError(const std::string& what) : SpecError(what) {}
};

/// Arithmetic mean over the given epochs of one condition; [3, 256] volts.
inline Tensor<double> average_erp(const std::vector<Epoch>& epochs, Condition condition) {
    Tensor<double> erp({kNumChannels, kEpochLen});
    std::size_t n = 0;
    for (const Epoch& e : epochs) {
        if (e.condition != condition) continue;
        for (int ch = 0; ch < kNumChannels; ++ch)
            for (int t = 0; t < kEpochLen; ++t) erp.at(ch, t) += e.at(ch, t);
        ++n;
    }
    if (n == 0)
        throw EmptyConditionError(std::string("no epochs for condition ") +
                                  to_string(condition));
    for (auto& v : erp.values) v /= double(n);
    return erp;
}

inline Tensor<double> epoch_trajectory(const Epoch& epoch) {
    return Tensor<double>({kNumChannels, kEpochLen}, epoch.samples);
}

/// Canonical LPP representation: per channel, baseline-correct both ERPs by
/// the mean of the 25 samples before onset, then average the positive-minus-
/// neutral delta over the 300-700 ms window.
inline std::array<double, kNumChannels> lpp_features(const Tensor<double>& erp_pos,
                                                     const Tensor<double>& erp_neu) {
    const std::vector<int> want{kNumChannels, kEpochLen};
    require(erp_pos.shape == want && erp_neu.shape == want,
            "lpp_features expects [3, 256] trajectories");
    std::array<double, kNumChannels> out{};
    for (int ch = 0; ch < kNumChannels; ++ch) {
        double base_pos = 0.0, base_neu = 0.0;
        for (int t = kBaselineBegin; t <= kBaselineEnd; ++t) {
            base_pos += erp_pos.at(ch, t);
            base_neu += erp_neu.at(ch, t);
        }
        const int n_base = kBaselineEnd - kBaselineBegin + 1;
        base_pos /= n_base;
        base_neu /= n_base;
        double acc = 0.0;
        for (int t = kLppBegin; t <= kLppEnd; ++t)
            acc += (erp_pos.at(ch, t) - base_pos) - (erp_neu.at(ch, t) - base_neu);
        out[ch] = acc / double(kLppEnd - kLppBegin + 1);
    }
    return out;
}

/// Stacks [neutral; positive] trajectories into the 6 x 256 image and applies
/// one min-max map over the whole block. A constant block maps to all 0.5.
inline ErpImage assemble_image(const Tensor<double>& erp_neu, const Tensor<double>& erp_pos,
                               ImageSource source) {
    const std::vector<int> want{kNumChannels, kEpochLen};
    require(erp_neu.shape == want && erp_pos.shape == want,
            "assemble_image expects [3, 256] trajectories");
    ErpImage img;
    img.source = source;
    for (int ch = 0; ch < kNumChannels; ++ch)
        for (int t = 0; t < kEpochLen; ++t) {
            img.at(ch, t) = erp_neu.at(ch, t);
            img.at(ch + kNumChannels, t) = erp_pos.at(ch, t);
        }
    const auto [mn_it, mx_it] = std::minmax_element(img.values.begin(), img.values.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx == mn) {
        std::fill(img.values.begin(), img.values.end(), 0.5);
    } else {
        const double scale = 1.0 / (mx - mn);
        for (auto& v : img.values) v = (v - mn) * scale;
    }
    return img;
}

} // namespace erpkit
