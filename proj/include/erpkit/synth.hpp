#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "erpkit/common.hpp"
#include "erpkit/domain.hpp"
#include "erpkit/rng.hpp"

namespace erpkit {

// Raw trial cut: 320 ms pre-stimulus, 1200 ms post-stimulus at 250 Hz. Wider
// than the final model window so segmentation always has margin.
inline constexpr int kTrialPreSamples = 80;
inline constexpr int kTrialPostSamples = 300;
inline constexpr int kTrialLen = kTrialPreSamples + kTrialPostSamples;

struct FactorMarginals {
    std::array<std::vector<double>, kNumFactors> probs;

    /// Cohort structure used throughout: 758 participants, 117 adults,
    /// 398 female, sites 117/223/291/127, 110 depression-positive, 273
    /// axis1-positive (a superset of the depression-positive group).
    static FactorMarginals cohort_defaults() {
        FactorMarginals m;
        const double n = 758.0;
        m.probs[0] = {641.0 / n, 117.0 / n};
        m.probs[1] = {360.0 / n, 398.0 / n};
        m.probs[2] = {117.0 / n, 223.0 / n, 291.0 / n, 127.0 / n};
        m.probs[3] = {648.0 / n, 110.0 / n};
        m.probs[4] = {485.0 / n, 273.0 / n};
        return m;
    }

    void validate() const {
        for (int f = 0; f < kNumFactors; ++f) {
            require(static_cast<int>(probs[f].size()) == kFactorCardinality[f],
                    "marginal cardinality mismatch for factor " + kFactorNames[f]);
            double sum = 0.0;
            for (double p : probs[f]) {
                require(p >= 0.0, "negative probability in factor " + kFactorNames[f]);
                sum += p;
            }
            require(std::abs(sum - 1.0) <= 1e-9,
                    "marginals for factor " + kFactorNames[f] + " do not sum to 1");
        }
        // axis1 covers every depression-positive participant, so its positive
        // marginal cannot be smaller.
        require(probs[4][1] >= probs[3][1] - 1e-12,
                "axis1 positive marginal must be >= depression positive marginal");
    }
};

struct CohortSpec {
    int n_participants = 0;
    FactorMarginals label_marginals = FactorMarginals::cohort_defaults();
    int trials_per_condition = 40;
    int kept_trials_target = 37;
    double noise_scale = 4e-6; // single-trial pink-noise stdev, volts
    std::optional<double> artifact_rate;
    double lpp_effect_volts = 6e-6; // group-level scale of the planted late bump
    std::uint64_t seed = 0;

    /// Defaults to losing trials_per_condition - kept_trials_target trials.
    double effective_artifact_rate() const {
        if (artifact_rate) return *artifact_rate;
        return 1.0 - double(kept_trials_target) / double(trials_per_condition);
    }

    void validate() const {
        require(n_participants >= 0, "n_participants must be nonnegative");
        require(trials_per_condition > 0, "trials_per_condition must be positive");
        require(kept_trials_target > 0 && kept_trials_target <= trials_per_condition,
                "kept_trials_target must be in [1, trials_per_condition]");
        require(noise_scale >= 0.0, "noise_scale must be nonnegative");
        require(lpp_effect_volts >= 0.0, "lpp_effect_volts must be nonnegative");
        const double rate = effective_artifact_rate();
        require(rate >= 0.0 && rate <= 1.0, "artifact_rate must lie in [0, 1]");
        label_marginals.validate();
    }
};

struct Bump {
    double amplitude_v = 0.0;
    double center_s = 0.0; // relative to stimulus onset
    double width_s = 1.0;  // Gaussian sigma

    double value(double t_s) const {
        const double d = (t_s - center_s) / width_s;
        return amplitude_v * std::exp(-0.5 * d * d);
    }
};

struct ParticipantProfile {
    int id = 0;
    LabelVector labels;
    double anhedonia = 0.0; // attenuates the late positive bump

    std::vector<Bump> common_components; // stereotyped, condition-independent
    Bump late_positive;                  // gated by (1 - anhedonia), positive condition
    Bump distractor;                     // condition-locked, depression-independent
    std::array<double, kNumChannels> channel_gains{1.0, 1.0, 1.0};
    std::array<double, kNumChannels> late_topography{1.0, 1.0, 1.0};

    double drift_amp_v = 0.0;
    double line_amp_v = 0.0;
    double line_freq_hz = 50.0;
    double site_noise_gain = 1.0;
    double noise_scale = 0.0;

    void validate() const {
        labels.validate();
        require(labels.fully_set(), "profile labels must be fully set");
        require(anhedonia >= 0.0 && anhedonia <= 1.0, "anhedonia must lie in [0, 1]");
        if (*labels.depression() == 1) {
            require(anhedonia >= 0.7, "depression-positive profiles have anhedonia >= 0.7");
            require(*labels.axis1() == 1, "depression-positive profiles are axis1-positive");
        } else {
            require(anhedonia <= 0.3, "depression-negative profiles have anhedonia <= 0.3");
        }
    }
};

namespace detail {

inline int draw_category(const std::vector<double>& probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        acc += probs[c];
        if (u < acc) return static_cast<int>(c);
    }
    return static_cast<int>(probs.size()) - 1;
}

// Paul Kellet's economy pink-noise filter over unit white noise; the trailing
// constant rescales the output to roughly unit variance.
class PinkNoise {
public:
    explicit PinkNoise(Rng rng) : rng_(rng) {}

    double next() {
        const double w = rng_.normal();
        b0_ = 0.99765 * b0_ + w * 0.0990460;
        b1_ = 0.96300 * b1_ + w * 0.2965164;
        b2_ = 0.57000 * b2_ + w * 1.0526913;
        return (b0_ + b1_ + b2_ + w * 0.1848) * 0.3357;
    }

private:
    Rng rng_;
    double b0_ = 0.0, b1_ = 0.0, b2_ = 0.0;
};

} // namespace detail

/// Samples the cohort. Every profile is a pure function of (spec.seed, id).
inline std::vector<ParticipantProfile> sample_cohort(const CohortSpec& spec) {
    spec.validate();
    const auto& m = spec.label_marginals.probs;
    // P(axis1=1 | depression=0) chosen so the axis1 marginal still converges.
    const double p_dep = m[3][1];
    const double p_axis_given_healthy =
        p_dep >= 1.0 ? 0.0 : std::clamp((m[4][1] - p_dep) / (1.0 - p_dep), 0.0, 1.0);

    std::vector<ParticipantProfile> cohort;
    cohort.reserve(spec.n_participants);
    for (int i = 0; i < spec.n_participants; ++i) {
        Rng rng(derive_seed(spec.seed, "participant", static_cast<std::uint64_t>(i)));
        ParticipantProfile p;
        p.id = i;
        const int age = detail::draw_category(m[0], rng);
        const int gender = detail::draw_category(m[1], rng);
        const int site = detail::draw_category(m[2], rng);
        const int depression = detail::draw_category(m[3], rng);
        const int axis1 = depression == 1 ? 1 : (rng.uniform() < p_axis_given_healthy ? 1 : 0);
        p.labels = LabelVector::full(age, gender, site, depression, axis1);
        p.anhedonia = depression == 1 ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.3);

        // Stereotyped components; age, gender and axis1 leave their marks here.
        const double age_amp = age == 1 ? 1.4 : 1.0;
        const double age_lat = age == 1 ? -0.015 : 0.0;
        p.common_components = {
            Bump{4.0e-6 * age_amp * rng.uniform(0.75, 1.25),
                 0.100 + age_lat + rng.uniform(-0.012, 0.012), 0.030},
            Bump{-5.5e-6 * age_amp * rng.uniform(0.75, 1.25),
                 0.170 + age_lat + (gender == 1 ? 0.012 : 0.0) + rng.uniform(-0.012, 0.012),
                 0.040},
            Bump{3.5e-6 * (axis1 == 1 ? 0.8 : 1.0) * rng.uniform(0.75, 1.25),
                 0.250 + age_lat + rng.uniform(-0.015, 0.015), 0.055},
        };

        p.late_positive = Bump{spec.lpp_effect_volts * (age == 1 ? 1.1 : 1.0) *
                                   rng.uniform(0.65, 1.35),
                               0.550 + rng.uniform(-0.02, 0.02), 0.090 * rng.uniform(0.9, 1.1)};
        // Zero-mean emotional-response variability shared by both groups; it
        // overlaps the late window but peaks earlier and narrower.
        p.distractor = Bump{rng.normal(0.0, 1.35 * spec.lpp_effect_volts),
                            0.400 + rng.uniform(-0.015, 0.015), 0.060};

        const std::array<double, kNumChannels> gain_base{1.0, 1.05, 0.95};
        const std::array<double, kNumChannels> topo_base{0.6, 1.0, 1.15};
        for (int ch = 0; ch < kNumChannels; ++ch) {
            p.channel_gains[ch] = gain_base[ch] * rng.uniform(0.9, 1.1);
            p.late_topography[ch] = topo_base[ch] * rng.uniform(0.9, 1.1);
        }

        const std::array<double, 4> drift_by_site{1.0e-6, 2.0e-6, 3.0e-6, 4.5e-6};
        const std::array<double, 4> line_by_site{0.5e-6, 1.0e-6, 1.5e-6, 2.2e-6};
        const std::array<double, 4> gain_by_site{0.92, 1.0, 1.08, 1.2};
        p.drift_amp_v = drift_by_site[site] * rng.uniform(0.7, 1.3);
        p.line_amp_v = line_by_site[site] * rng.uniform(0.7, 1.3);
        p.line_freq_hz = 50.0;
        p.site_noise_gain = gain_by_site[site];
        p.noise_scale = spec.noise_scale;

        p.validate();
        cohort.push_back(std::move(p));
    }
    return cohort;
}

/// Noise-free waveform: stereotyped components plus the condition-dependent
/// late bumps. This is the oracle the tests compare Monte Carlo runs against.
inline std::array<std::vector<double>, kNumChannels>
deterministic_component(const ParticipantProfile& p, Condition condition) {
    std::array<std::vector<double>, kNumChannels> out;
    for (auto& ch : out) ch.assign(kTrialLen, 0.0);
    for (int t = 0; t < kTrialLen; ++t) {
        const double ts = (t - kTrialPreSamples) / kSampleRateHz;
        double common = 0.0;
        for (const Bump& b : p.common_components) common += b.value(ts);
        double late = 0.0;
        if (condition == Condition::positive) {
            late = p.late_positive.value(ts) * (1.0 - p.anhedonia) + p.distractor.value(ts);
        }
        for (int ch = 0; ch < kNumChannels; ++ch)
            out[ch][t] = p.channel_gains[ch] * common + p.late_topography[ch] * late;
    }
    return out;
}

/// One synthetic trial: deterministic component + slow drift + line noise +
/// pink noise. A pure function of (profile, condition, trial_seed).
inline TrialRecording synthesize_trial(const ParticipantProfile& profile, Condition condition,
                                       std::uint64_t trial_seed) {
    profile.validate();
    TrialRecording trial;
    trial.condition = condition;
    trial.event_index = kTrialPreSamples;
    trial.participant_id = profile.id;
    trial.channels = deterministic_component(profile, condition);

    Rng rng(trial_seed);
    const double drift_freq = rng.uniform(0.2, 1.0);
    const double drift_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double line_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    for (int ch = 0; ch < kNumChannels; ++ch) {
        detail::PinkNoise pink(Rng(derive_seed(trial_seed, "channel-noise", ch)));
        const double noise_gain = profile.noise_scale * profile.site_noise_gain;
        auto& x = trial.channels[ch];
        for (int t = 0; t < kTrialLen; ++t) {
            const double ts = t / kSampleRateHz;
            x[t] += profile.drift_amp_v *
                    std::sin(2.0 * std::numbers::pi * drift_freq * ts + drift_phase);
            x[t] += profile.line_amp_v *
                    std::sin(2.0 * std::numbers::pi * profile.line_freq_hz * ts + line_phase);
            x[t] += noise_gain * pink.next();
        }
    }
    return trial;
}

enum class ArtifactKind : std::uint8_t { spike = 0, transient = 1 };

inline const char* to_string(ArtifactKind k) {
    return k == ArtifactKind::spike ? "spike" : "transient";
}

inline ArtifactKind parse_artifact_kind(const std::string& s) {
    if (s == "spike") return ArtifactKind::spike;
    if (s == "transient") return ArtifactKind::transient;
    throw SpecError("unknown artifact kind: " + s);
}

/// Spike: one sample pushed beyond the +-0.005 V raw threshold (large enough
/// to survive the 30 Hz low-pass). Transient: a sustained step big enough
/// that the post-normalization adjacent-sample deflection exceeds 3 sigma.
inline TrialRecording inject_artifacts(const TrialRecording& trial, ArtifactKind kind,
                                       std::uint64_t trial_seed) {
    TrialRecording out = trial;
    Rng rng(derive_seed(trial_seed, "artifact"));
    const int ch = static_cast<int>(rng.uniform_int(kNumChannels));
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    if (kind == ArtifactKind::spike) {
        const int t = static_cast<int>(rng.uniform_int(out.length()));
        out.channels[ch][t] = sign * rng.uniform(0.03, 0.05);
    } else {
        double acc = 0.0;
        std::size_t n = 0;
        for (const auto& c : trial.channels)
            for (double v : c) {
                acc += v * v;
                ++n;
            }
        const double rms = std::sqrt(acc / double(n));
        // The 30 Hz low-pass spreads the edge over a few samples, so the raw
        // step must clear the 3-sigma deflection threshold with slack.
        const double amp = sign * std::max(1e-4, 15.0 * rms);
        const int t0 = 20 + static_cast<int>(rng.uniform_int(out.length() - 40));
        for (int t = t0; t < out.length(); ++t) out.channels[ch][t] += amp;
    }
    return out;
}

struct SessionTrial {
    TrialRecording trial;
    std::optional<ArtifactKind> artifact;
};

struct Session {
    int participant_id = 0;
    std::vector<SessionTrial> trials;
};

/// Full recording session: trials_per_condition trials of each condition,
/// interleaved in a seeded random order, with artifacts injected at the
/// configured rate.
inline Session synthesize_session(const ParticipantProfile& profile, const CohortSpec& spec) {
    spec.validate();
    Session session;
    session.participant_id = profile.id;

    std::vector<Condition> order;
    order.reserve(2 * spec.trials_per_condition);
    for (int i = 0; i < spec.trials_per_condition; ++i) {
        order.push_back(Condition::neutral);
        order.push_back(Condition::positive);
    }
    Rng rng(derive_seed(spec.seed, "session", static_cast<std::uint64_t>(profile.id)));
    rng.shuffle(order);

    const double rate = spec.effective_artifact_rate();
    for (std::size_t idx = 0; idx < order.size(); ++idx) {
        const std::uint64_t trial_seed = derive_seed(
            spec.seed, "trial", (static_cast<std::uint64_t>(profile.id) << 20) | idx);
        SessionTrial st;
        st.trial = synthesize_trial(profile, order[idx], trial_seed);
        const bool hit = rng.uniform() < rate;
        if (hit) {
            st.artifact = rng.uniform_int(2) == 0 ? ArtifactKind::spike : ArtifactKind::transient;
            st.trial = inject_artifacts(st.trial, *st.artifact, trial_seed);
        }
        session.trials.push_back(std::move(st));
    }
    return session;
}

/// Expected LPP-window feature per channel, straight from the generator's
/// own bump parameters (no noise, no filtering).
inline std::array<double, kNumChannels> expected_lpp_features(const ParticipantProfile& p) {
    double window_gain = 0.0;
    for (int t = kLppBegin; t <= kLppEnd; ++t) {
        const double ts = (t - kOnsetIndex) / kSampleRateHz;
        window_gain += p.late_positive.value(ts) * (1.0 - p.anhedonia) + p.distractor.value(ts);
    }
    window_gain /= double(kLppEnd - kLppBegin + 1);
    std::array<double, kNumChannels> out{};
    for (int ch = 0; ch < kNumChannels; ++ch) out[ch] = p.late_topography[ch] * window_gain;
    return out;
}

} // namespace erpkit
