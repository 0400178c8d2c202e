#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include <erpkit/sigproc.hpp>

#include "testutil.hpp"

using namespace erpkit;

namespace {

double rms(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return std::sqrt(acc / double(x.size()));
}

// Deterministic +-1 uV checkerboard; pooled mean 0, pooled sd 1 uV.
Epoch patterned_epoch(Condition c = Condition::neutral) {
    Epoch e;
    e.condition = c;
    for (int ch = 0; ch < kNumChannels; ++ch)
        for (int t = 0; t < kEpochLen; ++t) e.at(ch, t) = ((ch + t) % 2 ? 1.0 : -1.0) * 1e-6;
    return e;
}

} // namespace

TEST_CASE("butterworth design hits the stated responses") {
    const auto hp = design_butterworth(FilterKind::high_pass, 2, 0.1, 250.0);
    const auto lp = design_butterworth(FilterKind::low_pass, 12, 30.0, 250.0);

    SECTION("high-pass blocks DC") {
        CHECK(filter_magnitude(hp, 0.0) < 1e-12);
    }
    SECTION("low-pass passes DC at unit gain") {
        for (int order : {1, 2, 5, 12}) {
            const auto f = design_butterworth(FilterKind::low_pass, order, 30.0, 250.0);
            CHECK(filter_magnitude(f, 0.0) == Catch::Approx(1.0).margin(1e-6));
        }
    }
    SECTION("-3 dB at the cutoff") {
        const double hp_db = 20.0 * std::log10(filter_magnitude(hp, 0.1));
        const double lp_db = 20.0 * std::log10(filter_magnitude(lp, 30.0));
        CHECK(hp_db == Catch::Approx(-3.0).margin(0.1));
        CHECK(lp_db == Catch::Approx(-3.0).margin(0.1));
    }
    SECTION("designed filters are stable") {
        CHECK(polynomial_is_stable(hp.denominator));
        CHECK(polynomial_is_stable(lp.denominator));
    }
    SECTION("maximally flat passband: monotone magnitude") {
        double prev = filter_magnitude(lp, 0.0);
        for (double f = 1.0; f <= 124.0; f += 1.0) {
            const double cur = filter_magnitude(lp, f);
            CHECK(cur <= prev + 1e-9);
            prev = cur;
        }
    }
    SECTION("cutoff at or above Nyquist is rejected") {
        CHECK_THROWS_AS(design_butterworth(FilterKind::low_pass, 2, 125.0, 250.0), SpecError);
        CHECK_THROWS_AS(design_butterworth(FilterKind::low_pass, 2, 200.0, 250.0), SpecError);
    }
}

TEST_CASE("apply_filter basics") {
    const auto lp = design_butterworth(FilterKind::low_pass, 12, 30.0, 250.0);

    SECTION("zero input gives zero output") {
        std::vector<double> zeros(500, 0.0);
        const auto y = apply_filter(lp, zeros);
        REQUIRE(y.size() == zeros.size());
        for (double v : y) CHECK(v == 0.0);
    }
    SECTION("unit-gain all-pass is the identity") {
        FilterCoefficients unit;
        unit.numerator = {1.0};
        unit.denominator = {1.0};
        unit.fs_hz = 250.0;
        std::vector<double> x{0.5, -1.0, 2.0, 0.0, 3.5};
        CHECK(apply_filter(unit, x) == x);
    }
    SECTION("60 Hz sinusoid is crushed by the 30 Hz low-pass") {
        std::vector<double> x(2500);
        for (std::size_t n = 0; n < x.size(); ++n)
            x[n] = std::sin(2.0 * std::numbers::pi * 60.0 * double(n) / 250.0);
        const auto y = apply_filter(lp, x);
        CHECK(rms(y) < 0.05 * rms(x));
        // Coefficient-level oracle: the stopband response itself is tiny.
        CHECK(filter_magnitude(lp, 60.0) < 0.01);
    }
    SECTION("unstable coefficients are rejected") {
        FilterCoefficients bad;
        bad.numerator = {1.0};
        bad.denominator = {1.0, -1.5}; // pole at 1.5
        bad.fs_hz = 250.0;
        std::vector<double> x(10, 1.0);
        CHECK_THROWS_AS(apply_filter(bad, x), SpecError);
    }
}

TEST_CASE("segment_epochs window arithmetic") {
    SECTION("exact fit covers the whole recording") {
        TrialRecording trial;
        trial.event_index = kPreOnsetSamples;
        for (auto& ch : trial.channels) {
            ch.resize(kEpochLen);
            for (int t = 0; t < kEpochLen; ++t) ch[t] = t;
        }
        const Epoch e = segment_epochs(trial);
        CHECK(e.at(0, 0) == 0.0);
        CHECK(e.at(0, kEpochLen - 1) == kEpochLen - 1);
    }
    SECTION("ramp start lands at event_index - 62") {
        TrialRecording trial;
        trial.event_index = 100;
        for (auto& ch : trial.channels) {
            ch.resize(400);
            for (int t = 0; t < 400; ++t) ch[t] = t;
        }
        const Epoch e = segment_epochs(trial);
        CHECK(e.at(0, 0) == 100 - 62);
        CHECK(e.at(2, kEpochLen - 1) == 100 + 193);
    }
    SECTION("insufficient margin is a range error") {
        TrialRecording trial;
        trial.event_index = 61;
        for (auto& ch : trial.channels) ch.resize(kEpochLen);
        CHECK_THROWS_AS(segment_epochs(trial), std::out_of_range);
    }
}

TEST_CASE("reject_epochs applies the four rules in order") {
    SECTION("all-zero epochs are kept") {
        std::vector<Epoch> epochs(4);
        const auto report = reject_epochs(epochs);
        CHECK(report.kept.size() == 4);
        CHECK(report.rejected.empty());
    }
    SECTION("empty input gives an empty report") {
        const auto report = reject_epochs({});
        CHECK(report.kept.empty());
        CHECK(report.rejected.empty());
    }
    SECTION("constructed suite partitions exactly") {
        std::vector<Epoch> epochs;
        epochs.push_back(patterned_epoch()); // 0: clean

        Epoch amp = patterned_epoch(); // 1: raw amplitude violation
        amp.at(1, 50) = 0.006;
        epochs.push_back(amp);

        Epoch outlier = patterned_epoch(); // 2: ~6 sigma sample
        outlier.at(0, 10) = 6e-6;
        epochs.push_back(outlier);

        Epoch transient = patterned_epoch(); // 3: ~4 sigma adjacent step
        transient.at(0, 100) = -2e-6;
        transient.at(0, 101) = 2e-6;
        epochs.push_back(transient);

        epochs.push_back(patterned_epoch()); // 4: clean

        const auto report = reject_epochs(epochs);
        CHECK(report.kept == std::vector<std::size_t>{0, 4});
        REQUIRE(report.rejected.size() == 3);
        CHECK(report.rejected[0] == std::make_pair(std::size_t(1), RejectRule::amplitude));
        CHECK(report.rejected[1] == std::make_pair(std::size_t(2), RejectRule::sigma));
        CHECK(report.rejected[2] == std::make_pair(std::size_t(3), RejectRule::transient));
    }
    SECTION("sigma wins over transient when both trip") {
        std::vector<Epoch> epochs(5, patterned_epoch());
        epochs[2].at(0, 10) = 8e-6; // 8 sigma step next to a -1 uV neighbor
        const auto report = reject_epochs(epochs);
        REQUIRE(report.rejected.size() == 1);
        CHECK(report.rejected[0].second == RejectRule::sigma);
    }
    SECTION("adding an artifact never increases the kept count") {
        Rng rng(55);
        for (int trial = 0; trial < 20; ++trial) {
            // Band-limited signals, as epochs are after low-pass filtering;
            // white noise would trip the transient rule on its own.
            std::vector<Epoch> epochs(8);
            for (auto& e : epochs) {
                const double amp = rng.uniform(0.5e-6, 2e-6);
                const double freq = rng.uniform(2.0, 8.0);
                const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                for (int ch = 0; ch < kNumChannels; ++ch)
                    for (int t = 0; t < kEpochLen; ++t)
                        e.at(ch, t) = amp * std::sin(2.0 * std::numbers::pi * freq * t / 250.0 +
                                                     phase + ch);
            }
            const auto before = reject_epochs(epochs);
            REQUIRE(!before.kept.empty());
            std::vector<Epoch> corrupted = epochs;
            const std::size_t victim = before.kept[rng.uniform_int(before.kept.size())];
            corrupted[victim].at(0, 128) = 0.0061;
            const auto after = reject_epochs(corrupted);
            CHECK(after.kept.size() <= before.kept.size());
        }
    }
}

TEST_CASE("average_erp") {
    SECTION("single epoch averages to itself") {
        Epoch e = patterned_epoch(Condition::positive);
        const auto erp = average_erp({e}, Condition::positive);
        for (int ch = 0; ch < kNumChannels; ++ch)
            for (int t = 0; t < kEpochLen; ++t) CHECK(erp.at(ch, t) == e.at(ch, t));
    }
    SECTION("epoch plus its negation averages to zero") {
        Epoch a = patterned_epoch();
        Epoch b = a;
        for (auto& v : b.samples) v = -v;
        const auto erp = average_erp({a, b}, Condition::neutral);
        for (double v : erp.values) CHECK(v == 0.0);
    }
    SECTION("zero matching epochs raises the empty-condition error") {
        CHECK_THROWS_AS(average_erp({patterned_epoch(Condition::neutral)}, Condition::positive),
                        EmptyConditionError);
    }
    SECTION("noise shrinks like 1/sqrt(n) across 37 trials") {
        Rng rng(77);
        const double noise_sd = 2e-6;
        Epoch reference = patterned_epoch();
        std::vector<Epoch> noisy;
        for (int i = 0; i < 37; ++i) {
            Epoch e = reference;
            for (auto& v : e.samples) v += rng.normal(0.0, noise_sd);
            noisy.push_back(std::move(e));
        }
        const auto erp = average_erp(noisy, Condition::neutral);
        double acc = 0.0;
        for (int ch = 0; ch < kNumChannels; ++ch)
            for (int t = 0; t < kEpochLen; ++t) {
                const double d = erp.at(ch, t) - reference.at(ch, t);
                acc += d * d;
            }
        const double err_rms = std::sqrt(acc / double(kNumChannels * kEpochLen));
        const double expected = noise_sd / std::sqrt(37.0);
        CHECK(err_rms > 0.8 * expected);
        CHECK(err_rms < 1.25 * expected);
    }
}

TEST_CASE("lpp_features") {
    Tensor<double> zero({kNumChannels, kEpochLen});

    SECTION("identical conditions give the zero vector") {
        Rng rng(5);
        auto erp = testutil::random_tensor({kNumChannels, kEpochLen}, rng);
        const auto f = lpp_features(erp, erp);
        for (double v : f) CHECK(v == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("unit boxcar over the window gives ones") {
        Tensor<double> pos({kNumChannels, kEpochLen});
        for (int ch = 0; ch < kNumChannels; ++ch)
            for (int t = kLppBegin; t <= kLppEnd; ++t) pos.at(ch, t) = 1.0;
        const auto f = lpp_features(pos, zero);
        for (double v : f) CHECK(v == Catch::Approx(1.0));
    }
    SECTION("constant offsets cancel through baseline correction") {
        Rng rng(6);
        auto pos = testutil::random_tensor({kNumChannels, kEpochLen}, rng);
        auto neu = testutil::random_tensor({kNumChannels, kEpochLen}, rng);
        const auto f0 = lpp_features(pos, neu);
        for (auto& v : pos.values) v += 3.7;
        for (auto& v : neu.values) v += 3.7;
        const auto f1 = lpp_features(pos, neu);
        for (int ch = 0; ch < kNumChannels; ++ch)
            CHECK(f1[ch] == Catch::Approx(f0[ch]).margin(1e-12));
    }
    SECTION("wrong shape is rejected") {
        Tensor<double> bad({2, kEpochLen});
        CHECK_THROWS_AS(lpp_features(bad, bad), SpecError);
    }
}

TEST_CASE("assemble_image") {
    SECTION("min-max lands on [0, 1]") {
        Tensor<double> neu({kNumChannels, kEpochLen});
        Tensor<double> pos({kNumChannels, kEpochLen});
        neu.at(0, 0) = -1.0;
        pos.at(2, 100) = 1.0;
        const auto img = assemble_image(neu, pos, ImageSource::erp);
        const auto [mn, mx] = std::minmax_element(img.values.begin(), img.values.end());
        CHECK(*mn == 0.0);
        CHECK(*mx == 1.0);
    }
    SECTION("constant input maps to all 0.5") {
        Tensor<double> c({kNumChannels, kEpochLen});
        c.fill(4.2);
        const auto img = assemble_image(c, c, ImageSource::erp);
        for (double v : img.values) CHECK(v == 0.5);
    }
    SECTION("row order: neutral Fz t=0 lands at (0, 0)") {
        Tensor<double> neu({kNumChannels, kEpochLen});
        Tensor<double> pos({kNumChannels, kEpochLen});
        neu.at(0, 0) = 2.0; // unique maximum
        const auto img = assemble_image(neu, pos, ImageSource::erp);
        CHECK(img.at(0, 0) == 1.0);
        // positive Pz lands in the last row
        Tensor<double> pos2({kNumChannels, kEpochLen});
        pos2.at(2, 5) = 2.0;
        const auto img2 = assemble_image(neu, pos2, ImageSource::smpl);
        CHECK(img2.at(5, 5) == 1.0);
        CHECK(img2.source == ImageSource::smpl);
    }
    SECTION("invariant to joint affine rescaling") {
        Rng rng(9);
        auto neu = testutil::random_tensor({kNumChannels, kEpochLen}, rng);
        auto pos = testutil::random_tensor({kNumChannels, kEpochLen}, rng);
        const auto base = assemble_image(neu, pos, ImageSource::erp);
        auto neu2 = neu;
        auto pos2 = pos;
        for (auto& v : neu2.values) v = 7.5 * v - 2.25;
        for (auto& v : pos2.values) v = 7.5 * v - 2.25;
        const auto scaled = assemble_image(neu2, pos2, ImageSource::erp);
        for (int i = 0; i < kImageSize; ++i)
            CHECK(std::abs(base.values[i] - scaled.values[i]) < 1e-12);
    }
}
