#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "erpkit/common.hpp"
#include "erpkit/tensor.hpp"

namespace erpkit {

// Stimulus-locked time base: 250 Hz, 256-sample epochs spanning -248..+772 ms
// with stimulus onset at sample 62 (4 ms per sample).
inline constexpr double kSampleRateHz = 250.0;
inline constexpr int kNumChannels = 3; // Fz, Cz, Pz
inline constexpr int kEpochLen = 256;
inline constexpr int kOnsetIndex = 62;
inline constexpr int kPreOnsetSamples = 62;
inline constexpr int kPostOnsetSamples = 193;
inline constexpr int kBaselineBegin = 37; // 100 ms window preceding onset
inline constexpr int kBaselineEnd = 61;   // inclusive
inline constexpr int kLppBegin = 137;     // 300 ms after onset
inline constexpr int kLppEnd = 236;       // 700 ms after onset, inclusive
inline constexpr int kImageRows = 6;      // {neutral, positive} x {Fz, Cz, Pz}
inline constexpr int kImageCols = kEpochLen;
inline constexpr int kImageSize = kImageRows * kImageCols;
inline constexpr double kAmplitudeThresholdVolts = 0.005;

inline const std::array<std::string, kNumChannels> kChannelNames = {"Fz", "Cz", "Pz"};

enum class Condition : std::uint8_t { neutral = 0, positive = 1 };

inline const char* to_string(Condition c) {
    return c == Condition::neutral ? "neutral" : "positive";
}

// Factor categories and their 12-slot multi-one-hot encoding, block layout
// [age:2][gender:2][site:4][depression:2][axis1:2]. Unset blocks encode as
// all-zero, which is how partial symbols are fed to the label model.
inline constexpr int kNumFactors = 5;
inline constexpr int kLabelSlots = 12;
inline constexpr std::array<int, kNumFactors> kFactorCardinality = {2, 2, 4, 2, 2};
inline constexpr std::array<int, kNumFactors> kFactorOffset = {0, 2, 4, 8, 10};
inline const std::array<std::string, kNumFactors> kFactorNames = {"age", "gender", "site",
                                                                  "depression", "axis1"};

inline const std::array<std::vector<std::string>, kNumFactors> kFactorLevels = {
    std::vector<std::string>{"child", "adult"},
    std::vector<std::string>{"M", "F"},
    std::vector<std::string>{"1", "2", "3", "4"},
    std::vector<std::string>{"0", "1"},
    std::vector<std::string>{"0", "1"},
};

struct LabelVector {
    // Category index per factor; nullopt marks an unset block.
    std::array<std::optional<int>, kNumFactors> factors{};

    std::optional<int>& age() { return factors[0]; }
    std::optional<int>& gender() { return factors[1]; }
    std::optional<int>& site() { return factors[2]; }
    std::optional<int>& depression() { return factors[3]; }
    std::optional<int>& axis1() { return factors[4]; }
    const std::optional<int>& age() const { return factors[0]; }
    const std::optional<int>& gender() const { return factors[1]; }
    const std::optional<int>& site() const { return factors[2]; }
    const std::optional<int>& depression() const { return factors[3]; }
    const std::optional<int>& axis1() const { return factors[4]; }

    static LabelVector full(int age, int gender, int site, int depression, int axis1) {
        LabelVector y;
        y.factors = {age, gender, site, depression, axis1};
        y.validate();
        return y;
    }

    /// Single-factor symbol; every other block stays unset.
    static LabelVector partial(int factor, int category) {
        require(factor >= 0 && factor < kNumFactors, "factor index out of range");
        LabelVector y;
        y.factors[factor] = category;
        y.validate();
        return y;
    }

    void validate() const {
        for (int f = 0; f < kNumFactors; ++f) {
            if (!factors[f]) continue;
            require(*factors[f] >= 0 && *factors[f] < kFactorCardinality[f],
                    "label category out of range for factor " + kFactorNames[f]);
        }
    }

    bool fully_set() const {
        for (const auto& v : factors)
            if (!v) return false;
        return true;
    }

    bool any_set() const {
        for (const auto& v : factors)
            if (v) return true;
        return false;
    }

    std::array<std::uint8_t, kLabelSlots> encode() const {
        validate();
        std::array<std::uint8_t, kLabelSlots> slots{};
        for (int f = 0; f < kNumFactors; ++f)
            if (factors[f]) slots[kFactorOffset[f] + *factors[f]] = 1;
        return slots;
    }

    static LabelVector decode(const std::array<std::uint8_t, kLabelSlots>& slots) {
        LabelVector y;
        for (int f = 0; f < kNumFactors; ++f) {
            int hot = -1;
            for (int c = 0; c < kFactorCardinality[f]; ++c) {
                if (slots[kFactorOffset[f] + c]) {
                    require(hot < 0, "label block has more than one hot slot");
                    hot = c;
                }
            }
            if (hot >= 0) y.factors[f] = hot;
        }
        return y;
    }

    template <typename T>
    Tensor<T> to_tensor() const {
        const auto slots = encode();
        Tensor<T> t({1, kLabelSlots});
        for (int i = 0; i < kLabelSlots; ++i) t[i] = static_cast<T>(slots[i]);
        return t;
    }

    bool operator==(const LabelVector& other) const { return factors == other.factors; }
};

/// One stimulus-locked recording from one presentation. Samples in volts.
struct TrialRecording {
    std::array<std::vector<double>, kNumChannels> channels;
    Condition condition = Condition::neutral;
    int event_index = 0;
    int participant_id = 0;

    int length() const { return static_cast<int>(channels[0].size()); }

    void validate() const {
        for (const auto& ch : channels)
            require(static_cast<int>(ch.size()) == length(), "trial channels differ in length");
        require(event_index >= kPreOnsetSamples &&
                    event_index + kPostOnsetSamples < length(),
                "event index leaves insufficient margin");
    }
};

/// One segmented epoch: 3 channels x 256 samples, volts, channel-major.
struct Epoch {
    Condition condition = Condition::neutral;
    int participant_id = 0;
    std::vector<double> samples; // kNumChannels * kEpochLen

    Epoch() : samples(kNumChannels * kEpochLen, 0.0) {}

    double& at(int ch, int t) { return samples[static_cast<std::size_t>(ch) * kEpochLen + t]; }
    double at(int ch, int t) const {
        return samples[static_cast<std::size_t>(ch) * kEpochLen + t];
    }
};

enum class ImageSource : std::uint8_t { erp = 0, smpl = 1 };

/// The model input: 6 x 256 values normalized to [0, 1], rows ordered
/// [neutral Fz, neutral Cz, neutral Pz, positive Fz, positive Cz, positive Pz].
struct ErpImage {
    std::vector<double> values; // row-major 6 x 256
    ImageSource source = ImageSource::erp;

    ErpImage() : values(kImageSize, 0.0) {}

    double& at(int row, int col) {
        return values[static_cast<std::size_t>(row) * kImageCols + col];
    }
    double at(int row, int col) const {
        return values[static_cast<std::size_t>(row) * kImageCols + col];
    }

    template <typename T>
    Tensor<T> to_tensor() const {
        Tensor<T> t({1, kImageRows, kImageCols});
        for (int i = 0; i < kImageSize; ++i) t[i] = static_cast<T>(values[i]);
        return t;
    }
};

} // namespace erpkit
