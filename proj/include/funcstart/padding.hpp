#pragma once

#include "funcstart/ground_truth.hpp"
#include "funcstart/pe_image.hpp"

#include <bitset>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace funcstart {

struct PaddingConfig {
    /// Bytes inspected before each start: offsets 1..lookback.
    std::uint32_t lookback = 20;
    std::bitset<256> padding_values = single(0xCC);
    std::uint64_t seed = 0;
    /// Never write a replacement equal to the byte it replaces.
    bool exclude_original = false;

    static std::bitset<256> single(std::uint8_t v)
    {
        std::bitset<256> b;
        b.set(v);
        return b;
    }
    static std::bitset<256> of(std::initializer_list<std::uint8_t> values)
    {
        std::bitset<256> b;
        for (auto v : values)
            b.set(v);
        return b;
    }
    [[nodiscard]] bool is_padding(std::uint8_t v) const noexcept { return padding_values.test(v); }
    /// Throws SchemaError when lookback is 0 or no padding value is set.
    void check() const;
};

struct PaddingChange {
    Rva rva = 0;
    std::uint8_t old_value = 0;
    std::uint8_t new_value = 0;
    friend bool operator==(const PaddingChange&, const PaddingChange&) = default;
};

/// How "belongs to another function" is decided during the backward scan.
enum class OwnershipMode : std::uint8_t {
    /// Function ranges from ground-truth ends.
    ground_truth_ends,
    /// starts_only ground truth on x64: ranges from .pdata records.
    pdata,
    /// starts_only without .pdata: the scan stops at the first non-padding byte.
    stop_at_non_padding,
};

[[nodiscard]] std::string_view ownership_mode_name(OwnershipMode m) noexcept;

struct RandomizeResult {
    Bytes bytes;
    /// Sorted by rva.
    std::vector<PaddingChange> changes;
    OwnershipMode mode = OwnershipMode::ground_truth_ends;
};

/// Starts whose immediately preceding byte is a padding value that no
/// other function owns. Sorted.
[[nodiscard]] std::vector<Rva> find_padding_instances(const PeImage& image, const GroundTruth& gt,
                                                      const PaddingConfig& config);

/// Replaces padding bytes before every function start with seeded random
/// values. For each start s and i = 1..lookback: stop at the section base or
/// at a byte owned by a function; otherwise replace the byte if it is a
/// padding value and keep scanning. Throws UnmappedStart when a start is not
/// file-backed.
[[nodiscard]] RandomizeResult randomize_padding(const PeImage& image, const GroundTruth& gt,
                                                const PaddingConfig& config);

/// Writes `changes` over a copy of `original`.
[[nodiscard]] Bytes apply_changes(const PeImage& original, const std::vector<PaddingChange>& changes);

} // namespace funcstart
