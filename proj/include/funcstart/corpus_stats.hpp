#pragma once

#include "funcstart/decoder.hpp"
#include "funcstart/ground_truth.hpp"
#include "funcstart/padding.hpp"
#include "funcstart/pe_image.hpp"

#include <map>
#include <string_view>

namespace funcstart {

/// Where function extents come from.
enum class ExtentSource : std::uint8_t {
    /// Ground-truth ends when present, otherwise .pdata.
    automatic,
    ground_truth,
    pdata,
};

[[nodiscard]] std::string_view extent_source_name(ExtentSource s) noexcept;

struct ExtractedFunctions {
    std::map<Rva, Bytes> functions;
    /// Records for which no end could be derived.
    std::size_t omitted = 0;
    /// The source actually used (never `automatic`).
    ExtentSource source = ExtentSource::ground_truth;
};

/// Raw bytes of every function from its start to its end. Throws
/// UnmappedFunction when a function's bytes are not file-backed.
[[nodiscard]] ExtractedFunctions extract_function_bytes(const PeImage& image, const GroundTruth& gt,
                                                        ExtentSource source = ExtentSource::automatic);

struct NormalizedSequence {
    Bytes bytes;
    std::size_t source_len = 0;
    friend bool operator==(const NormalizedSequence&, const NormalizedSequence&) = default;
};

/// Linear-sweep decode of `bytes`, then zero every immediate field and the
/// displacement of relative branches. Everything else is kept.
[[nodiscard]] NormalizedSequence normalize(ByteView bytes, DecodeMode mode);

struct DiversityStats {
    std::size_t rva_count = 0;
    std::size_t byte_unique_count = 0;
    std::size_t normalized_unique_count = 0;
    std::size_t prologue_present = 0;
    std::size_t prologue_unique = 0;
    std::size_t prologue_normalized = 0;
    std::size_t padding_instances = 0;
    /// Functions whose extent could not be derived.
    std::size_t functions_without_extent = 0;
    ExtentSource extent_source = ExtentSource::ground_truth;
    friend bool operator==(const DiversityStats&, const DiversityStats&) = default;
};

[[nodiscard]] DiversityStats diversity_stats(const PeImage& image, const GroundTruth& gt,
                                             const PaddingConfig& padding = {},
                                             ExtentSource source = ExtentSource::automatic);

} // namespace funcstart
