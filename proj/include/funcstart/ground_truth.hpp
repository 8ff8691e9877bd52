#pragma once

#include "funcstart/bytes.hpp"
#include "funcstart/pe_image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace funcstart {

enum class EndEncoding : std::uint8_t { exclusive_end, inclusive_end, starts_only };

[[nodiscard]] std::string_view encoding_name(EndEncoding e) noexcept;
/// Accepts the enum names and the CLI spellings exclusive / inclusive /
/// starts-only. Throws SchemaError.
[[nodiscard]] EndEncoding parse_encoding(std::string_view name);

struct FunctionRecord {
    Rva start = 0;
    std::optional<Rva> end;
    /// One-byte function: its inclusive end equals its start, so S and E
    /// would land on the same byte.
    bool one_byte_conflict = false;
    friend bool operator==(const FunctionRecord&, const FunctionRecord&) = default;
};

struct GroundTruth {
    std::string sample_id;
    Machine machine = Machine::x64;
    EndEncoding encoding = EndEncoding::starts_only;
    /// Sorted by start; starts are unique.
    std::vector<FunctionRecord> records;

    [[nodiscard]] std::vector<Rva> starts() const;
    [[nodiscard]] bool has_ends() const noexcept { return encoding != EndEncoding::starts_only; }
    [[nodiscard]] std::size_t one_byte_conflicts() const noexcept;
    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Sorts records and checks start uniqueness and end ordering.
/// Throws DuplicateStart or SchemaError.
void validate(GroundTruth& gt);

[[nodiscard]] GroundTruth parse_ground_truth(std::string_view text);
[[nodiscard]] std::string serialize_ground_truth(const GroundTruth& gt);
[[nodiscard]] GroundTruth load_ground_truth(const std::filesystem::path& path);
void save_ground_truth(const std::filesystem::path& path, const GroundTruth& gt);

struct BindReport {
    /// Starts dropped because their section is not executable.
    std::vector<Rva> non_executable;
};

/// Checks `gt` against `image`: machine must match (SchemaError), every
/// start must be mapped (StartOutsideImage). Starts in non-executable
/// sections are removed and reported.
BindReport bind_to_image(GroundTruth& gt, const PeImage& image);

enum class ByteLabel : std::uint8_t { N, S, E };
enum class ConflictRule : std::uint8_t { end_wins, start_wins };

struct ByteLabels {
    Rva base = 0;
    std::vector<ByteLabel> labels;

    [[nodiscard]] ByteLabel at(Rva rva) const noexcept
    {
        return rva >= base && rva - base < labels.size() ? labels[rva - base] : ByteLabel::N;
    }
};

/// S at each start, E at each recorded end value, N elsewhere. The label
/// array spans from the lowest to the highest labeled position.
/// Throws EncodingMismatch for starts_only.
[[nodiscard]] ByteLabels to_byte_labels(const GroundTruth& gt, ConflictRule rule = ConflictRule::end_wins);

using BoundaryPair = std::pair<Rva, Rva>;

struct PairingResult {
    std::vector<BoundaryPair> pairs;
    /// Ends seen before any start.
    std::size_t dropped_ends = 0;
    /// Starts followed by another start with no end in between.
    std::size_t dropped_starts = 0;
};

/// Couples each start with the last end seen before the next start.
[[nodiscard]] PairingResult pair_boundaries(const ByteLabels& labels);

/// Same rule over sparse labels, given as (position, label) sorted by position.
[[nodiscard]] PairingResult pair_events(const std::vector<std::pair<Rva, ByteLabel>>& events);

/// exclusive -> inclusive subtracts one from each end, inclusive ->
/// exclusive adds one; starts_only drops the ends.
/// Throws EncodingMismatch when `gt` has no ends and `target` needs them.
[[nodiscard]] GroundTruth convert_encoding(const GroundTruth& gt, EndEncoding target);

/// Rebuilds the ground truth the way the original boundary pipeline
/// consumed it: split records into starts and ends, drop every start that is
/// also an end, and re-pair with pair_boundaries. Requires exclusive ends.
[[nodiscard]] GroundTruth adapt_ground_truth(const GroundTruth& gt);

/// Records as (start, end) pairs; records without an end are skipped.
[[nodiscard]] std::vector<BoundaryPair> boundary_pairs(const GroundTruth& gt);

} // namespace funcstart
