#pragma once

#include "funcstart/decoder.hpp"
#include "funcstart/pe_image.hpp"

#include <set>
#include <vector>

namespace funcstart {

struct SweepResult {
    /// Consecutive instructions; addresses are RVAs.
    std::vector<Instruction> instructions;
    /// The last instruction runs past the end of the requested range.
    bool truncated = false;
};

/// Decodes `range` consecutively. The range must lie in the file-backed part
/// of one executable section; throws UnmappedRange otherwise. Instructions
/// may read bytes past range.end (up to the section's raw end) so the last
/// one is decoded as it would be in the full image.
[[nodiscard]] SweepResult linear_sweep(const PeImage& image, RvaRange range);

struct DescentOptions {
    /// Resume decoding after blocks that end in ret / jmp, at the next byte
    /// not yet decoded.
    bool gap_heuristic = false;
    /// With gap_heuristic: step over int3 / nop instructions before taking
    /// the resume point as a new block start.
    bool skip_padding = true;
};

struct DescentResult {
    /// Sorted by address. Overlapping instructions can occur when branch
    /// targets land inside previously decoded instructions.
    std::vector<Instruction> instructions;
    /// Targets of call_rel instructions that fall inside executable code.
    std::set<Rva> call_targets;
    /// Block starts introduced by the gap heuristic, in discovery order.
    std::vector<Rva> gap_entries;
    /// Relative branches whose target lies outside every section.
    std::size_t unmapped_targets = 0;
};

/// Control-flow-following disassembly from `seeds`. Throws UnmappedRange
/// when a seed is not a file-backed executable byte.
[[nodiscard]] DescentResult recursive_descent(const PeImage& image, const std::set<Rva>& seeds,
                                              DescentOptions options = {});

/// Marks instructions whose rel_target is outside every section.
void flag_unmapped_targets(const PeImage& image, std::vector<Instruction>& instructions);

} // namespace funcstart
