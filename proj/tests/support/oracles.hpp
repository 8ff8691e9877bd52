#pragma once

#include "funcstart/decoder.hpp"
#include "funcstart/ground_truth.hpp"
#include "funcstart/pe_image.hpp"

#include <set>

namespace funcstart::testing {

struct OracleCounts {
    std::size_t byte_unique = 0;
    std::size_t normalized_unique = 0;
    std::size_t padding_instances = 0;
};

// File slice for [start, end) found by walking the section table by hand.
inline Bytes slice(const PeImage& img, Rva start, Rva end)
{
    for (const auto& s : img.sections())
        if (start >= s.rva && end <= s.rva + s.raw_size) {
            const auto* p = img.raw_bytes().data() + s.raw_offset + (start - s.rva);
            return Bytes(p, p + (end - start));
        }
    return {};
}

// Set-based counts over exclusive-end ground truth. Normalization decodes
// instruction by instruction and zeroes every reported field.
inline OracleCounts brute_force_counts(const PeImage& img, const GroundTruth& gt, std::uint8_t padding = 0xCC)
{
    const DecodeMode mode = DecodeMode::for_machine(img.machine());
    std::set<Bytes> raw, normalized;
    OracleCounts out;
    for (const auto& r : gt.records) {
        const Bytes b = slice(img, r.start, *r.end);
        raw.insert(b);
        Bytes n = b;
        for (std::size_t at = 0; at < b.size();) {
            const Instruction insn = decode_one(b, at, mode);
            if (insn.cls != InsnClass::invalid) {
                for (const auto& f : insn.imm_spans())
                    for (int k = 0; k < f.width; ++k)
                        n[at + f.offset + k] = 0;
                if (insn.is_rel_branch() && insn.disp_span)
                    for (int k = 0; k < insn.disp_span->width; ++k)
                        n[at + insn.disp_span->offset + k] = 0;
            }
            at += insn.length;
        }
        normalized.insert(n);

        const Rva before = r.start - 1;
        const Section* s = img.section_containing(before);
        if (r.start > 0 && s && s->executable && s->raw_range().contains(before) &&
            slice(img, before, r.start) == Bytes{padding}) {
            bool owned = false;
            for (const auto& o : gt.records)
                owned = owned || (before >= o.start && before < *o.end);
            out.padding_instances += owned ? 0 : 1;
        }
    }
    out.byte_unique = raw.size();
    out.normalized_unique = normalized.size();
    return out;
}

} // namespace funcstart::testing
