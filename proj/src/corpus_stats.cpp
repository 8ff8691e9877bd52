#include "funcstart/corpus_stats.hpp"

#include "funcstart/error.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <set>

namespace funcstart {

namespace {

std::map<Rva, RuntimeFunctionEntry> pdata_by_begin(const PeImage& image)
{
    std::map<Rva, RuntimeFunctionEntry> out;
    if (image.machine() != Machine::x64 || image.exception_directory().size == 0)
        return out;
    for (const auto& e : parse_pdata(image).entries)
        out.emplace(e.begin, e);
    return out;
}

Bytes function_bytes(const PeImage& image, Rva start, Rva end)
{
    try {
        const ByteView v = image.bytes_at(start, end - start);
        return {v.begin(), v.end()};
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::UnmappedRva && e.kind() != ErrorKind::UnbackedRva)
            throw;
        throw Error(ErrorKind::UnmappedFunction, fmt::format("function [{:#x}, {:#x}): {}", start, end, e.what()));
    }
}

} // namespace

std::string_view extent_source_name(ExtentSource s) noexcept
{
    switch (s) {
    case ExtentSource::automatic:
        return "automatic";
    case ExtentSource::ground_truth:
        return "ground_truth";
    case ExtentSource::pdata:
        return "pdata";
    }
    return "automatic";
}

ExtractedFunctions extract_function_bytes(const PeImage& image, const GroundTruth& gt, ExtentSource source)
{
    ExtractedFunctions out;
    if (source == ExtentSource::automatic)
        source = gt.has_ends() ? ExtentSource::ground_truth : ExtentSource::pdata;
    out.source = source;

    std::map<Rva, RuntimeFunctionEntry> pdata;
    if (source == ExtentSource::pdata)
        pdata = pdata_by_begin(image);

    for (const auto& r : gt.records) {
        if (image.section_containing(r.start) == nullptr)
            throw Error(ErrorKind::UnmappedFunction, fmt::format("start {:#x} is not inside any section", r.start));
        std::optional<Rva> end;
        if (source == ExtentSource::ground_truth && r.end)
            end = gt.encoding == EndEncoding::inclusive_end ? *r.end + 1 : *r.end;
        if (source == ExtentSource::pdata) {
            auto it = pdata.find(r.start);
            if (it != pdata.end())
                end = it->second.end;
        }
        if (!end || *end <= r.start) {
            ++out.omitted;
            continue;
        }
        out.functions.emplace(r.start, function_bytes(image, r.start, *end));
    }
    return out;
}

namespace {

// One sweep; true if any byte changed.
bool blind_pass(Bytes& bytes, DecodeMode mode)
{
    bool changed = false;
    std::size_t off = 0;
    while (off < bytes.size()) {
        const Instruction insn = decode_one(bytes, off, mode);
        if (insn.cls != InsnClass::invalid) {
            auto blind = [&](FieldSpan f) {
                for (std::size_t k = off + f.offset; k < off + f.offset + f.width; ++k) {
                    changed = changed || bytes[k] != 0;
                    bytes[k] = 0;
                }
            };
            for (const auto& f : insn.imm_spans())
                blind(f);
            if (insn.is_rel_branch() && insn.disp_span)
                blind(*insn.disp_span);
        }
        off += insn.length;
    }
    return changed;
}

} // namespace

// Repeated until nothing changes. Blinding after an invalid byte can rewrite
// bytes the invalid decode looked at, so one pass is not always idempotent.
// Passes only clear bytes, so this terminates; on valid code the second pass
// is a no-op.
NormalizedSequence normalize(ByteView bytes, DecodeMode mode)
{
    NormalizedSequence out{Bytes(bytes.begin(), bytes.end()), bytes.size()};
    while (blind_pass(out.bytes, mode)) {
    }
    return out;
}

DiversityStats diversity_stats(const PeImage& image, const GroundTruth& gt, const PaddingConfig& padding,
                               ExtentSource source)
{
    DiversityStats st;
    st.rva_count = gt.records.size();
    const DecodeMode mode = DecodeMode::for_machine(image.machine());

    const ExtractedFunctions fx = extract_function_bytes(image, gt, source);
    st.extent_source = fx.source;
    st.functions_without_extent = fx.omitted;
    std::set<Bytes> raw;
    std::set<Bytes> norm;
    for (const auto& [start, bytes] : fx.functions) {
        raw.insert(bytes);
        norm.insert(normalize(bytes, mode).bytes);
    }
    st.byte_unique_count = raw.size();
    st.normalized_unique_count = norm.size();

    const auto pdata = pdata_by_begin(image);
    std::set<Bytes> prologues;
    std::set<Bytes> prologues_norm;
    for (const auto& r : gt.records) {
        auto it = pdata.find(r.start);
        if (it == pdata.end() || it->second.prolog_size == 0)
            continue;
        ++st.prologue_present;
        const Bytes p = function_bytes(image, r.start, r.start + it->second.prolog_size);
        prologues_norm.insert(normalize(p, mode).bytes);
        prologues.insert(p);
    }
    st.prologue_unique = prologues.size();
    st.prologue_normalized = prologues_norm.size();

    st.padding_instances = find_padding_instances(image, gt, padding).size();
    return st;
}

} // namespace funcstart
