#include "funcstart/disasm.hpp"

#include "funcstart/error.hpp"

#include <algorithm>
#include <deque>
#include <fmt/format.h>
#include <map>

namespace funcstart {

namespace {

const Section* executable_section(const PeImage& image, Rva rva)
{
    const Section* s = image.section_containing(rva);
    if (s == nullptr || !s->executable || !s->raw_range().contains(rva))
        return nullptr;
    return s;
}

ByteView section_bytes(const PeImage& image, const Section& s)
{
    return image.bytes_at(s.rva, s.raw_range().size());
}

bool target_mapped(const PeImage& image, const Instruction& insn)
{
    return *insn.rel_target <= UINT32_MAX && image.section_containing(static_cast<Rva>(*insn.rel_target)) != nullptr;
}

bool is_padding_insn(const Instruction& insn)
{
    return insn.cls == InsnClass::int3 || insn.cls == InsnClass::nop;
}

// Per-byte coverage for the executable sections of one image.
class Coverage {
public:
    explicit Coverage(const PeImage& image)
    {
        for (const auto& r : image.executable_ranges())
            ranges_.push_back({r, std::vector<bool>(r.size())});
    }

    bool covered(Rva rva) const
    {
        const auto* e = find(rva);
        return e != nullptr && e->bits[rva - e->range.begin];
    }

    void mark(const Instruction& insn)
    {
        for (std::uint64_t a = insn.address; a < insn.end(); ++a) {
            auto* e = find(static_cast<Rva>(a));
            if (e != nullptr)
                e->bits[a - e->range.begin] = true;
        }
    }

private:
    struct Entry {
        RvaRange range;
        std::vector<bool> bits;
    };

    const Entry* find(Rva rva) const
    {
        for (const auto& e : ranges_)
            if (e.range.contains(rva))
                return &e;
        return nullptr;
    }
    Entry* find(Rva rva) { return const_cast<Entry*>(std::as_const(*this).find(rva)); }

    std::vector<Entry> ranges_;
};

} // namespace

void flag_unmapped_targets(const PeImage& image, std::vector<Instruction>& instructions)
{
    for (auto& insn : instructions)
        if (insn.rel_target)
            insn.target_unmapped = !target_mapped(image, insn);
}

SweepResult linear_sweep(const PeImage& image, RvaRange range)
{
    const Section* s = executable_section(image, range.begin);
    if (s == nullptr || range.end < range.begin || range.end > s->raw_range().end)
        throw Error(ErrorKind::UnmappedRange,
                    fmt::format("[{:#x}, {:#x}) is not file-backed executable code", range.begin, range.end));

    const ByteView bytes = section_bytes(image, *s);
    const DecodeMode mode = DecodeMode::for_machine(image.machine());
    SweepResult out;
    std::size_t off = range.begin - s->rva;
    const std::size_t stop = range.end - s->rva;
    while (off < stop) {
        out.instructions.push_back(decode_one(bytes, off, mode, s->rva));
        off += out.instructions.back().length;
    }
    out.truncated = off > stop;
    flag_unmapped_targets(image, out.instructions);
    return out;
}

DescentResult recursive_descent(const PeImage& image, const std::set<Rva>& seeds, DescentOptions options)
{
    for (Rva seed : seeds)
        if (executable_section(image, seed) == nullptr)
            throw Error(ErrorKind::UnmappedRange, fmt::format("seed {:#x} is not file-backed executable code", seed));

    const DecodeMode mode = DecodeMode::for_machine(image.machine());
    DescentResult out;
    std::map<Rva, Instruction> decoded;
    Coverage coverage(image);
    std::deque<Rva> work(seeds.begin(), seeds.end());
    // Resume points after terminators; only explored once the worklist of
    // real control flow is empty.
    std::deque<Rva> gaps;

    auto decode_at = [&](Rva rva) -> const Instruction* {
        const Section* s = executable_section(image, rva);
        if (s == nullptr)
            return nullptr;
        auto [it, inserted] = decoded.try_emplace(rva);
        if (inserted) {
            it->second = decode_one(section_bytes(image, *s), rva - s->rva, mode, s->rva);
            coverage.mark(it->second);
        }
        return &it->second;
    };

    auto follow = [&](Rva start) {
        Rva pc = start;
        while (true) {
            if (decoded.count(pc) != 0 && pc != start)
                return;
            const Instruction* insn = decode_at(pc);
            if (insn == nullptr)
                return;
            if (insn->rel_target) {
                if (!target_mapped(image, *insn)) {
                    ++out.unmapped_targets;
                } else {
                    const auto target = static_cast<Rva>(*insn->rel_target);
                    if (executable_section(image, target) != nullptr) {
                        if (insn->cls == InsnClass::call_rel)
                            out.call_targets.insert(target);
                        if (decoded.count(target) == 0)
                            work.push_back(target);
                    }
                }
            }
            if (insn->ends_flow()) {
                if (options.gap_heuristic && insn->cls != InsnClass::invalid && insn->end() <= UINT32_MAX)
                    gaps.push_back(static_cast<Rva>(insn->end()));
                return;
            }
            if (insn->end() > UINT32_MAX)
                return;
            pc = static_cast<Rva>(insn->end());
        }
    };

    auto explore_gap = [&](Rva rva) {
        if (options.skip_padding) {
            while (!coverage.covered(rva) && executable_section(image, rva) != nullptr) {
                const Section* s = executable_section(image, rva);
                const Instruction insn = decode_one(section_bytes(image, *s), rva - s->rva, mode, s->rva);
                if (!is_padding_insn(insn))
                    break;
                rva += insn.length;
            }
        }
        if (coverage.covered(rva) || executable_section(image, rva) == nullptr)
            return;
        out.gap_entries.push_back(rva);
        work.push_back(rva);
    };

    while (!work.empty() || !gaps.empty()) {
        if (!work.empty()) {
            const Rva rva = work.front();
            work.pop_front();
            if (decoded.count(rva) == 0)
                follow(rva);
            continue;
        }
        const Rva rva = gaps.front();
        gaps.pop_front();
        explore_gap(rva);
    }

    out.instructions.reserve(decoded.size());
    for (auto& [rva, insn] : decoded)
        out.instructions.push_back(insn);
    flag_unmapped_targets(image, out.instructions);
    return out;
}

} // namespace funcstart
