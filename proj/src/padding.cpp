#include "funcstart/padding.hpp"

#include "funcstart/error.hpp"
#include "funcstart/rng.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <optional>

namespace funcstart {

namespace {

// Half-open function ranges used by the backward scan.
class Ownership {
public:
    Ownership(const PeImage& image, const GroundTruth& gt)
    {
        if (gt.has_ends()) {
            mode_ = OwnershipMode::ground_truth_ends;
            const Rva bump = gt.encoding == EndEncoding::inclusive_end ? 1 : 0;
            for (const auto& r : gt.records)
                if (r.end)
                    ranges_.push_back({r.start, *r.end + bump});
        } else if (image.machine() == Machine::x64 && image.exception_directory().size != 0) {
            for (const auto& e : parse_pdata(image).entries)
                ranges_.push_back({e.begin, e.end});
            mode_ = ranges_.empty() ? OwnershipMode::stop_at_non_padding : OwnershipMode::pdata;
        } else {
            mode_ = OwnershipMode::stop_at_non_padding;
        }
        std::sort(ranges_.begin(), ranges_.end(), [](const RvaRange& a, const RvaRange& b) { return a.begin < b.begin; });
        // Running max of range ends, so a lookup only needs the last range
        // starting at or before the byte.
        Rva reach = 0;
        for (const auto& r : ranges_) {
            reach = std::max(reach, r.end);
            reach_.push_back(reach);
        }
    }

    [[nodiscard]] OwnershipMode mode() const noexcept { return mode_; }

    [[nodiscard]] bool owned(Rva rva) const noexcept
    {
        auto it = std::upper_bound(ranges_.begin(), ranges_.end(), rva,
                                   [](Rva r, const RvaRange& x) { return r < x.begin; });
        if (it == ranges_.begin())
            return false;
        return rva < reach_[static_cast<std::size_t>(it - ranges_.begin()) - 1];
    }

private:
    OwnershipMode mode_ = OwnershipMode::ground_truth_ends;
    std::vector<RvaRange> ranges_;
    std::vector<Rva> reach_;
};

std::uint8_t draw(Rng& rng, std::uint8_t old, bool exclude_original)
{
    if (!exclude_original)
        return rng.byte();
    const auto v = static_cast<std::uint8_t>(rng.below(255));
    return v >= old ? static_cast<std::uint8_t>(v + 1) : v;
}

} // namespace

void PaddingConfig::check() const
{
    if (lookback == 0)
        throw Error(ErrorKind::SchemaError, "lookback must be at least 1");
    if (padding_values.none())
        throw Error(ErrorKind::SchemaError, "padding value set is empty");
}

std::string_view ownership_mode_name(OwnershipMode m) noexcept
{
    switch (m) {
    case OwnershipMode::ground_truth_ends:
        return "ground_truth_ends";
    case OwnershipMode::pdata:
        return "pdata";
    case OwnershipMode::stop_at_non_padding:
        return "stop_at_non_padding";
    }
    return "stop_at_non_padding";
}

std::vector<Rva> find_padding_instances(const PeImage& image, const GroundTruth& gt, const PaddingConfig& config)
{
    config.check();
    const Ownership own(image, gt);
    std::vector<Rva> out;
    for (const auto& r : gt.records) {
        const Section* s = image.section_containing(r.start);
        if (s == nullptr || r.start <= s->rva || !s->raw_range().contains(r.start - 1))
            continue;
        const Rva prev = r.start - 1;
        if (config.is_padding(image.bytes_at(prev, 1)[0]) && !own.owned(prev))
            out.push_back(r.start);
    }
    return out;
}

RandomizeResult randomize_padding(const PeImage& image, const GroundTruth& gt, const PaddingConfig& config)
{
    config.check();
    const Ownership own(image, gt);
    RandomizeResult out;
    out.mode = own.mode();
    out.bytes = image.raw_bytes();
    std::vector<bool> touched(out.bytes.size());

    for (const auto& r : gt.records) {
        const Section* s = image.section_containing(r.start);
        if (s == nullptr || !s->raw_range().contains(r.start))
            throw Error(ErrorKind::UnmappedStart, fmt::format("start {:#x} is not file-backed", r.start));
        Rng rng = Rng::split(config.seed, r.start);
        for (std::uint32_t i = 1; i <= config.lookback; ++i) {
            if (r.start - s->rva < i)
                break;
            const Rva at = r.start - i;
            if (own.owned(at))
                break;
            const std::size_t off = s->raw_offset + (at - s->rva);
            const std::uint8_t old = image.raw_bytes()[off];
            if (!config.is_padding(old)) {
                if (own.mode() == OwnershipMode::stop_at_non_padding)
                    break;
                continue;
            }
            // A byte reachable from two starts is replaced once, by the lower start.
            if (touched[off])
                continue;
            touched[off] = true;
            const std::uint8_t v = draw(rng, old, config.exclude_original);
            out.bytes[off] = v;
            out.changes.push_back({at, old, v});
        }
    }
    std::sort(out.changes.begin(), out.changes.end(),
              [](const PaddingChange& a, const PaddingChange& b) { return a.rva < b.rva; });
    return out;
}

Bytes apply_changes(const PeImage& original, const std::vector<PaddingChange>& changes)
{
    Bytes out = original.raw_bytes();
    for (const auto& c : changes)
        out[rva_to_offset(original, c.rva)] = c.new_value;
    return out;
}

} // namespace funcstart
