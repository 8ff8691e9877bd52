#include "support/builders.hpp"

#include "funcstart/error.hpp"
#include "funcstart/padding.hpp"
#include "funcstart/rng.hpp"
#include "funcstart/synth_corpus.hpp"

#include <doctest.h>
#include <set>

using namespace funcstart;
using namespace funcstart::testing;

namespace {

// Independent Listing-1 oracle over exclusive ranges: the set of RVAs that
// may change. Byte i before start s is eligible iff no earlier byte in the
// scan belonged to a function and its value is padding.
std::set<Rva> eligible_bytes(const PeImage& img, const GroundTruth& gt, const PaddingConfig& cfg)
{
    std::set<Rva> out;
    const RvaRange text = img.executable_ranges().front();
    for (const auto& r : gt.records) {
        for (std::uint32_t i = 1; i <= cfg.lookback; ++i) {
            if (r.start < text.begin + i)
                break;
            const Rva at = r.start - i;
            bool owned = false;
            for (const auto& o : gt.records)
                owned = owned || (at >= o.start && at < *o.end);
            if (owned)
                break;
            if (cfg.is_padding(img.bytes_at(at, 1)[0]))
                out.insert(at);
        }
    }
    return out;
}

} // namespace

TEST_CASE("padding instances")
{
    Bytes text(32, 0x00);
    text[15] = 0xCC;
    text[31] = 0x90;
    const PeImage img = text_image(text);
    const PaddingConfig cfg;
    CHECK(find_padding_instances(img, exclusive_gt({{0x1010, 0x1018}}), cfg) == std::vector<Rva>{0x1010});
    // 0x90 is not padding by default.
    Bytes t2 = text;
    t2[15] = 0x90;
    CHECK(find_padding_instances(text_image(t2), exclusive_gt({{0x1010, 0x1018}}), cfg).empty());
    PaddingConfig nop = cfg;
    nop.padding_values = PaddingConfig::of({0xCC, 0x90});
    CHECK(find_padding_instances(text_image(t2), exclusive_gt({{0x1010, 0x1018}}), nop) == std::vector<Rva>{0x1010});

    // Adjacent: B at 5 follows A=(2,5); byte 4 belongs to A even if it is 0xCC.
    Bytes t3(16, 0xCC);
    CHECK(find_padding_instances(text_image(t3), exclusive_gt({{0x1002, 0x1005}, {0x1005, 0x1008}}), cfg) ==
          std::vector<Rva>{0x1002});
}

TEST_CASE("randomize: a padding run before a start")
{
    Bytes text(32, 0x11);
    for (int i = 10; i < 16; ++i)
        text[i] = 0xCC;
    const PeImage img = text_image(text);
    const GroundTruth gt = exclusive_gt({{0x1000, 0x100a}, {0x1010, 0x1020}});
    PaddingConfig cfg;
    cfg.seed = 99;
    const RandomizeResult r = randomize_padding(img, gt, cfg);
    CHECK(r.mode == OwnershipMode::ground_truth_ends);
    REQUIRE(r.changes.size() == 6);
    for (int i = 0; i < 6; ++i) {
        CHECK(r.changes[i].rva == 0x100a + static_cast<Rva>(i));
        CHECK(r.changes[i].old_value == 0xCC);
    }
    // Brute-force diff: only those bytes may differ.
    const Bytes& before = img.raw_bytes();
    const std::uint32_t base = rva_to_offset(img, 0x1000);
    for (std::size_t k = 0; k < before.size(); ++k) {
        if (before[k] == r.bytes[k])
            continue;
        CHECK(k >= base + 10);
        CHECK(k < base + 16);
    }
}

TEST_CASE("randomize: adjacency and mixed bytes")
{
    Bytes text(16, 0xCC);
    const GroundTruth adj = exclusive_gt({{0x1002, 0x1005}, {0x1005, 0x1008}});
    const RandomizeResult r = randomize_padding(text_image(text), adj, {});
    for (const auto& c : r.changes)
        CHECK(c.rva < 0x1002); // nothing for B

    // [AB CC CC] before the start: both CC replaced, AB kept, scan continues past it.
    Bytes mixed(16, 0x00);
    mixed[4] = 0xCC;
    mixed[5] = 0xAB;
    mixed[6] = 0xCC;
    mixed[7] = 0xCC;
    PaddingConfig cfg;
    cfg.lookback = 4;
    const RandomizeResult m = randomize_padding(text_image(mixed), exclusive_gt({{0x1008, 0x1010}}), cfg);
    std::vector<Rva> changed;
    for (const auto& c : m.changes)
        changed.push_back(c.rva);
    CHECK(changed == std::vector<Rva>{0x1004, 0x1006, 0x1007});
    cfg.lookback = 3;
    const RandomizeResult m3 = randomize_padding(text_image(mixed), exclusive_gt({{0x1008, 0x1010}}), cfg);
    CHECK(m3.changes.size() == 2);
}

TEST_CASE("randomize: starts-only ownership")
{
    // No ends and no .pdata: scanning stops at the first non-padding byte.
    Bytes mixed(16, 0x00);
    mixed[5] = 0xCC;
    mixed[6] = 0xAB;
    mixed[7] = 0xCC;
    const RandomizeResult r = randomize_padding(text_image(mixed), starts_gt({0x1008}), {});
    CHECK(r.mode == OwnershipMode::stop_at_non_padding);
    REQUIRE(r.changes.size() == 1);
    CHECK(r.changes[0].rva == 0x1007);

    CorpusSpec spec;
    spec.encoding = EndEncoding::starts_only;
    const SynthImage si = generate(spec);
    const RandomizeResult p = randomize_padding(parse_pe(si.pe), si.gt, {});
    CHECK(p.mode == OwnershipMode::pdata);
    CHECK_FALSE(p.changes.empty());
}

TEST_CASE("randomize: errors and config")
{
    const PeImage img = text_image(Bytes(16, 0xCC));
    CHECK_THROWS_AS((void)randomize_padding(img, starts_gt({0x5000}), {}), Error);
    PaddingConfig bad;
    bad.lookback = 0;
    CHECK_THROWS_AS(bad.check(), Error);
    bad.lookback = 20;
    bad.padding_values.reset();
    CHECK_THROWS_AS(bad.check(), Error);
}

TEST_CASE("randomize properties on synthetic images")
{
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        Rng rng(seed);
        CorpusSpec spec;
        spec.seed = seed;
        spec.machine = rng.chance(0.5) ? Machine::x64 : Machine::x86;
        spec.function_count = 4 + static_cast<std::uint32_t>(rng.below(30));
        spec.alignment = 1u << rng.between(0, 5);
        spec.min_padding = static_cast<std::uint32_t>(rng.below(4));
        const SynthImage si = generate(spec);
        const PeImage img = parse_pe(si.pe);
        PaddingConfig cfg;
        cfg.seed = seed * 31;
        cfg.lookback = 1 + static_cast<std::uint32_t>(rng.below(24));
        cfg.exclude_original = rng.chance(0.5);
        const RandomizeResult r = randomize_padding(img, si.gt, cfg);

        // Only eligible bytes change, and all eligible bytes are logged.
        const std::set<Rva> eligible = eligible_bytes(img, si.gt, cfg);
        std::set<Rva> logged;
        for (const auto& c : r.changes) {
            logged.insert(c.rva);
            CHECK(cfg.is_padding(c.old_value));
            if (cfg.exclude_original)
                CHECK(c.new_value != c.old_value);
        }
        CHECK(logged == eligible);
        CHECK(logged.size() == r.changes.size());

        // Bodies bit-identical.
        const PeImage out = img.with_bytes(r.bytes);
        for (const auto& f : si.functions) {
            const ByteView a = img.bytes_at(f.start, f.end - f.start);
            const ByteView b = out.bytes_at(f.start, f.end - f.start);
            CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
        }

        CHECK(apply_changes(img, r.changes) == r.bytes);
        const RandomizeResult again = randomize_padding(img, si.gt, cfg);
        CHECK(again.bytes == r.bytes);
        CHECK(again.changes == r.changes);
    }
}
