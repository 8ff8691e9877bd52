#include "support/builders.hpp"

#include "funcstart/disasm.hpp"
#include "funcstart/error.hpp"
#include "funcstart/evaluation.hpp"
#include "funcstart/rng.hpp"
#include "funcstart/synth_corpus.hpp"

#include <doctest.h>
#include <map>

using namespace funcstart;
using namespace funcstart::testing;

TEST_CASE("aligned starts and padded gaps")
{
    for (Machine m : {Machine::x64, Machine::x86}) {
        CorpusSpec spec;
        spec.machine = m;
        spec.function_count = 8;
        spec.alignment = 16;
        const SynthImage si = generate(spec);
        const PeImage img = parse_pe(si.pe);
        REQUIRE(si.gt.records.size() == 8);
        for (std::size_t i = 0; i < 8; ++i) {
            const auto& f = si.functions[i];
            CHECK(f.start % 16 == 0);
            CHECK(si.gt.records[i].start == f.start);
            CHECK(si.gt.records[i].end == f.end);
            const Rva gap_end = i + 1 < 8 ? si.functions[i + 1].start : si.text.end;
            for (Rva r = f.end; r < gap_end; ++r)
                CHECK(img.bytes_at(r, 1)[0] == 0xCC);
        }
        CHECK(score_starts(si.gt.starts(), si.gt.starts()).f1 == 1.0);
    }
}

TEST_CASE("duplicates are byte-identical")
{
    CorpusSpec spec;
    spec.function_count = 8;
    spec.duplicate_fraction = 0.25;
    spec.seed = 5;
    const SynthImage si = generate(spec);
    const PeImage img = parse_pe(si.pe);
    std::map<Bytes, int> seen;
    int dup = 0;
    for (const auto& f : si.functions) {
        const ByteView b = img.bytes_at(f.start, f.end - f.start);
        seen[Bytes(b.begin(), b.end())]++;
        dup += f.duplicate_of.has_value();
    }
    CHECK(dup == 2);
    int pairs = 0;
    for (const auto& [bytes, n] : seen)
        pairs += n == 2;
    CHECK(pairs == 2);
    CHECK(seen.size() == 6);
}

TEST_CASE("determinism")
{
    CorpusSpec spec;
    spec.seed = 77;
    CHECK(generate(spec).pe == generate(spec).pe);
    CorpusSpec other = spec;
    other.seed = 78;
    CHECK(generate(spec).pe != generate(other).pe);
}

TEST_CASE("structural properties on random specs")
{
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        Rng rng(seed * 7);
        CorpusSpec spec;
        spec.seed = seed;
        spec.machine = rng.chance(0.5) ? Machine::x64 : Machine::x86;
        spec.function_count = 10 + static_cast<std::uint32_t>(rng.below(40));
        spec.alignment = 1u << rng.between(0, 6);
        spec.call_density = rng.unit();
        spec.unreferenced_rate = rng.unit() * 0.5;
        spec.duplicate_fraction = rng.unit() * 0.2;
        spec.immediate_variant_fraction = rng.unit() * 0.2;
        spec.encoding = rng.chance(0.5) ? EndEncoding::exclusive_end : EndEncoding::inclusive_end;
        const SynthImage si = generate(spec);
        const PeImage img = parse_pe(si.pe);
        CAPTURE(seed);
        CHECK(img.machine() == spec.machine);
        CHECK(si.gt.encoding == spec.encoding);

        std::set<Rva> reachable;
        for (const auto& f : si.functions) {
            CHECK(f.start % spec.alignment == 0);
            const SweepResult body = linear_sweep(img, {f.start, f.end});
            CHECK_FALSE(body.truncated);
            for (const auto& i : body.instructions)
                CHECK(i.cls != InsnClass::invalid);
            CHECK(body.instructions.back().cls == InsnClass::ret);
            if (f.reachable)
                reachable.insert(f.start);
        }
        const DescentResult d = recursive_descent(img, {img.entry_point()});
        std::set<Rva> got = d.call_targets;
        got.insert(img.entry_point());
        CHECK(got == reachable);

        if (spec.machine == Machine::x64) {
            const PdataTable t = parse_pdata(img);
            CHECK(t.entries == si.pdata);
            CHECK(t.entries.size() == si.functions.size());
        }
    }
}

TEST_CASE("infeasible specs")
{
    auto infeasible = [](auto mutate) {
        CorpusSpec spec;
        mutate(spec);
        try {
            (void)generate(spec);
        } catch (const Error& e) {
            return e.kind() == ErrorKind::SpecInfeasible;
        }
        return false;
    };
    CHECK(infeasible([](CorpusSpec& s) { s.alignment = 12; }));
    CHECK(infeasible([](CorpusSpec& s) { s.duplicate_fraction = 1.5; }));
    CHECK(infeasible([](CorpusSpec& s) { s.call_density = -0.1; }));
    CHECK(infeasible([](CorpusSpec& s) { s.min_body = 100, s.max_body = 50; }));
    CHECK(infeasible([](CorpusSpec& s) { s.function_count = 1000, s.max_text_size = 4096; }));
    CHECK(infeasible([](CorpusSpec& s) { s.function_count = 0; }));
}

TEST_CASE("templates and spec round trip")
{
    for (Machine m : {Machine::x64, Machine::x86}) {
        for (const auto& p : default_prologues(m)) {
            CHECK(parse_template(p.prologue.name, template_pattern(p.prologue)) == p.prologue);
            CHECK(parse_template(p.epilogue.name, template_pattern(p.epilogue)) == p.epilogue);
        }
    }
    const CodeTemplate t = parse_template("t", "48 83 EC I1 C7 45 D1 I4");
    CHECK(t.bytes.size() == 11);
    REQUIRE(t.fields.size() == 3);
    CHECK(t.fields[0] == TemplateField{3, 1, true});
    CHECK(t.fields[1] == TemplateField{6, 1, false});
    CHECK(t.fields[2] == TemplateField{7, 4, true});
    CHECK_THROWS_AS((void)parse_template("bad", "48 ZZ"), Error);

    CorpusSpec spec;
    spec.machine = Machine::x86;
    spec.seed = 123;
    spec.duplicate_fraction = 0.25;
    spec.prologues = {default_prologues(Machine::x86)[1]};
    const CorpusSpec back = spec_from_json(spec_to_json(spec));
    CHECK(back == spec);
    CHECK(generate(back).pe == generate(spec).pe);
}
