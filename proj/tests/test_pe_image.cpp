#include "support/builders.hpp"

#include "funcstart/error.hpp"
#include "funcstart/synth_corpus.hpp"

#include <doctest.h>

using namespace funcstart;
using namespace funcstart::testing;

namespace {

ErrorKind kind_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error thrown");
    return ErrorKind::Io;
}

// Section header table offset for images from write_pe.
std::size_t first_section_header(const Bytes& pe)
{
    const std::uint16_t opt = *read_le16(pe, 0x40 + 4 + 16);
    return 0x40 + 24 + opt;
}

} // namespace

TEST_CASE("synthetic x64 image with one .text section")
{
    const PeImage img = text_image(Bytes(32, 0xC3));
    CHECK(img.machine() == Machine::x64);
    REQUIRE(img.sections().size() == 1);
    const Section& s = img.sections()[0];
    CHECK(s.name == ".text");
    CHECK(s.rva == 0x1000);
    CHECK(s.virtual_size == 32);
    CHECK(s.executable);
    CHECK(img.entry_point() == 0x1000);
    CHECK(img.image_base() == 0x140000000ULL);
}

TEST_CASE("machine field decides bitness")
{
    CHECK(text_image(Bytes(4, 0x90), Machine::x86).machine() == Machine::x86);
    Bytes pe = text_image(Bytes(4, 0x90)).raw_bytes();
    CHECK(*read_le16(pe, 0x44) == kMachineAmd64);
    store_le16(pe, 0x44, 0x01c0); // ARM
    CHECK(kind_of([&] { (void)parse_pe(pe); }) == ErrorKind::UnsupportedMachine);
}

TEST_CASE("bad signatures and truncation")
{
    Bytes pe = text_image(Bytes(4, 0x90)).raw_bytes();
    Bytes no_mz = pe;
    no_mz[0] = 'X';
    CHECK(kind_of([&] { (void)parse_pe(no_mz); }) == ErrorKind::MalformedPe);
    Bytes no_pe = pe;
    no_pe[0x40] = 'X';
    CHECK(kind_of([&] { (void)parse_pe(no_pe); }) == ErrorKind::MalformedPe);
    for (std::size_t cut : {0u, 2u, 0x3fu, 0x50u, 0x100u, 0x150u})
        CHECK(kind_of([&] { (void)parse_pe(Bytes(pe.begin(), pe.begin() + cut)); }) == ErrorKind::MalformedPe);
}

TEST_CASE("overlapping sections are rejected")
{
    PeSpec spec;
    spec.sections.push_back({".text", Bytes(16, 0x90), kTextCharacteristics});
    spec.sections.push_back({".data", Bytes(16, 0), kRdataCharacteristics});
    Bytes pe = write_pe(spec);
    const std::size_t sh = first_section_header(pe);
    store_le32(pe, sh + 40 + 12, 0x1000); // second section's RVA onto the first
    CHECK(kind_of([&] { (void)parse_pe(pe); }) == ErrorKind::MalformedPe);
}

TEST_CASE("rva_to_offset")
{
    const PeImage img = text_image(Bytes(0x40, 0x90));
    const Section& s = img.sections()[0];
    CHECK(rva_to_offset(img, 0x1010) == s.raw_offset + 0x10);
    CHECK(kind_of([&] { (void)rva_to_offset(img, 0); }) == ErrorKind::UnmappedRva);

    SUBCASE("virtual-only tail is unbacked")
    {
        Bytes pe = img.raw_bytes();
        store_le32(pe, first_section_header(pe) + 8, 0x2000);
        // SizeOfImage has to cover the larger section.
        const std::size_t opt = 0x40 + 24;
        store_le32(pe, opt + 56, 0x3000);
        const PeImage big = parse_pe(pe);
        CHECK(big.sections()[0].raw_size == 0x200);
        CHECK(kind_of([&] { (void)rva_to_offset(big, 0x1000 + 0x1800); }) == ErrorKind::UnbackedRva);
        CHECK(rva_to_offset(big, 0x1000 + 0x1ff) == big.sections()[0].raw_offset + 0x1ff);
    }
}

TEST_CASE("rva/offset round trip over raw-backed bytes")
{
    CorpusSpec spec;
    spec.function_count = 12;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        spec.seed = seed;
        const PeImage img = parse_pe(generate(spec).pe);
        for (const auto& s : img.sections()) {
            const RvaRange r = s.raw_range();
            for (Rva rva = r.begin; rva < r.end; rva += 7)
                CHECK(offset_to_rva(img, rva_to_offset(img, rva)) == rva);
        }
    }
}

TEST_CASE("parse_pe keeps raw bytes bit-exact")
{
    CorpusSpec spec;
    spec.seed = 9;
    const SynthImage si = generate(spec);
    const PeImage img = parse_pe(si.pe);
    CHECK(img.raw_bytes() == si.pe);
}

TEST_CASE("pdata from the generator")
{
    CorpusSpec spec;
    spec.function_count = 3;
    spec.seed = 4;
    const SynthImage si = generate(spec);
    const PeImage img = parse_pe(si.pe);
    const PdataTable t = parse_pdata(img);
    REQUIRE(t.entries.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(t.entries[i].begin == si.functions[i].start);
        CHECK(t.entries[i].end == si.functions[i].end);
        CHECK(t.entries[i].prolog_size == si.functions[i].prolog_size);
        CHECK(t.entries[i].prolog_size <= t.entries[i].end - t.entries[i].begin);
        CHECK(img.is_executable(t.entries[i].begin));
    }
    CHECK(t.entries == si.pdata);
}

TEST_CASE("pdata errors")
{
    CHECK(kind_of([&] { (void)parse_pdata(text_image(Bytes(4, 0x90), Machine::x86)); }) == ErrorKind::NotX64);

    // .text, then a .pdata whose single record points at an unmapped unwind RVA.
    PeSpec spec;
    spec.entry_point = 0x1000;
    spec.sections.push_back({".text", Bytes(32, 0x90), kTextCharacteristics});
    Bytes pdata;
    put_le32(pdata, 0x1000);
    put_le32(pdata, 0x1010);
    put_le32(pdata, 0x9000);
    spec.sections.push_back({".pdata", pdata, kRdataCharacteristics});
    spec.exception_dir = {0x2000, 12};
    CHECK(kind_of([&] { (void)parse_pdata(parse_pe(write_pe(spec))); }) == ErrorKind::MalformedPdata);

    spec.exception_dir = {0x2000, 10};
    CHECK(kind_of([&] { (void)parse_pdata(parse_pe(write_pe(spec))); }) == ErrorKind::MalformedPdata);
}

TEST_CASE("chained unwind info takes the primary prolog size")
{
    PeSpec spec;
    spec.entry_point = 0x1000;
    spec.sections.push_back({".text", Bytes(64, 0x90), kTextCharacteristics});
    // .rdata at 0x2000: primary unwind {ver 1, prolog 4} at +0, chained
    // unwind {ver 1 | CHAININFO<<3, prolog 0} at +8 followed by RUNTIME_FUNCTION.
    Bytes rdata{0x01, 4, 0, 0, 0, 0, 0, 0, static_cast<std::uint8_t>(0x01 | (kUnwFlagChainInfo << 3)), 0, 0, 0};
    put_le32(rdata, 0x1000);
    put_le32(rdata, 0x1010);
    put_le32(rdata, 0x2000);
    spec.sections.push_back({".rdata", rdata, kRdataCharacteristics});
    Bytes pdata;
    for (auto [b, e, u] : {std::tuple{0x1000u, 0x1010u, 0x2000u}, std::tuple{0x1010u, 0x1020u, 0x2008u}}) {
        put_le32(pdata, b);
        put_le32(pdata, e);
        put_le32(pdata, u);
    }
    spec.sections.push_back({".pdata", pdata, kRdataCharacteristics});
    spec.exception_dir = {0x3000, 24};
    const PdataTable t = parse_pdata(parse_pe(write_pe(spec)));
    REQUIRE(t.entries.size() == 2);
    CHECK(t.entries[1].begin == 0x1010);
    CHECK(t.entries[1].prolog_size == 4);
    CHECK(t.skipped_chains == 0);
}
