#include "support/builders.hpp"

#include "funcstart/error.hpp"
#include "funcstart/rng.hpp"

#include <doctest.h>
#include <map>
#include <set>

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

std::vector<BoundaryPair> pairs_of(std::initializer_list<std::pair<Rva, ByteLabel>> events)
{
    return pair_events(std::vector<std::pair<Rva, ByteLabel>>(events)).pairs;
}

// Random non-adjacent, non-overlapping exclusive records.
GroundTruth random_gt(Rng& rng, bool allow_adjacent)
{
    GroundTruth gt;
    gt.encoding = EndEncoding::exclusive_end;
    Rva at = 0x1000 + static_cast<Rva>(rng.below(16));
    const auto n = rng.below(20);
    for (std::uint64_t i = 0; i < n; ++i) {
        const Rva len = 2 + static_cast<Rva>(rng.below(30));
        gt.records.push_back({at, at + len, false});
        at += len + static_cast<Rva>(allow_adjacent && rng.chance(0.4) ? 0 : 1 + rng.below(8));
    }
    return gt;
}

} // namespace

TEST_CASE("load: two starts, starts_only")
{
    const GroundTruth gt = parse_ground_truth(R"({"sample_id":"fig3","machine":"x64","encoding":"starts_only"}
{"start":6,"end":null}
{"start":10}
)");
    CHECK(gt.sample_id == "fig3");
    REQUIRE(gt.records.size() == 2);
    CHECK(gt.starts() == std::vector<Rva>{6, 10});
    CHECK_FALSE(gt.has_ends());
}

TEST_CASE("load: empty and duplicate")
{
    CHECK(parse_ground_truth(R"({"sample_id":"e","machine":"x86","encoding":"exclusive_end"})").records.empty());
    CHECK(kind_of([] {
              (void)parse_ground_truth("{\"sample_id\":\"d\",\"machine\":\"x64\",\"encoding\":\"starts_only\"}\n"
                                       "{\"start\":6}\n{\"start\":6}\n");
          }) == ErrorKind::DuplicateStart);
}

TEST_CASE("load: schema errors")
{
    const char* bad[] = {
        "",
        "not json",
        R"({"sample_id":"x","machine":"arm","encoding":"starts_only"})",
        R"({"sample_id":"x","machine":"x64","encoding":"sideways"})",
        "{\"sample_id\":\"x\",\"machine\":\"x64\",\"encoding\":\"starts_only\"}\n{\"end\":4}",
        "{\"sample_id\":\"x\",\"machine\":\"x64\",\"encoding\":\"starts_only\"}\n{\"start\":-1}",
        "{\"sample_id\":\"x\",\"machine\":\"x64\",\"encoding\":\"exclusive_end\"}\n{\"start\":5,\"end\":5}",
        "{\"sample_id\":\"x\",\"machine\":\"x64\",\"encoding\":\"inclusive_end\"}\n{\"start\":5,\"end\":4}",
    };
    for (const char* text : bad) {
        CAPTURE(text);
        CHECK(kind_of([&] { (void)parse_ground_truth(text); }) == ErrorKind::SchemaError);
    }
}

TEST_CASE("serialize round trip")
{
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        GroundTruth gt = random_gt(rng, true);
        gt.sample_id = "rt";
        const GroundTruth back = parse_ground_truth(serialize_ground_truth(gt));
        CHECK(back == gt);
        CHECK(serialize_ground_truth(back) == serialize_ground_truth(gt));
    }
}

TEST_CASE("bind to image")
{
    PeSpec spec;
    spec.entry_point = 0x1000;
    spec.sections.push_back({".text", Bytes(32, 0x90), kTextCharacteristics});
    spec.sections.push_back({".rdata", Bytes(32, 0), kRdataCharacteristics});
    const PeImage img = parse_pe(write_pe(spec));

    GroundTruth ok = starts_gt({0x1000, 0x1010, 0x2000});
    const BindReport rep = bind_to_image(ok, img);
    CHECK(rep.non_executable == std::vector<Rva>{0x2000});
    CHECK(ok.starts() == std::vector<Rva>{0x1000, 0x1010});

    GroundTruth outside = starts_gt({0x1000, 0x9000});
    CHECK(kind_of([&] { (void)bind_to_image(outside, img); }) == ErrorKind::StartOutsideImage);

    GroundTruth wrong = starts_gt({0x1000}, Machine::x86);
    CHECK(kind_of([&] { (void)bind_to_image(wrong, img); }) == ErrorKind::SchemaError);
}

TEST_CASE("byte labels for adjacent functions")
{
    const GroundTruth gt = exclusive_gt({{2, 5}, {5, 8}});
    const ByteLabels ew = to_byte_labels(gt, ConflictRule::end_wins);
    CHECK(ew.at(2) == ByteLabel::S);
    CHECK(ew.at(5) == ByteLabel::E);
    CHECK(ew.at(8) == ByteLabel::E);
    CHECK(ew.at(3) == ByteLabel::N);
    const ByteLabels sw = to_byte_labels(gt, ConflictRule::start_wins);
    CHECK(sw.at(5) == ByteLabel::S);

    const ByteLabels one = to_byte_labels(exclusive_gt({{2, 5}}));
    for (Rva r = 0; r < 12; ++r)
        CHECK(one.at(r) == (r == 2 ? ByteLabel::S : r == 5 ? ByteLabel::E : ByteLabel::N));

    CHECK(kind_of([] { (void)to_byte_labels(starts_gt({1})); }) == ErrorKind::EncodingMismatch);
}

TEST_CASE("pairing")
{
    using enum ByteLabel;
    CHECK(pairs_of({{2, S}, {5, E}, {8, E}}) == std::vector<BoundaryPair>{{2, 8}});
    CHECK(pairs_of({{2, S}, {5, E}, {6, S}, {9, E}}) == std::vector<BoundaryPair>{{2, 5}, {6, 9}});
    const PairingResult lone = pair_events({{3, E}});
    CHECK(lone.pairs.empty());
    CHECK(lone.dropped_ends == 1);
    const PairingResult open = pair_events({{1, S}, {4, S}, {6, E}});
    CHECK(open.pairs == std::vector<BoundaryPair>{{4, 6}});
    CHECK(open.dropped_starts == 1);

    // Through the label array: the end-wins collision at 5 hides B's start.
    CHECK(pair_boundaries(to_byte_labels(exclusive_gt({{2, 5}, {5, 8}}))).pairs == std::vector<BoundaryPair>{{2, 8}});
}

TEST_CASE("pairing reproduces non-adjacent records")
{
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const GroundTruth gt = random_gt(rng, false);
        if (gt.records.empty())
            continue;
        CHECK(pair_boundaries(to_byte_labels(gt)).pairs == boundary_pairs(gt));
    }
}

TEST_CASE("convert encoding")
{
    const GroundTruth inc = convert_encoding(exclusive_gt({{2, 5}}), EndEncoding::inclusive_end);
    CHECK(inc.encoding == EndEncoding::inclusive_end);
    CHECK(inc.records[0].end == 4u);
    CHECK_FALSE(inc.records[0].one_byte_conflict);
    const GroundTruth exc = convert_encoding(inc, EndEncoding::exclusive_end);
    CHECK(exc.records[0].end == 5u);

    const GroundTruth one = convert_encoding(exclusive_gt({{7, 8}}), EndEncoding::inclusive_end);
    CHECK(one.records[0].end == 7u);
    CHECK(one.records[0].one_byte_conflict);
    CHECK(one.one_byte_conflicts() == 1);

    const GroundTruth so = convert_encoding(exclusive_gt({{2, 5}}), EndEncoding::starts_only);
    CHECK_FALSE(so.records[0].end.has_value());
    CHECK(kind_of([&] { (void)convert_encoding(so, EndEncoding::exclusive_end); }) == ErrorKind::EncodingMismatch);
}

TEST_CASE("convert encoding round trip")
{
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        const GroundTruth gt = random_gt(rng, true);
        const GroundTruth back = convert_encoding(convert_encoding(gt, EndEncoding::inclusive_end), EndEncoding::exclusive_end);
        REQUIRE(back.records.size() == gt.records.size());
        for (std::size_t k = 0; k < gt.records.size(); ++k)
            if (!back.records[k].one_byte_conflict)
                CHECK(back.records[k].end == gt.records[k].end);
    }
}

TEST_CASE("adapted ground truth")
{
    CHECK(boundary_pairs(adapt_ground_truth(exclusive_gt({{2, 5}, {5, 8}}))) == std::vector<BoundaryPair>{{2, 8}});
    CHECK(boundary_pairs(adapt_ground_truth(exclusive_gt({{2, 5}, {6, 9}}))) ==
          std::vector<BoundaryPair>{{2, 5}, {6, 9}});
    CHECK(adapt_ground_truth(exclusive_gt({})).records.empty());
    CHECK(kind_of([] { (void)adapt_ground_truth(starts_gt({1})); }) == ErrorKind::EncodingMismatch);
}

TEST_CASE("adapted ground truth is the identity without coincident start/end")
{
    Rng rng(13);
    for (int i = 0; i < 200; ++i) {
        const GroundTruth gt = random_gt(rng, false);
        CHECK(boundary_pairs(adapt_ground_truth(gt)) == boundary_pairs(gt));
    }
}

TEST_CASE("adapted ground truth matches a hand-rolled three-step oracle")
{
    Rng rng(21);
    for (int i = 0; i < 300; ++i) {
        const GroundTruth gt = random_gt(rng, true);
        // i) split, ii) drop starts that are also ends, iii) last end before next start.
        std::set<Rva> starts, ends;
        for (const auto& r : gt.records) {
            starts.insert(r.start);
            ends.insert(*r.end);
        }
        for (Rva e : ends)
            starts.erase(e);
        std::vector<BoundaryPair> expect;
        std::optional<Rva> open;
        std::optional<Rva> last_end;
        std::map<Rva, int> ev; // 1 = start, 2 = end
        for (Rva s : starts)
            ev[s] |= 1;
        for (Rva e : ends)
            ev[e] |= 2;
        for (auto [pos, kind] : ev) {
            if (kind & 1) {
                if (open && last_end)
                    expect.emplace_back(*open, *last_end);
                open = pos;
                last_end.reset();
            }
            if (kind & 2)
                last_end = pos;
        }
        if (open && last_end)
            expect.emplace_back(*open, *last_end);
        CHECK(boundary_pairs(adapt_ground_truth(gt)) == expect);
    }
}
