#include "funcstart/ground_truth.hpp"

#include "funcstart/error.hpp"
#include "funcstart/io.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <json.hpp>
#include <set>
#include <sstream>

namespace funcstart {

namespace {

using nlohmann::json;

[[noreturn]] void schema(const std::string& what)
{
    throw Error(ErrorKind::SchemaError, what);
}

Rva read_rva(const json& v, const char* field, std::size_t line)
{
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() > UINT32_MAX)
        schema(fmt::format("line {}: '{}' must be an unsigned 32-bit integer", line, field));
    return v.get<Rva>();
}

} // namespace

std::string_view encoding_name(EndEncoding e) noexcept
{
    switch (e) {
    case EndEncoding::exclusive_end:
        return "exclusive_end";
    case EndEncoding::inclusive_end:
        return "inclusive_end";
    case EndEncoding::starts_only:
        return "starts_only";
    }
    return "starts_only";
}

EndEncoding parse_encoding(std::string_view name)
{
    if (name == "exclusive_end" || name == "exclusive")
        return EndEncoding::exclusive_end;
    if (name == "inclusive_end" || name == "inclusive")
        return EndEncoding::inclusive_end;
    if (name == "starts_only" || name == "starts-only")
        return EndEncoding::starts_only;
    schema(fmt::format("unknown encoding '{}'", name));
}

std::vector<Rva> GroundTruth::starts() const
{
    std::vector<Rva> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back(r.start);
    return out;
}

std::size_t GroundTruth::one_byte_conflicts() const noexcept
{
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const FunctionRecord& r) { return r.one_byte_conflict; }));
}

void validate(GroundTruth& gt)
{
    std::sort(gt.records.begin(), gt.records.end(),
              [](const FunctionRecord& a, const FunctionRecord& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < gt.records.size(); ++i)
        if (gt.records[i].start == gt.records[i - 1].start)
            throw Error(ErrorKind::DuplicateStart, fmt::format("start {} appears more than once", gt.records[i].start));
    for (const auto& r : gt.records) {
        if (!r.end)
            continue;
        if (gt.encoding == EndEncoding::starts_only)
            schema(fmt::format("record {} has an end but the encoding is starts_only", r.start));
        if (gt.encoding == EndEncoding::exclusive_end && *r.end <= r.start)
            schema(fmt::format("record {}: exclusive end {} must be greater than the start", r.start, *r.end));
        if (gt.encoding == EndEncoding::inclusive_end && *r.end < r.start)
            schema(fmt::format("record {}: inclusive end {} precedes the start", r.start, *r.end));
    }
}

GroundTruth parse_ground_truth(std::string_view text)
{
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    GroundTruth gt;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            schema(fmt::format("line {}: {}", lineno, e.what()));
        }
        if (!j.is_object())
            schema(fmt::format("line {}: expected a JSON object", lineno));
        if (!have_header) {
            for (const char* key : {"sample_id", "machine", "encoding"})
                if (!j.contains(key) || !j[key].is_string())
                    schema(fmt::format("header is missing string field '{}'", key));
            gt.sample_id = j["sample_id"].get<std::string>();
            gt.machine = parse_machine(j["machine"].get<std::string>());
            gt.encoding = parse_encoding(j["encoding"].get<std::string>());
            have_header = true;
            continue;
        }
        if (!j.contains("start"))
            schema(fmt::format("line {}: missing 'start'", lineno));
        FunctionRecord r;
        r.start = read_rva(j["start"], "start", lineno);
        if (j.contains("end") && !j["end"].is_null())
            r.end = read_rva(j["end"], "end", lineno);
        if (j.contains("one_byte_conflict"))
            r.one_byte_conflict = j["one_byte_conflict"].get<bool>();
        gt.records.push_back(r);
    }
    if (!have_header)
        schema("ground truth has no header line");
    validate(gt);
    return gt;
}

std::string serialize_ground_truth(const GroundTruth& gt)
{
    std::string out = json{{"sample_id", gt.sample_id},
                           {"machine", machine_name(gt.machine)},
                           {"encoding", encoding_name(gt.encoding)}}
                          .dump();
    out += '\n';
    for (const auto& r : gt.records) {
        json j{{"start", r.start}, {"end", nullptr}};
        if (r.end)
            j["end"] = *r.end;
        if (r.one_byte_conflict)
            j["one_byte_conflict"] = true;
        out += j.dump();
        out += '\n';
    }
    return out;
}

GroundTruth load_ground_truth(const std::filesystem::path& path)
{
    return parse_ground_truth(read_text_file(path));
}

void save_ground_truth(const std::filesystem::path& path, const GroundTruth& gt)
{
    write_file_atomic(path, serialize_ground_truth(gt));
}

BindReport bind_to_image(GroundTruth& gt, const PeImage& image)
{
    if (gt.machine != image.machine())
        schema(fmt::format("ground truth is {} but the image is {}", machine_name(gt.machine),
                           machine_name(image.machine())));
    BindReport report;
    std::vector<FunctionRecord> kept;
    for (const auto& r : gt.records) {
        const Section* s = image.section_containing(r.start);
        if (s == nullptr)
            throw Error(ErrorKind::StartOutsideImage, fmt::format("start {:#x} is not inside any section", r.start));
        if (!s->executable)
            report.non_executable.push_back(r.start);
        else
            kept.push_back(r);
    }
    gt.records = std::move(kept);
    return report;
}

ByteLabels to_byte_labels(const GroundTruth& gt, ConflictRule rule)
{
    if (!gt.has_ends())
        throw Error(ErrorKind::EncodingMismatch, "starts_only ground truth has no ends to label");
    ByteLabels out;
    if (gt.records.empty())
        return out;
    Rva lo = UINT32_MAX;
    Rva hi = 0;
    for (const auto& r : gt.records) {
        lo = std::min(lo, r.start);
        hi = std::max(hi, r.end.value_or(r.start));
    }
    out.base = lo;
    out.labels.assign(static_cast<std::size_t>(hi - lo) + 1, ByteLabel::N);
    const ByteLabel first = rule == ConflictRule::end_wins ? ByteLabel::S : ByteLabel::E;
    const ByteLabel second = rule == ConflictRule::end_wins ? ByteLabel::E : ByteLabel::S;
    // The winning label is written last.
    for (ByteLabel pass : {first, second}) {
        for (const auto& r : gt.records) {
            if (pass == ByteLabel::S)
                out.labels[r.start - lo] = ByteLabel::S;
            else if (r.end)
                out.labels[*r.end - lo] = ByteLabel::E;
        }
    }
    return out;
}

PairingResult pair_events(const std::vector<std::pair<Rva, ByteLabel>>& events)
{
    PairingResult out;
    std::optional<Rva> start;
    std::optional<Rva> end;
    auto close = [&] {
        if (start && end)
            out.pairs.emplace_back(*start, *end);
        else if (start)
            ++out.dropped_starts;
    };
    for (const auto& [pos, label] : events) {
        if (label == ByteLabel::S) {
            close();
            start = pos;
            end.reset();
        } else if (label == ByteLabel::E) {
            if (start)
                end = pos;
            else
                ++out.dropped_ends;
        }
    }
    close();
    return out;
}

PairingResult pair_boundaries(const ByteLabels& labels)
{
    std::vector<std::pair<Rva, ByteLabel>> events;
    for (std::size_t i = 0; i < labels.labels.size(); ++i)
        if (labels.labels[i] != ByteLabel::N)
            events.emplace_back(static_cast<Rva>(labels.base + i), labels.labels[i]);
    return pair_events(events);
}

GroundTruth convert_encoding(const GroundTruth& gt, EndEncoding target)
{
    if (gt.encoding == target)
        return gt;
    GroundTruth out = gt;
    out.encoding = target;
    if (target == EndEncoding::starts_only) {
        for (auto& r : out.records) {
            r.end.reset();
            r.one_byte_conflict = false;
        }
        return out;
    }
    if (!gt.has_ends())
        throw Error(ErrorKind::EncodingMismatch,
                    fmt::format("cannot derive {} ends from starts_only ground truth", encoding_name(target)));
    for (auto& r : out.records) {
        if (!r.end)
            continue;
        if (target == EndEncoding::inclusive_end)
            r.end = *r.end - 1;
        // Here r.end is the inclusive end in both directions.
        r.one_byte_conflict = *r.end == r.start;
        if (target == EndEncoding::exclusive_end)
            r.end = *r.end + 1;
    }
    return out;
}

GroundTruth adapt_ground_truth(const GroundTruth& gt)
{
    if (gt.encoding != EndEncoding::exclusive_end)
        throw Error(ErrorKind::EncodingMismatch, "adapted ground truth is defined for exclusive ends");
    std::set<Rva> ends;
    for (const auto& r : gt.records)
        if (r.end)
            ends.insert(*r.end);
    std::vector<std::pair<Rva, ByteLabel>> events;
    for (const auto& r : gt.records)
        if (ends.count(r.start) == 0)
            events.emplace_back(r.start, ByteLabel::S);
    for (Rva e : ends)
        events.emplace_back(e, ByteLabel::E);
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    GroundTruth out;
    out.sample_id = gt.sample_id;
    out.machine = gt.machine;
    out.encoding = EndEncoding::exclusive_end;
    for (const auto& [s, e] : pair_events(events).pairs)
        out.records.push_back({s, e, false});
    return out;
}

std::vector<BoundaryPair> boundary_pairs(const GroundTruth& gt)
{
    std::vector<BoundaryPair> out;
    for (const auto& r : gt.records)
        if (r.end)
            out.emplace_back(r.start, *r.end);
    return out;
}

} // namespace funcstart
