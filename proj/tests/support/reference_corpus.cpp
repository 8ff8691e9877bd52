#include "reference_corpus.hpp"

#include "funcstart/io.hpp"

#include <fmt/format.h>

#include <sstream>
#include <stdexcept>

namespace funcstart::testing {

namespace {

Bytes parse_hex(const std::string& hex)
{
    Bytes out;
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2)
        out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    return out;
}

std::string to_hex(ByteView bytes)
{
    std::string out;
    for (auto b : bytes)
        out += fmt::format("{:02x}", b);
    return out;
}

} // namespace

std::vector<ReferenceCase> load_reference_corpus(const std::filesystem::path& path)
{
    std::istringstream in(read_text_file(path));
    std::vector<ReferenceCase> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream fields(line);
        std::string mode, hex, length, cls, text;
        std::getline(fields, mode, '\t');
        std::getline(fields, hex, '\t');
        std::getline(fields, length, '\t');
        std::getline(fields, cls, '\t');
        std::getline(fields, text);
        ReferenceCase c;
        c.mode.bitness = mode == "bits64" ? Bitness::bits64 : Bitness::bits32;
        c.bytes = parse_hex(hex);
        c.length = std::stoi(length);
        auto parsed = parse_insn_class(cls);
        if (!parsed)
            throw std::runtime_error("unknown class in reference corpus: " + cls);
        c.cls = *parsed;
        c.reference_text = text;
        out.push_back(std::move(c));
    }
    return out;
}

DifferentialResult run_differential(const std::vector<ReferenceCase>& cases)
{
    DifferentialResult r;
    for (const auto& c : cases) {
        ++r.total;
        const Instruction ours = decode_one(c.bytes, 0, c.mode);
        if (ours.length == c.length && ours.cls == c.cls)
            ++r.agree;
        else
            r.disagreements.push_back({c, ours});
    }
    return r;
}

std::string format_disagreements(const DifferentialResult& result)
{
    std::string out;
    for (const auto& d : result.disagreements) {
        out += fmt::format("{}\t{}\tref={}:{}\tours={}:{}\t{}\n", d.ref.mode.bitness == Bitness::bits64 ? "bits64" : "bits32",
                           to_hex(d.ref.bytes), d.ref.length, insn_class_name(d.ref.cls), d.ours.length,
                           insn_class_name(d.ours.cls), d.ref.reference_text);
    }
    return out;
}

} // namespace funcstart::testing
