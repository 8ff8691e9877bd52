#include "funcstart/synth_corpus.hpp"

#include "funcstart/corpus_stats.hpp"
#include "funcstart/error.hpp"
#include "funcstart/pe_writer.hpp"
#include "funcstart/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <set>
#include <sstream>

namespace funcstart {

namespace {

using nlohmann::json;

constexpr Rva kTextRva = kSectionAlignment;
constexpr int kUniqueRetries = 256;
constexpr int kNormalizedRetries = 64;
constexpr int kExtraCallSlots = 3;

[[noreturn]] void infeasible(const std::string& what)
{
    throw Error(ErrorKind::SpecInfeasible, what);
}

struct PlacedField {
    std::size_t offset = 0;
    std::uint8_t width = 0;
    bool immediate = true;
};

struct Body {
    Bytes bytes;
    std::vector<PlacedField> fields;
    /// Offset of each call opcode and the callee index.
    std::vector<std::pair<std::size_t, std::size_t>> calls;
    std::uint8_t prolog_size = 0;
    std::string prologue;
};

void randomize_field(Rng& rng, Bytes& bytes, const PlacedField& f)
{
    for (std::uint8_t i = 0; i < f.width; ++i)
        bytes[f.offset + i] = rng.byte();
}

void append(Rng& rng, Body& body, const CodeTemplate& t)
{
    const std::size_t at = body.bytes.size();
    body.bytes.insert(body.bytes.end(), t.bytes.begin(), t.bytes.end());
    for (const auto& f : t.fields) {
        PlacedField p{at + f.offset, f.width, f.immediate};
        randomize_field(rng, body.bytes, p);
        body.fields.push_back(p);
    }
}

class BodyBuilder {
public:
    BodyBuilder(const CorpusSpec& spec, const std::vector<PrologueTemplate>& prologues)
        : spec_(spec)
        , prologues_(prologues)
        , fillers_(default_fillers(spec.machine))
    {
        for (const auto& f : fillers_)
            if (std::any_of(f.fields.begin(), f.fields.end(), [](const TemplateField& x) { return x.immediate; }))
                imm_fillers_.push_back(&f);
    }

    Body build(Rng& rng, const std::vector<std::size_t>& callees) const
    {
        Body body;
        const PrologueTemplate& p = prologues_[rng.below(prologues_.size())];
        body.prologue = p.name;
        append(rng, body, p.prologue);
        body.prolog_size = static_cast<std::uint8_t>(body.bytes.size());

        const std::size_t tail = p.epilogue.bytes.size() + 1;
        const std::size_t target = rng.between(spec_.min_body, spec_.max_body);
        std::size_t next_call = 0;
        // One immediate-bearing instruction per body, so every function has
        // something for normalization to blind.
        append(rng, body, *imm_fillers_[rng.below(imm_fillers_.size())]);
        while (body.bytes.size() + tail < target || next_call < callees.size()) {
            const std::size_t room = target > body.bytes.size() + tail ? target - body.bytes.size() - tail : 0;
            if (next_call < callees.size() && (room < 8 || rng.chance(0.3))) {
                body.calls.emplace_back(body.bytes.size(), callees[next_call++]);
                body.bytes.insert(body.bytes.end(), {0xE8, 0, 0, 0, 0});
                continue;
            }
            const CodeTemplate& f = fillers_[rng.below(fillers_.size())];
            if (rng.chance(0.15)) {
                // Short forward branch over the next instruction.
                static constexpr std::array<std::uint8_t, 8> kConds{0x2, 0x3, 0x4, 0x5, 0xC, 0xD, 0xE, 0xF};
                body.bytes.push_back(static_cast<std::uint8_t>(0x70 | kConds[rng.below(kConds.size())]));
                body.bytes.push_back(static_cast<std::uint8_t>(f.bytes.size()));
            }
            append(rng, body, f);
        }
        append(rng, body, p.epilogue);
        body.bytes.push_back(0xC3);
        return body;
    }

private:
    const CorpusSpec& spec_;
    const std::vector<PrologueTemplate>& prologues_;
    std::vector<CodeTemplate> fillers_;
    std::vector<const CodeTemplate*> imm_fillers_;
};

std::size_t fraction_count(double fraction, std::uint32_t n)
{
    return static_cast<std::size_t>(std::llround(fraction * n));
}

json template_json(const CodeTemplate& t)
{
    return template_pattern(t);
}

} // namespace

CodeTemplate parse_template(std::string name, std::string_view pattern)
{
    CodeTemplate t;
    t.name = std::move(name);
    std::istringstream in{std::string(pattern)};
    std::string tok;
    while (in >> tok) {
        if (tok.size() == 2 && (tok[0] == 'I' || tok[0] == 'D') && (tok[1] == '1' || tok[1] == '4')) {
            const auto width = static_cast<std::uint8_t>(tok[1] - '0');
            t.fields.push_back({static_cast<std::uint8_t>(t.bytes.size()), width, tok[0] == 'I'});
            t.bytes.insert(t.bytes.end(), width, 0);
            continue;
        }
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(tok, &used, 16);
        } catch (const std::exception&) {
            used = 0;
        }
        if (tok.size() != 2 || used != 2 || v > 0xFF)
            throw Error(ErrorKind::SchemaError, fmt::format("bad token '{}' in template '{}'", tok, t.name));
        t.bytes.push_back(static_cast<std::uint8_t>(v));
    }
    if (t.bytes.empty())
        throw Error(ErrorKind::SchemaError, fmt::format("template '{}' is empty", t.name));
    return t;
}

std::string template_pattern(const CodeTemplate& t)
{
    std::string out;
    std::size_t i = 0;
    auto field_at = [&](std::size_t off) -> const TemplateField* {
        for (const auto& f : t.fields)
            if (f.offset == off)
                return &f;
        return nullptr;
    };
    while (i < t.bytes.size()) {
        if (!out.empty())
            out += ' ';
        if (const TemplateField* f = field_at(i)) {
            out += fmt::format("{}{}", f->immediate ? 'I' : 'D', f->width);
            i += f->width;
        } else {
            out += fmt::format("{:02X}", t.bytes[i++]);
        }
    }
    return out;
}

std::vector<PrologueTemplate> default_prologues(Machine machine)
{
    auto pt = [](const char* name, const char* pro, const char* epi) {
        return PrologueTemplate{name, parse_template(std::string(name) + ".prologue", pro),
                                parse_template(std::string(name) + ".epilogue", epi)};
    };
    if (machine == Machine::x64) {
        return {
            pt("push-frame", "55 48 89 E5 48 83 EC I1", "48 89 EC 5D"),
            pt("sub-rsp", "48 83 EC I1", "48 83 C4 I1"),
            pt("mov-frame", "48 89 5C 24 D1 57 48 83 EC I1", "48 83 C4 I1 5F 48 8B 5C 24 D1"),
            pt("push-nonvol", "40 53 48 83 EC I1", "48 83 C4 I1 5B"),
            pt("large-frame", "48 81 EC I4", "48 81 C4 I4"),
        };
    }
    return {
        pt("push-frame", "55 8B EC 83 EC I1", "8B E5 5D"),
        pt("push-frame-ecx", "55 8B EC 51", "8B E5 5D"),
        pt("push-regs", "53 56 57 83 EC I1", "83 C4 I1 5F 5E 5B"),
        pt("sub-esp", "83 EC I1", "83 C4 I1"),
        pt("large-frame", "81 EC I4", "81 C4 I4"),
    };
}

std::vector<CodeTemplate> default_fillers(Machine machine)
{
    std::vector<std::pair<const char*, const char*>> rows = {
        {"mov-eax-imm", "B8 I4"},
        {"mov-ecx-imm", "B9 I4"},
        {"add-eax-ecx", "01 C8"},
        {"xor-edx-edx", "31 D2"},
        {"store-stack", "89 44 24 D1"},
        {"load-frame", "8B 45 D1"},
        {"cmp-eax-imm", "83 F8 I1"},
        {"test-eax", "85 C0"},
        {"imul-imm", "6B C1 I1"},
        {"shl-imm", "C1 E0 I1"},
        {"movzx-load", "0F B6 01"},
        {"imul-reg", "0F AF C1"},
        {"store-word", "66 89 45 D1"},
    };
    if (machine == Machine::x64) {
        rows.insert(rows.end(), {
                                    {"lea-rip", "48 8D 0D D4"},
                                    {"mov-rax-rcx", "48 89 C8"},
                                    {"movsxd", "48 63 D0"},
                                    {"mov-rax-imm", "48 C7 C0 I4"},
                                });
    } else {
        rows.insert(rows.end(), {
                                    {"lea-ebx", "8D 8B D4"},
                                    {"mov-eax-ecx", "89 C8"},
                                    {"store-frame-imm", "C7 45 D1 I4"},
                                });
    }
    std::vector<CodeTemplate> out;
    for (const auto& [name, pattern] : rows)
        out.push_back(parse_template(name, pattern));
    return out;
}

void CorpusSpec::check() const
{
    if (function_count == 0)
        infeasible("function_count must be at least 1");
    if (alignment == 0 || (alignment & (alignment - 1)) != 0)
        infeasible(fmt::format("alignment {} is not a power of two", alignment));
    if (min_body > max_body)
        infeasible(fmt::format("min_body {} exceeds max_body {}", min_body, max_body));
    for (double f : {call_density, duplicate_fraction, immediate_variant_fraction, unreferenced_rate})
        if (!(f >= 0.0 && f <= 1.0))
            infeasible("fractions must lie in [0, 1]");
    const std::size_t copies =
        fraction_count(duplicate_fraction, function_count) + fraction_count(immediate_variant_fraction, function_count);
    if (2 * copies > function_count - 1)
        infeasible(fmt::format("{} copies need {} distinct originals besides the entry function", copies, copies));
    for (const auto& p : prologues)
        if (p.prologue.bytes.size() > 255)
            infeasible(fmt::format("prologue '{}' is longer than 255 bytes", p.name));
}

json spec_to_json(const CorpusSpec& s)
{
    json prologues = json::array();
    for (const auto& p : s.prologues)
        prologues.push_back({{"name", p.name}, {"prologue", template_json(p.prologue)}, {"epilogue", template_json(p.epilogue)}});
    return {
        {"machine", machine_name(s.machine)},
        {"sample_id", s.sample_id},
        {"function_count", s.function_count},
        {"min_body", s.min_body},
        {"max_body", s.max_body},
        {"alignment", s.alignment},
        {"padding_value", s.padding_value},
        {"min_padding", s.min_padding},
        {"prologues", prologues},
        {"call_density", s.call_density},
        {"duplicate_fraction", s.duplicate_fraction},
        {"immediate_variant_fraction", s.immediate_variant_fraction},
        {"unreferenced_rate", s.unreferenced_rate},
        {"encoding", encoding_name(s.encoding)},
        {"emit_pdata", s.emit_pdata},
        {"image_base", s.image_base},
        {"max_text_size", s.max_text_size},
        {"seed", s.seed},
    };
}

CorpusSpec spec_from_json(const json& j)
{
    CorpusSpec s;
    try {
        if (j.contains("machine"))
            s.machine = parse_machine(j["machine"].get<std::string>());
        s.sample_id = j.value("sample_id", s.sample_id);
        s.function_count = j.value("function_count", s.function_count);
        s.min_body = j.value("min_body", s.min_body);
        s.max_body = j.value("max_body", s.max_body);
        s.alignment = j.value("alignment", s.alignment);
        s.padding_value = j.value("padding_value", s.padding_value);
        s.min_padding = j.value("min_padding", s.min_padding);
        if (j.contains("prologues")) {
            for (const auto& p : j["prologues"]) {
                const auto name = p.at("name").get<std::string>();
                s.prologues.push_back({name, parse_template(name + ".prologue", p.at("prologue").get<std::string>()),
                                       parse_template(name + ".epilogue", p.at("epilogue").get<std::string>())});
            }
        }
        s.call_density = j.value("call_density", s.call_density);
        s.duplicate_fraction = j.value("duplicate_fraction", s.duplicate_fraction);
        s.immediate_variant_fraction = j.value("immediate_variant_fraction", s.immediate_variant_fraction);
        s.unreferenced_rate = j.value("unreferenced_rate", s.unreferenced_rate);
        if (j.contains("encoding"))
            s.encoding = parse_encoding(j["encoding"].get<std::string>());
        s.emit_pdata = j.value("emit_pdata", s.emit_pdata);
        s.image_base = j.value("image_base", s.image_base);
        s.max_text_size = j.value("max_text_size", s.max_text_size);
        s.seed = j.value("seed", s.seed);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, fmt::format("corpus spec: {}", e.what()));
    }
    return s;
}

SynthImage generate(const CorpusSpec& spec)
{
    spec.check();
    const std::vector<PrologueTemplate> prologues =
        spec.prologues.empty() ? default_prologues(spec.machine) : spec.prologues;
    const std::size_t n = spec.function_count;
    Rng rng(spec.seed);

    // Roles: copies and their originals are leaves so their bytes do not
    // depend on where they are placed.
    const std::size_t dups = fraction_count(spec.duplicate_fraction, spec.function_count);
    const std::size_t variants = fraction_count(spec.immediate_variant_fraction, spec.function_count);
    std::vector<std::size_t> order(n > 0 ? n - 1 : 0);
    std::iota(order.begin(), order.end(), std::size_t{1});
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<SynthFunction> fns(n);
    std::vector<bool> leaf(n, false);
    const std::size_t copies = dups + variants;
    for (std::size_t k = 0; k < copies; ++k) {
        const std::size_t copy = order[k];
        const std::size_t original = order[copies + k];
        leaf[copy] = leaf[original] = true;
        if (k < dups)
            fns[copy].duplicate_of = original;
        else
            fns[copy].variant_of = original;
    }

    // Call graph: every referenced function gets one caller that is already
    // reachable, plus random extra edges between non-leaf callers and
    // referenced callees.
    std::vector<bool> referenced(n, false);
    referenced[0] = true;
    for (std::size_t j = 1; j < n; ++j)
        referenced[j] = !rng.chance(spec.unreferenced_rate);
    std::vector<std::size_t> reachable_callers{0};
    for (std::size_t j = 1; j < n; ++j) {
        if (!referenced[j])
            continue;
        const std::size_t caller = reachable_callers[rng.below(reachable_callers.size())];
        fns[caller].callees.push_back(j);
        if (!leaf[j])
            reachable_callers.push_back(j);
    }
    std::vector<std::size_t> callees_pool;
    for (std::size_t j = 1; j < n; ++j)
        if (referenced[j])
            callees_pool.push_back(j);
    for (std::size_t i = 0; i < n; ++i) {
        if (leaf[i] || callees_pool.empty())
            continue;
        for (int k = 0; k < kExtraCallSlots; ++k)
            if (rng.chance(spec.call_density))
                fns[i].callees.push_back(callees_pool[rng.below(callees_pool.size())]);
    }
    for (std::size_t i = 0; i < n; ++i)
        fns[i].reachable = referenced[i];

    // Bodies. Originals first so copies can be derived from them.
    const BodyBuilder builder(spec, prologues);
    const DecodeMode mode = DecodeMode::for_machine(spec.machine);
    std::vector<Body> bodies(n);
    std::set<Bytes> raw_seen;
    std::set<Bytes> norm_seen;
    for (std::size_t i = 0; i < n; ++i) {
        if (fns[i].duplicate_of || fns[i].variant_of)
            continue;
        Rng frng = Rng::split(spec.seed, i);
        Body body;
        for (int attempt = 0;; ++attempt) {
            body = builder.build(frng, fns[i].callees);
            if (raw_seen.count(body.bytes) != 0) {
                if (attempt >= kUniqueRetries)
                    infeasible("cannot generate byte-unique function bodies; widen the body size range");
                continue;
            }
            if (attempt < kNormalizedRetries && norm_seen.count(normalize(body.bytes, mode).bytes) != 0)
                continue;
            break;
        }
        raw_seen.insert(body.bytes);
        norm_seen.insert(normalize(body.bytes, mode).bytes);
        bodies[i] = std::move(body);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (fns[i].duplicate_of) {
            bodies[i] = bodies[*fns[i].duplicate_of];
        } else if (fns[i].variant_of) {
            Rng frng = Rng::split(spec.seed, i);
            Body body = bodies[*fns[i].variant_of];
            for (int attempt = 0;; ++attempt) {
                for (const auto& f : body.fields)
                    if (f.immediate)
                        randomize_field(frng, body.bytes, f);
                if (raw_seen.count(body.bytes) == 0)
                    break;
                if (attempt >= kUniqueRetries)
                    infeasible("cannot generate a distinct immediate variant");
            }
            raw_seen.insert(body.bytes);
            bodies[i] = std::move(body);
        }
        fns[i].prolog_size = bodies[i].prolog_size;
        fns[i].prologue = bodies[i].prologue;
    }

    // Layout.
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0)
            pos = (pos + spec.min_padding + spec.alignment - 1) / spec.alignment * spec.alignment;
        fns[i].start = static_cast<Rva>(kTextRva + pos);
        pos += bodies[i].bytes.size();
        fns[i].end = static_cast<Rva>(kTextRva + pos);
        if (pos > spec.max_text_size)
            infeasible(fmt::format("code does not fit in {} bytes", spec.max_text_size));
    }
    pos = (pos + spec.alignment - 1) / spec.alignment * spec.alignment;
    Bytes text(pos, spec.padding_value);
    for (std::size_t i = 0; i < n; ++i) {
        Body& b = bodies[i];
        for (const auto& [at, callee] : b.calls) {
            const auto disp = static_cast<std::uint32_t>(fns[callee].start - (fns[i].start + at + 5));
            store_le32(b.bytes, at + 1, disp);
        }
        std::copy(b.bytes.begin(), b.bytes.end(), text.begin() + (fns[i].start - kTextRva));
    }

    SynthImage out;
    out.text = {kTextRva, static_cast<Rva>(kTextRva + text.size())};
    PeSpec pe;
    pe.machine = spec.machine;
    pe.image_base = spec.machine == Machine::x64 ? spec.image_base : (spec.image_base & 0xFFFF0000u);
    pe.entry_point = fns[0].start;
    const Rva rdata_rva = next_section_rva(kTextRva, static_cast<std::uint32_t>(text.size()));
    pe.sections.push_back({".text", std::move(text), kTextCharacteristics});
    if (spec.machine == Machine::x64 && spec.emit_pdata) {
        Bytes unwind;
        Bytes table;
        for (std::size_t i = 0; i < n; ++i) {
            const auto info = static_cast<Rva>(rdata_rva + unwind.size());
            // UNWIND_INFO version 1, no flags, no unwind codes.
            unwind.insert(unwind.end(), {0x01, fns[i].prolog_size, 0x00, 0x00});
            put_le32(table, fns[i].start);
            put_le32(table, fns[i].end);
            put_le32(table, info);
            out.pdata.push_back({fns[i].start, fns[i].end, info, fns[i].prolog_size});
        }
        const Rva pdata_rva = next_section_rva(rdata_rva, static_cast<std::uint32_t>(unwind.size()));
        pe.exception_dir = {pdata_rva, static_cast<std::uint32_t>(table.size())};
        pe.sections.push_back({".rdata", std::move(unwind), kRdataCharacteristics});
        pe.sections.push_back({".pdata", std::move(table), kRdataCharacteristics});
    }
    out.pe = write_pe(pe);

    out.gt.sample_id = spec.sample_id;
    out.gt.machine = spec.machine;
    out.gt.encoding = spec.encoding;
    for (const auto& f : fns) {
        FunctionRecord r{f.start, std::nullopt, false};
        if (spec.encoding == EndEncoding::exclusive_end)
            r.end = f.end;
        else if (spec.encoding == EndEncoding::inclusive_end) {
            r.end = f.end - 1;
            r.one_byte_conflict = *r.end == r.start;
        }
        out.gt.records.push_back(r);
    }
    out.functions = std::move(fns);
    return out;
}

} // namespace funcstart
