#pragma once

#include "funcstart/ground_truth.hpp"
#include "funcstart/pe_image.hpp"

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace funcstart {

/// Byte field of a code template that gets a random value per use.
struct TemplateField {
    std::uint8_t offset = 0;
    std::uint8_t width = 1;
    /// Immediate operand (blinded by normalization) rather than a
    /// displacement.
    bool immediate = true;
    friend bool operator==(const TemplateField&, const TemplateField&) = default;
};

struct CodeTemplate {
    std::string name;
    Bytes bytes;
    std::vector<TemplateField> fields;
    friend bool operator==(const CodeTemplate&, const CodeTemplate&) = default;
};

struct PrologueTemplate {
    std::string name;
    CodeTemplate prologue;
    /// Placed before the final ret.
    CodeTemplate epilogue;
    friend bool operator==(const PrologueTemplate&, const PrologueTemplate&) = default;
};

/// Pattern syntax: space-separated hex bytes plus field tokens I1 / I4
/// (immediate of 1 or 4 bytes) and D1 / D4 (displacement). Throws SchemaError.
[[nodiscard]] CodeTemplate parse_template(std::string name, std::string_view pattern);
[[nodiscard]] std::string template_pattern(const CodeTemplate& t);

[[nodiscard]] std::vector<PrologueTemplate> default_prologues(Machine machine);
[[nodiscard]] std::vector<CodeTemplate> default_fillers(Machine machine);

struct CorpusSpec {
    Machine machine = Machine::x64;
    std::string sample_id = "synth";
    std::uint32_t function_count = 32;
    /// Approximate body size range; a body can exceed max_body by one
    /// instruction plus its calls.
    std::uint32_t min_body = 24;
    std::uint32_t max_body = 96;
    std::uint32_t alignment = 16;
    std::uint8_t padding_value = 0xCC;
    /// Minimum padding bytes before every function after the first.
    std::uint32_t min_padding = 0;
    /// Empty means default_prologues(machine).
    std::vector<PrologueTemplate> prologues;
    /// Chance, per call slot of a non-leaf function, of an extra call edge.
    double call_density = 0.3;
    /// Fraction of functions that are byte-identical copies of another.
    double duplicate_fraction = 0.0;
    /// Fraction of functions that differ from another only in immediates.
    double immediate_variant_fraction = 0.0;
    /// Chance that a function other than the entry has no direct caller.
    double unreferenced_rate = 0.1;
    EndEncoding encoding = EndEncoding::exclusive_end;
    /// x64 only.
    bool emit_pdata = true;
    std::uint64_t image_base = 0x140000000;
    std::uint32_t max_text_size = 64u << 20;
    std::uint64_t seed = 1;

    /// Throws SpecInfeasible.
    void check() const;
    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

[[nodiscard]] nlohmann::json spec_to_json(const CorpusSpec& spec);
/// Missing keys keep their defaults. Throws SchemaError.
[[nodiscard]] CorpusSpec spec_from_json(const nlohmann::json& j);

struct SynthFunction {
    Rva start = 0;
    Rva end = 0; // exclusive
    std::uint8_t prolog_size = 0;
    std::string prologue;
    /// Reachable from the entry point through direct calls (the entry
    /// itself included).
    bool reachable = false;
    std::vector<std::size_t> callees;
    std::optional<std::size_t> duplicate_of;
    std::optional<std::size_t> variant_of;
};

struct SynthImage {
    Bytes pe;
    GroundTruth gt;
    /// In layout order; index 0 is the entry point.
    std::vector<SynthFunction> functions;
    std::vector<RuntimeFunctionEntry> pdata;
    RvaRange text;
};

[[nodiscard]] SynthImage generate(const CorpusSpec& spec);

} // namespace funcstart
