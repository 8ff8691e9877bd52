#pragma once

#include "funcstart/bytes.hpp"
#include "funcstart/pe_image.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace funcstart {

enum class InsnClass : std::uint8_t {
    call_rel,
    call_indirect,
    jmp_rel,
    jmp_indirect,
    jcc,
    ret,
    int3,
    nop,
    other,
    invalid,
};

[[nodiscard]] std::string_view insn_class_name(InsnClass c) noexcept;
[[nodiscard]] std::optional<InsnClass> parse_insn_class(std::string_view name) noexcept;

enum class Bitness : std::uint8_t { bits32, bits64 };

struct DecodeMode {
    Bitness bitness = Bitness::bits64;

    [[nodiscard]] static DecodeMode for_machine(Machine m) noexcept
    {
        return {m == Machine::x64 ? Bitness::bits64 : Bitness::bits32};
    }
    friend bool operator==(const DecodeMode&, const DecodeMode&) = default;
};

/// Byte range of an operand field, relative to the first instruction byte.
struct FieldSpan {
    std::uint8_t offset = 0;
    std::uint8_t width = 0;
    friend bool operator==(const FieldSpan&, const FieldSpan&) = default;
};

inline constexpr std::size_t kMaxInsnLength = 15;

struct Instruction {
    /// Address of the first byte in the caller's coordinate system:
    /// `base + offset` as passed to decode_one (an RVA for image sweeps).
    std::uint64_t address = 0;
    std::uint8_t length = 1;
    InsnClass cls = InsnClass::invalid;
    /// Immediate operand fields. Relative branch displacements are not
    /// immediates; they are reported through disp_span.
    std::array<FieldSpan, 2> imm_storage{};
    std::uint8_t imm_count = 0;
    /// ModRM displacement, or the displacement of a relative branch.
    std::optional<FieldSpan> disp_span;
    /// Present iff cls is call_rel, jmp_rel or jcc.
    std::optional<std::uint64_t> rel_target;
    /// Set by image-level passes when rel_target is outside every section.
    bool target_unmapped = false;

    [[nodiscard]] std::span<const FieldSpan> imm_spans() const noexcept { return {imm_storage.data(), imm_count}; }
    [[nodiscard]] std::uint64_t end() const noexcept { return address + length; }
    [[nodiscard]] bool is_rel_branch() const noexcept
    {
        return cls == InsnClass::call_rel || cls == InsnClass::jmp_rel || cls == InsnClass::jcc;
    }
    /// Unconditional control transfer: no fallthrough successor.
    [[nodiscard]] bool ends_flow() const noexcept
    {
        return cls == InsnClass::ret || cls == InsnClass::jmp_rel || cls == InsnClass::jmp_indirect ||
            cls == InsnClass::invalid;
    }
};

/// Decodes the instruction at bytes[offset]. Never throws: encodings that
/// are undefined, truncated by the end of `bytes`, or longer than 15 bytes
/// come back as a one-byte `invalid` instruction so sweeps always advance.
/// `base` is the address of bytes[0]; rel_target is computed from it.
[[nodiscard]] Instruction decode_one(ByteView bytes, std::size_t offset, DecodeMode mode, std::uint64_t base = 0) noexcept;

} // namespace funcstart
