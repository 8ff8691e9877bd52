#pragma once

#include "funcstart/pe_image.hpp"

#include <string>
#include <vector>

namespace funcstart {

inline constexpr std::uint32_t kSectionAlignment = 0x1000;
inline constexpr std::uint32_t kFileAlignment = 0x200;
inline constexpr std::uint32_t kScnCode = 0x00000020;
inline constexpr std::uint32_t kScnInitializedData = 0x00000040;
inline constexpr std::uint32_t kScnMemRead = 0x40000000;
inline constexpr std::uint32_t kTextCharacteristics = kScnCode | kScnMemExecute | kScnMemRead;
inline constexpr std::uint32_t kRdataCharacteristics = kScnInitializedData | kScnMemRead;

struct SectionSpec {
    std::string name;
    Bytes data;
    std::uint32_t characteristics = kRdataCharacteristics;
};

/// Sections are placed in order, the first at kSectionAlignment, each
/// following one at the next section-aligned RVA.
struct PeSpec {
    Machine machine = Machine::x64;
    std::uint64_t image_base = 0;
    Rva entry_point = 0;
    std::vector<SectionSpec> sections;
    DataDirectory exception_dir;
};

[[nodiscard]] constexpr std::uint32_t align_up(std::uint32_t v, std::uint32_t a) noexcept
{
    return (v + a - 1) & ~(a - 1);
}

/// RVA of the section that follows one at `rva` with `size` bytes.
[[nodiscard]] constexpr Rva next_section_rva(Rva rva, std::uint32_t size) noexcept
{
    return align_up(rva + (size == 0 ? 1 : size), kSectionAlignment);
}

/// Minimal PE32 / PE32+ file with the given sections. No imports,
/// relocations or resources.
[[nodiscard]] Bytes write_pe(const PeSpec& spec);

} // namespace funcstart
