#pragma once

#include "funcstart/bytes.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace funcstart {

enum class Machine { x86, x64 };

[[nodiscard]] std::string_view machine_name(Machine m) noexcept;
/// Accepts "x86" / "x64" (also "i386", "amd64"); throws SchemaError otherwise.
[[nodiscard]] Machine parse_machine(std::string_view name);

inline constexpr std::uint16_t kMachineI386 = 0x014c;
inline constexpr std::uint16_t kMachineAmd64 = 0x8664;
inline constexpr std::uint32_t kScnMemExecute = 0x20000000;

/// Half-open RVA interval [begin, end).
struct RvaRange {
    Rva begin = 0;
    Rva end = 0;

    [[nodiscard]] std::uint32_t size() const noexcept { return end - begin; }
    [[nodiscard]] bool contains(Rva rva) const noexcept { return rva >= begin && rva < end; }
    friend bool operator==(const RvaRange&, const RvaRange&) = default;
};

struct Section {
    std::string name;
    Rva rva = 0;
    std::uint32_t virtual_size = 0;
    std::uint32_t raw_offset = 0;
    std::uint32_t raw_size = 0;
    std::uint32_t characteristics = 0;
    bool executable = false;

    /// Virtual extent; a zero VirtualSize means the raw size is used, as the
    /// Windows loader does.
    [[nodiscard]] RvaRange virtual_range() const noexcept;
    /// Part of the virtual extent that is backed by file bytes.
    [[nodiscard]] RvaRange raw_range() const noexcept;
};

struct DataDirectory {
    Rva rva = 0;
    std::uint32_t size = 0;
};

/// Parsed PE memory layout. Immutable after parse_pe; sections are sorted
/// by RVA and never overlap.
class PeImage {
public:
    [[nodiscard]] const Bytes& raw_bytes() const noexcept { return raw_; }
    [[nodiscard]] Machine machine() const noexcept { return machine_; }
    [[nodiscard]] std::uint64_t image_base() const noexcept { return image_base_; }
    [[nodiscard]] Rva entry_point() const noexcept { return entry_point_; }
    [[nodiscard]] const std::vector<Section>& sections() const noexcept { return sections_; }
    [[nodiscard]] DataDirectory exception_directory() const noexcept { return exception_dir_; }

    [[nodiscard]] const Section* section_containing(Rva rva) const noexcept;

    /// `size` file-backed bytes starting at `rva`, all inside one section.
    /// Throws UnmappedRva / UnbackedRva.
    [[nodiscard]] ByteView bytes_at(Rva rva, std::uint32_t size) const;

    /// True when `rva` is a file-backed byte of an executable section.
    [[nodiscard]] bool is_executable(Rva rva) const noexcept;

    /// File-backed ranges of executable sections, in RVA order. Sections with
    /// zero raw size are excluded.
    [[nodiscard]] std::vector<RvaRange> executable_ranges() const;

    /// Image with the same headers but different file bytes (same length).
    /// Used to re-read a patched copy of a parsed image.
    [[nodiscard]] PeImage with_bytes(Bytes bytes) const;

private:
    friend PeImage parse_pe(Bytes bytes);

    Bytes raw_;
    Machine machine_ = Machine::x86;
    std::uint64_t image_base_ = 0;
    Rva entry_point_ = 0;
    std::vector<Section> sections_;
    DataDirectory exception_dir_;
};

/// Throws MalformedPe or UnsupportedMachine.
[[nodiscard]] PeImage parse_pe(Bytes bytes);
[[nodiscard]] PeImage load_pe(const std::filesystem::path& path);

/// Throws UnmappedRva when no section contains `rva`, UnbackedRva when it
/// falls in a section's zero-fill tail.
[[nodiscard]] std::uint32_t rva_to_offset(const PeImage& image, Rva rva);
[[nodiscard]] std::optional<Rva> offset_to_rva(const PeImage& image, std::uint32_t offset) noexcept;

struct RuntimeFunctionEntry {
    Rva begin = 0;
    Rva end = 0; // exclusive
    Rva unwind_info = 0;
    std::uint8_t prolog_size = 0;

    friend bool operator==(const RuntimeFunctionEntry&, const RuntimeFunctionEntry&) = default;
};

struct PdataTable {
    std::vector<RuntimeFunctionEntry> entries;
    /// Records whose chained unwind info could not be resolved.
    std::size_t skipped_chains = 0;
    /// Records whose prolog claims more bytes than the function has.
    std::size_t skipped_invalid = 0;
};

inline constexpr std::uint32_t kRuntimeFunctionSize = 12;
inline constexpr std::uint8_t kUnwFlagChainInfo = 0x4;

/// Decodes the x64 exception directory. Entries keep their own begin/end;
/// for chained unwind info the prolog size comes from the chain's primary
/// record. Throws NotX64 or MalformedPdata.
[[nodiscard]] PdataTable parse_pdata(const PeImage& image);

} // namespace funcstart
