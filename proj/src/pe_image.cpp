#include "funcstart/pe_image.hpp"

#include "funcstart/error.hpp"
#include "funcstart/io.hpp"

#include <algorithm>
#include <fmt/format.h>

namespace funcstart {

namespace {

constexpr std::size_t kDosHeaderSize = 64;
constexpr std::size_t kCoffHeaderSize = 20;
constexpr std::size_t kSectionHeaderSize = 40;
constexpr std::uint16_t kMagicPe32 = 0x10b;
constexpr std::uint16_t kMagicPe32Plus = 0x20b;
constexpr std::uint32_t kExceptionDirIndex = 3;
constexpr int kMaxChainDepth = 32;

[[noreturn]] void malformed(const std::string& what)
{
    throw Error(ErrorKind::MalformedPe, what);
}

template <typename T>
T require(std::optional<T> v, const char* what)
{
    if (!v)
        malformed(fmt::format("truncated {}", what));
    return *v;
}

} // namespace

std::string_view machine_name(Machine m) noexcept
{
    return m == Machine::x64 ? "x64" : "x86";
}

Machine parse_machine(std::string_view name)
{
    if (name == "x64" || name == "amd64" || name == "x86_64")
        return Machine::x64;
    if (name == "x86" || name == "i386")
        return Machine::x86;
    throw Error(ErrorKind::SchemaError, fmt::format("unknown machine '{}'", name));
}

RvaRange Section::virtual_range() const noexcept
{
    const std::uint32_t size = virtual_size != 0 ? virtual_size : raw_size;
    return {rva, rva + size};
}

RvaRange Section::raw_range() const noexcept
{
    const RvaRange v = virtual_range();
    return {rva, rva + std::min(raw_size, v.size())};
}

const Section* PeImage::section_containing(Rva rva) const noexcept
{
    auto it = std::upper_bound(sections_.begin(), sections_.end(), rva,
                               [](Rva r, const Section& s) { return r < s.rva; });
    if (it == sections_.begin())
        return nullptr;
    --it;
    return it->virtual_range().contains(rva) ? &*it : nullptr;
}

ByteView PeImage::bytes_at(Rva rva, std::uint32_t size) const
{
    const Section* s = section_containing(rva);
    if (s == nullptr)
        throw Error(ErrorKind::UnmappedRva, fmt::format("rva {:#x}", rva));
    const RvaRange raw = s->raw_range();
    if (!raw.contains(rva) || static_cast<std::uint64_t>(rva) + size > raw.end)
        throw Error(ErrorKind::UnbackedRva, fmt::format("rva {:#x}+{:#x} beyond raw data of {}", rva, size, s->name));
    return ByteView(raw_).subspan(s->raw_offset + (rva - s->rva), size);
}

bool PeImage::is_executable(Rva rva) const noexcept
{
    const Section* s = section_containing(rva);
    return s != nullptr && s->executable && s->raw_range().contains(rva);
}

std::vector<RvaRange> PeImage::executable_ranges() const
{
    std::vector<RvaRange> out;
    for (const auto& s : sections_) {
        if (s.executable && s.raw_size != 0 && s.raw_range().size() != 0)
            out.push_back(s.raw_range());
    }
    return out;
}

PeImage PeImage::with_bytes(Bytes bytes) const
{
    if (bytes.size() != raw_.size())
        throw Error(ErrorKind::MalformedPe, "replacement bytes differ in length");
    PeImage copy = *this;
    copy.raw_ = std::move(bytes);
    return copy;
}

PeImage parse_pe(Bytes bytes)
{
    const ByteView data(bytes);
    if (data.size() < kDosHeaderSize || data[0] != 'M' || data[1] != 'Z')
        malformed("missing MZ signature");
    const std::uint32_t lfanew = require(read_le32(data, 0x3c), "DOS header");
    if (static_cast<std::uint64_t>(lfanew) + 4 + kCoffHeaderSize > data.size())
        malformed("PE header beyond end of file");
    if (data[lfanew] != 'P' || data[lfanew + 1] != 'E' || data[lfanew + 2] != 0 || data[lfanew + 3] != 0)
        malformed("missing PE signature");

    const std::size_t coff = lfanew + 4;
    const std::uint16_t machine_field = require(read_le16(data, coff), "COFF header");
    const std::uint16_t section_count = require(read_le16(data, coff + 2), "COFF header");
    const std::uint16_t optional_size = require(read_le16(data, coff + 16), "COFF header");

    PeImage image;
    if (machine_field == kMachineAmd64)
        image.machine_ = Machine::x64;
    else if (machine_field == kMachineI386)
        image.machine_ = Machine::x86;
    else
        throw Error(ErrorKind::UnsupportedMachine, fmt::format("COFF machine {:#06x}", machine_field));

    const std::size_t opt = coff + kCoffHeaderSize;
    if (opt + optional_size > data.size())
        malformed("optional header beyond end of file");
    const ByteView opt_view = data.subspan(opt, optional_size);
    const std::uint16_t magic = require(read_le16(opt_view, 0), "optional header");
    image.entry_point_ = require(read_le32(opt_view, 16), "optional header");

    std::size_t dir_count_off = 0;
    std::size_t dirs_off = 0;
    if (magic == kMagicPe32) {
        image.image_base_ = require(read_le32(opt_view, 28), "optional header");
        dir_count_off = 92;
        dirs_off = 96;
    } else if (magic == kMagicPe32Plus) {
        image.image_base_ = require(read_le64(opt_view, 24), "optional header");
        dir_count_off = 108;
        dirs_off = 112;
    } else {
        malformed(fmt::format("unknown optional header magic {:#x}", magic));
    }

    const std::uint32_t dir_count = require(read_le32(opt_view, dir_count_off), "optional header");
    if (dir_count > kExceptionDirIndex) {
        const std::size_t off = dirs_off + kExceptionDirIndex * 8;
        image.exception_dir_.rva = require(read_le32(opt_view, off), "data directories");
        image.exception_dir_.size = require(read_le32(opt_view, off + 4), "data directories");
    }

    const std::size_t table = opt + optional_size;
    if (table + static_cast<std::size_t>(section_count) * kSectionHeaderSize > data.size())
        malformed("section table beyond end of file");
    image.sections_.reserve(section_count);
    for (std::size_t i = 0; i < section_count; ++i) {
        const std::size_t h = table + i * kSectionHeaderSize;
        Section s;
        for (std::size_t c = 0; c < 8 && data[h + c] != 0; ++c)
            s.name.push_back(static_cast<char>(data[h + c]));
        s.virtual_size = *read_le32(data, h + 8);
        s.rva = *read_le32(data, h + 12);
        s.raw_size = *read_le32(data, h + 16);
        s.raw_offset = *read_le32(data, h + 20);
        s.characteristics = *read_le32(data, h + 36);
        s.executable = (s.characteristics & kScnMemExecute) != 0;
        if (s.raw_size == 0)
            s.raw_offset = 0;
        if (static_cast<std::uint64_t>(s.raw_offset) + s.raw_size > data.size())
            malformed(fmt::format("section {} raw data beyond end of file", s.name));
        if (static_cast<std::uint64_t>(s.rva) + s.virtual_range().size() > UINT32_MAX)
            malformed(fmt::format("section {} wraps the address space", s.name));
        image.sections_.push_back(std::move(s));
    }

    std::stable_sort(image.sections_.begin(), image.sections_.end(),
                     [](const Section& a, const Section& b) { return a.rva < b.rva; });
    for (std::size_t i = 1; i < image.sections_.size(); ++i) {
        if (image.sections_[i - 1].virtual_range().end > image.sections_[i].rva)
            malformed(fmt::format("sections {} and {} overlap", image.sections_[i - 1].name, image.sections_[i].name));
    }
    if (image.entry_point_ != 0 && image.section_containing(image.entry_point_) == nullptr)
        malformed(fmt::format("entry point {:#x} outside every section", image.entry_point_));

    image.raw_ = std::move(bytes);
    return image;
}

PeImage load_pe(const std::filesystem::path& path)
{
    return parse_pe(read_file(path));
}

std::uint32_t rva_to_offset(const PeImage& image, Rva rva)
{
    const Section* s = image.section_containing(rva);
    if (s == nullptr)
        throw Error(ErrorKind::UnmappedRva, fmt::format("rva {:#x}", rva));
    if (!s->raw_range().contains(rva))
        throw Error(ErrorKind::UnbackedRva, fmt::format("rva {:#x} in zero-fill tail of {}", rva, s->name));
    return s->raw_offset + (rva - s->rva);
}

std::optional<Rva> offset_to_rva(const PeImage& image, std::uint32_t offset) noexcept
{
    for (const auto& s : image.sections()) {
        const RvaRange raw = s.raw_range();
        if (offset >= s.raw_offset && offset - s.raw_offset < raw.size())
            return s.rva + (offset - s.raw_offset);
    }
    return std::nullopt;
}

namespace {

// Follows a chain of UNWIND_INFO records to the primary one and returns its
// prolog size, or nullopt when some link is unmapped or the chain loops.
std::optional<std::uint8_t> resolve_chain(const PeImage& image, Rva unwind, int depth)
{
    if (depth > kMaxChainDepth)
        return std::nullopt;
    try {
        if (unwind & 1) {
            // Indirect entry: points at another RUNTIME_FUNCTION.
            const ByteView rf = image.bytes_at(unwind & ~1u, kRuntimeFunctionSize);
            return resolve_chain(image, *read_le32(rf, 8), depth + 1);
        }
        const ByteView head = image.bytes_at(unwind, 4);
        const std::uint8_t flags = head[0] >> 3;
        if ((flags & kUnwFlagChainInfo) == 0)
            return head[1];
        const std::uint32_t codes = (head[2] + 1u) & ~1u;
        const ByteView chained = image.bytes_at(unwind + 4 + codes * 2, kRuntimeFunctionSize);
        return resolve_chain(image, *read_le32(chained, 8), depth + 1);
    } catch (const Error&) {
        return std::nullopt;
    }
}

} // namespace

PdataTable parse_pdata(const PeImage& image)
{
    if (image.machine() != Machine::x64)
        throw Error(ErrorKind::NotX64, "exception directory parsing requires an x64 image");
    PdataTable table;
    const DataDirectory dir = image.exception_directory();
    if (dir.size == 0)
        return table;
    if (dir.size % kRuntimeFunctionSize != 0)
        throw Error(ErrorKind::MalformedPdata, fmt::format("directory size {} is not a multiple of {}", dir.size, kRuntimeFunctionSize));

    ByteView records;
    try {
        records = image.bytes_at(dir.rva, dir.size);
    } catch (const Error& e) {
        throw Error(ErrorKind::MalformedPdata, e.what());
    }

    const std::size_t count = dir.size / kRuntimeFunctionSize;
    table.entries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t off = i * kRuntimeFunctionSize;
        RuntimeFunctionEntry e;
        e.begin = *read_le32(records, off);
        e.end = *read_le32(records, off + 4);
        e.unwind_info = *read_le32(records, off + 8);
        if (e.begin >= e.end)
            throw Error(ErrorKind::MalformedPdata, fmt::format("record {} has begin {:#x} >= end {:#x}", i, e.begin, e.end));
        if (!image.is_executable(e.begin))
            throw Error(ErrorKind::MalformedPdata, fmt::format("record {} begins outside executable code at {:#x}", i, e.begin));

        const Rva unwind = e.unwind_info & ~1u;
        if (image.section_containing(unwind) == nullptr)
            throw Error(ErrorKind::MalformedPdata, fmt::format("record {} unwind info {:#x} is unmapped", i, e.unwind_info));

        bool chained = (e.unwind_info & 1) != 0;
        if (!chained) {
            ByteView head;
            try {
                head = image.bytes_at(unwind, 4);
            } catch (const Error&) {
                throw Error(ErrorKind::MalformedPdata, fmt::format("record {} unwind info {:#x} is not file-backed", i, unwind));
            }
            chained = ((head[0] >> 3) & kUnwFlagChainInfo) != 0;
            e.prolog_size = head[1];
        }
        if (chained) {
            const auto prolog = resolve_chain(image, e.unwind_info, 0);
            if (!prolog) {
                ++table.skipped_chains;
                continue;
            }
            e.prolog_size = *prolog;
        }
        if (e.prolog_size > e.end - e.begin) {
            ++table.skipped_invalid;
            continue;
        }
        table.entries.push_back(e);
    }
    return table;
}

} // namespace funcstart
