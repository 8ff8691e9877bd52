#include "funcstart/pe_writer.hpp"

#include <algorithm>
#include <array>

namespace funcstart {

namespace {

constexpr std::uint32_t kLfanew = 0x40;
constexpr std::uint32_t kDirectoryCount = 16;
constexpr std::uint16_t kImageFileExecutable = 0x0002;
constexpr std::uint16_t kImageFileLargeAddressAware = 0x0020;
constexpr std::uint16_t kImageFile32BitMachine = 0x0100;
constexpr std::uint16_t kSubsystemConsole = 3;

void pad_to(Bytes& out, std::size_t size)
{
    if (out.size() < size)
        out.resize(size, 0);
}

} // namespace

Bytes write_pe(const PeSpec& spec)
{
    const bool pe64 = spec.machine == Machine::x64;
    const std::uint16_t optional_size = static_cast<std::uint16_t>((pe64 ? 112 : 96) + kDirectoryCount * 8);
    const auto nsec = static_cast<std::uint16_t>(spec.sections.size());
    const std::uint32_t headers_end = kLfanew + 4 + 20 + optional_size + nsec * 40u;
    const std::uint32_t size_of_headers = align_up(headers_end, kFileAlignment);

    std::vector<Rva> rvas;
    std::vector<std::uint32_t> offsets;
    Rva rva = kSectionAlignment;
    std::uint32_t off = size_of_headers;
    std::uint32_t size_of_code = 0;
    std::uint32_t size_of_data = 0;
    Rva base_of_code = 0;
    for (const auto& s : spec.sections) {
        rvas.push_back(rva);
        offsets.push_back(off);
        const std::uint32_t raw = align_up(static_cast<std::uint32_t>(s.data.size()), kFileAlignment);
        if (s.characteristics & kScnCode) {
            if (base_of_code == 0)
                base_of_code = rva;
            size_of_code += raw;
        } else {
            size_of_data += raw;
        }
        off += raw;
        rva = next_section_rva(rva, static_cast<std::uint32_t>(s.data.size()));
    }
    const std::uint32_t size_of_image = rva;

    Bytes out;
    out.reserve(off);
    // DOS header: only e_magic and e_lfanew matter.
    out.push_back('M');
    out.push_back('Z');
    pad_to(out, 0x3c);
    put_le32(out, kLfanew);
    pad_to(out, kLfanew);
    out.insert(out.end(), {'P', 'E', 0, 0});

    put_le16(out, pe64 ? kMachineAmd64 : kMachineI386);
    put_le16(out, nsec);
    put_le32(out, 0); // timestamp
    put_le32(out, 0);
    put_le32(out, 0);
    put_le16(out, optional_size);
    put_le16(out, pe64 ? kImageFileExecutable | kImageFileLargeAddressAware
                       : kImageFileExecutable | kImageFile32BitMachine);

    put_le16(out, pe64 ? 0x20b : 0x10b);
    out.push_back(14); // linker version
    out.push_back(0);
    put_le32(out, size_of_code);
    put_le32(out, size_of_data);
    put_le32(out, 0);
    put_le32(out, spec.entry_point);
    put_le32(out, base_of_code);
    if (pe64) {
        put_le64(out, spec.image_base);
    } else {
        put_le32(out, 0); // base of data
        put_le32(out, static_cast<std::uint32_t>(spec.image_base));
    }
    put_le32(out, kSectionAlignment);
    put_le32(out, kFileAlignment);
    put_le16(out, 6); // OS version
    put_le16(out, 0);
    put_le32(out, 0); // image version
    put_le16(out, 6); // subsystem version
    put_le16(out, 0);
    put_le32(out, 0);
    put_le32(out, size_of_image);
    put_le32(out, size_of_headers);
    put_le32(out, 0); // checksum
    put_le16(out, kSubsystemConsole);
    put_le16(out, 0x8100); // NX compatible, terminal-server aware
    for (std::uint32_t v : {0x100000u, 0x1000u, 0x100000u, 0x1000u}) {
        if (pe64)
            put_le64(out, v);
        else
            put_le32(out, v);
    }
    put_le32(out, 0);
    put_le32(out, kDirectoryCount);
    for (std::uint32_t i = 0; i < kDirectoryCount; ++i) {
        const DataDirectory d = i == 3 ? spec.exception_dir : DataDirectory{};
        put_le32(out, d.rva);
        put_le32(out, d.size);
    }

    for (std::size_t i = 0; i < spec.sections.size(); ++i) {
        const auto& s = spec.sections[i];
        std::array<std::uint8_t, 8> name{};
        std::copy_n(s.name.begin(), std::min<std::size_t>(8, s.name.size()), name.begin());
        out.insert(out.end(), name.begin(), name.end());
        const auto size = static_cast<std::uint32_t>(s.data.size());
        put_le32(out, size);
        put_le32(out, rvas[i]);
        put_le32(out, align_up(size, kFileAlignment));
        put_le32(out, size == 0 ? 0 : offsets[i]);
        put_le32(out, 0);
        put_le32(out, 0);
        put_le16(out, 0);
        put_le16(out, 0);
        put_le32(out, s.characteristics);
    }

    for (std::size_t i = 0; i < spec.sections.size(); ++i) {
        pad_to(out, offsets[i]);
        out.insert(out.end(), spec.sections[i].data.begin(), spec.sections[i].data.end());
    }
    pad_to(out, off);
    return out;
}

} // namespace funcstart
