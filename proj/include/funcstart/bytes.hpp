#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace funcstart {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Relative virtual address: offset of a byte from the image base.
using Rva = std::uint32_t;

// Little-endian readers. They return nullopt when the read would run past
// the end of `data`.
[[nodiscard]] inline std::optional<std::uint16_t> read_le16(ByteView data, std::size_t off)
{
    if (off > data.size() || data.size() - off < 2)
        return std::nullopt;
    return static_cast<std::uint16_t>(data[off] | (data[off + 1] << 8));
}

[[nodiscard]] inline std::optional<std::uint32_t> read_le32(ByteView data, std::size_t off)
{
    if (off > data.size() || data.size() - off < 4)
        return std::nullopt;
    return static_cast<std::uint32_t>(data[off]) | (static_cast<std::uint32_t>(data[off + 1]) << 8) |
        (static_cast<std::uint32_t>(data[off + 2]) << 16) | (static_cast<std::uint32_t>(data[off + 3]) << 24);
}

[[nodiscard]] inline std::optional<std::uint64_t> read_le64(ByteView data, std::size_t off)
{
    auto lo = read_le32(data, off);
    auto hi = read_le32(data, off + 4);
    if (!lo || !hi)
        return std::nullopt;
    return static_cast<std::uint64_t>(*lo) | (static_cast<std::uint64_t>(*hi) << 32);
}

inline void put_le16(Bytes& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_le32(Bytes& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_le64(Bytes& out, std::uint64_t v)
{
    put_le32(out, static_cast<std::uint32_t>(v));
    put_le32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void store_le16(std::span<std::uint8_t> out, std::size_t off, std::uint16_t v)
{
    out[off] = static_cast<std::uint8_t>(v);
    out[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

inline void store_le32(std::span<std::uint8_t> out, std::size_t off, std::uint32_t v)
{
    for (std::size_t i = 0; i < 4; ++i)
        out[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

} // namespace funcstart
