#include "sbk/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "sbk/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace sbk {

namespace {

uint32_t crc_of(const std::vector<uint8_t>& payload) {
    uLong crc = crc32(0L, Z_NULL, 0);
    if (!payload.empty()) crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
    return static_cast<uint32_t>(crc);
}

} // namespace

void write_container(const std::string& path, const char magic[4],
                     const nlohmann::ordered_json& header,
                     const std::vector<uint8_t>& payload) {
    const std::string hdr = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path);
    out.write(magic, 4);
    const uint64_t hlen = hdr.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    const uint32_t crc = crc_of(payload);
    out.write(reinterpret_cast<const char*>(&crc), 4);
    if (!out) throw Error("write failed: " + path);
}

Container read_container(const std::string& path, const char magic[4], int expected_version) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw TruncatedError(path + ": too short for a container");
    if (std::memcmp(bytes.data(), magic, 4) != 0)
        throw FormatError(path + ": bad magic, expected " + std::string(magic, 4));
    uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 4, 8);
    if (12 + hlen + 4 > bytes.size())
        throw TruncatedError(path + ": header length exceeds file size");
    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(bytes.begin() + 12,
                                               bytes.begin() + 12 + static_cast<long>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": malformed header JSON: " + e.what());
    }
    if (!header.contains("format_version") || !header["format_version"].is_number_integer())
        throw FormatError(path + ": header missing format_version");
    if (header["format_version"].get<int>() != expected_version)
        throw VersionError(path + ": format_version " +
                           std::to_string(header["format_version"].get<int>()) +
                           ", expected " + std::to_string(expected_version));
    if (!header.contains("payload_bytes") || !header["payload_bytes"].is_number_unsigned())
        throw FormatError(path + ": header missing payload_bytes");
    const uint64_t plen = header["payload_bytes"].get<uint64_t>();
    if (12 + hlen + plen + 4 != bytes.size())
        throw TruncatedError(path + ": payload truncated or trailing garbage (expected " +
                             std::to_string(12 + hlen + plen + 4) + " bytes, file has " +
                             std::to_string(bytes.size()) + ")");
    Container c;
    c.header = std::move(header);
    c.payload.assign(bytes.begin() + 12 + static_cast<long>(hlen),
                     bytes.begin() + 12 + static_cast<long>(hlen + plen));
    uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (stored != crc_of(c.payload))
        throw ChecksumError(path + ": payload CRC32 mismatch");
    return c;
}

void put_f32(std::vector<uint8_t>& buf, const std::vector<double>& values) {
    const size_t at = buf.size();
    buf.resize(at + values.size() * 4);
    for (size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::memcpy(buf.data() + at + i * 4, &f, 4);
    }
}

std::vector<double> get_f32(const std::vector<uint8_t>& buf, size_t offset, size_t count) {
    if (offset + count * 4 > buf.size()) throw TruncatedError("f32 slice out of payload range");
    std::vector<double> out(count);
    for (size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, buf.data() + offset + i * 4, 4);
        out[i] = static_cast<double>(f);
    }
    return out;
}

void put_f64(std::vector<uint8_t>& buf, const std::vector<double>& values) {
    const size_t at = buf.size();
    buf.resize(at + values.size() * 8);
    std::memcpy(buf.data() + at, values.data(), values.size() * 8);
}

std::vector<double> get_f64(const std::vector<uint8_t>& buf, size_t offset, size_t count) {
    if (offset + count * 8 > buf.size()) throw TruncatedError("f64 slice out of payload range");
    std::vector<double> out(count);
    std::memcpy(out.data(), buf.data() + offset, count * 8);
    return out;
}

void put_bits(std::vector<uint8_t>& buf, const std::vector<uint8_t>& flags) {
    const size_t at = buf.size();
    buf.resize(at + (flags.size() + 7) / 8, 0);
    for (size_t i = 0; i < flags.size(); ++i)
        if (flags[i]) buf[at + i / 8] |= static_cast<uint8_t>(1u << (i % 8));
}

std::vector<uint8_t> get_bits(const std::vector<uint8_t>& buf, size_t offset, size_t count) {
    if (offset + (count + 7) / 8 > buf.size())
        throw TruncatedError("bit slice out of payload range");
    std::vector<uint8_t> out(count);
    for (size_t i = 0; i < count; ++i)
        out[i] = (buf[offset + i / 8] >> (i % 8)) & 1u;
    return out;
}

} // namespace sbk
