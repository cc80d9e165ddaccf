#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace sbk {

// Shared binary container: 4-byte magic, u64-LE length-prefixed UTF-8 JSON
// header, raw payload, trailing CRC32 (of the payload) as u32 LE.
void write_container(const std::string& path, const char magic[4],
                     const nlohmann::ordered_json& header,
                     const std::vector<uint8_t>& payload);

struct Container {
    nlohmann::ordered_json header;
    std::vector<uint8_t> payload;
};

// Throws FormatError (bad magic / malformed header), VersionError,
// TruncatedError, or ChecksumError.
Container read_container(const std::string& path, const char magic[4],
                         int expected_version);

// Payload encoding helpers (everything little-endian).
void put_f32(std::vector<uint8_t>& buf, const std::vector<double>& values);
std::vector<double> get_f32(const std::vector<uint8_t>& buf, size_t offset, size_t count);
void put_f64(std::vector<uint8_t>& buf, const std::vector<double>& values);
std::vector<double> get_f64(const std::vector<uint8_t>& buf, size_t offset, size_t count);
void put_bits(std::vector<uint8_t>& buf, const std::vector<uint8_t>& flags);
std::vector<uint8_t> get_bits(const std::vector<uint8_t>& buf, size_t offset, size_t count);

} // namespace sbk
