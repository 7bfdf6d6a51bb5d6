#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace fixsynth {

/// On-disk container used for models and simulation sets:
///   8-byte magic "FIXSYNTH", u64 little-endian header length, UTF-8 JSON header,
///   then the payload as little-endian IEEE-754 doubles.
struct BinaryDocument {
    nlohmann::json header;
    std::vector<double> payload;
};

void write_binary(const std::filesystem::path& path, const nlohmann::json& header, std::span<const double> payload);
BinaryDocument read_binary(const std::filesystem::path& path);

}  // namespace fixsynth
