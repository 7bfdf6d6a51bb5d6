#include "fixsynth/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fixsynth/error.hpp"

namespace fixsynth {

namespace {

constexpr char kMagic[8] = {'F', 'I', 'X', 'S', 'Y', 'N', 'T', 'H'};

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
    return v;
}

}  // namespace

void write_binary(const std::filesystem::path& path, const nlohmann::json& header, std::span<const double> payload) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
    const std::string text = header.dump();
    const std::uint64_t len = to_le(text.size());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (double d : payload) {
        const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    if (!out) throw NumericalError("write failed for '" + path.string() + "'");
}

BinaryDocument read_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    char magic[8];
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw ValidationError("'" + path.string() + "' is not a fixsynth binary file");
    len = to_le(len);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw ValidationError("'" + path.string() + "': truncated header");
    BinaryDocument doc;
    try {
        doc.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("'" + path.string() + "': bad header: " + e.what());
    }
    std::uint64_t bits = 0;
    while (in.read(reinterpret_cast<char*>(&bits), sizeof bits))
        doc.payload.push_back(std::bit_cast<double>(to_le(bits)));
    if (in.gcount() != 0) throw ValidationError("'" + path.string() + "': trailing partial value");
    return doc;
}

}  // namespace fixsynth
