#include "vtt/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'T', '1'};
constexpr std::uint8_t kDtypeF32 = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string encode_vtt1(const Tensor& t) {
    if (t.rank() > 255) throw FormatError("rank too large for VTT1");
    std::string out(kMagic, 4);
    out.push_back(static_cast<char>(kDtypeF32));
    out.push_back(static_cast<char>(t.rank()));
    for (auto d : t.shape()) {
        if (d > UINT32_MAX) throw FormatError("dim too large for VTT1");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    out.reserve(out.size() + 4 * t.numel());
    for (auto v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

Tensor decode_vtt1(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 6 || std::memcmp(p, kMagic, 4) != 0) throw FormatError("missing VTT1 magic");
    if (p[4] != kDtypeF32) throw FormatError("unsupported VTT1 dtype code " + std::to_string(p[4]));
    const std::size_t rank = p[5];
    if (rank == 0) throw FormatError("VTT1 rank 0");
    if (bytes.size() < 6 + 4 * rank) throw FormatError("truncated VTT1 header");
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        shape[i] = get_u32(p + 6 + 4 * i);
        if (shape[i] == 0) throw FormatError("VTT1 zero dim");
    }
    const std::size_t n = shape_numel(shape);
    const std::size_t off = 6 + 4 * rank;
    if (bytes.size() != off + 4 * n) {
        throw FormatError("VTT1 payload is " + std::to_string(bytes.size() - off) + " bytes, expected " +
                          std::to_string(4 * n));
    }
    std::vector<Scalar> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<Scalar>(std::bit_cast<float>(get_u32(p + off + 4 * i)));
    return Tensor(std::move(shape), std::move(data));
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + path.string());
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw IoError("write failed for " + path.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp + " into place: " + ec.message());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_text_file(path, encode_vtt1(t)); }

Tensor read_tensor(const std::filesystem::path& path) {
    try {
        return decode_vtt1(read_text_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

nlohmann::ordered_json read_json_file(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        return nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace vtt::inline VTT_PRECISION_NS
