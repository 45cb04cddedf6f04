#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "vtt/tensor.hpp"
#include <json.hpp>

namespace vtt::inline VTT_PRECISION_NS {

// VTT1 layout: "VTT1", u8 dtype (1 = f32), u8 rank, rank x u32 LE dims,
// row-major f32 LE payload.
std::string encode_vtt1(const Tensor& t);
Tensor decode_vtt1(std::string_view bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never see a partial file.
void write_text_file(const std::filesystem::path& path, std::string_view text);

nlohmann::ordered_json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j);

// FNV-1a 64-bit, printed as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace vtt::inline VTT_PRECISION_NS
