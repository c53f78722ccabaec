#pragma once

#include "physiome/autograd.hpp"
#include "physiome/signal.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Single-file little-endian named-tensor container.
//
//   magic "PHYSIOME1" | u32 version | u32 modalities | u32 sample count
//   then records until EOF:
//   u32 name length | UTF-8 name | u8 dtype | u8 rank | u64 dims[rank] | payload
//
// dtype codes: 0 f32, 1 i64, 2 u8, 3 f64.
namespace physiome::container {

inline constexpr std::string_view kMagic = "PHYSIOME1";
inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kI64 = 1, kU8 = 2, kF64 = 3 };

std::size_t dtype_size(DType t);

struct NamedTensor {
    std::string name;
    DType dtype = DType::kU8;
    std::vector<std::uint64_t> dims;
    std::vector<std::uint8_t> payload;  // little-endian element bytes

    std::uint64_t element_count() const;
    bool operator==(const NamedTensor&) const = default;
};

struct ContainerFile {
    std::uint32_t modalities = 0;
    std::uint32_t samples = 0;
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(std::string_view name) const;
    const NamedTensor& at(std::string_view name) const;
    void add(NamedTensor t);
    bool operator==(const ContainerFile&) const = default;
};

void write_file(const std::filesystem::path& path, const ContainerFile& file);
ContainerFile read_file(const std::filesystem::path& path);

NamedTensor from_f32(std::string name, std::vector<std::uint64_t> dims, std::span<const float> values);
NamedTensor from_f64(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values);
NamedTensor from_i64(std::string name, std::vector<std::uint64_t> dims, std::span<const std::int64_t> values);
NamedTensor from_u8(std::string name, std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values);
NamedTensor from_string(std::string name, std::string_view text);
NamedTensor from_matrix(std::string name, const ag::Matrix& m);

std::vector<float> to_f32(const NamedTensor& t);
std::vector<double> to_f64(const NamedTensor& t);
std::vector<std::int64_t> to_i64(const NamedTensor& t);
std::string to_string(const NamedTensor& t);
ag::Matrix to_matrix(const NamedTensor& t);

// Dataset <-> container file. Tensors: signal/<m> (f32, S x L_m),
// meta/sample_rate_hz (f64, M), meta/labels (i64, S; -1 = none),
// meta/availability (u8, S x M), meta/subject_ids (u8, NUL-separated).
ContainerFile encode_dataset(const Dataset& ds);
Dataset decode_dataset(const ContainerFile& file);
void write_container(const std::filesystem::path& path, const Dataset& ds);
Dataset read_container(const std::filesystem::path& path);

// FNV-1a 64-bit over raw bytes, rendered as 16 hex digits.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace physiome::container
