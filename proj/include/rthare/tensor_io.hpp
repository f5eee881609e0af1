#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "rthare/tensor.hpp"

namespace rthare {

// RTT1 tensor files:
//   "RTT1" | u32 version (=1) | u8 dtype (0=f32, 1=f64) | u32 ndim | u32 dims[ndim] | scalars
// All integers and scalars little-endian, scalars row-major.
inline constexpr std::uint32_t kRttVersion = 1;

using AnyTensor = std::variant<Tensor, TensorD>;

template <typename T>
void write_rtt(std::ostream& out, const BasicTensor<T>& tensor);

AnyTensor read_rtt_any(std::istream& in);

// Reads one tensor and converts it to T if the stored dtype differs.
template <typename T>
BasicTensor<T> read_rtt(std::istream& in) {
  AnyTensor any = read_rtt_any(in);
  return std::visit([](auto&& t) { return t.template cast<T>(); }, any);
}

template <typename T>
void save_rtt(const std::filesystem::path& path, const BasicTensor<T>& tensor);

template <typename T>
BasicTensor<T> load_rtt(const std::filesystem::path& path);

// A frame stream file is a plain concatenation of RTT1 records.
template <typename T>
std::vector<BasicTensor<T>> load_rtt_sequence(const std::filesystem::path& path);

template <typename T>
void save_rtt_sequence(const std::filesystem::path& path, const std::vector<BasicTensor<T>>& tensors);

// Writes via a sibling temp file and rename so readers never observe partial output.
void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace rthare
