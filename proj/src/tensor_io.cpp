#include "rthare/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace rthare {
namespace {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::array<unsigned char, sizeof(U)> b;
    std::memcpy(b.data(), &v, sizeof(U));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(U));
    return v;
  }
}

template <typename U>
void put(std::ostream& out, U v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  U v;
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw ParseError(std::string("RTT1: truncated while reading ") + what);
  return to_little(v);
}

template <typename T>
BasicTensor<T> read_payload(std::istream& in, Shape shape) {
  std::vector<T> data(numel(shape));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!in) throw ParseError("RTT1: truncated scalar payload for shape " + to_string(shape));
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : data) v = to_little(v);
  }
  return BasicTensor<T>(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
void write_rtt(std::ostream& out, const BasicTensor<T>& tensor) {
  out.write("RTT1", 4);
  put<std::uint32_t>(out, kRttVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(tensor.raw()),
              static_cast<std::streamsize>(tensor.size() * sizeof(T)));
  } else {
    for (T v : tensor.data()) put<T>(out, v);
  }
  if (!out) throw IoError("RTT1: write failed");
}

AnyTensor read_rtt_any(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "RTT1", 4) != 0) throw ParseError("RTT1: bad magic");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kRttVersion) throw ParseError("RTT1: unsupported version " + std::to_string(version));
  const auto dtype = get<std::uint8_t>(in, "dtype");
  const auto ndim = get<std::uint32_t>(in, "ndim");
  if (ndim > 16) throw ParseError("RTT1: implausible rank " + std::to_string(ndim));
  Shape shape(ndim);
  for (auto& d : shape) {
    d = get<std::uint32_t>(in, "dims");
    if (d == 0) throw ParseError("RTT1: zero-sized dimension");
  }
  switch (dtype) {
    case 0:
      return read_payload<float>(in, std::move(shape));
    case 1:
      return read_payload<double>(in, std::move(shape));
    default:
      throw ParseError("RTT1: unknown dtype code " + std::to_string(dtype));
  }
}

template <typename T>
void save_rtt(const std::filesystem::path& path, const BasicTensor<T>& tensor) {
  write_file_atomic(path, [&](std::ostream& out) { write_rtt(out, tensor); });
}

template <typename T>
BasicTensor<T> load_rtt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_rtt<T>(in);
}

template <typename T>
std::vector<BasicTensor<T>> load_rtt_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<BasicTensor<T>> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_rtt<T>(in));
  return out;
}

template <typename T>
void save_rtt_sequence(const std::filesystem::path& path, const std::vector<BasicTensor<T>>& tensors) {
  write_file_atomic(path, [&](std::ostream& out) {
    for (const auto& t : tensors) write_rtt(out, t);
  });
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    writer(out);
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, [&](std::ostream& out) { out << text; });
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template void write_rtt<float>(std::ostream&, const Tensor&);
template void write_rtt<double>(std::ostream&, const TensorD&);
template void save_rtt<float>(const std::filesystem::path&, const Tensor&);
template void save_rtt<double>(const std::filesystem::path&, const TensorD&);
template Tensor load_rtt<float>(const std::filesystem::path&);
template TensorD load_rtt<double>(const std::filesystem::path&);
template std::vector<Tensor> load_rtt_sequence<float>(const std::filesystem::path&);
template std::vector<TensorD> load_rtt_sequence<double>(const std::filesystem::path&);
template void save_rtt_sequence<float>(const std::filesystem::path&, const std::vector<Tensor>&);
template void save_rtt_sequence<double>(const std::filesystem::path&, const std::vector<TensorD>&);

}  // namespace rthare
