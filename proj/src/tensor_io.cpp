#include "hgd/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace hgd::io {
namespace {

constexpr char kMagic[4] = {'H', 'G', 'D', 'T'};

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError("HGDT: truncated stream");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
constexpr DType dtype_for() {
  return sizeof(T) == 4 ? DType::kF32 : DType::kF64;
}

template <typename T>
Tensor<T> read_payload(std::istream& in, Shape dims) {
  Tensor<T> t(std::move(dims));
  for (T& v : t.data()) v = std::bit_cast<T>(get_le<Bits<T>>(in));
  return t;
}

std::string param_file_name(const std::string& name) {
  std::string out = name;
  std::replace(out.begin(), out.end(), '/', '.');
  return out + ".hgdt";
}

}  // namespace

const char* dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

DType dtype_of(const AnyTensor& t) {
  return std::holds_alternative<Tensor<float>>(t) ? DType::kF32 : DType::kF64;
}

const Shape& dims_of(const AnyTensor& t) {
  return std::visit([](const auto& x) -> const Shape& { return x.dims(); }, t);
}

template <typename T>
void write_hgdt(std::ostream& out, const Tensor<T>& tensor) {
  if (tensor.rank() > 255) throw FormatError("HGDT: rank exceeds 255");
  out.write(kMagic, 4);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_for<T>()));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
  for (std::size_t d : tensor.dims()) {
    if (d > 0xFFFFFFFFu) throw FormatError("HGDT: extent exceeds 32 bits");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (T v : tensor.data()) put_le<Bits<T>>(out, std::bit_cast<Bits<T>>(v));
}

AnyTensor read_hgdt(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw FormatError("HGDT: bad magic");
  }
  const auto dtype = get_le<std::uint8_t>(in);
  const auto rank = get_le<std::uint8_t>(in);
  Shape dims(rank);
  for (auto& d : dims) d = get_le<std::uint32_t>(in);
  switch (dtype) {
    case 0:
      return read_payload<float>(in, std::move(dims));
    case 1:
      return read_payload<double>(in, std::move(dims));
    default:
      throw FormatError("HGDT: unknown dtype byte " + std::to_string(dtype));
  }
}

template <typename T>
void save_hgdt(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_hgdt(out, tensor);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

AnyTensor load_hgdt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_hgdt(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T>
Tensor<T> load_hgdt_as(const std::filesystem::path& path) {
  return std::visit([](auto&& t) { return t.template cast<T>(); }, load_hgdt(path));
}

template <typename T>
void write_pgm(const std::filesystem::path& path, std::span<const T> map, std::size_t height,
               std::size_t width) {
  if (map.size() != height * width) {
    throw DimensionError("write_pgm: map length does not match " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const double range = map.empty() ? 0.0 : static_cast<double>(*hi) - static_cast<double>(*lo);
  for (T v : map) {
    double level = range > 0 ? (static_cast<double>(v) - static_cast<double>(*lo)) / range : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(level * 255.0))));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
std::vector<std::filesystem::path> write_channel_pgms(const std::filesystem::path& dir,
                                                      const std::string& stem,
                                                      const Tensor<T>& maps) {
  if (maps.rank() != 3) throw DimensionError("write_channel_pgms: expected (c,h,w)");
  const std::size_t h = maps.dim(1), w = maps.dim(2);
  std::vector<std::filesystem::path> written;
  for (std::size_t c = 0; c < maps.dim(0); ++c) {
    std::ostringstream name;
    name << stem << '_' << std::setw(3) << std::setfill('0') << c << ".pgm";
    auto path = dir / name.str();
    write_pgm(path, maps.data().subspan(c * h * w, h * w), h, w);
    written.push_back(std::move(path));
  }
  return written;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedParam<T>>& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& p : params) {
    const std::string file = param_file_name(p.name);
    save_hgdt(dir / file, *p.tensor);
    manifest["tensors"].push_back({{"name", p.name},
                                   {"file", file},
                                   {"dims", p.tensor->dims()},
                                   {"dtype", dtype_name(dtype_for<T>())}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

template <typename T>
void load_checkpoint(const std::filesystem::path& dir, const std::vector<NamedParam<T>>& params) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open " + manifest_path.string());
  const auto manifest = nlohmann::json::parse(in);
  for (const auto& p : params) {
    const auto it = std::find_if(manifest["tensors"].begin(), manifest["tensors"].end(),
                                 [&](const auto& e) { return e["name"] == p.name; });
    if (it == manifest["tensors"].end()) {
      throw FormatError(manifest_path.string() + ": missing tensor '" + p.name + "'");
    }
    Tensor<T> loaded = load_hgdt_as<T>(dir / (*it)["file"].template get<std::string>());
    if (loaded.dims() != p.tensor->dims()) {
      throw DimensionError("checkpoint tensor '" + p.name + "' has dims " +
                           shape_str(loaded.dims()) + ", expected " + shape_str(p.tensor->dims()));
    }
    std::copy(loaded.data().begin(), loaded.data().end(), p.tensor->data().begin());
  }
}

#define HGD_INSTANTIATE_IO(T)                                                                  \
  template void write_hgdt(std::ostream&, const Tensor<T>&);                                   \
  template void save_hgdt(const std::filesystem::path&, const Tensor<T>&);                     \
  template Tensor<T> load_hgdt_as(const std::filesystem::path&);                               \
  template void write_pgm(const std::filesystem::path&, std::span<const T>, std::size_t,       \
                          std::size_t);                                                        \
  template std::vector<std::filesystem::path> write_channel_pgms(                              \
      const std::filesystem::path&, const std::string&, const Tensor<T>&);                     \
  template void save_checkpoint(const std::filesystem::path&, const std::vector<NamedParam<T>>&); \
  template void load_checkpoint(const std::filesystem::path&, const std::vector<NamedParam<T>>&);

HGD_INSTANTIATE_IO(float)
HGD_INSTANTIATE_IO(double)

}  // namespace hgd::io
