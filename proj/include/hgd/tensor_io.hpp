#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hgd/tensor.hpp"

namespace hgd::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// HGDT layout: "HGDT", u8 dtype (0 = f32, 1 = f64), u8 rank,
// rank x u32 little-endian extents, row-major little-endian payload.
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

template <typename T>
void write_hgdt(std::ostream& out, const Tensor<T>& tensor);
AnyTensor read_hgdt(std::istream& in);

template <typename T>
void save_hgdt(const std::filesystem::path& path, const Tensor<T>& tensor);
AnyTensor load_hgdt(const std::filesystem::path& path);

/// Loads and converts to T when the stored dtype differs.
template <typename T>
Tensor<T> load_hgdt_as(const std::filesystem::path& path);

DType dtype_of(const AnyTensor& t);
const Shape& dims_of(const AnyTensor& t);
const char* dtype_name(DType d);

/// Binary 8-bit PGM (P5) of one (h, w) map, min-max normalised to 0..255.
/// A constant map renders black.
template <typename T>
void write_pgm(const std::filesystem::path& path, std::span<const T> map, std::size_t height,
               std::size_t width);

/// Writes one PGM per channel of a (c, h, w) tensor as `<stem>_<index>.pgm`,
/// index zero-padded to at least three digits. Returns the written paths.
template <typename T>
std::vector<std::filesystem::path> write_channel_pgms(const std::filesystem::path& dir,
                                                      const std::string& stem,
                                                      const Tensor<T>& maps);

/// Checkpoint: one HGDT file per parameter plus manifest.json
/// ({"tensors": [{"name", "file", "dims", "dtype"}]}).
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedParam<T>>& params);

/// Restores values by name; every listed parameter must be present with
/// matching dims.
template <typename T>
void load_checkpoint(const std::filesystem::path& dir, const std::vector<NamedParam<T>>& params);

}  // namespace hgd::io
