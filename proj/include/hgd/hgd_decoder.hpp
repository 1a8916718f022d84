#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "hgd/layers.hpp"

// Holistically-guided decoding: holistic codewords are softmax-weighted
// spatial averages of a low-resolution bases map, and the high-resolution
// output is a per-pixel linear assembly of those codewords whose coefficients
// are predicted from a fused high-resolution guidance map.
namespace hgd::decoder {

/// Output strides of the three encoder taps, in tap order.
inline constexpr std::array<int, 3> kStrides = {8, 16, 32};

struct HgdConfig {
  std::size_t n_codewords = 256;
  std::size_t codeword_dim = 1024;
  std::size_t compressed_channels = 512;
  std::size_t guidance_channels = 1024;
  /// Adds the spatial mean of the bases map to the guidance map.
  bool transfer_enabled = true;
  /// Taps concatenated into the OS=32 map that feeds the codeword branch.
  std::vector<int> codeword_scales = {8, 16, 32};
  /// Taps concatenated into the OS=8 map that feeds the guidance branch.
  std::vector<int> assembly_scales = {8, 16, 32};

  /// Throws ConfigError on zero counts, unknown or duplicate scales, or a
  /// codeword-transfer request whose channel counts do not line up.
  void validate() const;

  std::size_t codeword_input_channels() const {
    return codeword_scales.size() * compressed_channels;
  }
  std::size_t assembly_input_channels() const {
    return assembly_scales.size() * compressed_channels;
  }
  /// Channels of the decoder output: assembled features followed by guidance.
  std::size_t output_channels() const { return codeword_dim + guidance_channels; }
};

template <typename T>
struct HgdParams {
  std::array<Conv1x1<T>, 3> compress;  // one per tap, OS 8/16/32
  Conv1x1<T> bases;                    // -> codeword_dim
  Conv1x1<T> weighting;                // -> n_codewords
  Conv1x1<T> guidance;                 // -> guidance_channels
  Conv1x1<T> assembly;                 // guidance_channels -> n_codewords

  /// Fan-in uniform kernels, zero biases.
  static HgdParams init(const HgdConfig& config, const std::array<std::size_t, 3>& in_channels,
                        std::mt19937_64& rng);

  std::vector<NamedParam<T>> named_parameters(const std::string& prefix = "hgd");
  std::size_t parameter_count() const;
};

template <typename T>
struct FusedMaps {
  Var<T> m8;   // assembly-side fusion at the OS=8 grid
  Var<T> m32;  // codeword-side fusion at the OS=32 grid
};

template <typename T>
struct Codewords {
  Var<T> matrix;   // (codeword_dim, n): column i is codeword i
  Var<T> bases;    // B, (codeword_dim, h, w)
  Var<T> logits;   // A, (n, h, w)
  Var<T> weights;  // softmax-normalised A, (n, h, w)
};

template <typename T>
struct Guidance {
  Var<T> raw;     // G
  Var<T> guided;  // G plus the broadcast bases mean, or G itself
};

template <typename T>
struct Assembly {
  Var<T> coefficients;  // W, (n, h, w), unnormalised
  Var<T> features;      // (codeword_dim, h, w)
};

template <typename T>
struct HgdOutput {
  FusedMaps<T> fused;
  Codewords<T> codewords;
  Guidance<T> guidance;
  Assembly<T> assembly;
  Var<T> output;  // concat(assembled features, G)
};

/// Compresses each tap, then builds the OS=32 and OS=8 fused maps with
/// bilinear resampling. Consecutive taps must be in an exact 2x ratio.
template <typename T>
FusedMaps<T> fuse_multiscale(Var<T> e8, Var<T> e16, Var<T> e32, HgdParams<T>& params,
                             const HgdConfig& config);

/// c_i = sum_{p,q} softmax(A_i)(p,q) * B(p,q).
template <typename T>
Codewords<T> generate_codewords(Var<T> fused, Conv1x1<T>& bases, Conv1x1<T>& weighting);

template <typename T>
Guidance<T> build_guidance(Var<T> fused, Var<T> bases, Conv1x1<T>& guidance, bool transfer_enabled);

/// features(:, x, y) = sum_i W_i(x, y) * c_i.
template <typename T>
Assembly<T> assemble(Var<T> guided, Var<T> codewords, Conv1x1<T>& assembly);

template <typename T>
HgdOutput<T> hgd_forward(Var<T> e8, Var<T> e16, Var<T> e32, HgdParams<T>& params,
                         const HgdConfig& config);

}  // namespace hgd::decoder
