#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hgd/hgd_decoder.hpp"

// HGD-FPN: one shared codeword set per stage built from all five pyramid
// levels, three independent assembly branches for P4-P6, shortcuts for P3/P7
// and a residual merge. Stages can be stacked k times with shared parameters.
namespace hgd::fpn {

inline constexpr std::size_t kLevels = 5;  // P3..P7
inline constexpr std::array<const char*, kLevels> kLevelNames = {"P3", "P4", "P5", "P6", "P7"};

template <typename T>
using Pyramid = std::array<Tensor<T>, kLevels>;

template <typename T>
using PyramidVars = std::array<Var<T>, kLevels>;

/// Five rank-3 levels, one channel count, each level the ceil-half of the
/// previous one. Throws ConfigError otherwise.
void validate_pyramid_dims(const std::array<Shape, kLevels>& dims);

/// Dims of a pyramid whose finest level is (channels, h, w).
std::array<Shape, kLevels> pyramid_dims(std::size_t channels, std::size_t h, std::size_t w);

struct FpnConfig {
  std::size_t n_codewords = 128;
  std::size_t codeword_dim = 512;
  std::size_t k_recurrence = 4;
  bool share_params = true;
  /// Pyramid channels; also the guidance width of every assembly branch.
  std::size_t channels = 256;
  /// Rescale activated coefficients to sum to their count (off: plain ReLU).
  bool normalize_fusion = false;

  void validate() const;
};

/// Raw (pre-ReLU) fusion scalars of one stage.
template <typename T>
struct FusionCoeffs {
  Tensor<T> a{Shape{5}, T(1)};  // code map: up(P7), P6, down(P5), down(P4), down(P3)
  Tensor<T> r{Shape{3}, T(1)};  // m4: up(P5), P4, down(P3)
  Tensor<T> s{Shape{3}, T(1)};  // m5: up(P6), P5, down(P4)
  Tensor<T> t{Shape{3}, T(1)};  // m6: up(P7), P6, down(P5)
};

/// Element-wise ReLU of every coefficient group (no renormalisation).
template <typename T>
FusionCoeffs<T> activate_coeffs(const FusionCoeffs<T>& raw);

template <typename T>
struct ScaleBranch {
  Conv1x1<T> guidance;    // channels -> channels
  Conv1x1<T> assembly;    // channels -> n_codewords
  Conv1x1<T> projection;  // codeword_dim + channels -> channels
};

template <typename T>
struct StageParams {
  Conv1x1<T> bases;      // channels -> codeword_dim
  Conv1x1<T> weighting;  // channels -> n_codewords
  std::array<ScaleBranch<T>, 3> branches;  // P4, P5, P6
  FusionCoeffs<T> coeffs;

  static StageParams init(const FpnConfig& config, std::mt19937_64& rng);
  void append_to(std::vector<NamedParam<T>>& out, const std::string& prefix);
  std::size_t parameter_count() const;
};

template <typename T>
struct FpnParams {
  std::vector<StageParams<T>> stages;  // 1 when shared, k otherwise

  static FpnParams init(const FpnConfig& config, std::mt19937_64& rng);
  StageParams<T>& stage(std::size_t index) { return stages[stages.size() == 1 ? 0 : index]; }
  std::vector<NamedParam<T>> named_parameters(const std::string& prefix = "fpn");
  std::size_t parameter_count() const;
};

/// m_code = a0 up(P7) + a1 P6 + a2 down(P5) + a3 down(P4) + a4 down(P3) on P6's
/// grid; `coeffs` holds the already activated a.
template <typename T>
Var<T> fuse_code_map(const PyramidVars<T>& levels, Var<T> coeffs);

/// (m4, m5, m6), each fusing a level with its two neighbours.
template <typename T>
std::array<Var<T>, 3> fuse_scale_maps(const PyramidVars<T>& levels, Var<T> r, Var<T> s, Var<T> t);

template <typename T>
struct StageOutput {
  PyramidVars<T> outputs;              // P3*..P7*
  PyramidVars<T> decoded;              // P3^..P7^ (before the residual)
  decoder::Codewords<T> codewords;     // one set shared by all branches
  std::array<decoder::Assembly<T>, 3> assemblies;
  std::array<Var<T>, 4> activated;     // a, r, s, t
};

template <typename T>
StageOutput<T> fpn_decode_once(const PyramidVars<T>& levels, StageParams<T>& params,
                               const FpnConfig& config);

/// Applies k stages; returns the output of every stage (last = final pyramid).
template <typename T>
std::vector<StageOutput<T>> fpn_decode(const PyramidVars<T>& levels, FpnParams<T>& params,
                                       const FpnConfig& config);

/// Five HGDT files plus manifest.json recording names, files, dims and
/// output strides (first_stride, doubling per level).
template <typename T>
void save_pyramid(const std::filesystem::path& dir, const Pyramid<T>& pyramid,
                  std::size_t first_stride);

template <typename T>
Pyramid<T> load_pyramid(const std::filesystem::path& dir, std::size_t* first_stride = nullptr);

}  // namespace hgd::fpn
