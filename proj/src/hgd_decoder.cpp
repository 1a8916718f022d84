#include "hgd/hgd_decoder.hpp"

#include <algorithm>
#include <string>

namespace hgd::decoder {
namespace {

std::size_t tap_index(int stride) {
  const auto it = std::find(kStrides.begin(), kStrides.end(), stride);
  return static_cast<std::size_t>(it - kStrides.begin());
}

void validate_scales(const std::vector<int>& scales, const char* what) {
  if (scales.empty()) throw ConfigError(std::string(what) + ": at least one scale required");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (tap_index(scales[i]) == kStrides.size()) {
      throw ConfigError(std::string(what) + ": unknown output stride " + std::to_string(scales[i]));
    }
    if (std::count(scales.begin(), scales.end(), scales[i]) > 1) {
      throw ConfigError(std::string(what) + ": duplicate output stride " +
                        std::to_string(scales[i]));
    }
  }
}

}  // namespace

void HgdConfig::validate() const {
  if (n_codewords == 0 || codeword_dim == 0 || compressed_channels == 0 ||
      guidance_channels == 0) {
    throw ConfigError("HgdConfig: all channel counts must be >= 1");
  }
  validate_scales(codeword_scales, "codeword_scales");
  validate_scales(assembly_scales, "assembly_scales");
  if (transfer_enabled && guidance_channels != codeword_dim) {
    throw ConfigError("HgdConfig: codeword transfer needs guidance_channels (" +
                      std::to_string(guidance_channels) + ") == codeword_dim (" +
                      std::to_string(codeword_dim) + ")");
  }
}

template <typename T>
HgdParams<T> HgdParams<T>::init(const HgdConfig& config,
                                const std::array<std::size_t, 3>& in_channels,
                                std::mt19937_64& rng) {
  config.validate();
  HgdParams p;
  for (std::size_t s = 0; s < 3; ++s) {
    p.compress[s] = Conv1x1<T>::init(in_channels[s], config.compressed_channels, 1.0, rng);
  }
  p.bases = Conv1x1<T>::init(config.codeword_input_channels(), config.codeword_dim, 1.0, rng);
  p.weighting = Conv1x1<T>::init(config.codeword_input_channels(), config.n_codewords, 1.0, rng);
  p.guidance =
      Conv1x1<T>::init(config.assembly_input_channels(), config.guidance_channels, 1.0, rng);
  p.assembly = Conv1x1<T>::init(config.guidance_channels, config.n_codewords, 1.0, rng);
  return p;
}

template <typename T>
std::vector<NamedParam<T>> HgdParams<T>::named_parameters(const std::string& prefix) {
  std::vector<NamedParam<T>> out;
  for (std::size_t s = 0; s < 3; ++s) {
    compress[s].append_to(out, prefix + ".compress_os" + std::to_string(kStrides[s]));
  }
  bases.append_to(out, prefix + ".bases");
  weighting.append_to(out, prefix + ".weighting");
  guidance.append_to(out, prefix + ".guidance");
  assembly.append_to(out, prefix + ".assembly");
  return out;
}

template <typename T>
std::size_t HgdParams<T>::parameter_count() const {
  std::size_t total = bases.parameter_count() + weighting.parameter_count() +
                      guidance.parameter_count() + assembly.parameter_count();
  for (const auto& c : compress) total += c.parameter_count();
  return total;
}

template <typename T>
FusedMaps<T> fuse_multiscale(Var<T> e8, Var<T> e16, Var<T> e32, HgdParams<T>& params,
                             const HgdConfig& config) {
  const std::array<Var<T>, 3> taps = {e8, e16, e32};
  for (const auto& t : taps) {
    if (t.value().rank() != 3) throw DimensionError("fuse_multiscale: taps must be (c,h,w)");
  }
  for (std::size_t s = 0; s + 1 < 3; ++s) {
    const auto& hi = taps[s].dims();
    const auto& lo = taps[s + 1].dims();
    if (hi[1] != 2 * lo[1] || hi[2] != 2 * lo[2]) {
      throw ConfigError("fuse_multiscale: OS" + std::to_string(kStrides[s]) + " tap " +
                        shape_str(hi) + " is not exactly 2x the OS" +
                        std::to_string(kStrides[s + 1]) + " tap " + shape_str(lo));
    }
  }

  std::array<Var<T>, 3> compressed;
  for (std::size_t s = 0; s < 3; ++s) compressed[s] = params.compress[s](taps[s]);

  auto gather = [&](const std::vector<int>& scales, std::size_t target) {
    const std::size_t h = compressed[target].dim(1), w = compressed[target].dim(2);
    std::vector<Var<T>> parts;
    for (int stride : kStrides) {
      if (std::find(scales.begin(), scales.end(), stride) == scales.end()) continue;
      const std::size_t s = tap_index(stride);
      parts.push_back(s == target ? compressed[s] : ops::bilinear_resize(compressed[s], h, w));
    }
    return ops::concat_channels<T>(parts);
  };
  return {gather(config.assembly_scales, 0), gather(config.codeword_scales, 2)};
}

template <typename T>
Codewords<T> generate_codewords(Var<T> fused, Conv1x1<T>& bases, Conv1x1<T>& weighting) {
  Var<T> b = bases(fused);
  Var<T> a = weighting(fused);
  Var<T> weights = ops::softmax_spatial(a);
  const std::size_t d = b.dim(0), n = a.dim(0), hw = b.dim(1) * b.dim(2);
  // (n, hw) x (hw, d) gives one codeword per row; store codewords as columns.
  Var<T> rows = ops::matmul(ops::reshape(weights, {n, hw}),
                            ops::transpose(ops::reshape(b, {d, hw})));
  return {ops::transpose(rows), b, a, weights};
}

template <typename T>
Guidance<T> build_guidance(Var<T> fused, Var<T> bases, Conv1x1<T>& guidance,
                           bool transfer_enabled) {
  Var<T> g = guidance(fused);
  if (!transfer_enabled) return {g, g};
  if (g.dim(0) != bases.dim(0)) {
    throw ConfigError("build_guidance: transfer needs guidance channels (" +
                      std::to_string(g.dim(0)) + ") == codeword_dim (" +
                      std::to_string(bases.dim(0)) + ")");
  }
  return {g, ops::broadcast_add_channel(g, ops::global_avg_spatial(bases))};
}

template <typename T>
Assembly<T> assemble(Var<T> guided, Var<T> codewords, Conv1x1<T>& assembly) {
  Var<T> w = assembly(guided);
  const std::size_t n = w.dim(0), h = w.dim(1), wd = w.dim(2);
  if (codewords.value().rank() != 2 || codewords.dim(1) != n) {
    throw DimensionError("assemble: codeword matrix " + shape_str(codewords.dims()) +
                         " does not have " + std::to_string(n) + " columns");
  }
  const std::size_t d = codewords.dim(0);
  Var<T> flat = ops::matmul(codewords, ops::reshape(w, {n, h * wd}));
  return {w, ops::reshape(flat, {d, h, wd})};
}

template <typename T>
HgdOutput<T> hgd_forward(Var<T> e8, Var<T> e16, Var<T> e32, HgdParams<T>& params,
                         const HgdConfig& config) {
  config.validate();
  HgdOutput<T> out;
  out.fused = fuse_multiscale(e8, e16, e32, params, config);
  out.codewords = generate_codewords(out.fused.m32, params.bases, params.weighting);
  out.guidance = build_guidance(out.fused.m8, out.codewords.bases, params.guidance,
                                config.transfer_enabled);
  out.assembly = assemble(out.guidance.guided, out.codewords.matrix, params.assembly);
  const std::array<Var<T>, 2> parts = {out.assembly.features, out.guidance.raw};
  out.output = ops::concat_channels<T>(parts);
  return out;
}

#define HGD_INSTANTIATE_DECODER(T)                                                             \
  template struct HgdParams<T>;                                                                \
  template FusedMaps<T> fuse_multiscale(Var<T>, Var<T>, Var<T>, HgdParams<T>&,                 \
                                        const HgdConfig&);                                     \
  template Codewords<T> generate_codewords(Var<T>, Conv1x1<T>&, Conv1x1<T>&);                  \
  template Guidance<T> build_guidance(Var<T>, Var<T>, Conv1x1<T>&, bool);                      \
  template Assembly<T> assemble(Var<T>, Var<T>, Conv1x1<T>&);                                  \
  template HgdOutput<T> hgd_forward(Var<T>, Var<T>, Var<T>, HgdParams<T>&, const HgdConfig&);

HGD_INSTANTIATE_DECODER(float)
HGD_INSTANTIATE_DECODER(double)

}  // namespace hgd::decoder
