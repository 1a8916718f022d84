#include "hgd/fpn.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "hgd/tensor_io.hpp"

namespace hgd::fpn {
namespace {

// The decoded branch is quadratic in its input (codewords times assembly
// coefficients), so stacked stages diverge unless it starts out small.
constexpr double kProjectionGain = 0.01;

template <typename T>
Var<T> down_to(Var<T> x, const Shape& target) {
  while (x.dim(1) > target[1] || x.dim(2) > target[2]) x = ops::maxpool2x2(x);
  if (x.dims() != target) {
    throw std::logic_error("hgd-fpn: max-pooled grid " + shape_str(x.dims()) +
                           " does not match target " + shape_str(target));
  }
  return x;
}

template <typename T>
Var<T> up_to(Var<T> x, const Shape& target) {
  return ops::nearest_resize(x, target[1], target[2]);
}

// out_i = count * v_i / (sum_j v_j + eps)
template <typename T>
Var<T> normalize_to_count(Var<T> v) {
  constexpr T eps = T(1e-4);
  const Tensor<T>& x = v.value();
  const std::size_t k = x.size();
  T total = eps;
  for (T e : x.data()) total += e;
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < k; ++i) out[i] = static_cast<T>(k) * x[i] / total;
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    const Tensor<T>& xv = g.value(v.id());
    T dot = 0;
    for (std::size_t i = 0; i < k; ++i) dot += dy[i] * xv[i];
    auto dx = g.grad(v.id());
    for (std::size_t i = 0; i < k; ++i) {
      dx[i] += static_cast<T>(k) * (dy[i] / total - dot / (total * total));
    }
  };
  return v.graph().record("normalize_to_count", std::move(out), {v.id()}, backward);
}

template <typename T>
Var<T> activated(Graph<T>& g, Tensor<T>& raw, bool normalize) {
  Var<T> a = ops::relu(g.param(raw));
  return normalize ? normalize_to_count(a) : a;
}

}  // namespace

void validate_pyramid_dims(const std::array<Shape, kLevels>& dims) {
  for (std::size_t l = 0; l < kLevels; ++l) {
    if (dims[l].size() != 3) {
      throw ConfigError(std::string("pyramid level ") + kLevelNames[l] + " must be (c,h,w), got " +
                        shape_str(dims[l]));
    }
    if (dims[l][0] != dims[0][0]) {
      throw ConfigError(std::string("pyramid level ") + kLevelNames[l] + " has " +
                        std::to_string(dims[l][0]) + " channels, expected " +
                        std::to_string(dims[0][0]));
    }
    if (l > 0 && (dims[l][1] != (dims[l - 1][1] + 1) / 2 || dims[l][2] != (dims[l - 1][2] + 1) / 2)) {
      throw ConfigError(std::string("pyramid level ") + kLevelNames[l] + " " + shape_str(dims[l]) +
                        " is not the half-size of " + kLevelNames[l - 1] + " " +
                        shape_str(dims[l - 1]));
    }
  }
}

std::array<Shape, kLevels> pyramid_dims(std::size_t channels, std::size_t h, std::size_t w) {
  std::array<Shape, kLevels> dims;
  for (std::size_t l = 0; l < kLevels; ++l) {
    dims[l] = {channels, h, w};
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return dims;
}

void FpnConfig::validate() const {
  if (n_codewords == 0 || codeword_dim == 0 || channels == 0) {
    throw ConfigError("FpnConfig: channel counts must be >= 1");
  }
  if (k_recurrence == 0) throw ConfigError("FpnConfig: k_recurrence must be >= 1");
}

template <typename T>
FusionCoeffs<T> activate_coeffs(const FusionCoeffs<T>& raw) {
  auto relu = [](Tensor<T> t) {
    for (T& v : t.data()) v = v > T{0} ? v : T{0};
    return t;
  };
  return {relu(raw.a), relu(raw.r), relu(raw.s), relu(raw.t)};
}

template <typename T>
StageParams<T> StageParams<T>::init(const FpnConfig& config, std::mt19937_64& rng) {
  const std::size_t ch = config.channels;
  StageParams p;
  p.bases = Conv1x1<T>::init(ch, config.codeword_dim, 1.0, rng);
  p.weighting = Conv1x1<T>::init(ch, config.n_codewords, 1.0, rng);
  for (auto& b : p.branches) {
    b.guidance = Conv1x1<T>::init(ch, ch, 1.0, rng);
    b.assembly = Conv1x1<T>::init(ch, config.n_codewords, 1.0, rng);
    b.projection = Conv1x1<T>::init(config.codeword_dim + ch, ch, kProjectionGain, rng);
  }
  return p;
}

template <typename T>
void StageParams<T>::append_to(std::vector<NamedParam<T>>& out, const std::string& prefix) {
  bases.append_to(out, prefix + ".bases");
  weighting.append_to(out, prefix + ".weighting");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const std::string name = prefix + ".p" + std::to_string(i + 4);
    branches[i].guidance.append_to(out, name + ".guidance");
    branches[i].assembly.append_to(out, name + ".assembly");
    branches[i].projection.append_to(out, name + ".projection");
  }
  out.push_back({prefix + ".coeff_a", &coeffs.a});
  out.push_back({prefix + ".coeff_r", &coeffs.r});
  out.push_back({prefix + ".coeff_s", &coeffs.s});
  out.push_back({prefix + ".coeff_t", &coeffs.t});
}

template <typename T>
std::size_t StageParams<T>::parameter_count() const {
  std::size_t total = bases.parameter_count() + weighting.parameter_count();
  for (const auto& b : branches) {
    total += b.guidance.parameter_count() + b.assembly.parameter_count() +
             b.projection.parameter_count();
  }
  return total + coeffs.a.size() + coeffs.r.size() + coeffs.s.size() + coeffs.t.size();
}

template <typename T>
FpnParams<T> FpnParams<T>::init(const FpnConfig& config, std::mt19937_64& rng) {
  config.validate();
  FpnParams p;
  const std::size_t count = config.share_params ? 1 : config.k_recurrence;
  for (std::size_t i = 0; i < count; ++i) p.stages.push_back(StageParams<T>::init(config, rng));
  return p;
}

template <typename T>
std::vector<NamedParam<T>> FpnParams<T>::named_parameters(const std::string& prefix) {
  std::vector<NamedParam<T>> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].append_to(out, stages.size() == 1 ? prefix : prefix + ".stage" + std::to_string(i));
  }
  return out;
}

template <typename T>
std::size_t FpnParams<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& s : stages) total += s.parameter_count();
  return total;
}

template <typename T>
Var<T> fuse_code_map(const PyramidVars<T>& levels, Var<T> coeffs) {
  const Shape& grid = levels[3].dims();
  const std::array<Var<T>, 5> maps = {up_to(levels[4], grid), levels[3], down_to(levels[2], grid),
                                      down_to(levels[1], grid), down_to(levels[0], grid)};
  return ops::weighted_sum<T>(maps, coeffs);
}

template <typename T>
std::array<Var<T>, 3> fuse_scale_maps(const PyramidVars<T>& levels, Var<T> r, Var<T> s,
                                      Var<T> t) {
  std::array<Var<T>, 3> out;
  const std::array<Var<T>, 3> coeffs = {r, s, t};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t l = i + 1;  // P4, P5, P6
    const Shape& grid = levels[l].dims();
    const std::array<Var<T>, 3> maps = {up_to(levels[l + 1], grid), levels[l],
                                        down_to(levels[l - 1], grid)};
    out[i] = ops::weighted_sum<T>(maps, coeffs[i]);
  }
  return out;
}

template <typename T>
StageOutput<T> fpn_decode_once(const PyramidVars<T>& levels, StageParams<T>& params,
                               const FpnConfig& config) {
  std::array<Shape, kLevels> dims;
  for (std::size_t l = 0; l < kLevels; ++l) dims[l] = levels[l].dims();
  validate_pyramid_dims(dims);
  if (dims[0][0] != config.channels) {
    throw ConfigError("fpn_decode_once: pyramid has " + std::to_string(dims[0][0]) +
                      " channels, config expects " + std::to_string(config.channels));
  }

  Graph<T>& g = levels[0].graph();
  StageOutput<T> out;
  out.activated = {activated(g, params.coeffs.a, config.normalize_fusion),
                   activated(g, params.coeffs.r, config.normalize_fusion),
                   activated(g, params.coeffs.s, config.normalize_fusion),
                   activated(g, params.coeffs.t, config.normalize_fusion)};

  Var<T> code_map = fuse_code_map(levels, out.activated[0]);
  out.codewords = decoder::generate_codewords(code_map, params.bases, params.weighting);

  const auto scale_maps =
      fuse_scale_maps(levels, out.activated[1], out.activated[2], out.activated[3]);
  for (std::size_t i = 0; i < 3; ++i) {
    auto& branch = params.branches[i];
    // Guidance width (channels) differs from codeword_dim, so no codeword transfer here.
    const auto guidance = decoder::build_guidance(scale_maps[i], out.codewords.bases,
                                                  branch.guidance, false);
    out.assemblies[i] = decoder::assemble(guidance.guided, out.codewords.matrix, branch.assembly);
    const std::array<Var<T>, 2> parts = {out.assemblies[i].features, guidance.raw};
    Var<T> decoded = branch.projection(ops::concat_channels<T>(parts));
    if (decoded.dims() != dims[i + 1]) {
      throw ConfigError("fpn_decode_once: decoded " + shape_str(decoded.dims()) +
                        " cannot be added to " + kLevelNames[i + 1] + " " +
                        shape_str(dims[i + 1]));
    }
    out.decoded[i + 1] = decoded;
  }
  out.decoded[0] = up_to(out.decoded[1], dims[0]);
  out.decoded[4] = down_to(out.decoded[3], dims[4]);
  for (std::size_t l = 0; l < kLevels; ++l) out.outputs[l] = ops::add(levels[l], out.decoded[l]);
  return out;
}

template <typename T>
std::vector<StageOutput<T>> fpn_decode(const PyramidVars<T>& levels, FpnParams<T>& params,
                                       const FpnConfig& config) {
  config.validate();
  const std::size_t expected = config.share_params ? 1 : config.k_recurrence;
  if (params.stages.size() != expected) {
    throw ConfigError("fpn_decode: expected " + std::to_string(expected) +
                      " parameter records, got " + std::to_string(params.stages.size()));
  }
  std::vector<StageOutput<T>> stages;
  PyramidVars<T> current = levels;
  for (std::size_t k = 0; k < config.k_recurrence; ++k) {
    stages.push_back(fpn_decode_once(current, params.stage(k), config));
    current = stages.back().outputs;
  }
  return stages;
}

template <typename T>
void save_pyramid(const std::filesystem::path& dir, const Pyramid<T>& pyramid,
                  std::size_t first_stride) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["levels"] = nlohmann::json::array();
  for (std::size_t l = 0; l < kLevels; ++l) {
    const std::string file = std::string(kLevelNames[l]) + ".hgdt";
    io::save_hgdt(dir / file, pyramid[l]);
    manifest["levels"].push_back({{"name", kLevelNames[l]},
                                  {"file", file},
                                  {"stride", first_stride << l},
                                  {"dims", pyramid[l].dims()},
                                  {"dtype", sizeof(T) == 4 ? "f32" : "f64"}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

template <typename T>
Pyramid<T> load_pyramid(const std::filesystem::path& dir, std::size_t* first_stride) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open " + manifest_path.string());
  const auto manifest = nlohmann::json::parse(in);
  const auto& levels = manifest.at("levels");
  if (levels.size() != kLevels) {
    throw io::FormatError(manifest_path.string() + ": expected 5 levels");
  }
  Pyramid<T> out;
  std::array<Shape, kLevels> dims;
  for (std::size_t l = 0; l < kLevels; ++l) {
    out[l] = io::load_hgdt_as<T>(dir / levels[l].at("file").template get<std::string>());
    dims[l] = out[l].dims();
  }
  validate_pyramid_dims(dims);
  if (first_stride) *first_stride = levels[0].at("stride").template get<std::size_t>();
  return out;
}

#define HGD_INSTANTIATE_FPN(T)                                                                  \
  template FusionCoeffs<T> activate_coeffs(const FusionCoeffs<T>&);                             \
  template struct StageParams<T>;                                                               \
  template struct FpnParams<T>;                                                                 \
  template Var<T> fuse_code_map(const PyramidVars<T>&, Var<T>);                                 \
  template std::array<Var<T>, 3> fuse_scale_maps(const PyramidVars<T>&, Var<T>, Var<T>, Var<T>); \
  template StageOutput<T> fpn_decode_once(const PyramidVars<T>&, StageParams<T>&,               \
                                          const FpnConfig&);                                    \
  template std::vector<StageOutput<T>> fpn_decode(const PyramidVars<T>&, FpnParams<T>&,         \
                                                  const FpnConfig&);                            \
  template void save_pyramid(const std::filesystem::path&, const Pyramid<T>&, std::size_t);     \
  template Pyramid<T> load_pyramid(const std::filesystem::path&, std::size_t*);

HGD_INSTANTIATE_FPN(float)
HGD_INSTANTIATE_FPN(double)

}  // namespace hgd::fpn
