#include "hgd/efficientfcn.hpp"

#include <cmath>

namespace hgd::seg {

void ToyBackboneConfig::validate() const {
  for (std::size_t c : channels) {
    if (c == 0) throw ConfigError("ToyBackboneConfig: stage channels must be >= 1");
  }
  if (blocks == 0) throw ConfigError("ToyBackboneConfig: blocks must be >= 1");
}

void SegModelConfig::validate() const {
  backbone.validate();
  hgd.validate();
  if (num_classes < 2 || num_classes > 255) {
    throw ConfigError("SegModelConfig: num_classes must be in [2, 255], got " +
                      std::to_string(num_classes));
  }
}

template <typename T>
BackboneParams<T> BackboneParams<T>::init(const ToyBackboneConfig& config, std::mt19937_64& rng) {
  config.validate();
  const double gain = std::sqrt(2.0);
  BackboneParams p;
  p.stem = Conv3x3<T>::init(3, config.channels[0], 2, gain, rng);
  std::size_t c_in = config.channels[0];
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < config.blocks; ++b) {
      p.stages[s].push_back(Conv3x3<T>::init(c_in, config.channels[s], b == 0 ? 2 : 1, gain, rng));
      c_in = config.channels[s];
    }
  }
  return p;
}

template <typename T>
void BackboneParams<T>::append_to(std::vector<NamedParam<T>>& out, const std::string& prefix) {
  stem.append_to(out, prefix + ".stem");
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < stages[s].size(); ++b) {
      stages[s][b].append_to(out, prefix + ".os" + std::to_string(4 << s) + "_" + std::to_string(b));
    }
  }
}

template <typename T>
std::size_t BackboneParams<T>::parameter_count() const {
  std::size_t total = stem.parameter_count();
  for (const auto& stage : stages) {
    for (const auto& conv : stage) total += conv.parameter_count();
  }
  return total;
}

template <typename T>
Taps<T> backbone_forward(Var<T> image, BackboneParams<T>& params) {
  const auto& d = image.dims();
  if (d.size() != 3 || d[0] != 3) {
    throw DimensionError("backbone_forward: image must be (3,h,w), got " + shape_str(d));
  }
  if (d[1] % 32 != 0 || d[2] % 32 != 0) {
    throw DimensionError("backbone_forward: spatial dims " + std::to_string(d[1]) + "x" +
                         std::to_string(d[2]) + " are not divisible by 32");
  }
  Var<T> x = ops::relu(params.stem(image));
  std::array<Var<T>, 4> out;
  for (std::size_t s = 0; s < 4; ++s) {
    for (auto& conv : params.stages[s]) x = ops::relu(conv(x));
    out[s] = x;
  }
  return {out[1], out[2], out[3]};
}

template <typename T>
SegParams<T> SegParams<T>::init(const SegModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  SegParams p;
  p.backbone = BackboneParams<T>::init(config.backbone, rng);
  p.hgd = decoder::HgdParams<T>::init(config.hgd, config.backbone.tap_channels(), rng);
  p.classifier = Conv1x1<T>::init(config.hgd.output_channels(), config.num_classes, 1.0, rng);
  return p;
}

template <typename T>
std::vector<NamedParam<T>> SegParams<T>::named_parameters() {
  std::vector<NamedParam<T>> out;
  backbone.append_to(out, "backbone");
  for (auto& p : hgd.named_parameters("hgd")) out.push_back(p);
  classifier.append_to(out, "classifier");
  return out;
}

template <typename T>
std::size_t SegParams<T>::parameter_count() const {
  return backbone.parameter_count() + hgd.parameter_count() + classifier.parameter_count();
}

template <typename T>
SegOutput<T> segment_forward(Var<T> image, SegParams<T>& params, const SegModelConfig& config) {
  SegOutput<T> out;
  out.taps = backbone_forward(image, params.backbone);
  out.hgd = decoder::hgd_forward(out.taps.e8, out.taps.e16, out.taps.e32, params.hgd, config.hgd);
  Var<T> coarse = params.classifier(out.hgd.output);
  out.logits = ops::bilinear_resize(coarse, image.dim(1), image.dim(2));
  return out;
}

#define HGD_INSTANTIATE_SEG(T)                                     \
  template struct BackboneParams<T>;                               \
  template struct SegParams<T>;                                    \
  template Taps<T> backbone_forward(Var<T>, BackboneParams<T>&);   \
  template SegOutput<T> segment_forward(Var<T>, SegParams<T>&, const SegModelConfig&);

HGD_INSTANTIATE_SEG(float)
HGD_INSTANTIATE_SEG(double)

}  // namespace hgd::seg
