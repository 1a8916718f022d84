#include "hgd/suites.hpp"

#include <random>

namespace hgd::suites {
namespace {

Tensor<double> uniform(Shape dims, double lo, double hi, std::mt19937_64& rng) {
  Tensor<double> t(std::move(dims));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void randomize_biases(std::vector<NamedParam<double>>& params, std::mt19937_64& rng) {
  // Zero biases would leave some ReLU inputs symmetric; small random ones are generic.
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (auto& p : params) {
    if (p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0) {
      for (double& v : p.tensor->data()) v = dist(rng);
    }
  }
}

}  // namespace

seg::SegModelConfig tiny_seg_model() {
  seg::SegModelConfig m;
  m.backbone.channels = {4, 4, 6, 6};
  m.hgd.n_codewords = 4;
  m.hgd.codeword_dim = 6;
  m.hgd.compressed_channels = 3;
  m.hgd.guidance_channels = 6;
  m.num_classes = 3;
  return m;
}

fpn::FpnConfig tiny_fpn_config() {
  fpn::FpnConfig c;
  c.channels = 4;
  c.n_codewords = 3;
  c.codeword_dim = 5;
  c.k_recurrence = 2;
  return c;
}

GradcheckReport gradcheck_efficientfcn_tiny(std::uint64_t seed, const GradcheckOptions& options,
                                            std::size_t size) {
  const seg::SegModelConfig model = tiny_seg_model();
  std::mt19937_64 rng(seed);
  auto params = seg::SegParams<double>::init(model, rng);
  auto named = params.named_parameters();
  randomize_biases(named, rng);
  const Tensor<double> image = uniform({3, size, size}, 0.0, 1.0, rng);
  std::vector<std::uint8_t> labels(size * size);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(model.num_classes));
  for (auto& l : labels) {
    const int v = cls(rng);
    l = v == static_cast<int>(model.num_classes) ? 255 : static_cast<std::uint8_t>(v);
  }
  auto build = [&](Graph<double>& g) {
    const auto out = seg::segment_forward(g.constant(image), params, model);
    return ops::cross_entropy(out.logits, std::span<const std::uint8_t>(labels));
  };
  return gradcheck(build, named, options);
}

GradcheckReport gradcheck_hgd_fpn_tiny(std::uint64_t seed, const GradcheckOptions& options,
                                       const fpn::FpnConfig& config) {
  std::mt19937_64 rng(seed);
  auto params = fpn::FpnParams<double>::init(config, rng);
  auto named = params.named_parameters();
  randomize_biases(named, rng);
  for (auto& stage : params.stages) {
    for (Tensor<double>* t : {&stage.coeffs.a, &stage.coeffs.r, &stage.coeffs.s, &stage.coeffs.t}) {
      *t = uniform(t->dims(), 0.5, 1.5, rng);
    }
  }
  const auto dims = fpn::pyramid_dims(config.channels, 16, 16);
  fpn::Pyramid<double> pyramid;
  std::array<Tensor<double>, fpn::kLevels> readout;
  for (std::size_t l = 0; l < fpn::kLevels; ++l) {
    pyramid[l] = uniform(dims[l], -1.0, 1.0, rng);
    readout[l] = uniform({1, config.channels}, -1.0, 1.0, rng);
  }
  const Tensor<double> zero_bias({1});
  auto build = [&](Graph<double>& g) {
    fpn::PyramidVars<double> levels;
    for (std::size_t l = 0; l < fpn::kLevels; ++l) levels[l] = g.constant(pyramid[l]);
    const auto stages = fpn::fpn_decode(levels, params, config);
    Var<double> loss;
    for (std::size_t l = 0; l < fpn::kLevels; ++l) {
      Var<double> r = ops::sum(ops::conv1x1(stages.back().outputs[l], g.constant(readout[l]),
                                            g.constant(zero_bias)));
      loss = l == 0 ? r : ops::add(loss, r);
    }
    return loss;
  };
  return gradcheck(build, named, options);
}

}  // namespace hgd::suites
