#include "hgd/cost_model.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace hgd::cost {
namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void require(bool ok, const LayerSpec& spec, const std::string& what) {
  if (!ok) throw ConfigError("layer '" + spec.name + "' (" + kind_name(spec.kind) + "): " + what);
}

std::string extents(std::size_t h, std::size_t w) {
  return std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDeconv: return "deconv";
    case LayerKind::kPool: return "pool";
    case LayerKind::kResize: return "resize";
    case LayerKind::kAssembly: return "assembly";
    case LayerKind::kElementwise: return "elementwise";
    case LayerKind::kScalars: return "scalars";
  }
  return "unknown";
}

LayerCost count_layer(const LayerSpec& s) {
  const std::uint64_t hw_out = static_cast<std::uint64_t>(s.h_out) * s.w_out;
  switch (s.kind) {
    case LayerKind::kConv: {
      require(s.kernel > 0 && s.stride > 0 && s.dilation > 0, s, "kernel, stride and dilation must be >= 1");
      require(s.c_in > 0 && s.c_out > 0, s, "channel counts must be >= 1");
      require(s.h_out == ceil_div(s.h_in, s.stride) && s.w_out == ceil_div(s.w_in, s.stride), s,
              "output " + extents(s.h_out, s.w_out) + " does not follow from input " +
                  extents(s.h_in, s.w_in) + " at stride " + std::to_string(s.stride));
      const std::uint64_t weights = static_cast<std::uint64_t>(s.kernel) * s.kernel * s.c_in * s.c_out;
      return {weights * hw_out, s.shared ? 0 : weights + (s.bias ? s.c_out : 0)};
    }
    case LayerKind::kDeconv: {
      require(s.kernel > 0 && s.stride > 0, s, "kernel and stride must be >= 1");
      require(s.c_in > 0 && s.c_out > 0, s, "channel counts must be >= 1");
      require(s.h_out == s.h_in * s.stride && s.w_out == s.w_in * s.stride, s,
              "output " + extents(s.h_out, s.w_out) + " is not input " + extents(s.h_in, s.w_in) +
                  " times stride " + std::to_string(s.stride));
      const std::uint64_t weights = static_cast<std::uint64_t>(s.kernel) * s.kernel * s.c_in * s.c_out;
      const std::uint64_t hw_in = static_cast<std::uint64_t>(s.h_in) * s.w_in;
      return {weights * hw_in, s.shared ? 0 : weights + (s.bias ? s.c_out : 0)};
    }
    case LayerKind::kPool:
      require(s.stride > 0, s, "stride must be >= 1");
      require(s.h_out == ceil_div(s.h_in, s.stride) && s.w_out == ceil_div(s.w_in, s.stride), s,
              "output " + extents(s.h_out, s.w_out) + " does not follow from input " +
                  extents(s.h_in, s.w_in) + " at stride " + std::to_string(s.stride));
      return {0, 0};
    case LayerKind::kResize:
    case LayerKind::kElementwise:
      return {0, 0};
    case LayerKind::kAssembly:
      require(s.n > 0 && s.c_out > 0, s, "codeword count and dimension must be >= 1");
      return {static_cast<std::uint64_t>(s.n) * s.c_out * hw_out, 0};
    case LayerKind::kScalars:
      return {0, s.shared ? 0 : static_cast<std::uint64_t>(s.c_out)};
  }
  throw ConfigError("layer '" + s.name + "': unsupported kind " +
                    std::to_string(static_cast<int>(s.kind)));
}

CostReport emit_report(const ArchSpec& spec) {
  CostReport r;
  r.arch = spec.name;
  for (const auto& layer : spec.layers) {
    const LayerCost c = count_layer(layer);
    r.rows.push_back({layer.name, c.macs, c.params});
    r.total_macs += c.macs;
    r.total_params += c.params;
  }
  return r;
}

std::string render_csv(const CostReport& report) {
  std::ostringstream out;
  out << "layer,macs,params\n";
  for (const auto& row : report.rows) out << row.layer << ',' << row.macs << ',' << row.params << '\n';
  out << "total," << report.total_macs << ',' << report.total_params << '\n';
  return out.str();
}

std::string render_text(const CostReport& report) {
  std::size_t name_w = 5;
  for (const auto& row : report.rows) name_w = std::max(name_w, row.layer.size());
  std::ostringstream out;
  auto line = [&](const std::string& name, const std::string& macs, const std::string& params) {
    out << std::left << std::setw(static_cast<int>(name_w)) << name << "  " << std::right
        << std::setw(16) << macs << "  " << std::setw(12) << params << '\n';
  };
  out << report.arch << '\n';
  line("layer", "macs", "params");
  for (const auto& row : report.rows) {
    line(row.layer, std::to_string(row.macs), std::to_string(row.params));
  }
  line("total", std::to_string(report.total_macs), std::to_string(report.total_params));
  out << std::fixed << std::setprecision(2) << "= " << static_cast<double>(report.total_macs) / 1e9
      << " GMACs, " << static_cast<double>(report.total_params) / 1e6 << " M params ("
      << kConventionNote << ")\n";
  return out.str();
}

Feature Builder::conv(const std::string& name, Feature in, std::size_t c_out, std::size_t kernel,
                      std::size_t stride, std::size_t dilation, bool bias, bool shared) {
  Feature out{c_out, ceil_div(in.h, stride), ceil_div(in.w, stride)};
  LayerSpec s{name, LayerKind::kConv, kernel, stride, dilation, in.c, c_out, in.h, in.w,
              out.h, out.w, bias, 0, shared};
  spec_.layers.push_back(s);
  return out;
}

Feature Builder::deconv(const std::string& name, Feature in, std::size_t c_out, std::size_t kernel,
                        std::size_t stride, bool bias) {
  Feature out{c_out, in.h * stride, in.w * stride};
  spec_.layers.push_back({name, LayerKind::kDeconv, kernel, stride, 1, in.c, c_out, in.h, in.w,
                          out.h, out.w, bias, 0, false});
  return out;
}

Feature Builder::pool(const std::string& name, Feature in, std::size_t stride) {
  Feature out{in.c, ceil_div(in.h, stride), ceil_div(in.w, stride)};
  spec_.layers.push_back({name, LayerKind::kPool, stride, stride, 1, in.c, in.c, in.h, in.w,
                          out.h, out.w, false, 0, false});
  return out;
}

Feature Builder::resize(const std::string& name, Feature in, std::size_t h, std::size_t w) {
  spec_.layers.push_back(
      {name, LayerKind::kResize, 1, 1, 1, in.c, in.c, in.h, in.w, h, w, false, 0, false});
  return {in.c, h, w};
}

Feature Builder::elementwise(const std::string& name, Feature out) {
  spec_.layers.push_back({name, LayerKind::kElementwise, 1, 1, 1, out.c, out.c, out.h, out.w,
                          out.h, out.w, false, 0, false});
  return out;
}

void Builder::assembly(const std::string& name, std::size_t n, std::size_t c, std::size_t h,
                       std::size_t w) {
  spec_.layers.push_back(
      {name, LayerKind::kAssembly, 1, 1, 1, n, c, h, w, h, w, false, n, false});
}

void Builder::scalars(const std::string& name, std::size_t count, bool shared) {
  spec_.layers.push_back(
      {name, LayerKind::kScalars, 1, 1, 1, 0, count, 0, 0, 0, 0, false, 0, shared});
}

ResnetTaps append_resnet(Builder& b, std::size_t depth, std::size_t h, std::size_t w,
                         bool dilated) {
  std::array<std::size_t, 4> blocks;
  if (depth == 50) {
    blocks = {3, 4, 6, 3};
  } else if (depth == 101) {
    blocks = {3, 4, 23, 3};
  } else {
    throw ConfigError("resnet: unsupported depth " + std::to_string(depth) + " (50 or 101)");
  }
  if (h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0) {
    throw ConfigError("resnet: input " + extents(h, w) + " is not divisible by 32");
  }
  Feature x = b.conv("stem.conv7x7", {3, h, w}, 64, 7, 2);
  x = b.pool("stem.maxpool", x, 2);
  std::array<Feature, 4> taps;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t width = 64u << s;
    std::size_t stride = s == 0 ? 1 : 2;
    std::size_t dilation = 1;
    if (dilated && s >= 2) {
      stride = 1;
      dilation = s == 2 ? 2 : 4;
    }
    for (std::size_t i = 0; i < blocks[s]; ++i) {
      const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(i);
      const std::size_t st = i == 0 ? stride : 1;
      Feature y = b.conv(name + ".conv1", x, width, 1);
      y = b.conv(name + ".conv2", y, width, 3, st, dilation);
      y = b.conv(name + ".conv3", y, 4 * width, 1);
      if (i == 0) b.conv(name + ".downsample", x, 4 * width, 1, st);
      x = b.elementwise(name + ".add_relu", y);
    }
    taps[s] = x;
  }
  return {taps[0], taps[1], taps[2], taps[3]};
}

ArchSpec resnet_spec(std::size_t depth, std::size_t h, std::size_t w, bool dilated,
                     std::size_t num_classes) {
  ArchSpec spec;
  spec.name = "resnet" + std::to_string(depth) + (dilated ? "-dilated" : "");
  spec.input_h = h;
  spec.input_w = w;
  spec.tags = {{"depth", std::to_string(depth)}, {"dilated", dilated ? "true" : "false"}};
  Builder b(spec);
  const ResnetTaps taps = append_resnet(b, depth, h, w, dilated);
  if (num_classes > 0) {
    spec.tags.emplace_back("head", "fcn");
    Feature x = b.conv("head.conv3x3", taps.c5, 512, 3);
    x = b.conv("head.classifier", x, num_classes, 1, 1, 1, true);
    b.resize("head.upsample", x, h, w);
  }
  return spec;
}

ArchSpec unet_spec(UnetUpsample mode, std::size_t h, std::size_t w, std::size_t num_classes) {
  ArchSpec spec;
  const bool deconv = mode == UnetUpsample::kDeconv;
  spec.name = deconv ? "unet-deconv" : "unet-bilinear";
  spec.input_h = h;
  spec.input_w = w;
  spec.tags = {{"depth", "101"}, {"decoder", deconv ? "deconv" : "bilinear"}};
  Builder b(spec);
  const ResnetTaps taps = append_resnet(b, 101, h, w, false);
  auto up = [&](const std::string& name, Feature x) {
    return deconv ? b.deconv(name, x, x.c, 2, 2, true) : b.resize(name, x, 2 * x.h, 2 * x.w);
  };
  Feature x = up("decoder.up16", taps.c5);
  x = b.elementwise("decoder.concat16", {x.c + taps.c4.c, x.h, x.w});
  x = b.conv("decoder.fuse16", x, 512, 3);
  x = up("decoder.up8", x);
  x = b.elementwise("decoder.concat8", {x.c + taps.c3.c, x.h, x.w});
  x = b.conv("decoder.fuse8", x, 512, 3);
  x = b.conv("head.classifier", x, num_classes, 1, 1, 1, true);
  b.resize("head.upsample", x, h, w);
  return spec;
}

Feature append_hgd_decoder(Builder& b, const decoder::HgdConfig& config,
                           const std::array<Feature, 3>& taps, std::size_t compress_kernel) {
  config.validate();
  std::array<Feature, 3> compressed;
  for (std::size_t s = 0; s < 3; ++s) {
    compressed[s] = b.conv("hgd.compress_os" + std::to_string(decoder::kStrides[s]), taps[s],
                           config.compressed_channels, compress_kernel, 1, 1, true);
  }
  auto gather = [&](const std::vector<int>& scales, std::size_t target, const std::string& name) {
    const Feature grid = compressed[target];
    std::size_t channels = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const int stride = decoder::kStrides[s];
      if (std::find(scales.begin(), scales.end(), stride) == scales.end()) continue;
      if (s != target) {
        b.resize(name + ".resize_os" + std::to_string(stride), compressed[s], grid.h, grid.w);
      }
      channels += compressed[s].c;
    }
    return b.elementwise(name + ".concat", {channels, grid.h, grid.w});
  };

  const Feature m32 = gather(config.codeword_scales, 2, "hgd.m32");
  b.conv("hgd.bases", m32, config.codeword_dim, 1, 1, 1, true);
  const Feature logits = b.conv("hgd.weighting", m32, config.n_codewords, 1, 1, 1, true);
  b.elementwise("hgd.softmax", logits);
  b.assembly("hgd.codewords", config.n_codewords, config.codeword_dim, m32.h, m32.w);

  const Feature m8 = gather(config.assembly_scales, 0, "hgd.m8");
  Feature g = b.conv("hgd.guidance", m8, config.guidance_channels, 1, 1, 1, true);
  if (config.transfer_enabled) g = b.elementwise("hgd.transfer", g);
  b.conv("hgd.assembly", g, config.n_codewords, 1, 1, 1, true);
  b.assembly("hgd.assemble", config.n_codewords, config.codeword_dim, g.h, g.w);
  return b.elementwise("hgd.output_concat", {config.output_channels(), g.h, g.w});
}

ArchSpec efficientfcn_spec(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                           const EfficientFcnCostOptions& options) {
  ArchSpec spec;
  spec.name = "efficientfcn";
  spec.input_h = h;
  spec.input_w = w;
  spec.tags = {{"depth", std::to_string(options.depth)},
               {"n", std::to_string(n)},
               {"c", std::to_string(c)},
               {"compress_kernel", std::to_string(options.compress_kernel)}};
  Builder b(spec);
  const ResnetTaps taps = append_resnet(b, options.depth, h, w, false);
  decoder::HgdConfig config;
  config.n_codewords = n;
  config.codeword_dim = c;
  config.compressed_channels = options.compressed_channels;
  config.guidance_channels = options.guidance_channels ? options.guidance_channels : c;
  config.transfer_enabled = config.guidance_channels == c;
  const Feature f = append_hgd_decoder(b, config, {taps.c3, taps.c4, taps.c5},
                                       options.compress_kernel);
  const Feature logits = b.conv("head.classifier", f, options.num_classes, 1, 1, 1, true);
  b.resize("head.upsample", logits, h, w);
  return spec;
}

FpnVariant parse_fpn_variant(const std::string& name) {
  if (name == "faster-rcnn") return FpnVariant::kFasterRcnn;
  if (name == "retinanet") return FpnVariant::kRetinaNet;
  throw ConfigError("unknown FPN variant '" + name + "' (faster-rcnn or retinanet)");
}

void append_hgd_fpn_stage(Builder& b, const std::string& prefix, std::size_t n, std::size_t c,
                          std::size_t channels, const std::array<Feature, 5>& levels,
                          bool shared) {
  for (const auto& l : levels) {
    if (l.c != channels) throw ConfigError("hgd-fpn stage: level width differs from channels");
  }
  b.scalars(prefix + ".coeffs", 5 + 3 * 3, shared);

  const Feature code = levels[3];
  b.resize(prefix + ".code.up_l4", levels[4], code.h, code.w);
  for (std::size_t l = 0; l < 3; ++l) {
    b.pool(prefix + ".code.down_l" + std::to_string(l), levels[l], std::size_t{1} << (3 - l));
  }
  b.elementwise(prefix + ".code.fuse", code);
  b.conv(prefix + ".bases", code, c, 1, 1, 1, true, shared);
  const Feature logits = b.conv(prefix + ".weighting", code, n, 1, 1, 1, true, shared);
  b.elementwise(prefix + ".softmax", logits);
  b.assembly(prefix + ".codewords", n, c, code.h, code.w);

  for (std::size_t l = 1; l <= 3; ++l) {
    const std::string name = prefix + ".l" + std::to_string(l);
    const Feature grid = levels[l];
    b.resize(name + ".fuse.up", levels[l + 1], grid.h, grid.w);
    b.pool(name + ".fuse.down", levels[l - 1], 2);
    b.elementwise(name + ".fuse", grid);
    const Feature g = b.conv(name + ".guidance", grid, channels, 1, 1, 1, true, shared);
    b.conv(name + ".assembly", g, n, 1, 1, 1, true, shared);
    b.assembly(name + ".assemble", n, c, g.h, g.w);
    const Feature cat = b.elementwise(name + ".concat", {c + channels, g.h, g.w});
    b.conv(name + ".projection", cat, channels, 1, 1, 1, true, shared);
  }
  b.resize(prefix + ".shortcut_l0", levels[1], levels[0].h, levels[0].w);
  b.pool(prefix + ".shortcut_l4", levels[3], 2);
  for (std::size_t l = 0; l < 5; ++l) {
    b.elementwise(prefix + ".residual_l" + std::to_string(l), levels[l]);
  }
}

ArchSpec fpn_spec(FpnVariant variant, std::size_t n, std::size_t c, std::size_t k, std::size_t h,
                  std::size_t w, bool share_params, std::size_t channels) {
  const bool retina = variant == FpnVariant::kRetinaNet;
  const bool hgd = n > 0 && k > 0;
  if (hgd && c == 0) throw ConfigError("fpn_spec: codeword dimension must be >= 1");
  ArchSpec spec;
  spec.name = std::string(hgd ? "hgd-fpn" : "fpn") + (retina ? "-retinanet" : "-faster-rcnn");
  spec.input_h = h;
  spec.input_w = w;
  spec.tags = {{"variant", retina ? "retinanet" : "faster-rcnn"},
               {"n", std::to_string(n)},
               {"c", std::to_string(c)},
               {"k", std::to_string(k)},
               {"share_params", share_params ? "true" : "false"}};
  Builder b(spec);
  const ResnetTaps t = append_resnet(b, 50, h, w, false);

  // Laterals on the used taps, top-down nearest upsampling, 3x3 smoothing.
  std::vector<Feature> taps = retina ? std::vector<Feature>{t.c3, t.c4, t.c5}
                                     : std::vector<Feature>{t.c2, t.c3, t.c4, t.c5};
  const std::size_t first = retina ? 3 : 2;
  std::vector<Feature> inner(taps.size());
  for (std::size_t i = taps.size(); i-- > 0;) {
    const std::string lvl = std::to_string(first + i);
    inner[i] = b.conv("fpn.lateral_c" + lvl, taps[i], channels, 1, 1, 1, true);
    if (i + 1 < taps.size()) {
      b.resize("fpn.topdown_up_p" + lvl, inner[i + 1], inner[i].h, inner[i].w);
      b.elementwise("fpn.topdown_add_p" + lvl, inner[i]);
    }
  }
  std::array<Feature, 5> levels;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    levels[i] = b.conv("fpn.output_p" + std::to_string(first + i), inner[i], channels, 3, 1, 1, true);
  }
  if (retina) {
    levels[3] = b.conv("fpn.extra_p6", t.c5, channels, 3, 2, 1, true);
    b.elementwise("fpn.extra_relu", levels[3]);
    levels[4] = b.conv("fpn.extra_p7", levels[3], channels, 3, 2, 1, true);
  } else {
    levels[4] = b.pool("fpn.extra_p6", levels[3], 2);
  }

  if (hgd) {
    for (std::size_t s = 0; s < k; ++s) {
      append_hgd_fpn_stage(b, "hgd_fpn.stage" + std::to_string(s), n, c, channels, levels,
                           share_params && s > 0);
    }
  }
  return spec;
}

std::vector<std::string> arch_names() {
  return {"resnet50",      "resnet101",     "resnet50-dilated", "resnet101-dilated",
          "unet-bilinear", "unet-deconv",   "efficientfcn",     "fpn",
          "hgd-fpn",       "fpn-retinanet", "hgd-fpn-retinanet"};
}

ArchSpec arch_by_name(const ArchRequest& r) {
  const std::string& name = r.name;
  auto seg_h = r.h ? r.h : 512, seg_w = r.w ? r.w : seg_h;
  auto det_h = r.h ? r.h : kDetectionH, det_w = r.w ? r.w : (r.h ? r.h : kDetectionW);
  if (name == "resnet50" || name == "resnet101" || name == "resnet50-dilated" ||
      name == "resnet101-dilated") {
    const std::size_t depth = name.rfind("resnet101", 0) == 0 ? 101 : 50;
    return resnet_spec(depth, seg_h, seg_w, name.find("-dilated") != std::string::npos);
  }
  if (name == "unet-bilinear") return unet_spec(UnetUpsample::kBilinear, seg_h, seg_w);
  if (name == "unet-deconv") return unet_spec(UnetUpsample::kDeconv, seg_h, seg_w);
  if (name == "efficientfcn") {
    return efficientfcn_spec(r.n ? r.n : 256, r.c ? r.c : 1024, seg_h, seg_w);
  }
  if (name == "fpn" || name == "fpn-retinanet") {
    return fpn_spec(name == "fpn" ? FpnVariant::kFasterRcnn : FpnVariant::kRetinaNet, 0, 0, 0,
                    det_h, det_w);
  }
  if (name == "hgd-fpn" || name == "hgd-fpn-retinanet") {
    return fpn_spec(name == "hgd-fpn" ? FpnVariant::kFasterRcnn : FpnVariant::kRetinaNet,
                    r.n ? r.n : 128, r.c ? r.c : 512, r.k ? r.k : 4, det_h, det_w);
  }
  throw ConfigError("unknown architecture '" + name + "'");
}

}  // namespace hgd::cost
