#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "hgd/efficientfcn.hpp"
#include "hgd/fpn.hpp"
#include "hgd/train.hpp"

namespace hgd {

/// JSON run description shared by the CLI commands. Every field is optional;
/// unknown keys are rejected. Defaults follow the published settings
/// (n = 256 for segmentation; n = 128, c = 512, k = 4 for detection).
struct RunConfig {
  std::string task = "seg";  // "seg" | "fpn"
  std::uint64_t seed = 0;
  std::size_t input_size = 512;
  std::size_t num_classes = 60;
  std::size_t samples = 32;  // synthetic training images
  seg::ToyBackboneConfig backbone;
  decoder::HgdConfig hgd;
  fpn::FpnConfig fpn;
  seg::TrainConfig train{0.001, 0.9, 0.9, 1e-4, 500, 16};
  std::string precision = "f64";  // "f32" | "f64"

  seg::SegModelConfig seg_model() const { return {backbone, hgd, num_classes}; }
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Throws ConfigError naming the offending key.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& config);

}  // namespace hgd
