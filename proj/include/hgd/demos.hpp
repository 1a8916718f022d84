#pragma once

#include <filesystem>
#include <iosfwd>

#include "hgd/run_config.hpp"

namespace hgd::demos {

struct SegDemoResult {
  seg::Metrics metrics;
  double final_loss = 0;
  std::size_t weighting_maps = 0;
};

/// Trains EfficientFCN on the synthetic task and writes into out_dir:
/// train_log.csv, metrics.json, config.json, checkpoint/ and one
/// weighting_<i>.pgm per codeword (first training image).
SegDemoResult run_seg_demo(const RunConfig& config, const std::filesystem::path& out_dir,
                           std::ostream& log);

struct FpnDemoResult {
  std::size_t stages = 0;
  std::size_t weighting_maps = 0;
};

/// Decodes a random pyramid with P3 at input_size / 8 and writes input/ and
/// output/ pyramids, summary.json, config.json and one weighting_<i>.pgm per
/// codeword of the last stage.
FpnDemoResult run_fpn_demo(const RunConfig& config, const std::filesystem::path& out_dir,
                           std::ostream& log);

}  // namespace hgd::demos
