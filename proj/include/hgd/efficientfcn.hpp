#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "hgd/hgd_decoder.hpp"

// EfficientFCN: a toy strided encoder emitting OS 8/16/32 taps, the HGD
// decoder, a 1x1 classifier on its output and x8 bilinear upsampling.
namespace hgd::seg {

struct ToyBackboneConfig {
  /// Channels at OS 4, 8, 16 and 32. The OS=2 stem uses the OS=4 width.
  std::array<std::size_t, 4> channels = {32, 64, 96, 128};
  /// 3x3 convolutions per stage; the first one of each stage has stride 2.
  std::size_t blocks = 1;

  void validate() const;
  /// Channels of the OS 8, 16 and 32 taps.
  std::array<std::size_t, 3> tap_channels() const {
    return {channels[1], channels[2], channels[3]};
  }
};

template <typename T>
struct BackboneParams {
  Conv3x3<T> stem;                              // 3 -> channels[0], OS 2
  std::array<std::vector<Conv3x3<T>>, 4> stages;  // OS 4, 8, 16, 32

  static BackboneParams init(const ToyBackboneConfig& config, std::mt19937_64& rng);
  void append_to(std::vector<NamedParam<T>>& out, const std::string& prefix);
  std::size_t parameter_count() const;
};

template <typename T>
struct Taps {
  Var<T> e8;
  Var<T> e16;
  Var<T> e32;
};

/// Throws DimensionError unless the image is (3, h, w) with h, w divisible by 32.
template <typename T>
Taps<T> backbone_forward(Var<T> image, BackboneParams<T>& params);

struct SegModelConfig {
  ToyBackboneConfig backbone;
  decoder::HgdConfig hgd;
  std::size_t num_classes = 5;

  void validate() const;
};

template <typename T>
struct SegParams {
  BackboneParams<T> backbone;
  decoder::HgdParams<T> hgd;
  Conv1x1<T> classifier;  // hgd output channels -> num_classes

  static SegParams init(const SegModelConfig& config, std::mt19937_64& rng);
  std::vector<NamedParam<T>> named_parameters();
  std::size_t parameter_count() const;
};

template <typename T>
struct SegOutput {
  Taps<T> taps;
  decoder::HgdOutput<T> hgd;
  Var<T> logits;  // (num_classes, h, w) at input resolution
};

template <typename T>
SegOutput<T> segment_forward(Var<T> image, SegParams<T>& params, const SegModelConfig& config);

}  // namespace hgd::seg
