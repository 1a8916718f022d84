#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "hgd/efficientfcn.hpp"

namespace hgd::seg {

inline constexpr std::uint8_t kIgnoreLabel = 255;

struct TrainConfig {
  double base_lr = 0.01;
  double power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t max_iter = 500;
  std::size_t batch = 8;

  void validate() const;
};

/// base_lr * (1 - iter / max_iter)^power. An iter past max_iter is clamped
/// (learning rate 0) and a warning goes to stderr.
double poly_lr(std::size_t iter, const TrainConfig& config);

/// One momentum buffer per parameter tensor, allocated on first use.
template <typename T>
struct SgdState {
  std::vector<Tensor<T>> velocity;
};

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
/// Gradients are read from each tensor's grad(). Throws ConfigError if lr < 0.
template <typename T>
void sgd_step(std::span<const NamedParam<T>> params, SgdState<T>& state, double lr,
              const TrainConfig& config);

struct LabelMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> data;
};

/// Per-pixel argmax over channels; ties go to the lowest class index.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& logits);

struct Metrics {
  double pix_acc = 0;
  double miou = 0;
};

/// Pixel accuracy and mean IoU over classes with a nonzero union; pixels whose
/// ground truth is kIgnoreLabel are skipped. Throws if nothing is left.
Metrics compute_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                        std::size_t num_classes);

struct SegSample {
  Tensor<double> image;  // (3, h, w) in [0, 1]
  LabelMap label;
};

struct SynthOptions {
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  /// Draw some shapes as disks instead of 8-px aligned rectangles.
  bool disks = false;
  /// When false, a shape that would cover an earlier one is skipped.
  bool overlap = false;
};

/// Colored shapes on a dark background; class 0 is background and every
/// foreground class has its own base color.
std::vector<SegSample> synth_dataset(std::uint64_t seed, std::size_t count, std::size_t size,
                                     std::size_t num_classes, const SynthOptions& options = {});

std::vector<std::size_t> class_histogram(const std::vector<SegSample>& samples,
                                         std::size_t num_classes);

struct TrainLogRow {
  std::size_t iter = 0;
  double lr = 0;
  double loss = 0;
  double pix_acc = 0;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  /// Worker threads for the per-sample passes of a batch. Results do not
  /// depend on this value.
  std::size_t threads = 1;
  GraphOptions graph;
  std::function<void(const TrainLogRow&)> on_step;
};

template <typename T>
struct TrainResult {
  std::vector<TrainLogRow> log;
  Metrics final_metrics;
};

/// Mean cross-entropy over the batch, poly learning rate, SGD with momentum.
template <typename T>
TrainResult<T> train_segmentation(SegParams<T>& params, const SegModelConfig& model,
                                  const TrainConfig& train, const std::vector<SegSample>& data,
                                  const TrainOptions& options);

/// Predictions and metrics over a whole set, no gradients.
template <typename T>
Metrics evaluate(SegParams<T>& params, const SegModelConfig& model,
                 const std::vector<SegSample>& data);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

/// Value of HGD_THREADS, or 1 when unset. Throws ConfigError on garbage.
std::size_t threads_from_env();

}  // namespace hgd::seg
