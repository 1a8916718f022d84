#include "hgd/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_map>

namespace hgd::seg {

void TrainConfig::validate() const {
  if (!(base_lr >= 0)) throw ConfigError("TrainConfig: base_lr must be >= 0");
  if (!(power > 0)) throw ConfigError("TrainConfig: power must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("TrainConfig: momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("TrainConfig: weight_decay must be >= 0");
  if (max_iter == 0) throw ConfigError("TrainConfig: max_iter must be >= 1");
  if (batch == 0) throw ConfigError("TrainConfig: batch must be >= 1");
}

double poly_lr(std::size_t iter, const TrainConfig& config) {
  if (iter > config.max_iter) {
    std::cerr << "warning: poly_lr iteration " << iter << " exceeds max_iter " << config.max_iter
              << ", clamping\n";
    iter = config.max_iter;
  }
  const double progress = static_cast<double>(iter) / static_cast<double>(config.max_iter);
  return config.base_lr * std::pow(1.0 - progress, config.power);
}

template <typename T>
void sgd_step(std::span<const NamedParam<T>> params, SgdState<T>& state, double lr,
              const TrainConfig& config) {
  if (!(lr >= 0)) throw ConfigError("sgd_step: learning rate must be >= 0, got " + std::to_string(lr));
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.tensor->dims());
  }
  const T momentum = static_cast<T>(config.momentum);
  const T decay = static_cast<T>(config.weight_decay);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].tensor;
    Tensor<T>& v = state.velocity[i];
    if (v.dims() != p.dims()) {
      throw DimensionError("sgd_step: velocity of " + params[i].name + " has dims " +
                           shape_str(v.dims()) + ", parameter has " + shape_str(p.dims()));
    }
    auto grad = p.grad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + grad[j] + decay * p[j];
      p[j] -= rate * v[j];
    }
  }
}

template <typename T>
LabelMap argmax_labels(const Tensor<T>& logits) {
  if (logits.rank() != 3) throw DimensionError("argmax_labels: logits must be (c,h,w)");
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  LabelMap out{logits.dim(1), logits.dim(2), std::vector<std::uint8_t>(hw, 0)};
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (logits[k * hw + p] > logits[best * hw + p]) best = k;
    }
    out.data[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Metrics compute_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                        std::size_t num_classes) {
  if (pred.size() != gt.size()) {
    throw DimensionError("compute_metrics: prediction has " + std::to_string(pred.size()) +
                         " pixels, ground truth has " + std::to_string(gt.size()));
  }
  std::vector<std::size_t> confusion(num_classes * num_classes, 0);  // [gt][pred]
  std::size_t valid = 0, correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    if (gt[i] >= num_classes || pred[i] >= num_classes) {
      throw ConfigError("compute_metrics: label out of range at pixel " + std::to_string(i));
    }
    ++confusion[gt[i] * num_classes + pred[i]];
    ++valid;
    correct += gt[i] == pred[i];
  }
  if (valid == 0) throw ConfigError("compute_metrics: no valid (non-ignored) pixels");

  double iou_sum = 0;
  std::size_t classes = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::size_t gt_k = 0, pred_k = 0;
    for (std::size_t j = 0; j < num_classes; ++j) {
      gt_k += confusion[k * num_classes + j];
      pred_k += confusion[j * num_classes + k];
    }
    const std::size_t tp = confusion[k * num_classes + k];
    const std::size_t uni = gt_k + pred_k - tp;
    if (uni == 0) continue;
    iou_sum += static_cast<double>(tp) / static_cast<double>(uni);
    ++classes;
  }
  return {static_cast<double>(correct) / static_cast<double>(valid),
          iou_sum / static_cast<double>(classes)};
}

namespace {

std::array<double, 3> class_color(std::size_t cls, std::size_t num_classes) {
  // Evenly spaced hues, saturation 0.8, value 0.9.
  const double hue = 6.0 * static_cast<double>(cls - 1) / static_cast<double>(num_classes - 1);
  const double v = 0.9, s = 0.8, c = v * s;
  const double x = c * (1 - std::abs(std::fmod(hue, 2.0) - 1));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hue) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (double& ch : rgb) ch += v - c;
  return rgb;
}

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

bool free_area(const std::vector<std::uint8_t>& label, std::size_t size, std::size_t y0,
               std::size_t x0, std::size_t h, std::size_t w) {
  for (std::size_t y = y0; y < y0 + h; ++y) {
    for (std::size_t x = x0; x < x0 + w; ++x) {
      if (label[y * size + x] != 0) return false;
    }
  }
  return true;
}

}  // namespace

std::vector<SegSample> synth_dataset(std::uint64_t seed, std::size_t count, std::size_t size,
                                     std::size_t num_classes, const SynthOptions& options) {
  if (size == 0 || size % 32 != 0) {
    throw ConfigError("synth_dataset: size " + std::to_string(size) + " is not a multiple of 32");
  }
  if (num_classes < 2 || num_classes > 255) throw ConfigError("synth_dataset: num_classes must be in [2, 255]");
  if (options.min_shapes > options.max_shapes) throw ConfigError("synth_dataset: min_shapes > max_shapes");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::uniform_real_distribution<double> noise(-0.03, 0.03);
  const std::size_t cells = size / 8;
  std::vector<SegSample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t hw = size * size;
    std::vector<std::uint8_t> label(hw, 0);
    std::vector<std::array<double, 3>> color(hw);
    const std::array<double, 3> bg = {0.15 + jitter(rng), 0.15 + jitter(rng), 0.15 + jitter(rng)};
    std::fill(color.begin(), color.end(), bg);

    const std::size_t shapes = draw(rng, options.min_shapes, options.max_shapes);
    for (std::size_t s = 0; s < shapes; ++s) {
      const auto cls = static_cast<std::uint8_t>(draw(rng, 1, num_classes - 1));
      auto rgb = class_color(cls, num_classes);
      for (double& ch : rgb) ch += jitter(rng);
      const bool disk = options.disks && draw(rng, 0, 1) == 1;
      if (disk) {
        const std::size_t r_cells = draw(rng, 1, std::max<std::size_t>(1, cells / 4));
        const std::size_t cy = draw(rng, r_cells, cells - r_cells) * 8;
        const std::size_t cx = draw(rng, r_cells, cells - r_cells) * 8;
        const double r = static_cast<double>(r_cells * 8);
        if (!options.overlap && !free_area(label, size, cy - r_cells * 8, cx - r_cells * 8,
                                           2 * r_cells * 8, 2 * r_cells * 8)) {
          continue;
        }
        for (std::size_t y = 0; y < size; ++y) {
          for (std::size_t x = 0; x < size; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - static_cast<double>(cy);
            const double dx = static_cast<double>(x) + 0.5 - static_cast<double>(cx);
            if (dy * dy + dx * dx > r * r) continue;
            label[y * size + x] = cls;
            color[y * size + x] = rgb;
          }
        }
      } else {
        const std::size_t h = draw(rng, 2, std::max<std::size_t>(2, cells / 2));
        const std::size_t w = draw(rng, 2, std::max<std::size_t>(2, cells / 2));
        const std::size_t y0 = draw(rng, 0, cells - h) * 8, x0 = draw(rng, 0, cells - w) * 8;
        if (!options.overlap && !free_area(label, size, y0, x0, h * 8, w * 8)) continue;
        for (std::size_t y = y0; y < y0 + h * 8; ++y) {
          for (std::size_t x = x0; x < x0 + w * 8; ++x) {
            label[y * size + x] = cls;
            color[y * size + x] = rgb;
          }
        }
      }
    }

    Tensor<double> image({3, size, size});
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < hw; ++p) {
        image[c * hw + p] = std::clamp(color[p][c] + noise(rng), 0.0, 1.0);
      }
    }
    out.push_back({std::move(image), LabelMap{size, size, std::move(label)}});
  }
  return out;
}

std::vector<std::size_t> class_histogram(const std::vector<SegSample>& samples,
                                         std::size_t num_classes) {
  std::vector<std::size_t> hist(num_classes, 0);
  for (const auto& s : samples) {
    for (std::uint8_t l : s.label.data) {
      if (l < num_classes) ++hist[l];
    }
  }
  return hist;
}

namespace {

template <typename T>
struct SampleResult {
  double loss = 0;
  std::size_t correct = 0;
  std::size_t valid = 0;
  std::vector<std::vector<T>> grads;  // indexed like the parameter list
};

template <typename T>
SampleResult<T> run_sample(SegParams<T>& params, const SegModelConfig& model,
                           const SegSample& sample, const GraphOptions& graph_options,
                           const std::unordered_map<const Tensor<T>*, std::size_t>& index) {
  Graph<T> g(graph_options);
  Var<T> image = g.constant(sample.image.template cast<T>());
  const auto out = segment_forward(image, params, model);
  Var<T> loss = ops::cross_entropy(out.logits, std::span<const std::uint8_t>(sample.label.data));
  g.backward(loss, GradSink::kGraphOnly);

  SampleResult<T> r;
  r.loss = static_cast<double>(loss.value()[0]);
  const LabelMap pred = argmax_labels(out.logits.value());
  for (std::size_t p = 0; p < pred.data.size(); ++p) {
    if (sample.label.data[p] == kIgnoreLabel) continue;
    ++r.valid;
    r.correct += pred.data[p] == sample.label.data[p];
  }
  r.grads.resize(index.size());
  for (const auto& [tensor, grad] : g.bound_gradients()) {
    auto& dst = r.grads[index.at(tensor)];
    if (dst.empty()) dst.assign(grad.size(), T{0});
    for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += grad[i];
  }
  return r;
}

}  // namespace

template <typename T>
TrainResult<T> train_segmentation(SegParams<T>& params, const SegModelConfig& model,
                                  const TrainConfig& train, const std::vector<SegSample>& data,
                                  const TrainOptions& options) {
  model.validate();
  train.validate();
  if (data.empty()) throw ConfigError("train_segmentation: empty training set");
  const std::size_t threads = std::max<std::size_t>(1, options.threads);

  const auto named = params.named_parameters();
  std::unordered_map<const Tensor<T>*, std::size_t> index;
  for (std::size_t i = 0; i < named.size(); ++i) {
    named[i].tensor->set_requires_grad(true);
    index.emplace(named[i].tensor, i);
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  SgdState<T> state;
  TrainResult<T> result;
  std::vector<SampleResult<T>> slots(train.batch);
  for (std::size_t iter = 0; iter < train.max_iter; ++iter) {
    std::vector<std::size_t> batch(train.batch);
    for (auto& b : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      b = order[cursor++];
    }

    auto work = [&](std::size_t worker) {
      for (std::size_t k = worker; k < batch.size(); k += threads) {
        slots[k] = run_sample(params, model, data[batch[k]], options.graph, index);
      }
    };
    if (threads == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < std::min(threads, batch.size()); ++t) pool.emplace_back(work, t);
      for (auto& th : pool) th.join();
    }

    // Reduce in slot order so the sum is independent of the thread count.
    const T inv = T(1) / static_cast<T>(batch.size());
    TrainLogRow row{iter, poly_lr(iter, train), 0, 0};
    std::size_t correct = 0, valid = 0;
    for (auto& p : named) p.tensor->zero_grad();
    for (const auto& s : slots) {
      row.loss += s.loss / static_cast<double>(batch.size());
      correct += s.correct;
      valid += s.valid;
      for (std::size_t i = 0; i < named.size(); ++i) {
        if (s.grads[i].empty()) continue;
        auto dst = named[i].tensor->grad();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += inv * s.grads[i][j];
      }
    }
    row.pix_acc = valid ? static_cast<double>(correct) / static_cast<double>(valid) : 0.0;
    sgd_step<T>(named, state, row.lr, train);
    result.log.push_back(row);
    if (options.on_step) options.on_step(row);
  }
  for (auto& p : named) p.tensor->clear_grad();
  result.final_metrics = evaluate(params, model, data);
  return result;
}

template <typename T>
Metrics evaluate(SegParams<T>& params, const SegModelConfig& model,
                 const std::vector<SegSample>& data) {
  std::vector<std::uint8_t> pred, gt;
  for (const auto& sample : data) {
    Graph<T> g;
    const auto out = segment_forward(g.constant(sample.image.template cast<T>()), params, model);
    const LabelMap labels = argmax_labels(out.logits.value());
    pred.insert(pred.end(), labels.data.begin(), labels.data.end());
    gt.insert(gt.end(), sample.label.data.begin(), sample.label.data.end());
  }
  return compute_metrics(pred, gt, model.num_classes);
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "iter,lr,loss,pixAcc\n" << std::setprecision(9);
  for (const auto& r : rows) out << r.iter << ',' << r.lr << ',' << r.loss << ',' << r.pix_acc << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("HGD_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  const std::string text(raw);
  std::size_t value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size() || value == 0) {
    throw ConfigError("HGD_THREADS must be a positive integer, got '" + text + "'");
  }
  return value;
}

#define HGD_INSTANTIATE_TRAIN(T)                                                              \
  template void sgd_step(std::span<const NamedParam<T>>, SgdState<T>&, double,               \
                         const TrainConfig&);                                                 \
  template LabelMap argmax_labels(const Tensor<T>&);                                          \
  template TrainResult<T> train_segmentation(SegParams<T>&, const SegModelConfig&,            \
                                             const TrainConfig&, const std::vector<SegSample>&, \
                                             const TrainOptions&);                            \
  template Metrics evaluate(SegParams<T>&, const SegModelConfig&, const std::vector<SegSample>&);

HGD_INSTANTIATE_TRAIN(float)
HGD_INSTANTIATE_TRAIN(double)

}  // namespace hgd::seg
