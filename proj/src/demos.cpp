#include "hgd/demos.hpp"

#include <chrono>
#include <fstream>
#include <ostream>
#include <random>

#include <json.hpp>

#include "hgd/tensor_io.hpp"

namespace hgd::demos {
namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <typename T>
SegDemoResult seg_demo(const RunConfig& config, const std::filesystem::path& out_dir,
                       std::ostream& log) {
  const seg::SegModelConfig model = config.seg_model();
  const auto data = seg::synth_dataset(config.seed, config.samples, config.input_size,
                                       config.num_classes);
  std::mt19937_64 rng(config.seed);
  auto params = seg::SegParams<T>::init(model, rng);
  log << "demo-seg: " << params.parameter_count() << " parameters, " << data.size()
      << " images of " << config.input_size << "x" << config.input_size << '\n';

  seg::TrainOptions options;
  options.seed = config.seed;
  options.threads = seg::threads_from_env();
  const std::size_t every = std::max<std::size_t>(1, config.train.max_iter / 10);
  options.on_step = [&](const seg::TrainLogRow& r) {
    if (r.iter % every == 0 || r.iter + 1 == config.train.max_iter) {
      log << "  iter " << r.iter << "  lr " << r.lr << "  loss " << r.loss << "  pixAcc "
          << r.pix_acc << '\n';
    }
  };
  const auto start = std::chrono::steady_clock::now();
  const auto result = seg::train_segmentation(params, model, config.train, data, options);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::filesystem::create_directories(out_dir);
  seg::write_train_log(out_dir / "train_log.csv", result.log);
  const nlohmann::json metrics = {{"pixAcc", result.final_metrics.pix_acc},
                                  {"mIoU", result.final_metrics.miou},
                                  {"final_loss", result.log.back().loss},
                                  {"iterations", config.train.max_iter},
                                  {"samples", data.size()},
                                  {"parameters", params.parameter_count()},
                                  {"seed", config.seed},
                                  {"precision", config.precision}};
  write_text(out_dir / "metrics.json", metrics.dump(2));
  write_text(out_dir / "config.json", dump_run_config(config));
  io::save_checkpoint(out_dir / "checkpoint", params.named_parameters());

  Graph<T> g;
  const auto out = seg::segment_forward(g.constant(data.front().image.template cast<T>()), params, model);
  const auto maps = io::write_channel_pgms(out_dir, "weighting", out.hgd.codewords.weights.value());

  log << "demo-seg: pixAcc " << result.final_metrics.pix_acc << "  mIoU "
      << result.final_metrics.miou << "  (" << seconds << " s)\n";
  return {result.final_metrics, result.log.back().loss, maps.size()};
}

template <typename T>
FpnDemoResult fpn_demo(const RunConfig& config, const std::filesystem::path& out_dir,
                       std::ostream& log) {
  const std::size_t p3 = config.input_size / 8;
  const auto dims = fpn::pyramid_dims(config.fpn.channels, p3, p3);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  fpn::Pyramid<T> input;
  for (std::size_t l = 0; l < fpn::kLevels; ++l) {
    input[l] = Tensor<T>(dims[l]);
    for (T& v : input[l].data()) v = static_cast<T>(normal(rng));
  }
  auto params = fpn::FpnParams<T>::init(config.fpn, rng);

  Graph<T> g;
  fpn::PyramidVars<T> levels;
  for (std::size_t l = 0; l < fpn::kLevels; ++l) levels[l] = g.constant(input[l]);
  const auto stages = fpn::fpn_decode(levels, params, config.fpn);
  fpn::Pyramid<T> output;
  for (std::size_t l = 0; l < fpn::kLevels; ++l) output[l] = stages.back().outputs[l].value();

  std::filesystem::create_directories(out_dir);
  fpn::save_pyramid(out_dir / "input", input, 8);
  fpn::save_pyramid(out_dir / "output", output, 8);
  write_text(out_dir / "config.json", dump_run_config(config));
  const auto maps =
      io::write_channel_pgms(out_dir, "weighting", stages.back().codewords.weights.value());

  nlohmann::json summary = {{"stages", stages.size()},
                            {"parameters", params.parameter_count()},
                            {"levels", nlohmann::json::array()}};
  for (std::size_t l = 0; l < fpn::kLevels; ++l) {
    summary["levels"].push_back({{"name", fpn::kLevelNames[l]}, {"dims", dims[l]}});
  }
  write_text(out_dir / "summary.json", summary.dump(2));
  log << "demo-fpn: " << stages.size() << " stages, " << params.parameter_count()
      << " parameters, P3 " << shape_str(dims[0]) << " .. P7 " << shape_str(dims[4]) << '\n';
  return {stages.size(), maps.size()};
}

}  // namespace

SegDemoResult run_seg_demo(const RunConfig& config, const std::filesystem::path& out_dir,
                           std::ostream& log) {
  config.validate();
  return config.precision == "f32" ? seg_demo<float>(config, out_dir, log)
                                   : seg_demo<double>(config, out_dir, log);
}

FpnDemoResult run_fpn_demo(const RunConfig& config, const std::filesystem::path& out_dir,
                           std::ostream& log) {
  config.validate();
  return config.precision == "f32" ? fpn_demo<float>(config, out_dir, log)
                                   : fpn_demo<double>(config, out_dir, log);
}

}  // namespace hgd::demos
