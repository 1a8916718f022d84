// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance                      run all criteria, exit 1 if any fails
//   acceptance --only N             run criterion N only
//   acceptance --only 6 --structural  criterion 6 without the per-stage GFLOPs target

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hgd/cost_model.hpp"
#include "hgd/run_config.hpp"
#include "hgd/suites.hpp"
#include "hgd/train.hpp"

namespace {

using namespace hgd;
using Clock = std::chrono::steady_clock;

// Tolerances and published targets.
constexpr double kSoftmaxTol = 1e-12;
constexpr double kSoftmaxSeconds = 10;
constexpr double kOracleTol = 1e-12;
constexpr double kOracleSeconds = 30;
constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 120;
constexpr double kResnet101G = 44.6;
constexpr double kResnet101DilatedG = 223.6;
constexpr double kResnetTol = 0.10;
constexpr double kDilationRatio = 5.01;
constexpr double kDilationRatioTol = 0.05;
constexpr double kEfficientFcnG = 69.6;
constexpr double kEfficientFcnTol = 0.10;
constexpr double kCodewordDeltaG = 2.5;
constexpr double kCodewordDeltaTol = 0.20;
constexpr double kFpnTotalsG[5] = {306.3, 397.7, 489.2, 580.7, 672.1};
constexpr double kFpnStageG = 91.4;
constexpr double kFpnStageTol = 0.15;
constexpr double kEquivarianceTol = 1e-10;
constexpr double kLearnPixAcc = 0.99;
constexpr double kLearnSeconds = 300;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

Tensor<double> random_tensor(Shape dims, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(dims));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.dims() != b.dims()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void criterion_1(Outcome& o) {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> extent(1, 16);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = extent(rng), h = extent(rng), w = extent(rng);
    Graph<double> g;
    const auto a = ops::softmax_spatial(g.constant(random_tensor({n, h, w}, rng, -30, 30)));
    for (std::size_t c = 0; c < n; ++c) {
      double total = 0;
      for (std::size_t i = 0; i < h * w; ++i) total += a.value()[c * h * w + i];
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  const double secs = seconds_since(start);
  o.detail << "1000 tensors, max |sum-1| = " << worst << ", " << secs << " s";
  o.require(worst <= kSoftmaxTol, "sum tolerance 1e-12");
  o.require(secs < kSoftmaxSeconds, "runtime < 10 s");
}

void criterion_2(Outcome& o) {
  const auto start = Clock::now();
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> extent(1, 8);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = extent(rng), d = extent(rng), c = extent(rng), h = extent(rng),
                      w = extent(rng), hh = extent(rng), ww = extent(rng);
    Graph<double> g;
    auto bases = Conv1x1<double>::init(c, d, 1.0, rng);
    auto weighting = Conv1x1<double>::init(c, n, 1.0, rng);
    auto assembly = Conv1x1<double>::init(c, n, 1.0, rng);
    const auto cw = decoder::generate_codewords(g.constant(random_tensor({c, h, w}, rng, -2, 2)),
                                                bases, weighting);
    // Naive Eq. 2: softmax per channel then a double loop over positions.
    const auto& logits = cw.logits.value();
    const auto& b = cw.bases.value();
    Tensor<double> expected({d, n});
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -INFINITY, z = 0;
      for (std::size_t p = 0; p < h * w; ++p) mx = std::max(mx, logits[i * h * w + p]);
      for (std::size_t p = 0; p < h * w; ++p) z += std::exp(logits[i * h * w + p] - mx);
      for (std::size_t p = 0; p < h * w; ++p) {
        const double a = std::exp(logits[i * h * w + p] - mx) / z;
        for (std::size_t k = 0; k < d; ++k) expected.at(k, i) += a * b[k * h * w + p];
      }
    }
    worst = std::max(worst, max_abs_diff(cw.matrix.value(), expected));

    const auto asm_out = decoder::assemble(g.constant(random_tensor({c, hh, ww}, rng, -2, 2)),
                                           cw.matrix, assembly);
    const auto& coeff = asm_out.coefficients.value();
    const auto& cmat = cw.matrix.value();
    Tensor<double> features({d, hh, ww});
    for (std::size_t p = 0; p < hh * ww; ++p)
      for (std::size_t k = 0; k < d; ++k) {
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += coeff[i * hh * ww + p] * cmat.at(k, i);
        features[k * hh * ww + p] = acc;
      }
    worst = std::max(worst, max_abs_diff(asm_out.features.value(), features));
  }
  const double secs = seconds_since(start);
  o.detail << "200 configs, max abs diff = " << worst << ", " << secs << " s";
  o.require(worst <= kOracleTol, "oracle tolerance 1e-12");
  o.require(secs < kOracleSeconds, "runtime < 30 s");
}

void criterion_3(Outcome& o) {
  const auto start = Clock::now();
  GradcheckOptions options;
  options.tol = kGradTol;
  const auto seg = suites::gradcheck_efficientfcn_tiny(0, options, 32);
  const auto fpn = suites::gradcheck_hgd_fpn_tiny(0, options);
  const double secs = seconds_since(start);
  double worst = 0;
  std::size_t groups = 0;
  bool scalars[4] = {false, false, false, false};
  const char* scalar_names[4] = {"fpn.coeff_a", "fpn.coeff_r", "fpn.coeff_s", "fpn.coeff_t"};
  for (const auto* report : {&seg, &fpn}) {
    for (const auto& p : report->params) {
      worst = std::max(worst, p.max_rel_error);
      ++groups;
      for (int i = 0; i < 4; ++i) scalars[i] = scalars[i] || (p.name == scalar_names[i] && p.passed);
    }
  }
  o.detail << groups << " parameter groups, worst rel err = " << worst << ", " << secs << " s";
  o.require(seg.passed, "EfficientFCN-tiny gradcheck");
  o.require(fpn.passed, "HGD-FPN-tiny gradcheck");
  for (int i = 0; i < 4; ++i) o.require(scalars[i], std::string(scalar_names[i]) + " checked");
  o.require(secs < kGradSeconds, "runtime < 2 min");
}

void criterion_4(Outcome& o) {
  const seg::SegModelConfig model;
  std::mt19937_64 rng(404);
  auto params = seg::SegParams<float>::init(model, rng);
  Graph<float> g;
  const auto out = seg::segment_forward(g.constant(Tensor<float>({3, 512, 512}, 0.5f)), params, model);
  const Shape dims = out.hgd.output.dims();
  o.detail << "f_hat dims " << shape_str(dims) << " (codeword_dim " << model.hgd.codeword_dim
           << " + guidance " << model.hgd.guidance_channels << ")";
  o.require(dims == (Shape{2048, 64, 64}), "dims (2048,64,64)");
}

void criterion_5(Outcome& o) {
  using namespace hgd::cost;
  const auto standard = emit_report(resnet_spec(101, 512, 512, false));
  const auto dilated = emit_report(resnet_spec(101, 512, 512, true));
  const auto n256 = emit_report(efficientfcn_spec(256, 1024, 512, 512));
  const auto n512 = emit_report(efficientfcn_spec(512, 1024, 512, 512));
  const double gs = standard.total_macs / 1e9, gd = dilated.total_macs / 1e9;
  const double ge = n256.total_macs / 1e9;
  const double delta = (static_cast<double>(n512.total_macs) - static_cast<double>(n256.total_macs)) / 1e9;
  o.detail << std::setprecision(4) << "resnet101 " << gs << " G, dilated " << gd << " G, ratio "
           << gd / gs << ", efficientfcn n=256 " << ge << " G, n512-n256 " << delta
           << " G, params " << standard.total_params / 1e6 << " M / " << dilated.total_params / 1e6
           << " M";
  o.require(rel_err(gs, kResnet101G) <= kResnetTol, "resnet101 within 10% of 44.6 G");
  o.require(rel_err(gd, kResnet101DilatedG) <= kResnetTol, "dilated within 10% of 223.6 G");
  o.require(rel_err(gd / gs, kDilationRatio) <= kDilationRatioTol, "ratio within 5% of 5.01");
  o.require(rel_err(ge, kEfficientFcnG) <= kEfficientFcnTol, "efficientfcn within 10% of 69.6 G");
  o.require(rel_err(delta, kCodewordDeltaG) <= kCodewordDeltaTol, "codeword delta within 20% of 2.5 G");
  o.require(standard.total_params == dilated.total_params, "equal parameter counts");
}

void criterion_6(Outcome& o, bool structural_only) {
  using namespace hgd::cost;
  std::vector<double> totals;
  std::vector<std::uint64_t> macs, params;
  for (std::size_t k = 1; k <= 5; ++k) {
    const auto r = emit_report(fpn_spec(FpnVariant::kFasterRcnn, 128, 512, k, kDetectionH, kDetectionW));
    macs.push_back(r.total_macs);
    params.push_back(r.total_params);
    totals.push_back(r.total_macs / 1e9);
  }
  bool affine = true, constant_params = true;
  for (std::size_t i = 1; i < 5; ++i) {
    affine = affine && (macs[i] - macs[i - 1] == macs[1] - macs[0]);
    constant_params = constant_params && params[i] == params[0];
  }
  const double step = (static_cast<double>(macs[1]) - static_cast<double>(macs[0])) / 1e9;

  // Executable model at toy scale against the cost model.
  bool toy_ok = true;
  std::size_t toy_count = 0;
  for (std::size_t k = 1; k <= 5; ++k) {
    fpn::FpnConfig config;
    config.channels = 8;
    config.n_codewords = 4;
    config.codeword_dim = 6;
    config.k_recurrence = k;
    std::mt19937_64 rng(606);
    auto exec = fpn::FpnParams<double>::init(config, rng);
    ArchSpec spec;
    Builder b(spec);
    std::array<Feature, 5> levels;
    const auto dims = fpn::pyramid_dims(8, 16, 16);
    for (std::size_t l = 0; l < 5; ++l) levels[l] = {dims[l][0], dims[l][1], dims[l][2]};
    for (std::size_t s = 0; s < k; ++s) {
      append_hgd_fpn_stage(b, "stage" + std::to_string(s), 4, 6, 8, levels, s > 0);
    }
    const auto modeled = emit_report(spec).total_params;
    if (k == 1) toy_count = exec.parameter_count();
    toy_ok = toy_ok && exec.parameter_count() == toy_count && modeled == toy_count;
  }

  o.detail << std::setprecision(5) << "totals k=1..5:";
  for (std::size_t i = 0; i < 5; ++i) o.detail << ' ' << totals[i];
  o.detail << " G (published";
  for (double t : kFpnTotalsG) o.detail << ' ' << t;
  o.detail << "), per-stage " << step << " G vs " << kFpnStageG << " G, params " << params[0] / 1e6
           << " M, toy params " << toy_count;
  o.require(affine, "total exactly affine in k");
  o.require(constant_params, "cost-model params independent of k");
  o.require(toy_ok, "executable params independent of k and equal to cost model");
  if (!structural_only) {
    for (std::size_t i = 1; i < 5; ++i) {
      const double d = totals[i] - totals[i - 1];
      o.require(rel_err(d, kFpnStageG) <= kFpnStageTol,
                "stage " + std::to_string(i + 1) + " increment within 15% of 91.4 G");
    }
  } else {
    o.detail << " (structural sub-checks only)";
  }
}

fpn::FpnConfig acceptance_fpn_config() {
  fpn::FpnConfig c;
  c.channels = 8;
  c.n_codewords = 5;
  c.codeword_dim = 7;
  c.k_recurrence = 3;
  return c;
}

void criterion_7(Outcome& o) {
  const auto config = acceptance_fpn_config();
  std::mt19937_64 rng(707);
  auto params = fpn::FpnParams<double>::init(config, rng);
  for (auto& b : params.stages[0].branches) {
    b.projection.weight.fill(0);
    b.projection.bias.fill(0);
  }
  const auto dims = fpn::pyramid_dims(8, 25, 38);
  fpn::Pyramid<double> input;
  Graph<double> g;
  fpn::PyramidVars<double> levels;
  for (std::size_t l = 0; l < 5; ++l) {
    input[l] = random_tensor(dims[l], rng, -3, 3);
    levels[l] = g.constant(input[l]);
  }
  const auto out = fpn::fpn_decode(levels, params, config).back().outputs;
  std::size_t mismatches = 0;
  for (std::size_t l = 0; l < 5; ++l) {
    for (std::size_t i = 0; i < input[l].size(); ++i) mismatches += out[l].value()[i] != input[l][i];
  }
  o.detail << "k=" << config.k_recurrence << ", P3 " << shape_str(dims[0]) << ", "
           << mismatches << " differing elements";
  o.require(mismatches == 0, "bit-exact residual identity");
}

template <typename Conv>
void permute_rows(Conv& conv, const std::vector<std::size_t>& perm) {
  const auto copy = conv;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < conv.in_channels(); ++j) conv.weight.at(i, j) = copy.weight.at(perm[i], j);
    conv.bias[i] = copy.bias[perm[i]];
  }
}

void criterion_8(Outcome& o) {
  std::mt19937_64 rng(808);
  // Decoder output f_hat.
  decoder::HgdConfig hc;
  hc.n_codewords = 6;
  hc.codeword_dim = 5;
  hc.compressed_channels = 4;
  hc.guidance_channels = 5;
  auto hp = decoder::HgdParams<double>::init(hc, {7, 6, 5}, rng);
  for (auto* conv : {&hp.weighting, &hp.assembly}) {
    for (double& v : conv->bias.data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  }
  const auto e8 = random_tensor({7, 16, 16}, rng, -1, 1);
  const auto e16 = random_tensor({6, 8, 8}, rng, -1, 1);
  const auto e32 = random_tensor({5, 4, 4}, rng, -1, 1);
  const std::vector<std::size_t> perm = {4, 2, 5, 0, 3, 1};
  Graph<double> g;
  const auto before = decoder::hgd_forward(g.constant(e8), g.constant(e16), g.constant(e32), hp, hc).output;
  permute_rows(hp.weighting, perm);
  permute_rows(hp.assembly, perm);
  const auto after = decoder::hgd_forward(g.constant(e8), g.constant(e16), g.constant(e32), hp, hc).output;
  const double seg_diff = max_abs_diff(before.value(), after.value());

  // HGD-FPN output pyramid after k stages.
  auto fc = acceptance_fpn_config();
  fc.n_codewords = 6;
  auto fp = fpn::FpnParams<double>::init(fc, rng);
  const auto dims = fpn::pyramid_dims(8, 20, 20);
  fpn::PyramidVars<double> levels;
  for (std::size_t l = 0; l < 5; ++l) levels[l] = g.constant(random_tensor(dims[l], rng, -1, 1));
  const auto fb = fpn::fpn_decode(levels, fp, fc).back().outputs;
  auto& stage = fp.stages[0];
  permute_rows(stage.weighting, perm);
  for (auto& b : stage.branches) permute_rows(b.assembly, perm);
  const auto fa = fpn::fpn_decode(levels, fp, fc).back().outputs;
  double fpn_diff = 0;
  for (std::size_t l = 0; l < 5; ++l) fpn_diff = std::max(fpn_diff, max_abs_diff(fb[l].value(), fa[l].value()));

  o.detail << "max diff f_hat " << seg_diff << ", P3*..P7* " << fpn_diff;
  o.require(seg_diff <= kEquivarianceTol, "f_hat within 1e-10");
  o.require(fpn_diff <= kEquivarianceTol, "pyramid within 1e-10");
}

void criterion_9(Outcome& o) {
  const auto config = load_run_config(HGD_CONFIG_DIR "/demo_seg.json");
  const auto model = config.seg_model();
  const auto data = seg::synth_dataset(config.seed, config.samples, config.input_size, config.num_classes);
  std::mt19937_64 rng(config.seed);
  auto params = seg::SegParams<float>::init(model, rng);
  seg::TrainOptions options;
  options.seed = config.seed;
  options.threads = seg::threads_from_env();
  const auto start = Clock::now();
  const auto result = seg::train_segmentation(params, model, config.train, data, options);
  const double secs = seconds_since(start);
  const auto& t = config.train;
  o.detail << data.size() << " images " << config.input_size << "x" << config.input_size << ", "
           << config.num_classes << " classes, " << t.max_iter << " steps, pixAcc "
           << result.final_metrics.pix_acc << ", mIoU " << result.final_metrics.miou << ", " << secs
           << " s";
  o.require(config.input_size == 64 && config.num_classes == 5 && data.size() == 32, "task shape");
  o.require(t.max_iter <= 500 && t.power == 0.9 && t.momentum == 0.9 && t.weight_decay == 1e-4,
            "published optimiser settings");
  o.require(result.final_metrics.pix_acc >= kLearnPixAcc, "pixAcc >= 0.99");
  o.require(secs < kLearnSeconds, "runtime < 5 min");
}

void criterion_10(Outcome& o) {
  auto model = suites::tiny_seg_model();
  std::mt19937_64 rng_a(1010), rng_b(1010);
  auto with = seg::SegParams<double>::init(model, rng_a);
  auto ablated_model = model;
  ablated_model.hgd.transfer_enabled = false;
  auto without = seg::SegParams<double>::init(ablated_model, rng_b);
  std::mt19937_64 rng(1011);
  const auto image = random_tensor({3, 64, 64}, rng, 0, 1);
  Graph<double> g;
  const auto a = seg::segment_forward(g.constant(image), with, model);
  const auto b = seg::segment_forward(g.constant(image), without, ablated_model);
  const bool same_shapes = a.hgd.guidance.guided.dims() == b.hgd.guidance.guided.dims() &&
                           a.hgd.output.dims() == b.hgd.output.dims() &&
                           a.logits.dims() == b.logits.dims() &&
                           with.parameter_count() == without.parameter_count();
  const bool identical = b.hgd.guidance.guided.value().storage() == b.hgd.guidance.raw.value().storage();
  const bool transfer_active = a.hgd.guidance.guided.value().storage() != a.hgd.guidance.raw.value().storage();
  o.detail << "f_hat " << shape_str(b.hgd.output.dims()) << ", G_bar == G: " << (identical ? "yes" : "no");
  o.require(same_shapes, "shapes and parameter count unchanged");
  o.require(identical, "G_bar == G bit-exactly");
  o.require(transfer_active, "enabled transfer changes G_bar");
}

const char* kTitles[10] = {
    "weighting-map normalisation",   "codeword/assembly oracle equivalence",
    "gradient checks",               "decoder output shape",
    "cost model vs published table", "HGD-FPN recurrence cost",
    "residual identity",             "codeword permutation equivariance",
    "learnability smoke test",       "codeword-transfer ablation wiring"};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  bool structural = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (arg == "--structural") {
      structural = true;
    } else {
      std::cerr << "usage: acceptance [--only N] [--structural]\n";
      return 2;
    }
  }
  if (only < 0 || only > 10) {
    std::cerr << "acceptance: criterion must be 1..10\n";
    return 2;
  }
  const std::function<void(Outcome&)> checks[10] = {
      criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
      [&](Outcome& o) { criterion_6(o, structural); },
      criterion_7, criterion_8, criterion_9, criterion_10};
  bool all = true;
  for (int id = 1; id <= 10; ++id) {
    if (only != 0 && id != only) continue;
    Outcome o;
    try {
      checks[id - 1](o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    all = all && o.pass;
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  "
              << kTitles[id - 1] << " -- " << o.detail.str() << std::endl;
  }
  return all ? 0 : 1;
}
