// hgd: command-line entry point.
//
//   hgd gradcheck [--config FILE] [--corrupt-backward]
//   hgd cost ARCH [--n N] [--c C] [--k K] [--input S|HxW] [--format csv|text]
//   hgd demo-seg [--config FILE] --out DIR
//   hgd demo-fpn [--config FILE] --out DIR
//   hgd dump --tensor FILE [--values N]
//
// Exit codes: 0 success, 1 verification failure, 2 usage or input error.
// HGD_THREADS caps the worker threads used for batch passes.

#include <algorithm>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hgd/cost_model.hpp"
#include "hgd/demos.hpp"
#include "hgd/suites.hpp"
#include "hgd/tensor_io.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

hgd::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? hgd::RunConfig{} : hgd::load_run_config(path);
}

int cmd_gradcheck(const std::string& config_path, bool corrupt) {
  const hgd::RunConfig config = config_or_default(config_path);
  if (config.precision != "f64") {
    std::cerr << "gradcheck: refusing precision '" << config.precision
              << "'; finite differences at tolerance 1e-5 need f64\n";
    return kUsage;
  }
  hgd::GradcheckOptions options;
  options.seed = config.seed;
  options.graph.corrupt_backward = corrupt;
  std::optional<hgd::ParamCheck> worst;
  bool passed = true;
  auto run = [&](const char* title, const hgd::GradcheckReport& report) {
    std::cout << "== " << title << '\n' << report.to_string();
    passed = passed && report.passed;
    const auto* w = report.worst();
    if (w && (!worst || w->max_rel_error > worst->max_rel_error)) worst = *w;
  };
  run("efficientfcn-tiny", hgd::suites::gradcheck_efficientfcn_tiny(config.seed, options));
  run("hgd-fpn-tiny", hgd::suites::gradcheck_hgd_fpn_tiny(config.seed, options));
  if (worst) {
    std::cout << (passed ? "PASS" : "FAIL") << "  worst: " << worst->name
              << "  max_rel=" << worst->max_rel_error << "  (tol " << options.tol << ")\n";
  }
  return passed ? kOk : kFailed;
}

bool parse_extent(const std::string& text, std::size_t& h, std::size_t& w) {
  const auto x = text.find('x');
  try {
    std::size_t used = 0;
    if (x == std::string::npos) {
      h = w = std::stoul(text, &used);
      return used == text.size();
    }
    h = std::stoul(text.substr(0, x), &used);
    if (used != x) return false;
    const std::string rest = text.substr(x + 1);
    w = std::stoul(rest, &used);
    return used == rest.size();
  } catch (const std::exception&) {
    return false;
  }
}

int cmd_cost(const std::string& arch, std::size_t n, std::size_t c, std::size_t k,
             const std::string& input, const std::string& format) {
  const auto names = hgd::cost::arch_names();
  if (std::find(names.begin(), names.end(), arch) == names.end()) {
    std::cerr << "cost: unknown architecture '" << arch << "'; known:";
    for (const auto& name : names) std::cerr << ' ' << name;
    std::cerr << '\n';
    return kUsage;
  }
  hgd::cost::ArchRequest request{arch, n, c, k, 0, 0};
  if (!input.empty() && !parse_extent(input, request.h, request.w)) {
    std::cerr << "cost: --input expects S or HxW, got '" << input << "'\n";
    return kUsage;
  }
  const auto report = hgd::cost::emit_report(hgd::cost::arch_by_name(request));
  std::cout << (format == "text" ? hgd::cost::render_text(report) : hgd::cost::render_csv(report));
  return kOk;
}

int cmd_dump(const std::string& path, std::size_t values) {
  const auto any = hgd::io::load_hgdt(path);
  std::visit(
      [&](const auto& t) {
        std::cout << path << ": dtype " << hgd::io::dtype_name(hgd::io::dtype_of(any)) << "  dims "
                  << hgd::shape_str(t.dims()) << "  elements " << t.size() << '\n';
        if (t.size() == 0) return;
        double lo = t[0], hi = t[0], sum = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double v = t[i];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
          sum += v;
        }
        std::cout << "min " << lo << "  max " << hi << "  mean " << sum / static_cast<double>(t.size())
                  << '\n';
        for (std::size_t i = 0; i < std::min(values, t.size()); ++i) {
          std::cout << (i ? " " : "") << t[i];
        }
        if (values > 0) std::cout << (t.size() > values ? " ...\n" : "\n");
      },
      any);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Holistically-guided decoding: demos, verification and cost reports"};
  app.require_subcommand(1);

  std::string config_path;
  bool corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the tiny networks");
  gradcheck->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
  gradcheck->add_flag("--corrupt-backward", corrupt, "Inject a backward-pass fault (debug)");

  std::string arch, input, format = "csv";
  std::size_t n = 0, c = 0, k = 0;
  auto* cost = app.add_subcommand("cost", "MAC and parameter report of a named architecture");
  cost->add_option("arch", arch, "Architecture name")->required();
  cost->add_option("--n", n, "Number of codewords");
  cost->add_option("--c", c, "Codeword dimension");
  cost->add_option("--k", k, "HGD-FPN recurrence");
  cost->add_option("--input", input, "Input size, S or HxW");
  cost->add_option("--format", format, "csv or text")->check(CLI::IsMember({"csv", "text"}));

  std::string out_dir;
  auto* demo_seg = app.add_subcommand("demo-seg", "Train EfficientFCN on the synthetic task");
  demo_seg->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
  demo_seg->add_option("--out", out_dir, "Output directory")->required();
  auto* demo_fpn = app.add_subcommand("demo-fpn", "Decode a random pyramid with HGD-FPN");
  demo_fpn->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
  demo_fpn->add_option("--out", out_dir, "Output directory")->required();

  std::string tensor;
  std::size_t values = 8;
  auto* dump = app.add_subcommand("dump", "Describe an HGDT tensor file");
  dump->add_option("--tensor", tensor, "HGDT file")->required()->check(CLI::ExistingFile);
  dump->add_option("--values", values, "Leading values to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gradcheck) return cmd_gradcheck(config_path, corrupt);
    if (*cost) return cmd_cost(arch, n, c, k, input, format);
    if (*demo_seg) {
      hgd::demos::run_seg_demo(config_or_default(config_path), out_dir, std::cout);
      return kOk;
    }
    if (*demo_fpn) {
      hgd::demos::run_fpn_demo(config_or_default(config_path), out_dir, std::cout);
      return kOk;
    }
    if (*dump) return cmd_dump(tensor, values);
  } catch (const hgd::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const hgd::io::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}
