#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hgd/hgd_decoder.hpp"

// Analytic multiply-accumulate and parameter counts. One MAC is counted as
// one FLOP. Resizes, pooling and element-wise ops cost zero MACs.
namespace hgd::cost {

enum class LayerKind : std::uint8_t {
  kConv,         // k x k, stride, dilation; "same" padding
  kDeconv,       // transposed k x k convolution, stride s
  kPool,         // max pooling, stride s
  kResize,       // bilinear / nearest resampling
  kAssembly,     // codeword product: n codewords of dim c over h x w positions
  kElementwise,  // add, concat, relu, softmax, global pooling
  kScalars,      // learned scalars; c_out holds their count
};

const char* kind_name(LayerKind kind);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t h_in = 0;
  std::size_t w_in = 0;
  std::size_t h_out = 0;
  std::size_t w_out = 0;
  bool bias = false;
  std::size_t n = 0;    // codewords (kAssembly)
  bool shared = false;  // weights reused from an earlier layer: zero params
};

struct LayerCost {
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

/// Throws ConfigError for inconsistent extents or a kind it cannot count.
LayerCost count_layer(const LayerSpec& spec);

struct ArchSpec {
  std::string name;
  std::size_t input_h = 0;
  std::size_t input_w = 0;
  std::vector<std::pair<std::string, std::string>> tags;
  std::vector<LayerSpec> layers;
};

struct CostRow {
  std::string layer;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

struct CostReport {
  std::string arch;
  std::vector<CostRow> rows;  // spec order
  std::uint64_t total_macs = 0;
  std::uint64_t total_params = 0;
};

inline constexpr const char* kConventionNote =
    "1 MAC = 1 FLOP; resize, pooling and element-wise ops count 0 MACs; params in units";

CostReport emit_report(const ArchSpec& spec);
/// "layer,macs,params" header, one row per layer, totals row last.
std::string render_csv(const CostReport& report);
std::string render_text(const CostReport& report);

/// Feature map handed between spec builders.
struct Feature {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
};

/// Appends layers to a spec while tracking the current feature map.
class Builder {
 public:
  explicit Builder(ArchSpec& spec) : spec_(spec) {}

  Feature conv(const std::string& name, Feature in, std::size_t c_out, std::size_t kernel,
               std::size_t stride = 1, std::size_t dilation = 1, bool bias = false,
               bool shared = false);
  Feature deconv(const std::string& name, Feature in, std::size_t c_out, std::size_t kernel,
                 std::size_t stride, bool bias = false);
  Feature pool(const std::string& name, Feature in, std::size_t stride);
  Feature resize(const std::string& name, Feature in, std::size_t h, std::size_t w);
  Feature elementwise(const std::string& name, Feature out);
  void assembly(const std::string& name, std::size_t n, std::size_t c, std::size_t h,
                std::size_t w);
  void scalars(const std::string& name, std::size_t count, bool shared = false);

 private:
  ArchSpec& spec_;
};

struct ResnetTaps {
  Feature c2, c3, c4, c5;  // OS 4, 8, 16, 32 (OS 4, 8, 8, 8 when dilated)
};

/// Bottleneck ResNet (7x7 stem, stride on the 3x3). The dilated variant keeps
/// the last two stages at OS 8 with dilation 2 and 4. No bias in the convs.
ResnetTaps append_resnet(Builder& b, std::size_t depth, std::size_t h, std::size_t w,
                         bool dilated);

/// ResNet-50/101 plus the plain FCN head (3x3 2048->512, 1x1 512->classes)
/// when num_classes > 0. Throws ConfigError for other depths or sizes not
/// divisible by 32.
ArchSpec resnet_spec(std::size_t depth, std::size_t h, std::size_t w, bool dilated,
                     std::size_t num_classes = 60);

enum class UnetUpsample { kBilinear, kDeconv };

/// ResNet-101 with a two-step decoder back to OS 8: upsample, concatenate the
/// encoder skip, 3x3 conv to 512; then a 1x1 classifier.
ArchSpec unet_spec(UnetUpsample mode, std::size_t h, std::size_t w, std::size_t num_classes = 60);

/// The holistically-guided decoder layers, in execution order, on top of
/// taps with the given channels at OS 8/16/32. Mirrors HgdParams exactly when
/// compress_kernel = 1.
Feature append_hgd_decoder(Builder& b, const decoder::HgdConfig& config,
                           const std::array<Feature, 3>& taps, std::size_t compress_kernel = 1);

struct EfficientFcnCostOptions {
  std::size_t depth = 101;
  std::size_t compressed_channels = 512;
  std::size_t guidance_channels = 0;  // 0: equal to c
  std::size_t compress_kernel = 3;
  std::size_t num_classes = 60;
};

ArchSpec efficientfcn_spec(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                           const EfficientFcnCostOptions& options = {});

/// Detection input assumed when none is given: 800x1333 padded to multiples of 128.
inline constexpr std::size_t kDetectionH = 896;
inline constexpr std::size_t kDetectionW = 1408;

enum class FpnVariant {
  kFasterRcnn,  // five levels at OS 4..64, top level by max pooling
  kRetinaNet,   // five levels at OS 8..128, extra levels by strided convs
};

/// Throws ConfigError for unknown names.
FpnVariant parse_fpn_variant(const std::string& name);

/// Layers of one HGD-FPN stage over five 'channels'-wide levels with the
/// given spatial sizes. Weights are marked shared when `shared` is set.
void append_hgd_fpn_stage(Builder& b, const std::string& prefix, std::size_t n, std::size_t c,
                          std::size_t channels, const std::array<Feature, 5>& levels,
                          bool shared);

/// ResNet-50 + FPN, followed by k HGD-FPN stages when n > 0 and k > 0.
/// Detector heads are not included.
ArchSpec fpn_spec(FpnVariant variant, std::size_t n, std::size_t c, std::size_t k, std::size_t h,
                  std::size_t w, bool share_params = true, std::size_t channels = 256);

/// Maps a CLI architecture name to a spec. Unknown names throw ConfigError.
struct ArchRequest {
  std::string name;
  std::size_t n = 0;  // 0: architecture default
  std::size_t c = 0;
  std::size_t k = 0;
  std::size_t h = 0;  // 0: architecture default input
  std::size_t w = 0;
};
ArchSpec arch_by_name(const ArchRequest& request);
std::vector<std::string> arch_names();

}  // namespace hgd::cost
