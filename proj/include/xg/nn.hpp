#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xg/ops.hpp"
#include "xg/tensor.hpp"

namespace xg::nn {

enum class Activation { ReLU, Softplus };
enum class NormMode { BatchLearned, CFN, FrozenBN, NoBN };
enum class ArchFamily { TinyResNet, TinyVGG };
enum class Mode { Train, Eval };

// Overrides the model's normalization behavior for a single forward; used by
// the attack scenarios that bypass normalization or train against CFN.
enum class NormOverride { None, Bypass, ForceCFN };

struct ArchSpec {
  ArchFamily family = ArchFamily::TinyResNet;
  std::vector<int> stage_widths = {16, 32, 64};
  int blocks_per_stage = 2;
  Activation activation = Activation::ReLU;
  double softplus_beta = 1.0;
  int num_classes = 4;
  int in_channels = 3;
  int image_side = 16;
  bool with_norm = true;
};

bool operator==(const ArchSpec& a, const ArchSpec& b);

struct BatchNorm2d {
  Tensor gamma, beta;               // learned affine
  Tensor running_mean, running_var; // buffers, never in any graph
  double epsilon = 1e-5;
  double momentum = 0.9;  // weight kept on the previous running value
  bool trainable = true;
  bool stats_ready = false;
};

struct CFNLayer {
  double epsilon = 1e-5;
};

// normalizes with batch statistics over (M,H,W), applies gamma/beta, and
// folds the batch statistics into the running averages
Tensor bn_forward_train(BatchNorm2d& layer, const Tensor& z);
// frozen running statistics; errors if the layer never saw training data
Tensor bn_forward_eval(const BatchNorm2d& layer, const Tensor& z);
// parameter-free per-channel normalization over the current batch
Tensor cfn_forward(const CFNLayer& layer, const Tensor& x);

struct ConvUnit {
  Tensor w, b;
  int stride = 1;
  int pad = 1;
};

struct NormSite {
  BatchNorm2d bn;
};

struct ResBlock {
  bool downsample = false;  // 2x2 average-pool ahead of the block
  ConvUnit conv1, conv2;
  NormSite n1, n2;
  bool has_proj = false;  // 1x1 projection shortcut on width change
  ConvUnit proj;
  NormSite nproj;
};

constexpr uint8_t kKindConvW = 0, kKindConvB = 1, kKindLinW = 2, kKindLinB = 3,
                  kKindBnGamma = 4, kKindBnBeta = 5, kKindBnMean = 6, kKindBnVar = 7;

struct NamedTensor {
  std::string name;
  uint8_t kind;
  Tensor t;
};

using TapMap = std::map<std::string, Tensor>;

class Model {
 public:
  ArchSpec arch;
  NormMode norm_mode = NormMode::BatchLearned;
  uint64_t seed = 0;

  // tiny-resnet topology
  ConvUnit stem;
  NormSite stem_norm;
  std::vector<std::vector<ResBlock>> stages;
  // tiny-vgg topology
  std::vector<ConvUnit> vgg_convs;
  std::vector<NormSite> vgg_norms;
  Tensor fc1_w, fc1_b;  // vgg hidden layer
  // classification head (both families)
  Tensor fc_w, fc_b;

  // Train mode computes batch statistics at BN sites and updates the running
  // averages; Eval uses the frozen ones. `taps` collects named activations
  // (each residual block / vgg conv publishes "<name>.out").
  Tensor forward(const Tensor& x, Mode mode = Mode::Eval,
                 NormOverride ov = NormOverride::None, TapMap* taps = nullptr);

  std::vector<NamedTensor> entries() const;  // canonical snapshot order
  // weights the optimizer may touch; BN gamma/beta only under BatchLearned
  // with no override
  std::vector<Tensor> trainable_params(NormOverride ov = NormOverride::None) const;
  std::vector<NormSite*> norm_sites();
  std::vector<const NormSite*> norm_sites() const;
  bool stats_ready() const;
  void mark_stats_ready(bool ready);

  std::string default_target_layer() const;  // last activation tap
  std::vector<std::string> tap_names() const;

  size_t parameter_count() const;
  Model clone() const;
  void zero_grad();
};

Model build_model(const ArchSpec& spec, uint64_t seed);

// validates mode against the architecture (NoBN only on norm-free builds);
// flips evaluation behavior only, never weights
void set_norm_mode(Model& m, NormMode mode);

struct SnapshotEntry {
  std::string name;
  uint8_t kind;
  Shape shape;
  std::vector<double> values;
};

struct Snapshot {
  ArchSpec arch;
  NormMode norm_mode = NormMode::BatchLearned;
  uint64_t seed = 0;
  bool stats_ready = false;
  std::vector<SnapshotEntry> entries;
};

Snapshot snapshot(const Model& m);
Model from_snapshot(const Snapshot& s);
std::vector<uint8_t> serialize_snapshot(const Snapshot& s);
Snapshot deserialize_snapshot(const std::vector<uint8_t>& bytes);
void save_weights(const Model& m, const std::string& path);
Model load_weights(const std::string& path);

const char* norm_mode_name(NormMode m);
NormMode norm_mode_from_name(const std::string& s);
const char* family_name(ArchFamily f);
ArchFamily family_from_name(const std::string& s);
const char* activation_name(Activation a);
Activation activation_from_name(const std::string& s);

}  // namespace xg::nn
