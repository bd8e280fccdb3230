#pragma once

// Full network assembly: per-step embedding (posture ⊕ motion), stacked
// temporal mixers, max-pooled classifier head, cross-entropy training with
// momentum SGD, evaluation, and versioned checkpoints. Everything is
// deterministic given the seeds; reruns are bitwise-identical.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "khpn/gsp.hpp"
#include "khpn/mixer.hpp"
#include "khpn/nn.hpp"
#include "khpn/pointcloud.hpp"
#include "khpn/rmm.hpp"
#include "khpn/tensor.hpp"

namespace khpn {

struct ModelConfig {
  int64_t frames = 24;   // T, exact input length
  int64_t points = 256;  // N, exact per-frame point count
  int64_t classes = 4;
  std::string arch = "full";  // "full" | "gsp_only" (posture stream only)
  ClipSpec clip;              // motion clip geometry
  std::vector<int64_t> gamma1_widths{24, 24};
  std::vector<int64_t> gamma2_widths{32, 12};  // back() = motion width m
  std::vector<SpatialEncodeLayerSpec> gsp = default_gsp_specs();
  GroupingSpec grouping = default_grouping();
  int64_t mixer_stacks = 2;
  SplineGrid grid = make_uniform_grid(-1.0, 1.0, 5, 3);
  int64_t classifier_hidden = 64;

  int64_t posture_width() const;  // d
  int64_t motion_width() const;   // m (0 for gsp_only)
  int64_t embed_width() const;    // d+m, the mixer/KAN width
  int64_t classifier_input_width() const;
  void check() const;
};

// Text form (key=value lines) round-trips exactly; the digest is FNV-1a 64
// over those bytes and names the architecture in checkpoints.
std::string config_to_text(const ModelConfig& cfg);
ModelConfig config_from_text(const std::string& text);
uint64_t config_digest(const ModelConfig& cfg);

struct LabeledSample {
  PointCloudSequence seq;
  int64_t label = -1;
};
using Dataset = std::vector<LabeledSample>;

struct ModelParams {
  ModelConfig cfg;
  GspParams gsp;
  RmmParams rmm;  // unused when arch == gsp_only
  std::vector<MixerParams> mixers;
  Linear head_hidden, head_out;
  ParamStore store;  // every trainable tensor, name -> tensor
};

ModelParams make_model(const ModelConfig& cfg, std::mt19937_64& rng);

// [T, d+m]: per step, the posture vector of the frame followed by the
// motion vector of the step.
Tensor embed_dhyperpoints(const PointCloudSequence& seq,
                          const ModelParams& params);

// [classes] logits.
Tensor model_forward(const PointCloudSequence& seq, const ModelParams& params);

// Softmax cross-entropy of one logits vector against an integer label,
// computed via the shifted log-sum-exp; returns a one-element tensor.
Tensor cross_entropy(const Tensor& logits, int64_t label);

// Lowest index among maximal logits.
int64_t argmax_lowest(const Tensor& logits);

struct TrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 24;
  double lr = 0.01;
  double momentum = 0.9;
  bool cosine = true;  // epoch-wise half-cosine decay of lr
  uint64_t seed = 7;   // shuffle order
  std::string optimizer = "sgd";
  std::string checkpoint_dir;  // empty: keep no checkpoints
};

struct MetricRow {
  int64_t epoch = 0;  // 1-based
  std::string split;  // "train" | "test"
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  bool aborted = false;  // non-finite loss; params from the last finite step
  int64_t epochs_run = 0;
};

// Batch-mean cross-entropy, gradients accumulated sample-by-sample in batch
// order, momentum SGD step per batch. `eval` may be empty (no test rows).
TrainResult train_model(ModelParams& params, const Dataset& train,
                        const Dataset& eval, const TrainConfig& tcfg);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int64_t> confusion;  // classes x classes, row = true label
};

EvalResult evaluate_model(const Dataset& data, const ModelParams& params);

// Header "epoch,split,loss,accuracy", one row per metric, %.17g numbers.
std::string metrics_to_csv(const std::vector<MetricRow>& rows);

// Binary container: magic "KHPN", u32 format version, u64 config digest,
// u32 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
// i64 dims, f64 values — all little-endian. Loading validates magic,
// version, digest, names and shapes against the given params.
void save_checkpoint(const std::string& path, const ModelParams& params);
void load_checkpoint(const std::string& path, ModelParams& params);

}  // namespace khpn
