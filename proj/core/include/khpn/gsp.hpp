#pragma once

// Per-frame posture encoder: a pyramid of set-abstraction layers. Each layer
// samples centroids, groups neighbors, gates the grouped inputs with
// channel+spatial attention, applies a shared point transform, and max-pools
// per region. Time never enters: the encoder sees one frame at a time.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "khpn/nn.hpp"
#include "khpn/pointcloud.hpp"
#include "khpn/tensor.hpp"

namespace khpn {

struct SpatialEncodeLayerSpec {
  int64_t centroids = 1;
  int64_t k = 1;        // neighbors per centroid; 0 groups every point
  double radius = 1.0;  // ball radius (ignored when k == 0)
  std::vector<int64_t> widths;  // shared transform (T-MLP) widths
  bool attention = true;
  int64_t ratio = 4;   // channel reduction; must divide the grouped width
  int64_t kernel = 7;  // spatial conv width, odd
};

// Channel stage: a shared bottleneck perceptron over mean- and max-pooled
// channel descriptors, summed before the sigmoid. Spatial stage: a 1-D conv
// over per-slot channelwise mean/max maps. Neighbor slots arrive sorted by
// ascending distance (grouping canonicalizes order), which is what makes a
// convolution along that axis well-defined.
struct CbamParams {
  Linear reduce;  // [C/ratio, C]
  Linear expand;  // [C, C/ratio]
  Tensor conv_w;  // [kernel, 2]
  Tensor conv_b;  // [1]
  int64_t ratio = 4;
  int64_t kernel = 7;
};

CbamParams make_cbam(int64_t channels, int64_t ratio, int64_t kernel,
                     std::mt19937_64& rng);

struct CbamScores {
  Tensor channel;   // [M, 1, C]
  Tensor spatial;   // [M, k, 1]
  Tensor combined;  // [M, k, C], channel * spatial; multiplies the input
};

// Mean and max over the neighbor axis of [M, k, C] -> two [M, C] tensors,
// the inputs to the channel-attention perceptron. Exposed for verification.
std::pair<Tensor, Tensor> channel_descriptors(const Tensor& features);

CbamScores cbam_attention(const Tensor& features, const CbamParams& p);

struct SpatialLayerParams {
  Mlp tmlp;
  CbamParams cbam;  // unused when the spec disables attention
};

// in_features = per-point feature width of the incoming cloud; the grouped
// row width is 4 + in_features (offset, distance, features).
SpatialLayerParams make_spatial_layer(const SpatialEncodeLayerSpec& spec,
                                      int64_t in_features,
                                      std::mt19937_64& rng);

struct SpatialEncodeResult {
  PointCloudFrame centroids;             // coords only
  std::vector<int64_t> centroid_indices; // into the input frame
  Tensor features;                       // [M, tmlp_out + 3]
};

// `features` is [N, C] or undefined when the frame carries no features.
// Per neighbor: input = [coords - centroid; distance; features], gated by
// attention scores, shared transform, max over the k slots, and the centroid
// coordinates appended to the pooled vector.
SpatialEncodeResult spatial_encode_layer(const PointCloudFrame& frame,
                                         const Tensor& features,
                                         const SpatialEncodeLayerSpec& spec,
                                         const SpatialLayerParams& params);

struct GspParams {
  std::vector<SpatialEncodeLayerSpec> specs;
  std::vector<SpatialLayerParams> layers;
  int64_t in_features = 0;

  int64_t out_width() const {
    return specs.empty() ? 0 : specs.back().widths.back() + 3;
  }
};

GspParams make_gsp(const std::vector<SpatialEncodeLayerSpec>& specs,
                   int64_t in_features, std::mt19937_64& rng);

// Three-layer pyramid sized for desk-scale training. Transform widths are
// chosen so every layer's grouped input width is divisible by the channel
// reduction ratio (4, 28, 36 with ratio 4).
std::vector<SpatialEncodeLayerSpec> default_gsp_specs();

// Posture vector [out_width()] for one frame. The last layer must pool to a
// single region.
Tensor gsp_forward(const PointCloudFrame& frame, const GspParams& p);

// Posture matrix [T, out_width()]: the function of gsp_forward applied to
// every frame, with the tensor work of all frames batched through shared
// kernels per layer. Serves as the training path; gsp_forward is the
// per-frame reference it is tested against. Values can differ from that
// reference in the last bits (the BLAS rounds row blocks position-
// dependently); reruns on the same input are bitwise stable. Frames may
// differ in size except at layers that group every point (k == 0), which
// need one common point count.
Tensor gsp_forward_seq(const PointCloudSequence& seq, const GspParams& p);

}  // namespace khpn
