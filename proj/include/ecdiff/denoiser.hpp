#pragma once

// Noise-estimation network: condition/noisy-sample cross attention, graph
// convolutional transformer blocks and the U-shaped multi-scale stack.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecdiff/autodiff.hpp"
#include "ecdiff/connectivity.hpp"
#include "ecdiff/matrix.hpp"
#include "ecdiff/params.hpp"

namespace ecdiff {

struct DenoiserConfig {
  std::size_t n_rois = 90;
  std::size_t n_points = 187;
  /// Internal feature width; the U-shape runs at width, width/2, width/4.
  std::size_t width = 192;
  std::size_t con_blocks = 2;
  std::size_t spatial_heads = 4;
  std::size_t temporal_heads = 2;
  bool use_ushape = true;
  bool use_transformer = true;
  /// Spatial attention normally attends over ROI rows and temporal attention
  /// over feature columns; set to exchange the two axes.
  bool swap_attention_axes = false;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
  /// Feature widths of the graph transformer levels, outermost first.
  std::vector<std::size_t> level_widths() const;
};

template <typename T>
using Var = typename Graph<T>::Var;

// ---- layer building blocks -------------------------------------------------

/// propagation * x * w + b (no activation).
template <typename T>
Var<T> gcn_layer(Graph<T>& g, Var<T> x, Var<T> propagation, Var<T> w, Var<T> b);

template <typename T>
struct AttentionWeights {
  Var<T> wq, wk, wv, wo, bo;
};

/// Scaled dot-product self-attention over the rows of x with `heads` heads.
template <typename T>
Var<T> multi_head_attention(Graph<T>& g, Var<T> x, std::size_t heads, const AttentionWeights<T>& w);

template <typename T>
struct ConAttentionWeights {
  Var<T> norm_cond_gain, norm_cond_bias, norm_noisy_gain, norm_noisy_bias;
  Var<T> lm1_w, lm1_b, lm2_w, lm2_b, lm3_w, lm3_b;
};

/// Cross attention aligning the projected condition with the noisy features:
/// Q = LM1(Norm(cond)), K = LM2(Norm(noisy)), out = LM3(softmax(QK^T/sqrt(d)) K) + noisy.
template <typename T>
Var<T> con_attention_block(Graph<T>& g, Var<T> cond_feat, Var<T> noisy_feat, const ConAttentionWeights<T>& w);

template <typename T>
struct GraphConFormerWeights {
  std::optional<Var<T>> norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  std::optional<AttentionWeights<T>> spatial, temporal;
  Var<T> gcn1_w, gcn1_b, gcn2_w, gcn2_b;
};

/// Spatial attention, temporal attention and two graph convolutions, each
/// with a residual connection. Output has the input's shape.
template <typename T>
Var<T> graph_conformer_block(Graph<T>& g, Var<T> x, Var<T> propagation, const DenoiserConfig& cfg,
                             const GraphConFormerWeights<T>& w);

/// Interleaved sinusoidal encoding: entry 2i = sin(t / 10000^(2i/d)),
/// entry 2i+1 = cos(t / 10000^(2i/d)).
std::vector<double> time_encoding(int t, std::size_t width);

// ---- parameters --------------------------------------------------------------

/// Registers every denoiser array (shapes depend only on cfg) with zeros.
template <typename T>
void register_denoiser_params(ModelParams<T>& params, const DenoiserConfig& cfg);

/// Binds the weights for one graph transformer block registered under `prefix`.
template <typename T>
GraphConFormerWeights<T> bind_graph_conformer(Graph<T>& g, const ModelParams<T>& p, const std::string& prefix);
template <typename T>
ConAttentionWeights<T> bind_con_attention(Graph<T>& g, const ModelParams<T>& p, const std::string& prefix);
template <typename T>
AttentionWeights<T> bind_attention(Graph<T>& g, const ModelParams<T>& p, const std::string& prefix);

// ---- the network ---------------------------------------------------------------

/// Builds the noise estimate eps_theta(noisy, t | cond, G) on graph `g`.
template <typename T>
Var<T> predict_noise(Graph<T>& g, const ModelParams<T>& params, const DenoiserConfig& cfg, Var<T> propagation,
                     Var<T> noisy, int t, Var<T> cond);

/// Inference convenience: evaluates the noise estimate without recording gradients.
template <typename T>
Matrix<T> predict_noise(const Matrix<T>& noisy, int t, const Matrix<T>& cond, const StructuralConnectivity& sc,
                        const ModelParams<T>& params, const DenoiserConfig& cfg);

}  // namespace ecdiff
