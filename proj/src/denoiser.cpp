#include "ecdiff/denoiser.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace ecdiff {

namespace {

void need(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("denoiser config: " + msg);
}

std::size_t row_heads(const DenoiserConfig& c) { return c.swap_attention_axes ? c.temporal_heads : c.spatial_heads; }
std::size_t col_heads(const DenoiserConfig& c) { return c.swap_attention_axes ? c.spatial_heads : c.temporal_heads; }

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b) {
  return g.add_row(g.matmul(x, w), b);
}

// Attention over the columns of x: runs row attention on the transpose.
template <typename T>
Var<T> column_attention(Graph<T>& g, Var<T> x, std::size_t heads, const AttentionWeights<T>& w) {
  return g.transpose(multi_head_attention(g, g.transpose(x), heads, w));
}

template <typename T>
void add_attention(ModelParams<T>& p, const std::string& prefix, std::size_t dim) {
  for (const char* n : {".wq", ".wk", ".wv", ".wo"}) p.add(prefix + n, dim, dim);
  p.add(prefix + ".bo", 1, dim);
}

template <typename T>
void add_norm(ModelParams<T>& p, const std::string& prefix, std::size_t dim) {
  p.add(prefix + ".gain", 1, dim);
  p.add(prefix + ".bias", 1, dim);
}

template <typename T>
void add_linear(ModelParams<T>& p, const std::string& prefix, std::size_t in, std::size_t out) {
  p.add(prefix + ".w", in, out);
  p.add(prefix + ".b", 1, out);
}

template <typename T>
void add_graph_conformer(ModelParams<T>& p, const std::string& prefix, std::size_t d, const DenoiserConfig& cfg) {
  if (cfg.use_transformer) {
    const std::size_t row_dim = d, col_dim = cfg.n_rois;
    add_norm(p, prefix + ".norm1", d);
    add_attention(p, prefix + ".spatial", cfg.swap_attention_axes ? col_dim : row_dim);
    add_norm(p, prefix + ".norm2", d);
    add_attention(p, prefix + ".temporal", cfg.swap_attention_axes ? row_dim : col_dim);
  }
  add_linear(p, prefix + ".gcn1", d, d);
  add_linear(p, prefix + ".gcn2", d, d);
}

}  // namespace

void DenoiserConfig::validate() const {
  need(n_rois >= 2, "n_rois must be at least 2");
  need(n_points >= 2, "n_points must be at least 2");
  need(width >= 1, "width must be positive");
  need(con_blocks >= 1, "con_blocks must be at least 1");
  need(spatial_heads >= 1 && temporal_heads >= 1, "head counts must be positive");
  if (use_ushape) need(width % 4 == 0, "width must be divisible by 4 for the U-shape");
  if (use_transformer) {
    for (std::size_t d : level_widths())
      need(d % row_heads(*this) == 0, "feature width " + std::to_string(d) + " not divisible by " +
                                          std::to_string(row_heads(*this)) + " row-attention heads");
    need(n_rois % col_heads(*this) == 0, "n_rois " + std::to_string(n_rois) + " not divisible by " +
                                             std::to_string(col_heads(*this)) + " column-attention heads");
  }
}

std::vector<std::size_t> DenoiserConfig::level_widths() const {
  if (!use_ushape) return {width};
  return {width, width / 2, width / 4};
}

template <typename T>
Var<T> gcn_layer(Graph<T>& g, Var<T> x, Var<T> propagation, Var<T> w, Var<T> b) {
  return linear(g, g.matmul(propagation, x), w, b);
}

template <typename T>
Var<T> multi_head_attention(Graph<T>& g, Var<T> x, std::size_t heads, const AttentionWeights<T>& w) {
  const std::size_t d = g.value(x).cols();
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument("multi_head_attention: " + std::to_string(heads) + " heads do not divide width " +
                                std::to_string(d));
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Var<T> q = g.matmul(x, w.wq), k = g.matmul(x, w.wk), v = g.matmul(x, w.wv);
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * dh, hi = lo + dh;
    Var<T> qh = heads == 1 ? q : g.slice_cols(q, lo, hi);
    Var<T> kh = heads == 1 ? k : g.slice_cols(k, lo, hi);
    Var<T> vh = heads == 1 ? v : g.slice_cols(v, lo, hi);
    Var<T> attn = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), scale));
    outs.push_back(g.matmul(attn, vh));
  }
  Var<T> cat = heads == 1 ? outs[0] : g.concat_cols(outs);
  return linear(g, cat, w.wo, w.bo);
}

template <typename T>
Var<T> con_attention_block(Graph<T>& g, Var<T> cond_feat, Var<T> noisy_feat, const ConAttentionWeights<T>& w) {
  require_shape(g.value(cond_feat).same_shape(g.value(noisy_feat)),
                "con_attention_block: condition " + g.value(cond_feat).shape_str() + " vs noisy " +
                    g.value(noisy_feat).shape_str());
  const T scale = T(1) / std::sqrt(static_cast<T>(g.value(noisy_feat).cols()));
  Var<T> q = linear(g, g.layer_norm(cond_feat, w.norm_cond_gain, w.norm_cond_bias), w.lm1_w, w.lm1_b);
  Var<T> k = linear(g, g.layer_norm(noisy_feat, w.norm_noisy_gain, w.norm_noisy_bias), w.lm2_w, w.lm2_b);
  Var<T> attn = g.softmax_rows(g.scale(g.matmul_nt(q, k), scale));
  Var<T> fused = g.matmul(attn, k);
  return g.add(linear(g, fused, w.lm3_w, w.lm3_b), noisy_feat);
}

template <typename T>
Var<T> graph_conformer_block(Graph<T>& g, Var<T> x, Var<T> propagation, const DenoiserConfig& cfg,
                             const GraphConFormerWeights<T>& w) {
  Var<T> gamma = x;
  if (cfg.use_transformer) {
    if (!w.spatial || !w.temporal || !w.norm1_gain || !w.norm2_gain)
      throw std::invalid_argument("graph_conformer_block: attention weights missing");
    auto attend_rows = [&](Var<T> in, std::size_t heads, const AttentionWeights<T>& aw) {
      return multi_head_attention(g, in, heads, aw);
    };
    auto attend_cols = [&](Var<T> in, std::size_t heads, const AttentionWeights<T>& aw) {
      return column_attention(g, in, heads, aw);
    };
    Var<T> n1 = g.layer_norm(gamma, *w.norm1_gain, *w.norm1_bias);
    Var<T> s = cfg.swap_attention_axes ? attend_cols(n1, cfg.spatial_heads, *w.spatial)
                                       : attend_rows(n1, cfg.spatial_heads, *w.spatial);
    gamma = g.add(g.relu(s), gamma);
    Var<T> n2 = g.layer_norm(gamma, *w.norm2_gain, *w.norm2_bias);
    Var<T> tm = cfg.swap_attention_axes ? attend_rows(n2, cfg.temporal_heads, *w.temporal)
                                        : attend_cols(n2, cfg.temporal_heads, *w.temporal);
    gamma = g.add(g.relu(tm), gamma);
  }
  Var<T> h = g.relu(gcn_layer(g, gamma, propagation, w.gcn1_w, w.gcn1_b));
  h = g.relu(gcn_layer(g, h, propagation, w.gcn2_w, w.gcn2_b));
  return g.add(h, gamma);
}

std::vector<double> time_encoding(int t, std::size_t width) {
  if (t < 0) throw std::invalid_argument("time_encoding: negative step");
  std::vector<double> out(width);
  for (std::size_t k = 0; k < width; ++k) {
    const double exponent = static_cast<double>(2 * (k / 2)) / static_cast<double>(width);
    const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
    out[k] = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return out;
}

template <typename T>
void register_denoiser_params(ModelParams<T>& p, const DenoiserConfig& cfg) {
  cfg.validate();
  const std::size_t d0 = cfg.width;
  add_linear(p, "input", cfg.n_points, d0);
  for (std::size_t k = 0; k < cfg.con_blocks; ++k) {
    const std::string pre = "conattn." + std::to_string(k);
    add_norm(p, pre + ".norm_cond", d0);
    add_norm(p, pre + ".norm_noisy", d0);
    add_linear(p, pre + ".lm1", d0, d0);
    add_linear(p, pre + ".lm2", d0, d0);
    add_linear(p, pre + ".lm3", d0, d0);
  }
  add_linear(p, "time", d0, d0);
  if (cfg.use_ushape) {
    add_graph_conformer(p, "gc_a", d0, cfg);
    add_linear(p, "dh1", d0, d0 / 2);
    add_graph_conformer(p, "gc_b", d0 / 2, cfg);
    add_linear(p, "dh2", d0 / 2, d0 / 4);
    add_graph_conformer(p, "gc_bottom", d0 / 4, cfg);
    add_linear(p, "dd1", d0 / 4, d0 / 2);
    add_graph_conformer(p, "gc_c", d0 / 2, cfg);
    add_linear(p, "dd2", d0 / 2, d0);
    add_graph_conformer(p, "gc_d", d0, cfg);
  } else {
    for (int k = 1; k <= 3; ++k) add_graph_conformer(p, "gc_" + std::to_string(k), d0, cfg);
  }
  add_linear(p, "output", d0, cfg.n_points);
}

template <typename T>
AttentionWeights<T> bind_attention(Graph<T>& g, const ModelParams<T>& p, const std::string& prefix) {
  return {g.param(p.at(prefix + ".wq")), g.param(p.at(prefix + ".wk")), g.param(p.at(prefix + ".wv")),
          g.param(p.at(prefix + ".wo")), g.param(p.at(prefix + ".bo"))};
}

template <typename T>
ConAttentionWeights<T> bind_con_attention(Graph<T>& g, const ModelParams<T>& p, const std::string& prefix) {
  auto b = [&](const char* n) { return g.param(p.at(prefix + n)); };
  return {b(".norm_cond.gain"), b(".norm_cond.bias"), b(".norm_noisy.gain"), b(".norm_noisy.bias"),
          b(".lm1.w"),          b(".lm1.b"),          b(".lm2.w"),           b(".lm2.b"),
          b(".lm3.w"),          b(".lm3.b")};
}

template <typename T>
GraphConFormerWeights<T> bind_graph_conformer(Graph<T>& g, const ModelParams<T>& p, const std::string& prefix) {
  auto b = [&](const char* n) { return g.param(p.at(prefix + n)); };
  GraphConFormerWeights<T> w{};
  w.gcn1_w = b(".gcn1.w");
  w.gcn1_b = b(".gcn1.b");
  w.gcn2_w = b(".gcn2.w");
  w.gcn2_b = b(".gcn2.b");
  if (p.contains(prefix + ".spatial.wq")) {
    w.norm1_gain = b(".norm1.gain");
    w.norm1_bias = b(".norm1.bias");
    w.norm2_gain = b(".norm2.gain");
    w.norm2_bias = b(".norm2.bias");
    w.spatial = bind_attention(g, p, prefix + ".spatial");
    w.temporal = bind_attention(g, p, prefix + ".temporal");
  }
  return w;
}

template <typename T>
Var<T> predict_noise(Graph<T>& g, const ModelParams<T>& p, const DenoiserConfig& cfg, Var<T> propagation,
                     Var<T> noisy, int t, Var<T> cond) {
  const auto& hv = g.value(noisy);
  const auto& fv = g.value(cond);
  require_shape(hv.rows() == cfg.n_rois && hv.cols() == cfg.n_points,
                "predict_noise: noisy sample " + hv.shape_str() + " does not match config");
  require_shape(fv.same_shape(hv), "predict_noise: condition " + fv.shape_str() + " vs noisy " + hv.shape_str());
  require_shape(g.value(propagation).rows() == cfg.n_rois && g.value(propagation).cols() == cfg.n_rois,
                "predict_noise: structural connectivity does not match n_rois");

  auto P = [&](const std::string& n) { return g.param(p.at(n)); };
  auto gc = [&](const std::string& prefix, Var<T> x) {
    return graph_conformer_block(g, x, propagation, cfg, bind_graph_conformer(g, p, prefix));
  };

  Var<T> in_w = P("input.w"), in_b = P("input.b");
  Var<T> cond_feat = linear(g, cond, in_w, in_b);
  Var<T> x = linear(g, noisy, in_w, in_b);
  for (std::size_t k = 0; k < cfg.con_blocks; ++k)
    x = con_attention_block(g, cond_feat, x, bind_con_attention(g, p, "conattn." + std::to_string(k)));

  const auto enc = time_encoding(t, cfg.width);
  Matrix<T> enc_row(1, cfg.width);
  for (std::size_t k = 0; k < cfg.width; ++k) enc_row[k] = static_cast<T>(enc[k]);
  x = g.add_row(x, linear(g, g.constant(std::move(enc_row)), P("time.w"), P("time.b")));

  if (cfg.use_ushape) {
    Var<T> a = gc("gc_a", x);
    Var<T> b = gc("gc_b", gcn_layer(g, a, propagation, P("dh1.w"), P("dh1.b")));
    Var<T> bottom = gc("gc_bottom", gcn_layer(g, b, propagation, P("dh2.w"), P("dh2.b")));
    Var<T> c = gc("gc_c", g.add(gcn_layer(g, bottom, propagation, P("dd1.w"), P("dd1.b")), b));
    x = gc("gc_d", g.add(gcn_layer(g, c, propagation, P("dd2.w"), P("dd2.b")), a));
  } else {
    for (int k = 1; k <= 3; ++k) x = gc("gc_" + std::to_string(k), x);
  }
  return linear(g, x, P("output.w"), P("output.b"));
}

template <typename T>
Matrix<T> predict_noise(const Matrix<T>& noisy, int t, const Matrix<T>& cond, const StructuralConnectivity& sc,
                        const ModelParams<T>& params, const DenoiserConfig& cfg) {
  Graph<T> g(false);
  Var<T> out = predict_noise(g, params, cfg, g.constant(sc.propagation_as<T>()), g.constant(noisy), t,
                             g.constant(cond));
  return g.value(out);
}

#define ECDIFF_INSTANTIATE(T)                                                                                  \
  template Var<T> gcn_layer(Graph<T>&, Var<T>, Var<T>, Var<T>, Var<T>);                                        \
  template Var<T> multi_head_attention(Graph<T>&, Var<T>, std::size_t, const AttentionWeights<T>&);            \
  template Var<T> con_attention_block(Graph<T>&, Var<T>, Var<T>, const ConAttentionWeights<T>&);               \
  template Var<T> graph_conformer_block(Graph<T>&, Var<T>, Var<T>, const DenoiserConfig&,                      \
                                        const GraphConFormerWeights<T>&);                                      \
  template void register_denoiser_params(ModelParams<T>&, const DenoiserConfig&);                              \
  template AttentionWeights<T> bind_attention(Graph<T>&, const ModelParams<T>&, const std::string&);           \
  template ConAttentionWeights<T> bind_con_attention(Graph<T>&, const ModelParams<T>&, const std::string&);    \
  template GraphConFormerWeights<T> bind_graph_conformer(Graph<T>&, const ModelParams<T>&, const std::string&); \
  template Var<T> predict_noise(Graph<T>&, const ModelParams<T>&, const DenoiserConfig&, Var<T>, Var<T>, int,   \
                                Var<T>);                                                                       \
  template Matrix<T> predict_noise(const Matrix<T>&, int, const Matrix<T>&, const StructuralConnectivity&,     \
                                   const ModelParams<T>&, const DenoiserConfig&);

ECDIFF_INSTANTIATE(float)
ECDIFF_INSTANTIATE(double)
ECDIFF_INSTANTIATE(long double)
#undef ECDIFF_INSTANTIATE

}  // namespace ecdiff
