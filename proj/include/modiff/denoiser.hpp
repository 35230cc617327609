#pragma once

#include <string>
#include <utility>
#include <vector>

#include "modiff/graph.hpp"
#include "modiff/rng.hpp"

namespace modiff {

enum class CondPool { kMean, kSum };

inline std::string to_string(CondPool p) {
  return p == CondPool::kMean ? "mean" : "sum";
}
inline CondPool cond_pool_from_string(const std::string& s) {
  if (s == "mean") return CondPool::kMean;
  if (s == "sum") return CondPool::kSum;
  throw ConfigError("unknown condition pooling mode: " + s);
}

struct DenoiserConfig {
  int layers = 9;         // transformer blocks
  int hidden = 512;       // token width d
  int heads = 8;          // attention heads
  int ffn = 1024;         // feed-forward inner width (2d)
  int se_reduction = 4;   // squeeze-excitation bottleneck ratio
  int dct_rows = 20;      // L, coefficient tokens
  int feature = 51;       // 3J
  CondPool cond_pool = CondPool::kMean;

  // Width of the sinusoidal step embedding: d/4 rounded down to even, at
  // least 2. Kept narrow so the step MLP stays a small fraction of the model.
  int step_embed_dim() const {
    int s = hidden / 4;
    s -= s % 2;
    return s < 2 ? 2 : s;
  }

  int skip_count() const { return layers / 2; }

  void validate() const {
    if (layers < 1) throw ConfigError("denoiser: layers must be >= 1");
    if (hidden < 1 || heads < 1 || hidden % heads != 0)
      throw ConfigError("denoiser: hidden must be divisible by heads");
    if (se_reduction < 1 || hidden % se_reduction != 0)
      throw ConfigError("denoiser: se_reduction must divide hidden");
    if (ffn < 1) throw ConfigError("denoiser: ffn width must be >= 1");
    if (dct_rows < 1 || feature < 1)
      throw ConfigError("denoiser: dct_rows and feature must be >= 1");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

// Sinusoidal embedding of a diffusion step: first half sine, second half
// cosine, frequencies log-spaced from 1 down to 1/10000.
inline Tensor sinusoidal_step_embedding(int t, int dim) {
  Tensor e = Tensor::matrix(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * w);
    e[half + i] = std::cos(t * w);
  }
  return e;
}

struct LinearParams {
  TensorPtr weight;  // in x out
  TensorPtr bias;    // {out}
};

struct BlockParams {
  LinearParams se_fc1, se_fc2;
  LinearParams q_proj, k_proj, v_proj, out_proj;
  TensorPtr norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  LinearParams ffn_fc1, ffn_fc2;
};

// Noise-prediction network: the condition token (encoded diffusion step plus
// pooled history embedding, or a learned null vector) is prepended to the L
// embedded coefficient tokens; the stack applies squeeze-excitation, self-
// attention and a feed-forward per block, with the first half of the blocks
// pushing their outputs on a skip stack that the mirrored second half
// consumes through concat + linear fusion.
class DenoiserModel {
 public:
  DenoiserModel() = default;

  static DenoiserModel init(const DenoiserConfig& config, Rng& rng) {
    config.validate();
    DenoiserModel m;
    m.cfg_ = config;
    const int d = config.hidden;
    const int s = config.step_embed_dim();

    m.token_embed_ = m.make_linear("token_embed", config.feature, d, rng);
    m.hist_embed_ = m.make_linear("hist_embed", config.feature, d, rng);
    m.step_fc1_ = m.make_linear("step_mlp.fc1", s, d, rng);
    m.step_fc2_ = m.make_linear("step_mlp.fc2", d, d, rng);
    m.null_cond_ = m.make_param("cond.null", Tensor::matrix(1, d));
    fill_uniform(*m.null_cond_, rng, -0.02, 0.02);
    m.pos_embed_ =
        m.make_param("pos_embed", Tensor::matrix(config.dct_rows + 1, d));
    fill_uniform(*m.pos_embed_, rng, -0.02, 0.02);

    for (int b = 0; b < config.layers; ++b) {
      const std::string p = "blocks." + std::to_string(b) + ".";
      BlockParams blk;
      blk.se_fc1 = m.make_linear(p + "se.fc1", d, d / config.se_reduction, rng);
      blk.se_fc2 = m.make_linear(p + "se.fc2", d / config.se_reduction, d, rng);
      blk.q_proj = m.make_linear(p + "attn.q_proj", d, d, rng);
      blk.k_proj = m.make_linear(p + "attn.k_proj", d, d, rng);
      blk.v_proj = m.make_linear(p + "attn.v_proj", d, d, rng);
      blk.out_proj = m.make_linear(p + "attn.out_proj", d, d, rng);
      blk.norm1_gain = m.make_param(p + "norm1.gain", Tensor::vector(d, 1.0));
      blk.norm1_bias = m.make_param(p + "norm1.bias", Tensor::vector(d, 0.0));
      blk.norm2_gain = m.make_param(p + "norm2.gain", Tensor::vector(d, 1.0));
      blk.norm2_bias = m.make_param(p + "norm2.bias", Tensor::vector(d, 0.0));
      blk.ffn_fc1 = m.make_linear(p + "ffn.fc1", d, config.ffn, rng);
      blk.ffn_fc2 = m.make_linear(p + "ffn.fc2", config.ffn, d, rng);
      m.blocks_.push_back(std::move(blk));
    }

    for (int k = 0; k < config.skip_count(); ++k)
      m.skip_fuse_.push_back(m.make_linear(
          "skip_fuse." + std::to_string(k), 2 * d, d, rng));

    // Zero initialization keeps the untrained denoiser predicting zero noise.
    m.output_proj_ =
        m.make_linear("out_proj", d, config.feature, rng, /*zero=*/true);
    return m;
  }

  const DenoiserConfig& config() const { return cfg_; }

  const std::vector<std::pair<std::string, TensorPtr>>& named_parameters() const {
    return named_;
  }

  TensorPtr parameter(const std::string& name) const {
    for (const auto& [n, p] : named_)
      if (n == name) return p;
    throw ConfigError("unknown parameter: " + name);
  }

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& [n, p] : named_) total += p->size();
    return total;
  }

  // ---- forward pieces ----------------------------------------------------

  // Embeds the L noisy coefficient rows and prepends the condition token
  // (step MLP output plus pooled history embedding, or the null vector);
  // positional embeddings are added to all L+1 tokens.
  TensorPtr embed_tokens(Graph& g, const TensorPtr& y_t,
                         const TensorPtr& c_dct, int t, bool use_null) const {
    check_input(y_t, "y_t");
    auto tokens = linear(g, y_t, token_embed_);  // L x d
    auto step = g.constant(sinusoidal_step_embedding(t, cfg_.step_embed_dim()));
    auto cond = linear(g, g.gelu(linear(g, step, step_fc1_)), step_fc2_);
    if (use_null) {
      cond = g.add(cond, null_cond_);
    } else {
      check_input(c_dct, "c_dct");
      auto hist = linear(g, c_dct, hist_embed_);  // L x d
      auto pooled = cfg_.cond_pool == CondPool::kMean ? g.mean_rows(hist)
                                                      : g.sum_rows(hist);
      cond = g.add(cond, pooled);
    }
    return g.add(g.concat_rows(cond, tokens), pos_embed_);
  }

  // Squeeze-excitation: pooled channel statistics pass through fc1/relu/fc2/
  // sigmoid and rescale every token's channels with one pointwise multiply.
  TensorPtr se_block(Graph& g, const TensorPtr& h, int block) const {
    const BlockParams& b = blocks_.at(block);
    auto squeeze = g.mean_rows(h);
    auto gate = g.sigmoid(
        linear(g, g.relu(linear(g, squeeze, b.se_fc1)), b.se_fc2));
    return g.mul_rowwise(h, gate);
  }

  TensorPtr attention(Graph& g, const TensorPtr& x, int block) const {
    const BlockParams& b = blocks_.at(block);
    const int dh = cfg_.hidden / cfg_.heads;
    auto q = linear(g, x, b.q_proj);
    auto k = linear(g, x, b.k_proj);
    auto v = linear(g, x, b.v_proj);
    std::vector<TensorPtr> context;
    for (int h = 0; h < cfg_.heads; ++h) {
      const std::size_t c0 = static_cast<std::size_t>(h) * dh, c1 = c0 + dh;
      auto scores = g.scale(
          g.matmul(g.slice_cols(q, c0, c1), g.transpose(g.slice_cols(k, c0, c1))),
          1.0 / std::sqrt(static_cast<double>(dh)));
      context.push_back(g.matmul(g.softmax_rows(scores), g.slice_cols(v, c0, c1)));
    }
    return linear(g, g.concat_cols(context), b.out_proj);
  }

  // SE block, then pre-normalized self-attention and feed-forward, each with
  // a residual connection.
  TensorPtr transformer_block(Graph& g, const TensorPtr& h, int block) const {
    const BlockParams& b = blocks_.at(block);
    auto h1 = se_block(g, h, block);
    auto h2 = g.add(h1, attention(g, g.layer_norm(h1, b.norm1_gain, b.norm1_bias), block));
    auto inner = g.gelu(linear(g, g.layer_norm(h2, b.norm2_gain, b.norm2_bias), b.ffn_fc1));
    return g.add(h2, linear(g, inner, b.ffn_fc2));
  }

  // Long-skip fusion: per-token concat of [deep | skip] projected back to d.
  TensorPtr skip_fuse(Graph& g, const TensorPtr& deep, const TensorPtr& skip,
                      int index) const {
    if (!deep->same_shape(*skip))
      throw DimensionError("skip_fuse: operand shapes differ");
    return linear(g, g.concat_cols({deep, skip}), skip_fuse_.at(index));
  }

  // Full network. The first floor(layers/2) block outputs are pushed on a
  // stack; each of the last floor(layers/2) blocks pops one and fuses it
  // before its own computation (LIFO pairing; an odd middle block takes no
  // skip). `block_outputs`, when given, receives every block's output value.
  TensorPtr forward(Graph& g, const TensorPtr& y_t, const TensorPtr& c_dct,
                    int t, bool use_null,
                    std::vector<Tensor>* block_outputs = nullptr) const {
    auto h = embed_tokens(g, y_t, c_dct, t, use_null);
    const int half = cfg_.skip_count();
    std::vector<TensorPtr> skips;
    for (int b = 0; b < cfg_.layers; ++b) {
      if (b >= cfg_.layers - half) {
        h = skip_fuse(g, h, skips.back(), b - (cfg_.layers - half));
        skips.pop_back();
      }
      h = transformer_block(g, h, b);
      if (b < half) skips.push_back(h);
      if (block_outputs) block_outputs->push_back(*h);
    }
    auto body = g.slice_rows(h, 1, static_cast<std::size_t>(cfg_.dct_rows) + 1);
    auto out = linear(g, body, output_proj_);
    if (!out->all_finite())
      throw NumericError("denoiser forward produced non-finite output");
    return out;
  }

 private:
  TensorPtr make_param(const std::string& name, Tensor init) {
    auto p = make_tensor(std::move(init));
    named_.emplace_back(name, p);
    return p;
  }

  LinearParams make_linear(const std::string& name, int in, int out, Rng& rng,
                           bool zero = false) {
    LinearParams lin;
    lin.weight = make_param(name + ".weight", Tensor::matrix(in, out));
    lin.bias = make_param(name + ".bias", Tensor::vector(out));
    if (!zero) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      fill_uniform(*lin.weight, rng, -bound, bound);
    }
    return lin;
  }

  static TensorPtr linear(Graph& g, const TensorPtr& x, const LinearParams& p) {
    return g.add_rowwise(g.matmul(x, p.weight), p.bias);
  }

  void check_input(const TensorPtr& x, const char* what) const {
    if (!x) throw DimensionError(std::string("denoiser: missing input ") + what);
    if (x->rows() != static_cast<std::size_t>(cfg_.dct_rows) ||
        x->cols() != static_cast<std::size_t>(cfg_.feature))
      throw DimensionError(std::string("denoiser: ") + what +
                           " shape does not match config");
  }

  DenoiserConfig cfg_;
  LinearParams token_embed_, hist_embed_, step_fc1_, step_fc2_;
  TensorPtr null_cond_, pos_embed_;
  std::vector<BlockParams> blocks_;
  std::vector<LinearParams> skip_fuse_;
  LinearParams output_proj_;
  std::vector<std::pair<std::string, TensorPtr>> named_;
};

}  // namespace modiff
