#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "modiff/checkpoint.hpp"
#include "modiff/diffusion.hpp"
#include "modiff/grad_check.hpp"

using namespace modiff;
namespace fs = std::filesystem;

namespace {

DenoiserConfig small_config(int layers = 2, int hidden = 16, int dct_rows = 4,
                            int feature = 6, int heads = 2) {
  DenoiserConfig cfg;
  cfg.layers = layers;
  cfg.hidden = hidden;
  cfg.heads = heads;
  cfg.ffn = 2 * hidden;
  cfg.se_reduction = 4;
  cfg.dct_rows = dct_rows;
  cfg.feature = feature;
  return cfg;
}

DenoiserModel make_model(const DenoiserConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return DenoiserModel::init(cfg, rng);
}

Tensor randn(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = Tensor::matrix(r, c);
  fill_normal(t, rng);
  return t;
}

void set_zero(DenoiserModel& m, const std::string& name) {
  for (double& v : m.parameter(name)->values()) v = 0.0;
}

void set_all(DenoiserModel& m, const std::string& name, double value) {
  for (double& v : m.parameter(name)->values()) v = value;
}

// Forces one block to the identity: SE gate saturated to exactly 1.0, and
// both residual branches contribute zero.
void neutralize_block(DenoiserModel& m, int b) {
  const std::string p = "blocks." + std::to_string(b) + ".";
  set_zero(m, p + "se.fc2.weight");
  set_all(m, p + "se.fc2.bias", 60.0);  // sigmoid(60) rounds to 1.0
  set_zero(m, p + "attn.out_proj.weight");
  set_zero(m, p + "attn.out_proj.bias");
  set_zero(m, p + "ffn.fc2.weight");
  set_zero(m, p + "ffn.fc2.bias");
}

// skip_fuse weight selecting either the deep half (offset 0) or the skip
// half (offset d) of the concatenated input.
void set_fuse_selector(DenoiserModel& m, int index, bool pick_skip) {
  const std::string name = "skip_fuse." + std::to_string(index);
  TensorPtr w = m.parameter(name + ".weight");
  const std::size_t d = w->cols();
  for (double& v : w->values()) v = 0.0;
  const std::size_t offset = pick_skip ? d : 0;
  for (std::size_t j = 0; j < d; ++j) (*w)(offset + j, j) = 1.0;
  set_zero(m, name + ".bias");
}

}  // namespace

TEST_CASE("embed_tokens shape and condition behavior") {
  // reference widths: L=20, d=512 -> 21 x 512
  {
    DenoiserConfig cfg = small_config(1, 512, 20, 51, 8);
    cfg.ffn = 1024;
    const DenoiserModel m = make_model(cfg, 1);
    Rng rng(2);
    Graph g;
    auto tokens = m.embed_tokens(g, g.constant(randn(20, 51, rng)),
                                 g.constant(randn(20, 51, rng)), 3, false);
    REQUIRE(tokens->rows() == 21);
    REQUIRE(tokens->cols() == 512);
  }

  const DenoiserModel m = make_model(small_config(), 3);
  Rng rng(4);
  const Tensor y = randn(4, 6, rng);
  const Tensor c1 = randn(4, 6, rng);
  const Tensor c2 = randn(4, 6, rng);

  // null branch ignores the history entirely
  Graph g1, g2;
  auto a = m.embed_tokens(g1, g1.constant(y), g1.constant(c1), 5, true);
  auto b = m.embed_tokens(g2, g2.constant(y), g2.constant(c2), 5, true);
  REQUIRE(a->values() == b->values());

  // different conditions change token 0 when the condition is used
  Graph g3, g4;
  auto u = m.embed_tokens(g3, g3.constant(y), g3.constant(c1), 5, false);
  auto v = m.embed_tokens(g4, g4.constant(y), g4.constant(c2), 5, false);
  bool token0_differs = false;
  for (std::size_t j = 0; j < u->cols(); ++j)
    if ((*u)(0, j) != (*v)(0, j)) token0_differs = true;
  REQUIRE(token0_differs);

  // adjacent steps give different condition tokens for a fixed history
  Graph g5, g6;
  auto t5 = m.embed_tokens(g5, g5.constant(y), g5.constant(c1), 7, false);
  auto t6 = m.embed_tokens(g6, g6.constant(y), g6.constant(c1), 8, false);
  bool step_differs = false;
  for (std::size_t j = 0; j < t5->cols(); ++j)
    if ((*t5)(0, j) != (*t6)(0, j)) step_differs = true;
  REQUIRE(step_differs);
}

TEST_CASE("se_block gating") {
  Rng rng(9);
  const Tensor h = randn(5, 16, rng);

  // saturated gate reproduces the input exactly
  {
    DenoiserModel m = make_model(small_config(), 10);
    neutralize_block(m, 0);
    Graph g;
    auto out = m.se_block(g, g.constant(h), 0);
    REQUIRE(out->values() == h.values());
  }

  // zero fc2 weight and bias: sigmoid(0) = 0.5 halves every channel
  {
    DenoiserModel m = make_model(small_config(), 11);
    set_zero(m, "blocks.0.se.fc2.weight");
    set_zero(m, "blocks.0.se.fc2.bias");
    Graph g;
    auto out = m.se_block(g, g.constant(h), 0);
    for (std::size_t i = 0; i < h.size(); ++i)
      REQUIRE((*out)[i] == 0.5 * h[i]);
  }

  // generic weights keep the gate strictly inside (0, 1): |h * gate| < |h|
  {
    DenoiserModel m = make_model(small_config(), 12);
    Graph g;
    auto out = m.se_block(g, g.constant(h), 1);
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (h[i] == 0.0) continue;
      REQUIRE(std::abs((*out)[i]) < std::abs(h[i]));
      REQUIRE((*out)[i] * h[i] > 0.0);  // same sign: gate positive
    }
  }
}

TEST_CASE("transformer_block reduces to the SE output when residuals vanish") {
  Rng rng(13);
  const Tensor h = randn(5, 16, rng);
  DenoiserModel m = make_model(small_config(), 14);
  set_zero(m, "blocks.0.attn.out_proj.weight");
  set_zero(m, "blocks.0.attn.out_proj.bias");
  set_zero(m, "blocks.0.ffn.fc2.weight");
  set_zero(m, "blocks.0.ffn.fc2.bias");

  Graph g;
  auto block_out = m.transformer_block(g, g.constant(h), 0);
  Graph g2;
  auto se_out = m.se_block(g2, g2.constant(h), 0);
  REQUIRE(block_out->values() == se_out->values());
  REQUIRE(block_out->rows() == 5);
  REQUIRE(block_out->cols() == 16);
}

TEST_CASE("skip_fuse selects either half under identity projections") {
  DenoiserModel m = make_model(small_config(2, 16, 4, 6), 15);
  Rng rng(16);
  const Tensor deep = randn(5, 16, rng);
  const Tensor skip = randn(5, 16, rng);

  set_fuse_selector(m, 0, /*pick_skip=*/false);
  {
    Graph g;
    auto out = m.skip_fuse(g, g.constant(deep), g.constant(skip), 0);
    REQUIRE(out->values() == deep.values());
    REQUIRE(out->rows() == 5);
    REQUIRE(out->cols() == 16);
  }
  set_fuse_selector(m, 0, /*pick_skip=*/true);
  {
    Graph g;
    auto out = m.skip_fuse(g, g.constant(deep), g.constant(skip), 0);
    REQUIRE(out->values() == skip.values());
  }
}

TEST_CASE("long skips pair first and second half blocks LIFO") {
  DenoiserConfig cfg = small_config(9, 8, 3, 4, 2);
  DenoiserModel m = make_model(cfg, 17);
  // all blocks identity; the first four leave a distinct additive marker
  for (int b = 0; b < 9; ++b) neutralize_block(m, b);
  for (int b = 0; b < 4; ++b) {
    TensorPtr bias = m.parameter("blocks." + std::to_string(b) + ".ffn.fc2.bias");
    (*bias)[0] = 0.25 * (b + 1);
  }
  for (int k = 0; k < 4; ++k) set_fuse_selector(m, k, /*pick_skip=*/true);

  Rng rng(18);
  Graph g;
  std::vector<Tensor> outputs;
  m.forward(g, g.constant(randn(3, 4, rng)), g.constant(randn(3, 4, rng)), 2,
            false, &outputs);
  REQUIRE(outputs.size() == 9);

  // consuming block 6..9 reproduces the stored output of block 4..1
  REQUIRE(outputs[5].values() == outputs[3].values());
  REQUIRE(outputs[6].values() == outputs[2].values());
  REQUIRE(outputs[7].values() == outputs[1].values());
  REQUIRE(outputs[8].values() == outputs[0].values());
  // the stored outputs are pairwise distinct thanks to the markers
  REQUIRE(outputs[0].values() != outputs[1].values());
  REQUIRE(outputs[1].values() != outputs[2].values());
  REQUIRE(outputs[2].values() != outputs[3].values());
  // odd middle block takes no skip and was left identity
  REQUIRE(outputs[4].values() == outputs[3].values());
}

TEST_CASE("forward shape, determinism and null independence") {
  const DenoiserModel m = make_model(small_config(3, 16, 20, 51, 2), 19);
  Rng rng(20);
  const Tensor y = randn(20, 51, rng);
  const Tensor c = randn(20, 51, rng);

  Graph g;
  auto out = m.forward(g, g.constant(y), g.constant(c), 4, false);
  REQUIRE(out->rows() == 20);
  REQUIRE(out->cols() == 51);

  Graph g2;
  auto out2 = m.forward(g2, g2.constant(y), g2.constant(c), 4, false);
  REQUIRE(out->values() == out2->values());

  // with the null condition the history input has exactly zero influence
  const Tensor c2 = randn(20, 51, rng);
  Graph g3, g4;
  auto n1 = m.forward(g3, g3.constant(y), g3.constant(c), 4, true);
  auto n2 = m.forward(g4, g4.constant(y), g4.constant(c2), 4, true);
  REQUIRE(n1->values() == n2->values());

  // history-embedding parameters get no gradient on the null path
  {
    Graph g5;
    auto loss = g5.mean_all(
        m.forward(g5, g5.constant(y), nullptr, 4, true));
    g5.backward(loss);
    for (double v : m.parameter("hist_embed.weight")->grad_view())
      REQUIRE(v == 0.0);
    for (const auto& [name, p] : m.named_parameters()) p->zero_grad();
  }
}

TEST_CASE("bounded inputs stay finite through the forward pass") {
  const DenoiserModel m = make_model(small_config(2, 16, 5, 6, 2), 21);
  Tensor y = Tensor::matrix(5, 6);
  Tensor c = Tensor::matrix(5, 6);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = (i % 2 == 0) ? 1000.0 : -1000.0;
    c[i] = (i % 3 == 0) ? 1000.0 : -999.0;
  }
  Graph g;
  auto out = m.forward(g, g.constant(y), g.constant(c), 1000, false);
  REQUIRE(out->all_finite());
}

TEST_CASE("one-block denoiser loss passes the gradient check") {
  DenoiserConfig cfg = small_config(1, 8, 3, 4, 2);
  DenoiserModel m = make_model(cfg, 22);
  // randomize the zero-initialized output head so inner gradients are live
  Rng rng(23);
  fill_uniform(*m.parameter("out_proj.weight"), rng, -0.3, 0.3);
  fill_uniform(*m.parameter("out_proj.bias"), rng, -0.1, 0.1);

  const NoiseSchedule s = cosine_schedule(25);
  const Tensor y0 = randn(3, 4, rng);
  const Tensor cond = randn(3, 4, rng);
  const Tensor eps = randn(3, 4, rng);

  auto build = [&](Graph& g) {
    return diffusion_loss(g, m, y0, cond, 12, eps, s, false);
  };
  const auto result = grad_check(build, m.named_parameters());
  INFO("worst parameter: " << result.worst_parameter);
  REQUIRE(result.max_rel_error < 1e-4);
}

TEST_CASE("parameter counts") {
  // reference configuration lands near the published 19.73M footprint
  {
    DenoiserConfig cfg;
    cfg.layers = 9;
    cfg.hidden = 512;
    cfg.heads = 8;
    cfg.ffn = 1024;
    cfg.se_reduction = 4;
    cfg.dct_rows = 20;
    cfg.feature = 51;
    const DenoiserModel m = make_model(cfg, 24);
    const double count = static_cast<double>(m.param_count());
    REQUIRE(count > 0.85 * 19.73e6);
    REQUIRE(count < 1.15 * 19.73e6);
  }

  // block and skip parameters scale linearly with depth
  {
    auto count_for = [](int layers) {
      DenoiserConfig cfg = small_config(layers, 64, 10, 15, 8);
      cfg.ffn = 128;
      return make_model(cfg, 25).param_count();
    };
    const std::size_t c2 = count_for(2), c4 = count_for(4), c8 = count_for(8);
    REQUIRE(c8 - c4 == 2 * (c4 - c2));
    const double ratio = static_cast<double>(c8) / static_cast<double>(c4);
    REQUIRE(ratio > 1.8);
    REQUIRE(ratio < 2.1);
  }

  // minimal configuration against a hand count
  {
    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 1;
    cfg.heads = 1;
    cfg.ffn = 2;
    cfg.se_reduction = 1;
    cfg.dct_rows = 2;
    cfg.feature = 3;
    const DenoiserModel m = make_model(cfg, 26);
    // token 4 + hist 4 + step (2*1+1)+(1*1+1) + null 1 + pos 3
    // + 2 blocks * (se 4 + attn 8 + norms 4 + ffn 7) + skip 3 + out 6
    const std::size_t want = 4 + 4 + 5 + 1 + 3 + 2 * (4 + 8 + 4 + 7) + 3 + 6;
    REQUIRE(m.param_count() == want);
    REQUIRE(want == 72);
  }
}

TEST_CASE("checkpoints round-trip bytes and values") {
  const fs::path dir =
      fs::temp_directory_path() / ("modiff_ckpt_" + std::to_string(::getpid()));
  fs::create_directories(dir);

  DenoiserConfig cfg = small_config(3, 16, 5, 9, 2);
  DenoiserModel m = make_model(cfg, 27);
  // train-like perturbation so values are not the init pattern
  Rng rng(28);
  for (const auto& [name, p] : m.named_parameters())
    for (double& v : p->values()) v += 0.01 * rng.normal();

  const fs::path first = dir / "a.ckpt";
  save_checkpoint(first, m, 77, 0.008);
  const Checkpoint ck = load_checkpoint(first);
  REQUIRE(ck.steps == 77);
  REQUIRE(ck.cosine_s == 0.008);
  REQUIRE(ck.config == cfg);

  // loaded values equal the f32-rounded originals, exactly
  for (const auto& [name, p] : m.named_parameters()) {
    TensorPtr q = ck.model.parameter(name);
    for (std::size_t i = 0; i < p->size(); ++i)
      REQUIRE((*q)[i] == static_cast<double>(static_cast<float>((*p)[i])));
  }

  // save(load(x)) is byte-identical
  const fs::path second = dir / "b.ckpt";
  save_checkpoint(second, ck.model, ck.steps, ck.cosine_s);
  std::ifstream fa(first, std::ios::binary), fb(second, std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  REQUIRE(ba == bb);

  // malformed files are rejected
  {
    std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
    bad << "NOPE 1\n";
  }
  REQUIRE_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), FormatError);
  {
    std::ofstream cut(dir / "cut.ckpt", std::ios::binary);
    cut << ba.substr(0, ba.size() / 2);
  }
  REQUIRE_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), Error);
  REQUIRE_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}
