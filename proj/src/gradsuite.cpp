#include "signformer/gradsuite.hpp"

#include <algorithm>

#include "signformer/model.hpp"
#include "signformer/ops.hpp"

namespace signformer {

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

void jitter(Parameters& params, uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad()) continue;
    // shift by at least 0.05 in a random direction so no relu6 pre-activation
    // can sit within finite-difference reach of a kink
    for (auto& v : t.data_mut()) {
      const float sign = rng.next_below(2) ? 1.0f : -1.0f;
      v += sign * rng.uniform(0.05f, 0.2f);
    }
  }
}

ModelConfig suite_config(bool cope, ConvStyle style) {
  ModelConfig cfg;
  cfg.hidden_d = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ff_dim = 32;
  cfg.kernel_k = 5;
  cfg.conv_expansion = 2;
  cfg.use_cope = cope;
  cfg.cope_p_max = 16;
  cfg.gloss.samples_k = 3;
  cfg.gloss.window_radius = 2.0f;
  cfg.vocab_v = 12;
  cfg.feature_dim_f = 8;
  cfg.conv_style = style;
  cfg.ape_t_max = 64;
  cfg.resolve();
  return cfg;
}

std::vector<Tensor> trainable(Parameters& params) {
  std::vector<Tensor> out;
  for (auto& [name, t] : params.entries())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

Tensor conv_module_any(const Tensor& x, const ConvModuleParams& p,
                       const ModelConfig& cfg, ConvStyle style) {
  return style == ConvStyle::kSignformer ? conv_module(x, p, cfg, Tensor(), {})
                                         : conv_module_original(x, p, cfg, Tensor(), {});
}

float kink_distance(const std::function<void()>& forward) {
  test_hooks::relu6_min_kink_distance = 1e9f;
  test_hooks::watch_relu6_kinks = true;
  forward();
  test_hooks::watch_relu6_kinks = false;
  return test_hooks::relu6_min_kink_distance;
}

}  // namespace

GradSuiteResult run_gradcheck_suite() {
  GradSuiteResult result;
  auto run = [&](const std::string& name,
                 const std::function<Tensor(const std::vector<Tensor>&)>& f,
                 std::vector<Tensor> inputs) {
    GradCheckReport rep = grad_check(f, std::move(inputs));
    result.entries.push_back({name, rep.worst, rep.pass});
    result.pass = result.pass && rep.pass;
    result.worst = std::max(result.worst, rep.worst);
  };
  Rng rng(404);

  run("matmul",
      [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
      {rand_tensor({3, 4}, rng), rand_tensor({4, 3}, rng)});
  run("softmax",
      [](const std::vector<Tensor>& in) { return softmax(in[0], 1); },
      {rand_tensor({3, 5}, rng, -2.0f, 2.0f)});
  run("layer_norm",
      [](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2]); },
      {rand_tensor({3, 6}, rng), rand_tensor({6}, rng, 0.5f, 1.5f),
       rand_tensor({6}, rng)});
  run("conv1d_pointwise",
      [](const std::vector<Tensor>& in) {
        return conv1d_pointwise(in[0], in[1], in[2]);
      },
      {rand_tensor({4, 3}, rng), rand_tensor({3, 5}, rng), rand_tensor({5}, rng)});
  run("conv1d_depthwise",
      [](const std::vector<Tensor>& in) {
        return conv1d_depthwise(in[0], in[1], in[2], Tensor());
      },
      {rand_tensor({7, 2}, rng), rand_tensor({2, 5}, rng), rand_tensor({2}, rng)});
  run("relu6",  // inputs clear of the kinks at 0 and 6
      [](const std::vector<Tensor>& in) { return relu6(in[0]); },
      {rand_tensor({4, 4}, rng, 0.5f, 5.5f)});
  run("sigmoid",
      [](const std::vector<Tensor>& in) { return sigmoid(in[0]); },
      {rand_tensor({4, 4}, rng, -3.0f, 3.0f)});
  run("embedding_lookup",
      [](const std::vector<Tensor>& in) {
        return embedding_lookup(in[0], {0, 2, 2, 1});
      },
      {rand_tensor({4, 5}, rng)});
  run("interp_gather",
      [](const std::vector<Tensor>& in) { return interp_gather(in[0], in[1]); },
      {rand_tensor({6, 3}, rng), rand_tensor({4}, rng, 0.3f, 4.4f)});
  run("cope_positions",
      [](const std::vector<Tensor>& in) {
        return cope_positions(in[0], in[1], CopeMode::kPrefix, 100.0f);
      },
      {rand_tensor({3, 3}, rng), rand_tensor({4, 3}, rng)});
  run("cope_logit_bias",
      [](const std::vector<Tensor>& in) {
        Tensor pos = Tensor::from_data({2, 3}, {0.4f, 1.7f, 2.2f, 3.0f, 0.9f, 1.1f});
        return cope_logit_bias(in[0], pos, in[1]);
      },
      {rand_tensor({2, 4}, rng), rand_tensor({5, 4}, rng)});
  run("cross_entropy",
      [](const std::vector<Tensor>& in) {
        return cross_entropy(in[0], {2, 4, kPadId, 3}, kPadId, 0.1f);
      },
      {rand_tensor({4, 6}, rng)});

  // composite blocks on a jittered tiny model
  for (ConvStyle style : {ConvStyle::kSignformer, ConvStyle::kConformerOriginal}) {
    ModelConfig cfg = suite_config(false, style);
    Parameters params = init_parameters(cfg, 500);
    jitter(params, 501);
    const std::string base = "enc.l00.conv.";
    ConvModuleParams cp;
    cp.norm_in = {params.at(base + "norm_in.gain"), params.at(base + "norm_in.bias")};
    cp.pw1_w = params.at(base + "pw1.w");
    cp.pw1_b = params.at(base + "pw1.b");
    cp.dw_w = params.at(base + "dw.w");
    cp.dw_b = params.at(base + "dw.b");
    cp.pw2_w = params.at(base + "pw2.w");
    cp.pw2_b = params.at(base + "pw2.b");
    if (style == ConvStyle::kSignformer) {
      cp.norm_out = {params.at(base + "norm_out.gain"), params.at(base + "norm_out.bias")};
    } else {
      cp.bn_gain = params.at(base + "bn.gain");
      cp.bn_bias = params.at(base + "bn.bias");
      cp.bn_rmean = params.at(base + "bn.rmean");
      cp.bn_rvar = params.at(base + "bn.rvar");
    }
    Tensor x;
    float best = -1.0f;
    for (int attempt = 0; attempt < 64; ++attempt) {
      Tensor cand = rand_tensor({6, cfg.hidden_d}, rng);
      float dist = kink_distance([&]() { (void)conv_module_any(cand, cp, cfg, style); });
      if (dist > best) {
        best = dist;
        x = cand;
      }
      if (best > 6e-3f) break;
    }
    const char* name = style == ConvStyle::kSignformer ? "conv_module_signformer"
                                                       : "conv_module_conformer";
    run(name,
        [&cfg, &cp, style](const std::vector<Tensor>& in) {
          ConvModuleParams local = cp;
          local.pw1_w = in[1];
          local.pw1_b = in[2];
          local.dw_w = in[3];
          local.dw_b = in[4];
          local.pw2_w = in[5];
          return style == ConvStyle::kSignformer
                     ? conv_module(in[0], local, cfg, Tensor(), {})
                     : conv_module_original(in[0], local, cfg, Tensor(), {});
        },
        {x, cp.pw1_w, cp.pw1_b, cp.dw_w, cp.dw_b, cp.pw2_w});
  }

  // standalone gloss attention, with and without contextual positions
  for (bool cope : {false, true}) {
    const int d = 16, heads = 2;
    GlossAttentionConfig gcfg;
    gcfg.samples_k = 3;
    gcfg.window_radius = 2.0f;
    AttentionParams ap;
    ap.wq = rand_tensor({d, d}, rng, -0.4f, 0.4f);
    ap.bq = rand_tensor({d}, rng, -0.1f, 0.1f);
    ap.wk = rand_tensor({d, d}, rng, -0.4f, 0.4f);
    ap.bk = rand_tensor({d}, rng, -0.1f, 0.1f);
    ap.wv = rand_tensor({d, d}, rng, -0.4f, 0.4f);
    ap.bv = rand_tensor({d}, rng, -0.1f, 0.1f);
    ap.wo = rand_tensor({d, d}, rng, -0.4f, 0.4f);
    ap.bo = rand_tensor({d}, rng, -0.1f, 0.1f);
    Tensor offsets = Tensor::from_data({heads, 3}, {-1.4f, 0.3f, 1.2f,
                                                    -0.8f, 0.4f, 1.6f});
    CopeTables tables;
    tables.p_max = 16.0f;
    for (int h = 0; h < heads; ++h)
      tables.per_head.push_back(rand_tensor({17, d / heads}, rng, -0.5f, 0.5f));
    Tensor x = rand_tensor({6, d}, rng);
    run(cope ? "gloss_attention_cope" : "gloss_attention",
        [&, cope](const std::vector<Tensor>& in) {
          AttentionParams local = ap;
          local.wq = in[1];
          local.wk = in[2];
          local.wv = in[3];
          local.wo = in[4];
          return gloss_attention(in[0], heads, gcfg, local, in[5], Tensor(),
                                 cope ? &tables : nullptr);
        },
        {x, ap.wq, ap.wk, ap.wv, ap.wo, offsets});
  }

  for (bool cope : {false, true}) {
    ModelConfig cfg = suite_config(cope, ConvStyle::kSignformer);
    std::vector<int> dec_in = {kBosId, 4, 6, 5};
    std::vector<int> labels = {4, 6, 5, kEosId};
    Parameters params;
    Tensor frames;
    float best = -1.0f;
    for (int attempt = 0; attempt < 128; ++attempt) {
      const uint64_t base_seed = 600 + cope + 16 * attempt;
      Parameters cand = init_parameters(cfg, base_seed);
      jitter(cand, base_seed + 1);
      Tensor cand_frames = rand_tensor({5, cfg.feature_dim_f}, rng);
      Model probe(cfg, cand);
      float dist = kink_distance([&]() {
        Tensor enc = probe.encode(cand_frames, Tensor());
        (void)probe.decode(dec_in, enc, Tensor());
      });
      if (dist > best) {
        best = dist;
        params = std::move(cand);
        frames = cand_frames;
      }
      if (best > 1.2e-2f) break;
    }
    Model model(cfg, std::move(params));

    std::vector<Tensor> enc_params, dec_params;
    for (auto& [name, t] : model.parameters().entries()) {
      if (!t.requires_grad()) continue;
      if (name.rfind("enc.", 0) == 0 || name.rfind("src_embed", 0) == 0)
        enc_params.push_back(t);
      else
        dec_params.push_back(t);
    }

    if (!cope)
      run("encoder_layer",
          [&](const std::vector<Tensor>&) { return model.encode(frames, Tensor()); },
          enc_params);
    Tensor enc_fixed = model.encode(frames, Tensor());
    if (!cope)
      run("decoder_layer",
          [&](const std::vector<Tensor>&) {
            return model.decode(dec_in, enc_fixed, Tensor());
          },
          dec_params);

    run(cope ? "full_model_cope" : "full_model",
        [&](const std::vector<Tensor>&) {
          Tensor enc = model.encode(frames, Tensor());
          Tensor logits = model.decode(dec_in, enc, Tensor());
          return cross_entropy(logits, labels, kPadId, 0.0f);
        },
        trainable(model.parameters()));
  }

  return result;
}

}  // namespace signformer
