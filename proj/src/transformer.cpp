#include "stratgen/transformer.hpp"

#include <cmath>

#include "stratgen/ops.hpp"

namespace stratgen {

float sample_mask_ratio(Rng& rng, int L) {
  if (L < 1) throw ContractError("sample_mask_ratio: empty sequence");
  const double r = rng.uniform();
  double ratio = std::cos(3.14159265358979323846 * r / 2.0);
  const double floor_ratio = 1.0 / static_cast<double>(L);
  if (ratio < floor_ratio) ratio = floor_ratio;  // keep >= 1 masked position
  return static_cast<float>(ratio);
}

MaskedBatch apply_mask(const std::vector<int>& targets, int batch, int seq_len, float ratio,
                       const VocabLayout& vocab, const std::vector<int>& class_ids, Rng& rng) {
  if (ratio <= 0.0f || ratio > 1.0f) throw ContractError("apply_mask: ratio must be in (0,1]");
  if (static_cast<int>(targets.size()) != batch * seq_len)
    throw DimensionError("apply_mask: targets size mismatch");
  if (static_cast<int>(class_ids.size()) != batch)
    throw DimensionError("apply_mask: class_ids size mismatch");
  for (int t : targets)
    if (t < 0 || t >= vocab.codebook_size)
      throw IndexError("apply_mask: target outside codebook (MASK may not be a target)");

  MaskedBatch out;
  out.batch = batch;
  out.seq_len = seq_len;
  out.targets = targets;
  out.class_ids = class_ids;
  out.tokens = targets;
  out.mask.assign(static_cast<size_t>(batch) * seq_len, 0);
  const int n_masked = static_cast<int>(std::ceil(static_cast<double>(ratio) * seq_len));
  for (int b = 0; b < batch; ++b) {
    std::vector<int> pos = rng.sample_without_replacement(seq_len, n_masked);
    for (int p : pos) {
      out.mask[static_cast<size_t>(b) * seq_len + p] = 1;
      out.tokens[static_cast<size_t>(b) * seq_len + p] = vocab.mask_id();
    }
  }
  return out;
}

std::vector<int> cfg_dropout(const std::vector<int>& class_ids, Rng& rng, float p,
                             int null_class) {
  if (p < 0.0f || p > 1.0f) throw ContractError("cfg_dropout: p must be in [0,1]");
  std::vector<int> out = class_ids;
  for (int& c : out)
    if (rng.uniform() < p) c = null_class;
  return out;
}

NarTransformer::NarTransformer(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  if (cfg.embed_dim % cfg.heads != 0)
    throw ConfigError("transformer: embed_dim must be divisible by heads");
  if (cfg.cross && cfg.memory_len <= 0)
    throw ConfigError("transformer: cross attention needs memory_len");
  Rng rng(splitmix64(init_seed ^ 0x7a15f0e3ULL));
  const int d = cfg.embed_dim;
  constexpr float kSigma = 0.02f;

  tok_embed_ = Parameter("tok_embed",
                         Tensor::trunc_normal({cfg.codebook_size + 1, d}, rng, kSigma, true));
  cls_embed_ = Parameter("cls_embed",
                         Tensor::trunc_normal({cfg.num_classes + 1, d}, rng, kSigma, true));
  const int self_len = cfg.cross ? cfg.seq_len : cfg.seq_len + 1;  // prefix on the self side
  pos_embed_ = Parameter("pos_embed", Tensor::trunc_normal({self_len, d}, rng, kSigma, true));
  if (cfg.cross) {
    mem_embed_ = Parameter("mem_embed",
                           Tensor::trunc_normal({cfg.memory_codebook, d}, rng, kSigma, true));
    mem_pos_ = Parameter("mem_pos",
                         Tensor::trunc_normal({cfg.memory_len + 1, d}, rng, kSigma, true));
    mem_ln_ = LayerNormLayer("mem_ln", d);
  }

  blocks_.reserve(cfg.layers);
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string p = "block" + std::to_string(i);
    Block blk;
    blk.ln_attn = LayerNormLayer(p + ".ln_attn", d);
    blk.wq = LinearLayer(p + ".wq", d, d, rng, kSigma);
    blk.wk = LinearLayer(p + ".wk", d, d, rng, kSigma);
    blk.wv = LinearLayer(p + ".wv", d, d, rng, kSigma);
    blk.wo = LinearLayer(p + ".wo", d, d, rng, kSigma);
    blk.ln_attn_out = LayerNormLayer(p + ".ln_attn_out", d, residual_branch_gain());
    if (cfg.cross) {
      blk.ln_cross = LayerNormLayer(p + ".ln_cross", d);
      blk.cq = LinearLayer(p + ".cq", d, d, rng, kSigma);
      blk.ck = LinearLayer(p + ".ck", d, d, rng, kSigma);
      blk.cv = LinearLayer(p + ".cv", d, d, rng, kSigma);
      blk.co = LinearLayer(p + ".co", d, d, rng, kSigma);
      blk.ln_cross_out = LayerNormLayer(p + ".ln_cross_out", d, residual_branch_gain());
    }
    blk.ln_mlp = LayerNormLayer(p + ".ln_mlp", d);
    blk.fc1 = LinearLayer(p + ".fc1", d, cfg.mlp_dim, rng, kSigma);
    blk.fc2 = LinearLayer(p + ".fc2", cfg.mlp_dim, d, rng, kSigma);
    blk.ln_mlp_out = LayerNormLayer(p + ".ln_mlp_out", d, residual_branch_gain());
    blocks_.push_back(std::move(blk));
  }
  final_ln_ = LayerNormLayer("final_ln", d);
  head_ = LinearLayer("head", d, cfg.codebook_size, rng, kSigma);
}

std::vector<Parameter*> NarTransformer::parameters() {
  std::vector<Parameter*> out;
  out.push_back(&tok_embed_);
  out.push_back(&cls_embed_);
  out.push_back(&pos_embed_);
  if (cfg_.cross) {
    out.push_back(&mem_embed_);
    out.push_back(&mem_pos_);
    mem_ln_.collect(out);
  }
  for (Block& b : blocks_) {
    b.ln_attn.collect(out);
    b.wq.collect(out);
    b.wk.collect(out);
    b.wv.collect(out);
    b.wo.collect(out);
    b.ln_attn_out.collect(out);
    if (cfg_.cross) {
      b.ln_cross.collect(out);
      b.cq.collect(out);
      b.ck.collect(out);
      b.cv.collect(out);
      b.co.collect(out);
      b.ln_cross_out.collect(out);
    }
    b.ln_mlp.collect(out);
    b.fc1.collect(out);
    b.fc2.collect(out);
    b.ln_mlp_out.collect(out);
  }
  final_ln_.collect(out);
  head_.collect(out);
  return out;
}

Tensor NarTransformer::attention(const Tensor& q_in, const Tensor& kv_in,
                                 const LinearLayer& wq, const LinearLayer& wk,
                                 const LinearLayer& wv, const LinearLayer& wo,
                                 Rng* dropout_rng) const {
  const int B = q_in.shape[0], Sq = q_in.shape[1], Sk = kv_in.shape[1];
  const int H = cfg_.heads, d = cfg_.embed_dim, dh = d / H;
  auto split_heads = [&](const Tensor& t, int S) {
    return reshape(permute(reshape(t, {B, S, H, dh}), {0, 2, 1, 3}), {B * H, S, dh});
  };
  Tensor q = split_heads(wq(q_in), Sq);
  Tensor k = split_heads(wk(kv_in), Sk);
  Tensor v = split_heads(wv(kv_in), Sk);
  Tensor scores = scale(bmm(q, k, false, true), 1.0f / std::sqrt(static_cast<float>(dh)));
  Tensor probs = softmax(scores);
  if (dropout_rng) probs = dropout(probs, cfg_.dropout, *dropout_rng, true);
  Tensor ctx = bmm(probs, v, false, false);
  ctx = reshape(permute(reshape(ctx, {B, H, Sq, dh}), {0, 2, 1, 3}), {B, Sq, d});
  return wo(ctx);
}

Tensor NarTransformer::forward(const std::vector<int>& tokens,
                               const std::vector<int>& class_ids, int batch, Rng* dropout_rng,
                               const std::vector<int>* memory_tokens) {
  const int L = cfg_.seq_len, d = cfg_.embed_dim;
  if (static_cast<int>(tokens.size()) != batch * L)
    throw DimensionError("forward: expected " + std::to_string(batch * L) + " tokens, got " +
                         std::to_string(tokens.size()));
  if (static_cast<int>(class_ids.size()) != batch)
    throw DimensionError("forward: class_ids size mismatch");
  for (int t : tokens)
    if (t < 0 || t > cfg_.vocab().mask_id())
      throw IndexError("forward: token id outside vocabulary");
  for (int c : class_ids)
    if (c < 0 || c > cfg_.vocab().null_class())
      throw ValidationError("forward: class id outside [0, C]");

  Tensor x;
  Tensor memory;
  if (!cfg_.cross) {
    if (memory_tokens) throw ContractError("forward: self-attention model takes no memory");
    Tensor tok = reshape(embedding(tok_embed_.tensor, tokens), {batch, L, d});
    Tensor cls = reshape(embedding(cls_embed_.tensor, class_ids), {batch, 1, d});
    x = concat(cls, tok, 1);  // class prefix position 0
    x = add_bcast0(x, pos_embed_.tensor);
  } else {
    if (!memory_tokens) throw ContractError("forward: cross-attention model needs top tokens");
    if (static_cast<int>(memory_tokens->size()) != batch * cfg_.memory_len)
      throw DimensionError("forward: memory length mismatch");
    for (int t : *memory_tokens)
      if (t < 0 || t >= cfg_.memory_codebook)
        throw ContractError(
            "forward: MASK (or out-of-range id) in top conditioning; the bottom model is "
            "teacher-forced on fully observed top tokens");
    x = reshape(embedding(tok_embed_.tensor, tokens), {batch, L, d});
    x = add_bcast0(x, pos_embed_.tensor);
    Tensor memtok = reshape(embedding(mem_embed_.tensor, *memory_tokens),
                            {batch, cfg_.memory_len, d});
    Tensor cls = reshape(embedding(cls_embed_.tensor, class_ids), {batch, 1, d});
    memory = concat(cls, memtok, 1);
    memory = add_bcast0(memory, mem_pos_.tensor);
    memory = mem_ln_(memory);
  }

  for (const Block& blk : blocks_) {
    Tensor nx = blk.ln_attn(x);
    Tensor a = attention(nx, nx, blk.wq, blk.wk, blk.wv, blk.wo, dropout_rng);
    x = add(x, blk.ln_attn_out(a));
    if (cfg_.cross) {
      Tensor c = attention(blk.ln_cross(x), memory, blk.cq, blk.ck, blk.cv, blk.co,
                           dropout_rng);
      x = add(x, blk.ln_cross_out(c));
    }
    Tensor h = blk.fc1(blk.ln_mlp(x));
    h = gelu(h);
    if (dropout_rng) h = dropout(h, cfg_.dropout, *dropout_rng, true);
    h = blk.fc2(h);
    x = add(x, blk.ln_mlp_out(h));
  }
  x = final_ln_(x);
  if (!cfg_.cross) x = slice(x, 1, 1, L);  // the prefix position emits no logits
  return head_(x);  // [B, L, K]
}

std::vector<int> conditional_augmentation(const std::vector<int>& top_tokens, int batch,
                                          float ratio, NarTransformer& top_model,
                                          const std::vector<int>& class_ids, Rng& rng) {
  if (ratio < 0.0f || ratio > 1.0f)
    throw ContractError("conditional_augmentation: ratio must be in [0,1]");
  const int N = top_model.config().seq_len;
  if (static_cast<int>(top_tokens.size()) != batch * N)
    throw DimensionError("conditional_augmentation: token count mismatch");
  if (ratio == 0.0f) return top_tokens;

  const int mask_id = top_model.config().vocab().mask_id();
  std::vector<int> masked = top_tokens;
  std::vector<std::vector<int>> holes(batch);
  const int n_masked = static_cast<int>(std::ceil(static_cast<double>(ratio) * N));
  for (int b = 0; b < batch; ++b) {
    holes[b] = rng.sample_without_replacement(N, n_masked);
    for (int p : holes[b]) masked[static_cast<size_t>(b) * N + p] = mask_id;
  }

  NoGradGuard ng;
  Tensor logits = top_model.forward(masked, class_ids, batch, nullptr);
  const int K = top_model.config().codebook_size;
  std::vector<int> out = top_tokens;
  const float* lg = logits.ptr();
  for (int b = 0; b < batch; ++b)
    for (int p : holes[b]) {
      const float* row = lg + (static_cast<int64_t>(b) * N + p) * K;
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (row[k] > row[best]) best = k;
      out[static_cast<size_t>(b) * N + p] = best;
    }
  return out;
}

}  // namespace stratgen
