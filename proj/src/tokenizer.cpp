#include "stratgen/tokenizer.hpp"

#include <cmath>
#include <cstring>

#include "stratgen/gemm.hpp"

namespace stratgen {

FusionMode fusion_from_string(const std::string& s) {
  if (s == "residual") return FusionMode::kResidual;
  if (s == "concat") return FusionMode::kConcat;
  throw ConfigError("unknown fusion mode '" + s + "' (residual|concat)");
}

std::string fusion_to_string(FusionMode m) {
  return m == FusionMode::kResidual ? "residual" : "concat";
}

QuantizeResult quantize(const Tensor& features, const Codebook& codebook) {
  if (features.ndim() != 2)
    throw DimensionError("quantize: features must be [L,D], got " + shape_str(features.shape));
  const int L = features.shape[0], D = features.shape[1];
  if (D != codebook.dim())
    throw DimensionError("quantize: feature dim " + std::to_string(D) +
                         " does not match codebook dim " + std::to_string(codebook.dim()));
  const int K = codebook.size();
  const float* f = features.ptr();
  const float* e = codebook.entries.tensor.ptr();

  // scores[l,k] = -2 f.e ; adding |e|^2 ranks by squared distance. Near-best
  // candidates are re-ranked with exact double-precision distances so the
  // result matches an exhaustive scan bit-for-bit (ties to lowest index).
  std::vector<float> fe(static_cast<size_t>(L) * K);
  gemm_nt(f, e, fe.data(), L, K, D, false);
  std::vector<float> enorm(K);
  for (int k = 0; k < K; ++k) {
    double s = 0.0;
    for (int d = 0; d < D; ++d) {
      const double v = e[static_cast<int64_t>(k) * D + d];
      s += v * v;
    }
    enorm[k] = static_cast<float>(s);
  }

  auto exact_dist = [&](int l, int k) {
    double s = 0.0;
    for (int d = 0; d < D; ++d) {
      const double diff = static_cast<double>(f[static_cast<int64_t>(l) * D + d]) -
                          e[static_cast<int64_t>(k) * D + d];
      s += diff * diff;
    }
    return s;
  };

  std::vector<int> indices(L);
  for (int l = 0; l < L; ++l) {
    const float* row = fe.data() + static_cast<int64_t>(l) * K;
    float best = enorm[0] - 2.0f * row[0];
    for (int k = 1; k < K; ++k) {
      const float s = enorm[k] - 2.0f * row[k];
      if (s < best) best = s;
    }
    const float margin = 1e-4f * (1.0f + std::fabs(best)) + 1e-6f;
    int best_k = -1;
    double best_d = 0.0;
    for (int k = 0; k < K; ++k) {
      if (enorm[k] - 2.0f * row[k] > best + margin) continue;
      const double d = exact_dist(l, k);
      if (best_k < 0 || d < best_d) {
        best_k = k;
        best_d = d;
      }
    }
    indices[l] = best_k;
  }

  QuantizeResult out;
  out.codebook_rows = embedding(codebook.entries.tensor, indices);
  out.quantized = straight_through(features, out.codebook_rows);
  out.indices = std::move(indices);
  return out;
}

double perplexity(const std::vector<int>& indices, int K) {
  if (indices.empty()) throw ContractError("perplexity: empty index set");
  std::vector<int64_t> counts(K, 0);
  for (int i : indices) {
    if (i < 0 || i >= K) throw IndexError("perplexity: index outside [0,K)");
    ++counts[i];
  }
  const double n = static_cast<double>(indices.size());
  double entropy_bits = 0.0;
  for (int64_t c : counts) {
    if (c == 0) continue;
    const double p = c / n;
    entropy_bits -= p * std::log2(p);
  }
  return std::exp2(entropy_bits);
}

double codebook_utilization(const std::vector<int>& indices, int K) {
  if (indices.empty()) throw ContractError("codebook_utilization: empty index set");
  std::vector<bool> seen(K, false);
  int distinct = 0;
  for (int i : indices) {
    if (i < 0 || i >= K) throw IndexError("codebook_utilization: index outside [0,K)");
    if (!seen[i]) {
      seen[i] = true;
      ++distinct;
    }
  }
  return static_cast<double>(distinct) / static_cast<double>(K);
}

VqTokenizer::VqTokenizer(const RunConfig& cfg, uint64_t init_seed)
    : image_size_(cfg.image_size),
      channels_(cfg.channels),
      nblocks_(cfg.res_blocks),
      code_dim_(cfg.codebook_dim),
      shared_(cfg.shared_codebook),
      fusion_(fusion_from_string(cfg.fusion)),
      beta_(cfg.commitment_cost) {
  if (image_size_ % 16 != 0) throw ConfigError("tokenizer: image_size must be divisible by 16");
  Rng rng(splitmix64(init_seed ^ 0x70cc1e5ULL));
  const int C = channels_;
  const int Ch = C / 2;
  if (Ch < 4) throw ConfigError("tokenizer: channels too small");
  const int D = code_dim_;

  patch_embed_ = LinearLayer("enc.patch_embed", 4 * 4 * 3, Ch, rng, 0.0f);
  for (int i = 0; i < nblocks_; ++i)
    enc16_.emplace_back("enc.s4.block" + std::to_string(i), Ch, rng);
  enc_widen_ = LinearLayer("enc.widen", Ch, C, rng, 0.0f);
  for (int i = 0; i < nblocks_; ++i)
    enc8_.emplace_back("enc.s8.block" + std::to_string(i), C, rng);
  for (int i = 0; i < nblocks_; ++i)
    enc4_.emplace_back("enc.s16.block" + std::to_string(i), C, rng);
  to_code_top_ = LinearLayer("enc.to_code_top", C, D, rng, 0.0f);

  cond_merge_ = LinearLayer("cond.merge", C + D, C, rng, 0.0f);
  for (int i = 0; i < 2; ++i)
    cond_blocks_.emplace_back("cond.block" + std::to_string(i), C, rng);
  to_code_bottom_ = LinearLayer("cond.to_code_bottom", C, D, rng, 0.0f);

  if (fusion_ == FusionMode::kResidual) {
    fuse_top_ = LinearLayer("dec.fuse_top", D, C, rng, 0.0f, false);
    for (int i = 0; i < 2; ++i)
      fuse_stem_.emplace_back("dec.stem.block" + std::to_string(i), C, rng);
    fuse_bottom_ = LinearLayer("dec.fuse_bottom", D, C, rng, 0.0f, false);
  } else {
    fuse_concat_ = LinearLayer("dec.fuse_concat", 2 * D, C, rng, 0.0f, false);
  }
  for (int i = 0; i < nblocks_; ++i)
    dec8_.emplace_back("dec.s8.block" + std::to_string(i), C, rng);
  dec_narrow16_ = LinearLayer("dec.narrow16", C, Ch, rng, 0.0f);
  for (int i = 0; i < nblocks_; ++i)
    dec16_.emplace_back("dec.s4.block" + std::to_string(i), Ch, rng);
  to_pixels_ = ConvLayer("dec.to_pixels", Ch, 12, 3, 1, 1, rng);

  const int ktop = shared_ ? cfg.codebook_size : cfg.codebook_size_top;
  cb_top_.entries =
      Parameter("codebook.top", Tensor::randn({ktop, D}, rng, 0.5f, true));
  if (!shared_)
    cb_bottom_.entries = Parameter("codebook.bottom",
                                   Tensor::randn({cfg.codebook_size_bottom, D}, rng, 0.5f, true));
}

std::vector<Parameter*> VqTokenizer::parameters() {
  std::vector<Parameter*> out;
  patch_embed_.collect(out);
  for (auto& b : enc16_) b.collect(out);
  enc_widen_.collect(out);
  for (auto& b : enc8_) b.collect(out);
  for (auto& b : enc4_) b.collect(out);
  to_code_top_.collect(out);
  cond_merge_.collect(out);
  for (auto& b : cond_blocks_) b.collect(out);
  to_code_bottom_.collect(out);
  if (fusion_ == FusionMode::kResidual) {
    fuse_top_.collect(out);
    for (auto& b : fuse_stem_) b.collect(out);
    fuse_bottom_.collect(out);
  } else {
    fuse_concat_.collect(out);
  }
  for (auto& b : dec8_) b.collect(out);
  dec_narrow16_.collect(out);
  for (auto& b : dec16_) b.collect(out);
  to_pixels_.collect(out);
  out.push_back(&cb_top_.entries);
  if (!shared_) out.push_back(&cb_bottom_.entries);
  return out;
}

void VqTokenizer::require_image_batch(const Tensor& images) const {
  if (images.ndim() != 4 || images.shape[3] != 3)
    throw DimensionError("tokenizer: expected [B,H,W,3], got " + shape_str(images.shape));
  if (images.shape[1] % 16 != 0 || images.shape[2] % 16 != 0)
    throw DimensionError("tokenizer: image extents must be divisible by 16, got " +
                         shape_str(images.shape));
  if (images.shape[1] != image_size_ || images.shape[2] != image_size_)
    throw DimensionError("tokenizer: model built for " + std::to_string(image_size_) +
                         "px inputs, got " + shape_str(images.shape));
}

VqTokenizer::EncodeOut VqTokenizer::encode_trunk(const Tensor& images) {
  require_image_batch(images);
  const int B = images.shape[0];
  const int s4 = image_size_ / 4;
  Tensor x = im2col(images, 4, 4, 4, 0);             // [B*s4*s4, 48]
  x = patch_embed_(x);
  x = reshape(x, {B, s4, s4, channels_ / 2});
  for (const auto& blk : enc16_) x = blk(x);
  x = avg_pool2(x);                                   // S/8
  x = enc_widen_(x);
  for (const auto& blk : enc8_) x = blk(x);
  EncodeOut out;
  out.f8 = x;
  x = avg_pool2(x);                                   // S/16
  for (const auto& blk : enc4_) x = blk(x);
  out.f16 = x;
  return out;
}

Tensor VqTokenizer::latent_conditional(const Tensor& f8, const Tensor& top_q_grid) {
  Tensor up = upsample_nearest2(top_q_grid);          // [B,s8,s8,D]
  Tensor h = concat(f8, up, 3);
  h = cond_merge_(h);
  for (const auto& blk : cond_blocks_) h = blk(h);
  return h;
}

Tensor VqTokenizer::fuse(const Tensor& top_q, const Tensor& bottom_q) const {
  if (top_q.ndim() != 4 || bottom_q.ndim() != 4)
    throw ContractError("fuse: expects NHWC quantized grids");
  if (bottom_q.shape[1] != 2 * top_q.shape[1] || bottom_q.shape[2] != 2 * top_q.shape[2])
    throw ContractError("fuse: bottom grid must be exactly 2x the top grid, got " +
                        shape_str(top_q.shape) + " and " + shape_str(bottom_q.shape));
  // residual: the top level is projected and processed by a dedicated stem
  // at its own resolution, then upsampled; the bottom level enters as a bare
  // projection added on top. Every piece of the top branch and the bottom
  // projection maps zero to zero, so either level drops out of the merge
  // exactly when its codes are zero. Concat hands the decoder free per-level
  // weighting instead.
  if (fusion_ == FusionMode::kResidual) {
    Tensor stem = fuse_top_(top_q);
    for (const auto& blk : fuse_stem_) stem = blk(stem);
    return add(upsample_nearest2(stem), fuse_bottom_(bottom_q));
  }
  return fuse_concat_(concat(upsample_nearest2(top_q), bottom_q, 3));
}

Tensor VqTokenizer::decode(const Tensor& fused) const {
  if (fused.ndim() != 4 || fused.shape[1] != image_size_ / 8)
    throw ContractError("decode: expected fused grid at 1/8 resolution");
  Tensor x = fused;
  for (const auto& blk : dec8_) x = blk(x);
  x = upsample_nearest2(x);                           // S/4
  x = dec_narrow16_(x);
  for (const auto& blk : dec16_) x = blk(x);
  x = upsample_nearest2(x);                           // S/2
  x = to_pixels_(x);                                  // [B,S/2,S/2,12]
  x = pixel_shuffle(x, 2);                            // [B,S,S,3]
  return sigmoid_op(x);
}

TokenizerForward VqTokenizer::forward(const Tensor& images) {
  const int B = images.shape[0];
  const int s16 = image_size_ / 16, s8 = image_size_ / 8;
  EncodeOut enc = encode_trunk(images);

  TokenizerForward out;
  out.z_e_top = reshape(to_code_top_(enc.f16), {B * s16 * s16, code_dim_});
  QuantizeResult qt = quantize(out.z_e_top, top_codebook());
  out.top_indices = qt.indices;
  out.q_top = qt.quantized;

  Tensor top_q_grid = reshape(qt.quantized, {B, s16, s16, code_dim_});
  Tensor h8 = latent_conditional(enc.f8, top_q_grid);
  out.z_e_bottom = reshape(to_code_bottom_(h8), {B * s8 * s8, code_dim_});
  QuantizeResult qb = quantize(out.z_e_bottom, bottom_codebook());
  out.bottom_indices = qb.indices;
  out.q_bottom = qb.quantized;

  Tensor fused = fuse(top_q_grid, reshape(qb.quantized, {B, s8, s8, code_dim_}));
  out.recon = decode(fused);
  return out;
}

VqLossParts VqTokenizer::vq_loss(const Tensor& images, float bottom_scale) {
  const int B = images.shape[0];
  const int s16 = image_size_ / 16, s8 = image_size_ / 8;
  EncodeOut enc = encode_trunk(images);

  Tensor z_e_top = reshape(to_code_top_(enc.f16), {B * s16 * s16, code_dim_});
  QuantizeResult qt = quantize(z_e_top, top_codebook());
  Tensor top_q_grid = reshape(qt.quantized, {B, s16, s16, code_dim_});

  Tensor h8 = latent_conditional(enc.f8, top_q_grid);
  Tensor z_e_bot = reshape(to_code_bottom_(h8), {B * s8 * s8, code_dim_});
  QuantizeResult qb = quantize(z_e_bot, bottom_codebook());

  Tensor bottom_grid = reshape(qb.quantized, {B, s8, s8, code_dim_});
  if (bottom_scale != 1.0f) bottom_grid = scale(bottom_grid, bottom_scale);
  Tensor fused = fuse(top_q_grid, bottom_grid);
  Tensor recon = decode(fused);

  Tensor recon_term = mse(recon, images);
  Tensor commit_top = mse(z_e_top, detach(qt.codebook_rows));
  Tensor commit_bot = mse(z_e_bot, detach(qb.codebook_rows));
  Tensor cbk_top = mse(detach(z_e_top), qt.codebook_rows);
  Tensor cbk_bot = mse(detach(z_e_bot), qb.codebook_rows);

  VqLossParts parts;
  parts.recon = recon_term.item();
  parts.commit_top = commit_top.item();
  parts.commit_bottom = commit_bot.item();
  parts.codebook_top = cbk_top.item();
  parts.codebook_bottom = cbk_bot.item();
  parts.total = add(add(recon_term, scale(add(commit_top, commit_bot), beta_)),
                    add(cbk_top, cbk_bot));
  parts.top_indices = std::move(qt.indices);
  parts.bottom_indices = std::move(qb.indices);
  parts.z_e_top = z_e_top;
  parts.z_e_bottom = z_e_bot;
  return parts;
}

Tensor VqTokenizer::reconstruct(const Tensor& images, bool top_only) {
  NoGradGuard ng;
  const int B = images.shape[0];
  const int s16 = image_size_ / 16, s8 = image_size_ / 8;
  EncodeOut enc = encode_trunk(images);
  Tensor z_e_top = reshape(to_code_top_(enc.f16), {B * s16 * s16, code_dim_});
  QuantizeResult qt = quantize(z_e_top, top_codebook());
  Tensor top_q_grid = reshape(qt.quantized, {B, s16, s16, code_dim_});
  Tensor bottom_q_grid;
  if (top_only) {
    bottom_q_grid = Tensor::zeros({B, s8, s8, code_dim_});
  } else {
    Tensor h8 = latent_conditional(enc.f8, top_q_grid);
    Tensor z_e_bot = reshape(to_code_bottom_(h8), {B * s8 * s8, code_dim_});
    QuantizeResult qb = quantize(z_e_bot, bottom_codebook());
    bottom_q_grid = reshape(qb.quantized, {B, s8, s8, code_dim_});
  }
  return decode(fuse(top_q_grid, bottom_q_grid));
}

LatentPair VqTokenizer::encode_stratified(const Tensor& image) {
  if (image.ndim() != 3 || image.shape[2] != 3)
    throw DimensionError("encode_stratified: expected [H,W,3], got " + shape_str(image.shape));
  if (image.shape[0] % 16 != 0 || image.shape[1] % 16 != 0)
    throw DimensionError("encode_stratified: extents must be divisible by 16, got " +
                         shape_str(image.shape));
  for (float v : *image.data)
    if (v < 0.0f || v > 1.0f)
      throw ValidationError("encode_stratified: pixel values must lie in [0,1]");
  NoGradGuard ng;
  Tensor batch = reshape(image, {1, image.shape[0], image.shape[1], 3});
  EncodeOut enc = encode_trunk(batch);
  LatentPair out;
  out.top = reshape(enc.f16, {enc.f16.shape[1], enc.f16.shape[2], enc.f16.shape[3]});
  out.bottom = reshape(enc.f8, {enc.f8.shape[1], enc.f8.shape[2], enc.f8.shape[3]});
  return out;
}

TokenGrid VqTokenizer::tokenize(const Tensor& image) {
  if (image.ndim() != 3 || image.shape[2] != 3)
    throw DimensionError("tokenize: expected [H,W,3], got " + shape_str(image.shape));
  NoGradGuard ng;
  Tensor batch = reshape(image, {1, image.shape[0], image.shape[1], 3});
  TokenizerForward fwd = forward(batch);
  TokenGrid grid;
  grid.top = fwd.top_indices;
  grid.bottom = fwd.bottom_indices;
  return grid;
}

Tensor VqTokenizer::detokenize(const TokenGrid& grid) {
  Tensor batch = decode_grids({grid});
  return reshape(batch, {image_size_, image_size_, 3});
}

Tensor VqTokenizer::decode_grids(const std::vector<TokenGrid>& grids) {
  NoGradGuard ng;
  const int B = static_cast<int>(grids.size());
  if (B == 0) throw ContractError("decode_grids: empty batch");
  const int s16 = image_size_ / 16, s8 = image_size_ / 8;
  const int N = s16 * s16;
  std::vector<int> top_ids, bot_ids;
  top_ids.reserve(static_cast<size_t>(B) * N);
  bot_ids.reserve(static_cast<size_t>(B) * 4 * N);
  for (const TokenGrid& g : grids) {
    if (static_cast<int>(g.top.size()) != N || static_cast<int>(g.bottom.size()) != 4 * N)
      throw ValidationError("detokenize: grid lengths must be " + std::to_string(N) + " and " +
                            std::to_string(4 * N));
    for (int i : g.top) {
      if (i < 0 || i >= top_codebook().size())
        throw ValidationError("detokenize: top index outside [0,K)");
      top_ids.push_back(i);
    }
    for (int i : g.bottom) {
      if (i < 0 || i >= bottom_codebook().size())
        throw ValidationError("detokenize: bottom index outside [0,K)");
      bot_ids.push_back(i);
    }
  }
  Tensor top_rows = embedding(top_codebook().entries.tensor, top_ids);
  Tensor bot_rows = embedding(bottom_codebook().entries.tensor, bot_ids);
  Tensor fused = fuse(reshape(top_rows, {B, s16, s16, code_dim_}),
                      reshape(bot_rows, {B, s8, s8, code_dim_}));
  return decode(fused);
}

int VqTokenizer::revive_dead_codes(Codebook& cb, const std::vector<int64_t>& usage,
                                   const Tensor& features, Rng& rng) {
  if (static_cast<int>(usage.size()) != cb.size())
    throw ContractError("revive_dead_codes: usage length must equal codebook size");
  if (features.ndim() != 2 || features.shape[1] != cb.dim())
    throw ContractError("revive_dead_codes: features must be [L,D]");
  const int L = features.shape[0];
  int revived = 0;
  float* e = cb.entries.tensor.ptr();
  const float* f = features.ptr();
  for (int k = 0; k < cb.size(); ++k) {
    if (usage[k] != 0) continue;
    const int src = rng.randint(L);
    std::memcpy(e + static_cast<int64_t>(k) * cb.dim(),
                f + static_cast<int64_t>(src) * cb.dim(), sizeof(float) * cb.dim());
    ++revived;
  }
  return revived;
}

}  // namespace stratgen
