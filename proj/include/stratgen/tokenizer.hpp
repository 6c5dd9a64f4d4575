#pragma once

#include <string>
#include <vector>

#include "stratgen/config.hpp"
#include "stratgen/layers.hpp"
#include "stratgen/tensor.hpp"

namespace stratgen {

enum class FusionMode { kResidual, kConcat };
FusionMode fusion_from_string(const std::string& s);
std::string fusion_to_string(FusionMode m);

struct TokenGrid {
  std::vector<int> top;     // N = (H/16)*(W/16), row-major
  std::vector<int> bottom;  // 4N
};

struct Codebook {
  Parameter entries;  // [K, D]
  int size() const { return entries.tensor.shape[0]; }
  int dim() const { return entries.tensor.shape[1]; }
};

struct LatentPair {
  Tensor top;     // [H/16, W/16, C_feat]
  Tensor bottom;  // [H/8, W/8, C_feat]
};

struct QuantizeResult {
  std::vector<int> indices;  // nearest entry per row
  Tensor quantized;          // [L,D], straight-through wired
  Tensor codebook_rows;      // [L,D], differentiable into the codebook
};

// Nearest-neighbor lookup with straight-through gradients: the returned
// `quantized` carries the codebook values forward but routes gradients to
// `features` unchanged; `codebook_rows` is the path for the codebook loss.
// Ties break to the lowest index.
QuantizeResult quantize(const Tensor& features, const Codebook& codebook);

// Appendix-style codebook statistics over one batch of indices.
double perplexity(const std::vector<int>& indices, int K);
double codebook_utilization(const std::vector<int>& indices, int K);

struct VqLossParts {
  Tensor total;
  float recon = 0.0f;
  float commit_top = 0.0f;
  float commit_bottom = 0.0f;
  float codebook_top = 0.0f;
  float codebook_bottom = 0.0f;
  // byproducts for usage tracking and dead-code revival
  std::vector<int> top_indices;
  std::vector<int> bottom_indices;
  Tensor z_e_top, z_e_bottom;  // pre-quantization features [L,D]
};

struct TokenizerForward {
  std::vector<int> top_indices;     // B*N
  std::vector<int> bottom_indices;  // B*4N
  Tensor recon;                     // [B,S,S,3]
  Tensor z_e_top, z_e_bottom;       // pre-quantization features [L,D]
  Tensor q_top, q_bottom;           // straight-through quantized [L,D]
};

// Two-level stratified tokenizer. The encoder trunk downsamples by 16 and 8
// off one stack; the top level is quantized first and conditions the bottom
// quantization through the latent conditional layer; the decoder fuses the
// two levels by residual addition or concatenation.
class VqTokenizer {
 public:
  VqTokenizer(const RunConfig& cfg, uint64_t init_seed);

  std::vector<Parameter*> parameters();

  // Spec surface (single image, [H,W,3] in [0,1]).
  LatentPair encode_stratified(const Tensor& image);
  TokenGrid tokenize(const Tensor& image);
  Tensor detokenize(const TokenGrid& grid);

  // Batched training path ([B,S,S,3]). bottom_scale ramps the bottom level's
  // decoder contribution during early training (1.0 = the plain objective).
  TokenizerForward forward(const Tensor& images);
  VqLossParts vq_loss(const Tensor& images, float bottom_scale = 1.0f);

  // Frozen-model reconstruction; top_only zeroes the bottom-level codes
  // (the single-level f=16 baseline).
  Tensor reconstruct(const Tensor& images, bool top_only = false);

  // Decoder-side pieces, exposed for the fusion identities.
  Tensor fuse(const Tensor& top_q, const Tensor& bottom_q) const;  // NHWC in, NHWC out
  Tensor decode(const Tensor& fused) const;                        // -> [B,S,S,3]
  Tensor decode_grids(const std::vector<TokenGrid>& grids);        // batched detokenize

  FusionMode fusion() const { return fusion_; }
  const Codebook& top_codebook() const { return cb_top_; }
  const Codebook& bottom_codebook() const { return shared_ ? cb_top_ : cb_bottom_; }
  Codebook& top_codebook() { return cb_top_; }
  Codebook& bottom_codebook() { return shared_ ? cb_top_ : cb_bottom_; }
  bool shared_codebook() const { return shared_; }
  int grid_side() const { return image_size_ / 16; }    // top tokens per axis
  int top_tokens() const { return grid_side() * grid_side(); }
  int bottom_tokens() const { return 4 * top_tokens(); }
  int image_size() const { return image_size_; }
  float commitment_cost() const { return beta_; }

  // Re-initializes entries whose epoch usage count is zero from rows of the
  // given feature matrix (last-batch encoder outputs).
  int revive_dead_codes(Codebook& cb, const std::vector<int64_t>& usage,
                        const Tensor& features, Rng& rng);

 private:
  struct EncodeOut {
    Tensor f16;  // [B,s16,s16,C]
    Tensor f8;   // [B,s8,s8,C]
  };
  EncodeOut encode_trunk(const Tensor& images);
  Tensor latent_conditional(const Tensor& f8, const Tensor& top_q_grid);
  void require_image_batch(const Tensor& images) const;

  int image_size_;
  int channels_;
  int nblocks_;
  int code_dim_;
  bool shared_;
  FusionMode fusion_;
  float beta_;

  // encoder
  LinearLayer patch_embed_;           // 4x4x3 -> C/2
  std::vector<ResBlock> enc16_;       // at S/4 grid... (names kept by stage)
  LinearLayer enc_widen_;             // C/2 -> C after first pool
  std::vector<ResBlock> enc8_;
  std::vector<ResBlock> enc4_;
  LinearLayer to_code_top_;           // C -> D
  // latent conditional layer
  LinearLayer cond_merge_;            // C + D -> C
  std::vector<ResBlock> cond_blocks_; // fixed at 2
  LinearLayer to_code_bottom_;        // C -> D
  // decoder
  LinearLayer fuse_top_;              // D -> C, bias-free (residual mode)
  std::vector<ZeroPreservingResBlock> fuse_stem_;  // top-resolution stem
  LinearLayer fuse_bottom_;           // D -> C, bias-free (residual mode)
  LinearLayer fuse_concat_;           // 2D -> C, bias-free (concat mode)
  std::vector<ResBlock> dec8_;
  LinearLayer dec_narrow16_;          // C -> C/2
  std::vector<ResBlock> dec16_;
  ConvLayer to_pixels_;               // C/2 -> 12, then pixel_shuffle(2)

  Codebook cb_top_;
  Codebook cb_bottom_;  // unused when shared_
};

}  // namespace stratgen
