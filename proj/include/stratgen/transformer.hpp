#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stratgen/layers.hpp"
#include "stratgen/tensor.hpp"

namespace stratgen {

// Token id layout shared by both levels: codebook ids, then the MASK
// placeholder; class ids end with the reserved null class used by
// classifier-free guidance. MASK never appears in targets.
struct VocabLayout {
  int codebook_size = 0;
  int num_classes = 0;

  int mask_id() const { return codebook_size; }
  int null_class() const { return num_classes; }
};

struct MaskedBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> tokens;    // B*L, MASK substituted where mask is set
  std::vector<uint8_t> mask;  // B*L
  std::vector<int> targets;   // B*L, original ids everywhere
  std::vector<int> class_ids; // B
};

// r ~ U(0,1) mapped through cos(pi r / 2), clamped so at least one of the
// L positions gets masked.
float sample_mask_ratio(Rng& rng, int L);

// Masks exactly ceil(ratio*L) positions per row, uniformly without
// replacement.
MaskedBatch apply_mask(const std::vector<int>& targets, int batch, int seq_len, float ratio,
                       const VocabLayout& vocab, const std::vector<int>& class_ids, Rng& rng);

// Each row independently becomes the null class with probability p.
std::vector<int> cfg_dropout(const std::vector<int>& class_ids, Rng& rng, float p,
                             int null_class);

struct ModelConfig {
  int layers = 6;
  int heads = 8;
  int embed_dim = 128;
  int mlp_dim = 512;
  float dropout = 0.1f;
  int seq_len = 16;        // token positions, class prefix excluded
  int codebook_size = 256; // output vocabulary
  int num_classes = 12;
  bool cross = false;      // bottom model: cross-attend to top tokens
  int memory_len = 0;      // top sequence length when cross
  int memory_codebook = 0; // top codebook size when cross

  VocabLayout vocab() const { return {codebook_size, num_classes}; }
  VocabLayout memory_vocab() const { return {memory_codebook, num_classes}; }
};

// Bidirectional masked-token transformer. The top model self-attends over
// its sequence with the class embedding prepended as a prefix position; the
// bottom model self-attends over the long sequence and cross-attends into
// the embedded (fully observed) top sequence plus class prefix.
class NarTransformer {
 public:
  NarTransformer(const ModelConfig& cfg, uint64_t init_seed);

  std::vector<Parameter*> parameters();

  // tokens: B*seq_len ids (MASK allowed). memory_tokens: B*memory_len top ids,
  // required iff cross; MASK there is a contract error (the teacher-forcing
  // regime feeds observed tokens; conditional augmentation fills predictions).
  // dropout_rng null disables dropout (evaluation).
  Tensor forward(const std::vector<int>& tokens, const std::vector<int>& class_ids, int batch,
                 Rng* dropout_rng, const std::vector<int>* memory_tokens = nullptr);

  const ModelConfig& config() const { return cfg_; }

 private:
  struct Block {
    LayerNormLayer ln_attn;
    LinearLayer wq, wk, wv, wo;
    LayerNormLayer ln_attn_out;  // gain starts at zero: branch opens gradually
    LayerNormLayer ln_cross;
    LinearLayer cq, ck, cv, co;
    LayerNormLayer ln_cross_out;
    LayerNormLayer ln_mlp;
    LinearLayer fc1, fc2;
    LayerNormLayer ln_mlp_out;
  };

  Tensor attention(const Tensor& q_in, const Tensor& kv_in, const LinearLayer& wq,
                   const LinearLayer& wk, const LinearLayer& wv, const LinearLayer& wo,
                   Rng* dropout_rng) const;

  ModelConfig cfg_;
  Parameter tok_embed_;   // [K+1, d]
  Parameter cls_embed_;   // [C+1, d]
  Parameter pos_embed_;   // [seq(+1 prefix when self-only... see ctor), d]
  Parameter mem_embed_;   // [K_top, d] (cross only)
  Parameter mem_pos_;     // [memory_len+1, d] (cross only)
  LayerNormLayer mem_ln_;
  std::vector<Block> blocks_;
  LayerNormLayer final_ln_;
  LinearLayer head_;      // d -> K, over codebook ids only
};

// Masks ceil(ratio*N) of the ground-truth top tokens and fills them with the
// top model's single-pass argmax predictions.
std::vector<int> conditional_augmentation(const std::vector<int>& top_tokens, int batch,
                                          float ratio, NarTransformer& top_model,
                                          const std::vector<int>& class_ids, Rng& rng);

}  // namespace stratgen
