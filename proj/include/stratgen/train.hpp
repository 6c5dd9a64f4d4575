#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stratgen/config.hpp"
#include "stratgen/dataset.hpp"
#include "stratgen/tokenizer.hpp"
#include "stratgen/transformer.hpp"

namespace stratgen {

struct TokenizerTrainResult {
  double ppl_top = 0.0;       // per-batch PPL, mean over the last 100 batches
  double ppl_bottom = 0.0;
  double util_top = 0.0;
  double util_bottom = 0.0;
  double val_psnr = 0.0;          // two-level reconstruction on held-out data
  double val_psnr_top_only = 0.0; // f=16 baseline: top path alone
  float final_loss = 0.0f;
};

// Trains in place for cfg.tokenizer_steps AdamW steps. Deterministic given
// (cfg, seed). Writes a per-step CSV (step,total,recon,commit_top,
// commit_bottom,ppl_top,ppl_bottom,lr) when csv_path is non-empty.
TokenizerTrainResult train_tokenizer(VqTokenizer& tok, const RunConfig& cfg,
                                     const std::vector<LabeledImage>& train,
                                     const std::vector<LabeledImage>& val, uint64_t seed,
                                     const std::string& csv_path = "",
                                     const std::function<void(int, float)>& progress = {});

// Frozen-tokenizer evaluation used by the trainer and the CLI.
double eval_psnr(VqTokenizer& tok, const std::vector<LabeledImage>& images, bool top_only);

// Tokenizes a dataset with a frozen tokenizer (batched).
std::vector<TokenGrid> tokenize_dataset(VqTokenizer& tok,
                                        const std::vector<LabeledImage>& images);

struct TransformerTrainResult {
  float final_loss = 0.0f;   // mean train loss over the last 50 steps
  float first_loss = 0.0f;   // loss at step 0 before any update
};

// Cross-scale masked token modeling for one level. `grids` supply both the
// targets (top or bottom per model kind) and, for the bottom model, the
// teacher-forced conditioning; shuffle grid.top entries beforehand to train
// a mismatched-condition control. top_model enables conditional
// augmentation when cfg.cond_aug is set.
TransformerTrainResult train_level(NarTransformer& model,
                                   const std::vector<TokenGrid>& grids,
                                   const std::vector<int>& class_ids, const RunConfig& cfg,
                                   uint64_t seed, const std::string& csv_path = "",
                                   NarTransformer* top_model = nullptr,
                                   const std::function<void(int, float)>& progress = {});

// Masked validation loss with seed-pinned masks (identical masks for any
// model of the same geometry, so losses are comparable across variants).
float eval_masked_loss(NarTransformer& model, const std::vector<TokenGrid>& grids,
                       const std::vector<int>& class_ids, const RunConfig& cfg,
                       uint64_t mask_seed, int max_batches = 0);

// Model geometry derived from one run configuration.
ModelConfig top_model_config(const RunConfig& cfg);
ModelConfig bottom_model_config(const RunConfig& cfg);
// Bottom architecture without the cross-attention conditioning (the flat
// long-sequence control of the sequence-length ablation).
ModelConfig flat_bottom_model_config(const RunConfig& cfg);

inline constexpr const char* kTokenizerKind = "vq_tokenizer";
inline constexpr const char* kTopKind = "nar_top";
inline constexpr const char* kBottomKind = "nar_bottom";
inline constexpr const char* kFlatBottomKind = "nar_bottom_flat";

void save_tokenizer_checkpoint(const std::string& path, VqTokenizer& tok,
                               const RunConfig& cfg);
void save_model_checkpoint(const std::string& path, const char* kind, NarTransformer& model,
                           const RunConfig& cfg);
// Reads the config echo, rebuilds the module, loads weights; kind verified.
RunConfig checkpoint_run_config(const std::string& path);

}  // namespace stratgen
