#pragma once

#include <string>

#include "stratgen/common.hpp"

namespace stratgen {

// Plain-text key=value run configuration. Unknown keys are rejected; absent
// keys take the defaults below. to_text() emits every key in a fixed order,
// so parse(to_text(c)) round-trips to identical text.
struct RunConfig {
  // data
  int image_size = 64;
  int shape_kinds = 4;
  int texture_families = 3;
  int train_count = 4096;
  int val_count = 512;
  int seed = 0;

  // tokenizer architecture
  int codebook_size = 256;
  int codebook_dim = 16;
  bool shared_codebook = true;
  int codebook_size_top = 256;
  int codebook_size_bottom = 64;
  std::string fusion = "residual";  // residual | concat
  int channels = 32;
  int res_blocks = 2;
  float commitment_cost = 0.25f;
  bool dead_code_revival = true;

  // tokenizer training
  int tokenizer_steps = 20000;
  float tokenizer_lr = 1e-3f;
  float tokenizer_weight_decay = 0.0f;
  int batch_size = 8;

  // transformer architecture
  int top_layers = 6;
  int bottom_layers = 4;
  int model_dim = 128;
  int heads = 8;
  int mlp_dim = 512;
  float dropout = 0.1f;

  // transformer training
  int transformer_steps = 6000;
  float learning_rate = 3e-4f;
  float weight_decay = 0.045f;
  float beta1 = 0.9f;
  float beta2 = 0.96f;
  float grad_clip = 3.0f;
  float label_smoothing = 0.1f;
  int warmup_steps = 200;
  float uncond_cutoff = 0.1f;
  bool cond_aug = false;
  float cond_aug_ratio = 0.3f;

  // decoding
  int steps_top = 18;
  int steps_bottom = 6;
  std::string schedule = "cosine";
  float temperature = 1.0f;
  float conf_temperature = 1.0f;
  float guidance_scale = 0.2f;

  int num_classes() const { return shape_kinds * texture_families; }

  static RunConfig parse(const std::string& text);
  static RunConfig load_file(const std::string& path);
  std::string to_text() const;
  void validate() const;
};

}  // namespace stratgen
