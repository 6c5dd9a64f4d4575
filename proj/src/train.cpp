#include "stratgen/train.hpp"

#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>

#include "stratgen/checkpoint.hpp"
#include "stratgen/metrics.hpp"
#include "stratgen/ops.hpp"
#include "stratgen/optim.hpp"

namespace stratgen {

namespace {

Tensor stack_images(const std::vector<LabeledImage>& data, const std::vector<int>& idx) {
  const Tensor& first = data[idx[0]].image;
  const int H = first.shape[0], W = first.shape[1];
  Tensor batch = Tensor::zeros({static_cast<int>(idx.size()), H, W, 3});
  const int64_t stride = first.size();
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(batch.ptr() + i * stride, data[idx[i]].image.ptr(), sizeof(float) * stride);
  return batch;
}

struct CsvLog {
  std::ofstream out;
  explicit CsvLog(const std::string& path, const std::string& header) {
    if (path.empty()) return;
    out.open(path);
    if (!out) throw IoError("cannot open log file: " + path);
    out << header << "\n";
  }
  template <typename... Ts>
  void row(Ts... vals) {
    if (!out.is_open()) return;
    bool first = true;
    ((out << (first ? "" : ",") << vals, first = false), ...);
    out << "\n";
  }
};

}  // namespace

TokenizerTrainResult train_tokenizer(VqTokenizer& tok, const RunConfig& cfg,
                                     const std::vector<LabeledImage>& train,
                                     const std::vector<LabeledImage>& val, uint64_t seed,
                                     const std::string& csv_path,
                                     const std::function<void(int, float)>& progress) {
  if (train.empty()) throw ContractError("train_tokenizer: empty training set");
  AdamWConfig ocfg;
  ocfg.lr = cfg.tokenizer_lr;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.weight_decay = cfg.tokenizer_weight_decay;
  ocfg.grad_clip = cfg.grad_clip;
  AdamW opt(tok.parameters(), ocfg);

  Rng rng(splitmix64(seed ^ 0x70cba7c1ULL));
  CsvLog log(csv_path, "step,total,recon,commit_top,commit_bottom,ppl_top,ppl_bottom,lr");

  const int B = cfg.batch_size;
  const int epoch_steps =
      std::max<int>(1, static_cast<int>(train.size()) / std::max(1, B));
  const int k_top = tok.top_codebook().size();
  const int k_bottom = tok.bottom_codebook().size();
  std::vector<int64_t> usage_top(k_top, 0), usage_bottom(k_bottom, 0);
  std::deque<double> ppl_top_hist, ppl_bottom_hist, util_top_hist, util_bottom_hist;
  TokenizerTrainResult res;

  for (int step = 0; step < cfg.tokenizer_steps; ++step) {
    std::vector<int> idx(B);
    for (int& i : idx) i = rng.randint(static_cast<int>(train.size()));
    Tensor batch = stack_images(train, idx);

    // the top stem learns the scene first; the bottom residual ramps in over
    // the first quarter of the budget and the exact objective holds after
    const int ramp_until = cfg.tokenizer_steps / 4;
    const float bottom_scale =
        step >= ramp_until ? 1.0f
                           : static_cast<float>(step) / static_cast<float>(ramp_until);
    VqLossParts parts = tok.vq_loss(batch, bottom_scale);
    const float total = parts.total.item();
    if (!std::isfinite(total))
      throw ValidationError("train_tokenizer: non-finite loss at step " +
                            std::to_string(step));
    backward(parts.total);
    opt.step();
    opt.zero_grad();

    const double ppl_t = perplexity(parts.top_indices, k_top);
    const double ppl_b = perplexity(parts.bottom_indices, k_bottom);
    const double util_t = codebook_utilization(parts.top_indices, k_top);
    const double util_b = codebook_utilization(parts.bottom_indices, k_bottom);
    auto push100 = [](std::deque<double>& q, double v) {
      q.push_back(v);
      if (q.size() > 100) q.pop_front();
    };
    push100(ppl_top_hist, ppl_t);
    push100(ppl_bottom_hist, ppl_b);
    push100(util_top_hist, util_t);
    push100(util_bottom_hist, util_b);

    for (int i : parts.top_indices) ++usage_top[i];
    for (int i : parts.bottom_indices) ++usage_bottom[i];

    if (cfg.dead_code_revival && (step + 1) % epoch_steps == 0) {
      if (tok.shared_codebook()) {
        // shared codebook: a code is alive if either level used it
        std::vector<int64_t> merged(k_top, 0);
        for (int k = 0; k < k_top; ++k) merged[k] = usage_top[k] + usage_bottom[k];
        const int lt = parts.z_e_top.shape[0], lb = parts.z_e_bottom.shape[0];
        Tensor pool = Tensor::zeros({lt + lb, parts.z_e_top.shape[1]});
        std::memcpy(pool.ptr(), parts.z_e_top.ptr(), sizeof(float) * parts.z_e_top.size());
        std::memcpy(pool.ptr() + parts.z_e_top.size(), parts.z_e_bottom.ptr(),
                    sizeof(float) * parts.z_e_bottom.size());
        tok.revive_dead_codes(tok.top_codebook(), merged, pool, rng);
      } else {
        tok.revive_dead_codes(tok.top_codebook(), usage_top, parts.z_e_top, rng);
        tok.revive_dead_codes(tok.bottom_codebook(), usage_bottom, parts.z_e_bottom, rng);
      }
      std::fill(usage_top.begin(), usage_top.end(), 0);
      std::fill(usage_bottom.begin(), usage_bottom.end(), 0);
    }

    log.row(step, total, parts.recon, parts.commit_top, parts.commit_bottom, ppl_t, ppl_b,
            ocfg.lr);
    if (progress && (step % 250 == 0 || step + 1 == cfg.tokenizer_steps))
      progress(step, total);
    res.final_loss = total;
  }

  auto mean_of = [](const std::deque<double>& q) {
    double s = 0.0;
    for (double v : q) s += v;
    return q.empty() ? 0.0 : s / static_cast<double>(q.size());
  };
  res.ppl_top = mean_of(ppl_top_hist);
  res.ppl_bottom = mean_of(ppl_bottom_hist);
  res.util_top = mean_of(util_top_hist);
  res.util_bottom = mean_of(util_bottom_hist);
  if (!val.empty()) {
    res.val_psnr = eval_psnr(tok, val, false);
    res.val_psnr_top_only = eval_psnr(tok, val, true);
  }
  return res;
}

double eval_psnr(VqTokenizer& tok, const std::vector<LabeledImage>& images, bool top_only) {
  if (images.empty()) throw ContractError("eval_psnr: empty set");
  NoGradGuard ng;
  constexpr int kChunk = 16;
  double acc = 0.0;
  for (size_t start = 0; start < images.size(); start += kChunk) {
    const int n = static_cast<int>(std::min<size_t>(kChunk, images.size() - start));
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = static_cast<int>(start) + i;
    Tensor batch = stack_images(images, idx);
    Tensor recon = tok.reconstruct(batch, top_only);
    const int64_t stride = batch.size() / n;
    for (int i = 0; i < n; ++i) {
      double mse = 0.0;
      const float* a = batch.ptr() + i * stride;
      const float* b = recon.ptr() + i * stride;
      for (int64_t j = 0; j < stride; ++j) {
        const double d = static_cast<double>(a[j]) - b[j];
        mse += d * d;
      }
      mse /= static_cast<double>(stride);
      acc += mse <= 0.0 ? 99.0 : 10.0 * std::log10(1.0 / mse);
    }
  }
  return acc / static_cast<double>(images.size());
}

std::vector<TokenGrid> tokenize_dataset(VqTokenizer& tok,
                                        const std::vector<LabeledImage>& images) {
  NoGradGuard ng;
  std::vector<TokenGrid> out;
  out.reserve(images.size());
  constexpr int kChunk = 32;
  const int n_top = tok.top_tokens(), n_bottom = tok.bottom_tokens();
  for (size_t start = 0; start < images.size(); start += kChunk) {
    const int n = static_cast<int>(std::min<size_t>(kChunk, images.size() - start));
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = static_cast<int>(start) + i;
    Tensor batch = stack_images(images, idx);
    TokenizerForward fwd = tok.forward(batch);
    for (int i = 0; i < n; ++i) {
      TokenGrid g;
      g.top.assign(fwd.top_indices.begin() + static_cast<int64_t>(i) * n_top,
                   fwd.top_indices.begin() + static_cast<int64_t>(i + 1) * n_top);
      g.bottom.assign(fwd.bottom_indices.begin() + static_cast<int64_t>(i) * n_bottom,
                      fwd.bottom_indices.begin() + static_cast<int64_t>(i + 1) * n_bottom);
      out.push_back(std::move(g));
    }
  }
  return out;
}

namespace {

// Gathers the level-appropriate target sequence for a batch of grid rows.
void gather_batch(const std::vector<TokenGrid>& grids, const std::vector<int>& class_ids,
                  const std::vector<int>& rows, bool bottom_level, std::vector<int>& targets,
                  std::vector<int>& memory, std::vector<int>& classes) {
  targets.clear();
  memory.clear();
  classes.clear();
  for (int r : rows) {
    const std::vector<int>& seq = bottom_level ? grids[r].bottom : grids[r].top;
    targets.insert(targets.end(), seq.begin(), seq.end());
    if (bottom_level) memory.insert(memory.end(), grids[r].top.begin(), grids[r].top.end());
    classes.push_back(class_ids[r]);
  }
}

}  // namespace

TransformerTrainResult train_level(NarTransformer& model,
                                   const std::vector<TokenGrid>& grids,
                                   const std::vector<int>& class_ids, const RunConfig& cfg,
                                   uint64_t seed, const std::string& csv_path,
                                   NarTransformer* top_model,
                                   const std::function<void(int, float)>& progress) {
  if (grids.empty()) throw ContractError("train_level: empty grid dataset");
  if (grids.size() != class_ids.size())
    throw ContractError("train_level: grids/class_ids size mismatch");
  const ModelConfig& mc = model.config();
  const bool bottom_level = mc.cross;
  const int L = mc.seq_len;
  const int expect = bottom_level ? static_cast<int>(grids[0].bottom.size())
                                  : static_cast<int>(grids[0].top.size());
  if (expect != L)
    throw ContractError("train_level: model sequence length " + std::to_string(L) +
                        " does not match grids (" + std::to_string(expect) + ")");
  if (cfg.cond_aug && bottom_level && !top_model)
    throw ContractError("train_level: conditional augmentation needs the top model");

  AdamWConfig ocfg;
  ocfg.lr = cfg.learning_rate;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.grad_clip = cfg.grad_clip;
  AdamW opt(model.parameters(), ocfg);

  Rng data_rng(splitmix64(seed ^ 0xda7aULL));
  Rng drop_rng(splitmix64(seed ^ 0xd20bULL));
  CsvLog log(csv_path, "step,loss,lr,mask_ratio_mean");

  const int B = cfg.batch_size;
  const VocabLayout vocab = mc.vocab();
  TransformerTrainResult res;
  std::deque<float> tail;
  double ratio_acc = 0.0;
  int ratio_n = 0;

  std::vector<int> targets, memory, classes;
  for (int step = 0; step < cfg.transformer_steps; ++step) {
    std::vector<int> rows(B);
    for (int& r : rows) r = data_rng.randint(static_cast<int>(grids.size()));
    gather_batch(grids, class_ids, rows, bottom_level, targets, memory, classes);

    const float ratio = sample_mask_ratio(data_rng, L);
    ratio_acc += ratio;
    ++ratio_n;
    MaskedBatch mb = apply_mask(targets, B, L, ratio, vocab, classes, data_rng);
    std::vector<int> dropped =
        cfg_dropout(mb.class_ids, data_rng, cfg.uncond_cutoff, vocab.null_class());

    const std::vector<int>* mem_ptr = nullptr;
    std::vector<int> aug_memory;
    if (bottom_level) {
      if (cfg.cond_aug) {
        aug_memory = conditional_augmentation(memory, B, cfg.cond_aug_ratio, *top_model,
                                              dropped, data_rng);
        mem_ptr = &aug_memory;
      } else {
        mem_ptr = &memory;
      }
    }

    Tensor logits = model.forward(mb.tokens, dropped, B, &drop_rng, mem_ptr);
    Tensor loss = masked_nll(logits, mb.targets, mb.mask, cfg.label_smoothing);
    const float loss_v = loss.item();
    if (!std::isfinite(loss_v))
      throw ValidationError("train_level: non-finite loss at step " + std::to_string(step));
    if (step == 0) res.first_loss = loss_v;

    backward(loss);
    opt.set_lr(warmup_cosine_lr(cfg.learning_rate, step, cfg.warmup_steps,
                                cfg.transformer_steps));
    opt.step();
    opt.zero_grad();

    tail.push_back(loss_v);
    if (tail.size() > 50) tail.pop_front();
    if (step % 25 == 0 || step + 1 == cfg.transformer_steps) {
      log.row(step, loss_v, opt.lr(), ratio_acc / ratio_n);
      ratio_acc = 0.0;
      ratio_n = 0;
    }
    if (progress && (step % 250 == 0 || step + 1 == cfg.transformer_steps))
      progress(step, loss_v);
  }
  double s = 0.0;
  for (float v : tail) s += v;
  res.final_loss = tail.empty() ? 0.0f : static_cast<float>(s / tail.size());
  return res;
}

float eval_masked_loss(NarTransformer& model, const std::vector<TokenGrid>& grids,
                       const std::vector<int>& class_ids, const RunConfig& cfg,
                       uint64_t mask_seed, int max_batches) {
  if (grids.empty()) throw ContractError("eval_masked_loss: empty grid dataset");
  NoGradGuard ng;
  const ModelConfig& mc = model.config();
  const bool bottom_level = mc.cross;
  const int L = mc.seq_len;
  const int B = cfg.batch_size;
  Rng mask_rng(splitmix64(mask_seed ^ 0xe7a1ULL));
  const VocabLayout vocab = mc.vocab();

  double acc = 0.0;
  int batches = 0;
  std::vector<int> targets, memory, classes;
  for (size_t start = 0; start + B <= grids.size(); start += B) {
    if (max_batches > 0 && batches >= max_batches) break;
    std::vector<int> rows(B);
    for (int i = 0; i < B; ++i) rows[i] = static_cast<int>(start) + i;
    gather_batch(grids, class_ids, rows, bottom_level, targets, memory, classes);
    const float ratio = sample_mask_ratio(mask_rng, L);
    MaskedBatch mb = apply_mask(targets, B, L, ratio, vocab, classes, mask_rng);
    Tensor logits = model.forward(mb.tokens, mb.class_ids, B, nullptr,
                                  bottom_level ? &memory : nullptr);
    acc += masked_nll(logits, mb.targets, mb.mask, cfg.label_smoothing).item();
    ++batches;
  }
  if (batches == 0) throw ContractError("eval_masked_loss: not enough grids for one batch");
  return static_cast<float>(acc / batches);
}

ModelConfig top_model_config(const RunConfig& cfg) {
  ModelConfig mc;
  mc.layers = cfg.top_layers;
  mc.heads = cfg.heads;
  mc.embed_dim = cfg.model_dim;
  mc.mlp_dim = cfg.mlp_dim;
  mc.dropout = cfg.dropout;
  const int side = cfg.image_size / 16;
  mc.seq_len = side * side;
  mc.codebook_size = cfg.shared_codebook ? cfg.codebook_size : cfg.codebook_size_top;
  mc.num_classes = cfg.num_classes();
  mc.cross = false;
  return mc;
}

ModelConfig bottom_model_config(const RunConfig& cfg) {
  ModelConfig mc = top_model_config(cfg);
  mc.layers = cfg.bottom_layers;
  mc.memory_len = mc.seq_len;
  mc.memory_codebook = mc.codebook_size;
  mc.seq_len *= 4;
  mc.codebook_size = cfg.shared_codebook ? cfg.codebook_size : cfg.codebook_size_bottom;
  mc.cross = true;
  return mc;
}

ModelConfig flat_bottom_model_config(const RunConfig& cfg) {
  ModelConfig mc = bottom_model_config(cfg);
  mc.cross = false;
  mc.memory_len = 0;
  mc.memory_codebook = 0;
  return mc;
}

void save_tokenizer_checkpoint(const std::string& path, VqTokenizer& tok,
                               const RunConfig& cfg) {
  save_checkpoint(path, kTokenizerKind, cfg.to_text(), tok.parameters());
}

void save_model_checkpoint(const std::string& path, const char* kind, NarTransformer& model,
                           const RunConfig& cfg) {
  save_checkpoint(path, kind, cfg.to_text(), model.parameters());
}

RunConfig checkpoint_run_config(const std::string& path) {
  return RunConfig::parse(checkpoint_config(path));
}

}  // namespace stratgen
