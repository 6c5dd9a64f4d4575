#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stratgen/tokenizer.hpp"
#include "stratgen/transformer.hpp"

namespace stratgen {

// Mask schedules of the iterative decoder, gamma(0)=1 .. gamma(1)=0.
enum class Schedule {
  kCosine,
  kLinear,
  kSquare,
  kCubic,
  kExponential,
  kSquareRoot,
  kLogarithmic,
};

Schedule schedule_from_string(const std::string& name);
std::string schedule_to_string(Schedule s);
const std::vector<Schedule>& all_schedules();

// Masked fraction after progress u in [0,1].
double gamma(Schedule schedule, double u);

// Tokens committed per step: strictly decreasing masked counts
// m_0=L > m_1 > ... > m_T=0 derived from floor(L*gamma(t/T)); every entry
// >= 1 and the total is L. T > L is a config error.
std::vector<int> commit_counts(Schedule schedule, int T, int L);

struct DecodeConfig {
  int steps_top = 18;
  int steps_bottom = 6;
  Schedule schedule = Schedule::kCosine;
  float temperature = 1.0f;        // token sampling; 0 = argmax
  float conf_temperature = 1.0f;   // Gumbel noise on confidences, annealed to 0
  float guidance_scale = 0.2f;
  uint64_t seed = 0;

  static DecodeConfig from_run(const RunConfig& cfg);
};

// (1+s) * conditional - s * unconditional.
Tensor guided_logits(const Tensor& l_cond, const Tensor& l_uncond, float s);

struct SampleScore {
  std::vector<int> proposals;     // L; untouched at unmasked positions
  std::vector<double> confidence; // L; +inf at committed positions
};

// Samples a token per masked position from softmax(logits/tau) and scores it
// with log-probability plus annealed Gumbel noise.
SampleScore sample_and_score(const Tensor& logits, float tau, float tau_conf, Rng& rng,
                             const std::vector<uint8_t>& masked);

// One audit row per decode step.
struct DecodeTraceRow {
  int step = 0;
  int committed = 0;
  double mean_confidence = 0.0;
};

struct DecodeAudit {
  std::vector<DecodeTraceRow> rows;
  std::vector<std::vector<int>> canvases;  // committed-so-far token state per step
  int model_calls = 0;
};

// Iterative parallel decoding of one level. `frozen` pre-commits positions
// (inpainting); `condition` is the fully decoded top sequence, required iff
// the model cross-attends. Steps clamp to the number of free positions.
std::vector<int> decode_level(NarTransformer& model, int length, int steps, int class_id,
                              const DecodeConfig& cfg, Rng& rng,
                              const std::vector<std::pair<int, int>>* frozen = nullptr,
                              const std::vector<int>* condition = nullptr,
                              DecodeAudit* audit = nullptr);

// Whole-pipeline sampling: blank-canvas top decode, conditional bottom
// decode, then detokenize.
struct GenerateResult {
  TokenGrid grid;
  Tensor image;
};

class StratifiedSampler {
 public:
  StratifiedSampler(VqTokenizer& tokenizer, NarTransformer& top, NarTransformer& bottom);

  GenerateResult generate(int class_id, const DecodeConfig& cfg,
                          DecodeAudit* top_audit = nullptr,
                          DecodeAudit* bottom_audit = nullptr);

  // Regenerates tokens whose receptive cells intersect `region` ([H,W] mask,
  // nonzero = repaint); everything else is frozen from the source image.
  Tensor inpaint(const Tensor& image, const std::vector<uint8_t>& region, int class_id,
                 const DecodeConfig& cfg, bool* warned_full_region = nullptr,
                 TokenGrid* out_grid = nullptr, TokenGrid* src_grid = nullptr,
                 std::vector<int>* frozen_top_positions = nullptr,
                 std::vector<int>* frozen_bottom_positions = nullptr);

  // Keeps top tokens (optionally only inside keep_top_region, a [N] grid
  // mask), re-decodes the rest under target_class, then re-predicts every
  // bottom token conditioned on the edited top.
  Tensor domain_transfer(const Tensor& image, int target_class, const DecodeConfig& cfg,
                         const std::vector<uint8_t>* keep_top_region = nullptr,
                         TokenGrid* out_grid = nullptr, TokenGrid* src_grid = nullptr,
                         DecodeAudit* bottom_audit = nullptr);

  VqTokenizer& tokenizer() { return tokenizer_; }

 private:
  void check_class(int class_id) const;
  VqTokenizer& tokenizer_;
  NarTransformer& top_;
  NarTransformer& bottom_;
};

}  // namespace stratgen
