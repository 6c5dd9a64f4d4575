#include "stratgen/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stratgen/ops.hpp"

namespace stratgen {

Schedule schedule_from_string(const std::string& name) {
  if (name == "cosine") return Schedule::kCosine;
  if (name == "linear") return Schedule::kLinear;
  if (name == "square") return Schedule::kSquare;
  if (name == "cubic") return Schedule::kCubic;
  if (name == "exponential") return Schedule::kExponential;
  if (name == "square_root" || name == "square-root" || name == "sqrt")
    return Schedule::kSquareRoot;
  if (name == "logarithmic" || name == "log") return Schedule::kLogarithmic;
  throw ConfigError("unknown schedule '" + name +
                    "' (cosine|linear|square|cubic|exponential|square_root|logarithmic)");
}

std::string schedule_to_string(Schedule s) {
  switch (s) {
    case Schedule::kCosine: return "cosine";
    case Schedule::kLinear: return "linear";
    case Schedule::kSquare: return "square";
    case Schedule::kCubic: return "cubic";
    case Schedule::kExponential: return "exponential";
    case Schedule::kSquareRoot: return "square_root";
    default: return "logarithmic";
  }
}

const std::vector<Schedule>& all_schedules() {
  static const std::vector<Schedule> v = {
      Schedule::kCosine,      Schedule::kLinear,     Schedule::kSquare,
      Schedule::kCubic,       Schedule::kExponential, Schedule::kSquareRoot,
      Schedule::kLogarithmic,
  };
  return v;
}

double gamma(Schedule schedule, double u) {
  if (u < 0.0 || u > 1.0) throw ContractError("gamma: u must be in [0,1]");
  constexpr double e = 2.718281828459045;
  switch (schedule) {
    case Schedule::kCosine: return std::cos(3.14159265358979323846 * u / 2.0);
    case Schedule::kLinear: return 1.0 - u;
    case Schedule::kSquare: return 1.0 - u * u;
    case Schedule::kCubic: return 1.0 - u * u * u;
    case Schedule::kExponential: return 1.0 - (std::exp(u) - 1.0) / (e - 1.0);
    case Schedule::kSquareRoot: return 1.0 - std::sqrt(u);
    default: return 1.0 - std::log(1.0 + (e - 1.0) * u);
  }
}

std::vector<int> commit_counts(Schedule schedule, int T, int L) {
  if (T < 1) throw ConfigError("commit_counts: need at least one step");
  if (L < 1) throw ConfigError("commit_counts: empty canvas");
  if (T > L)
    throw ConfigError("commit_counts: " + std::to_string(T) + " steps exceed " +
                      std::to_string(L) + " positions");
  // masked count after step t, corridor-clamped then forced strictly decreasing
  std::vector<int> m(T + 1);
  m[0] = L;
  m[T] = 0;
  for (int t = 1; t < T; ++t) {
    int raw = static_cast<int>(std::floor(L * gamma(schedule, static_cast<double>(t) / T)));
    raw = std::max(raw, T - t);   // enough left for one commit per remaining step
    raw = std::min(raw, L - t);   // at least one commit in each step so far
    m[t] = raw;
  }
  for (int t = 1; t <= T; ++t) m[t] = std::min(m[t], m[t - 1] - 1);
  std::vector<int> counts(T);
  for (int t = 1; t <= T; ++t) counts[t - 1] = m[t - 1] - m[t];
  return counts;
}

DecodeConfig DecodeConfig::from_run(const RunConfig& cfg) {
  DecodeConfig d;
  d.steps_top = cfg.steps_top;
  d.steps_bottom = cfg.steps_bottom;
  d.schedule = schedule_from_string(cfg.schedule);
  d.temperature = cfg.temperature;
  d.conf_temperature = cfg.conf_temperature;
  d.guidance_scale = cfg.guidance_scale;
  d.seed = static_cast<uint64_t>(cfg.seed);
  if (d.steps_top + d.steps_bottom < 2)
    throw ConfigError("decode: step budget must be at least one per level");
  return d;
}

Tensor guided_logits(const Tensor& l_cond, const Tensor& l_uncond, float s) {
  if (l_cond.shape != l_uncond.shape)
    throw DimensionError("guided_logits: shape mismatch " + shape_str(l_cond.shape) + " vs " +
                         shape_str(l_uncond.shape));
  return sub(scale(l_cond, 1.0f + s), scale(l_uncond, s));
}

SampleScore sample_and_score(const Tensor& logits, float tau, float tau_conf, Rng& rng,
                             const std::vector<uint8_t>& masked) {
  if (tau < 0.0f) throw ConfigError("sample_and_score: temperature must be >= 0");
  if (tau_conf < 0.0f) throw ConfigError("sample_and_score: confidence temperature >= 0");
  if (logits.ndim() != 2) throw DimensionError("sample_and_score: logits must be [L,K]");
  const int L = logits.shape[0], K = logits.shape[1];
  if (static_cast<int>(masked.size()) != L)
    throw DimensionError("sample_and_score: mask length mismatch");
  bool any = false;
  for (uint8_t m : masked) any = any || m;
  if (!any) throw ContractError("sample_and_score: no masked positions");

  SampleScore out;
  out.proposals.assign(L, -1);
  out.confidence.assign(L, std::numeric_limits<double>::infinity());
  const float* lg = logits.ptr();
  std::vector<double> probs(K), base_logp(K);
  for (int l = 0; l < L; ++l) {
    if (!masked[l]) continue;
    const float* row = lg + static_cast<int64_t>(l) * K;
    // base (tau=1) log-softmax scores the samples
    double mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max<double>(mx, row[k]);
    double z1 = 0.0;
    for (int k = 0; k < K; ++k) z1 += std::exp(row[k] - mx);
    const double lz1 = std::log(z1) + mx;
    for (int k = 0; k < K; ++k) base_logp[k] = row[k] - lz1;

    int pick;
    if (tau == 0.0f) {
      pick = 0;
      for (int k = 1; k < K; ++k)
        if (row[k] > row[pick]) pick = k;
    } else {
      double zt = 0.0;
      for (int k = 0; k < K; ++k) {
        probs[k] = std::exp((row[k] - mx) / tau);
        zt += probs[k];
      }
      double u = rng.uniform() * zt;
      pick = K - 1;
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        acc += probs[k];
        if (u < acc) {
          pick = k;
          break;
        }
      }
    }
    double conf = base_logp[pick];
    if (tau_conf > 0.0f) conf += static_cast<double>(tau_conf) * rng.gumbel();
    out.proposals[l] = pick;
    out.confidence[l] = conf;
  }
  return out;
}

std::vector<int> decode_level(NarTransformer& model, int length, int steps, int class_id,
                              const DecodeConfig& cfg, Rng& rng,
                              const std::vector<std::pair<int, int>>* frozen,
                              const std::vector<int>* condition, DecodeAudit* audit) {
  const ModelConfig& mc = model.config();
  if (length != mc.seq_len)
    throw ContractError("decode_level: length " + std::to_string(length) +
                        " does not match the model sequence " + std::to_string(mc.seq_len));
  if (steps < 1) throw ConfigError("decode_level: need at least one step");
  if (mc.cross && !condition)
    throw ContractError("decode_level: bottom decoding needs the top condition");
  if (!mc.cross && condition)
    throw ContractError("decode_level: top decoding takes no condition");
  if (class_id < 0 || class_id >= mc.num_classes)
    throw ValidationError("decode_level: class id outside [0,C)");

  const VocabLayout vocab = mc.vocab();
  std::vector<int> tokens(length, vocab.mask_id());
  std::vector<uint8_t> committed(length, 0);
  if (frozen) {
    for (const auto& [pos, tok] : *frozen) {
      if (pos < 0 || pos >= length)
        throw ContractError("decode_level: frozen position " + std::to_string(pos) +
                            " exceeds canvas length " + std::to_string(length));
      if (tok < 0 || tok >= vocab.codebook_size)
        throw ContractError("decode_level: frozen token outside the codebook");
      if (committed[pos]) throw ContractError("decode_level: duplicate frozen position");
      tokens[pos] = tok;
      committed[pos] = 1;
    }
  }
  int free = 0;
  for (uint8_t c : committed) free += c ? 0 : 1;
  if (free == 0) return tokens;  // fully constrained: zero model calls

  // a step commits at least one token, so more steps than free slots collapse
  const int T = std::min(steps, free);
  const std::vector<int> counts = commit_counts(cfg.schedule, T, free);
  NoGradGuard ng;
  const std::vector<int> cls = {class_id};
  const std::vector<int> null_cls = {vocab.null_class()};

  int total_committed = length - free;
  for (int t = 1; t <= T; ++t) {
    Tensor logits = model.forward(tokens, cls, 1, nullptr, condition);
    if (cfg.guidance_scale > 0.0f) {
      Tensor uncond = model.forward(tokens, null_cls, 1, nullptr, condition);
      logits = guided_logits(logits, uncond, cfg.guidance_scale);
      if (audit) audit->model_calls += 2;
    } else if (audit) {
      ++audit->model_calls;
    }
    Tensor flat = reshape(logits, {length, mc.codebook_size});
    std::vector<uint8_t> masked(length);
    for (int i = 0; i < length; ++i) masked[i] = committed[i] ? 0 : 1;
    const float tau_conf =
        cfg.conf_temperature * static_cast<float>(T - t) / static_cast<float>(T);
    SampleScore ss = sample_and_score(flat, cfg.temperature, tau_conf, rng, masked);

    // highest-confidence uncommitted positions win; index breaks ties
    std::vector<int> order;
    order.reserve(free);
    for (int i = 0; i < length; ++i)
      if (!committed[i]) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return ss.confidence[a] > ss.confidence[b];
    });
    const int n_commit = counts[t - 1];
    double conf_acc = 0.0;
    for (int i = 0; i < n_commit; ++i) {
      const int pos = order[i];
      tokens[pos] = ss.proposals[pos];
      committed[pos] = 1;
      conf_acc += ss.confidence[pos];
    }
    total_committed += n_commit;
    if (audit) {
      audit->rows.push_back({t, total_committed, conf_acc / n_commit});
      audit->canvases.push_back(tokens);
    }
  }
  return tokens;
}

StratifiedSampler::StratifiedSampler(VqTokenizer& tokenizer, NarTransformer& top,
                                     NarTransformer& bottom)
    : tokenizer_(tokenizer), top_(top), bottom_(bottom) {
  if (top_.config().seq_len != tokenizer_.top_tokens() ||
      bottom_.config().seq_len != tokenizer_.bottom_tokens())
    throw ContractError("sampler: model sequence lengths do not match the tokenizer");
  if (!bottom_.config().cross || top_.config().cross)
    throw ContractError("sampler: expected a self-attention top and cross-attention bottom");
}

void StratifiedSampler::check_class(int class_id) const {
  if (class_id < 0 || class_id >= top_.config().num_classes)
    throw ValidationError("class id " + std::to_string(class_id) + " outside [0," +
                          std::to_string(top_.config().num_classes) + ")");
}

namespace {
uint64_t decode_stream(uint64_t seed) { return splitmix64(seed ^ 0xdec0deULL); }
}  // namespace

GenerateResult StratifiedSampler::generate(int class_id, const DecodeConfig& cfg,
                                           DecodeAudit* top_audit, DecodeAudit* bottom_audit) {
  check_class(class_id);
  Rng rng(decode_stream(cfg.seed));
  GenerateResult out;
  out.grid.top = decode_level(top_, tokenizer_.top_tokens(), cfg.steps_top, class_id, cfg,
                              rng, nullptr, nullptr, top_audit);
  out.grid.bottom = decode_level(bottom_, tokenizer_.bottom_tokens(), cfg.steps_bottom,
                                 class_id, cfg, rng, nullptr, &out.grid.top, bottom_audit);
  out.image = tokenizer_.detokenize(out.grid);
  return out;
}

Tensor StratifiedSampler::inpaint(const Tensor& image, const std::vector<uint8_t>& region,
                                  int class_id, const DecodeConfig& cfg,
                                  bool* warned_full_region, TokenGrid* out_grid,
                                  TokenGrid* src_grid, std::vector<int>* frozen_top_positions,
                                  std::vector<int>* frozen_bottom_positions) {
  check_class(class_id);
  const int S = tokenizer_.image_size();
  if (static_cast<int>(region.size()) != S * S)
    throw DimensionError("inpaint: region mask must be image-sized");
  TokenGrid src = tokenizer_.tokenize(image);

  // a token is frozen iff its pixel cell lies entirely outside the region
  auto frozen_for = [&](int cell, const std::vector<int>& grid_tokens) {
    const int side = S / cell;
    std::vector<std::pair<int, int>> frozen;
    for (int gy = 0; gy < side; ++gy)
      for (int gx = 0; gx < side; ++gx) {
        bool touched = false;
        for (int y = gy * cell; y < (gy + 1) * cell && !touched; ++y)
          for (int x = gx * cell; x < (gx + 1) * cell && !touched; ++x)
            touched = region[y * S + x] != 0;
        if (!touched) frozen.emplace_back(gy * side + gx, grid_tokens[gy * side + gx]);
      }
    return frozen;
  };
  std::vector<std::pair<int, int>> frozen_top = frozen_for(16, src.top);
  std::vector<std::pair<int, int>> frozen_bottom = frozen_for(8, src.bottom);
  if (warned_full_region)
    *warned_full_region = frozen_top.empty() && frozen_bottom.empty();

  if (frozen_top_positions)
    for (const auto& [pos, tok] : frozen_top) frozen_top_positions->push_back(pos);
  if (frozen_bottom_positions)
    for (const auto& [pos, tok] : frozen_bottom) frozen_bottom_positions->push_back(pos);
  if (src_grid) *src_grid = src;

  Rng rng(decode_stream(cfg.seed));
  TokenGrid out;
  out.top = decode_level(top_, tokenizer_.top_tokens(), cfg.steps_top, class_id, cfg, rng,
                         &frozen_top, nullptr, nullptr);
  out.bottom = decode_level(bottom_, tokenizer_.bottom_tokens(), cfg.steps_bottom, class_id,
                            cfg, rng, &frozen_bottom, &out.top, nullptr);
  Tensor result = tokenizer_.detokenize(out);
  if (out_grid) *out_grid = std::move(out);
  return result;
}

Tensor StratifiedSampler::domain_transfer(const Tensor& image, int target_class,
                                          const DecodeConfig& cfg,
                                          const std::vector<uint8_t>* keep_top_region,
                                          TokenGrid* out_grid, TokenGrid* src_grid,
                                          DecodeAudit* bottom_audit) {
  check_class(target_class);
  TokenGrid src = tokenizer_.tokenize(image);
  const int N = tokenizer_.top_tokens();
  if (keep_top_region && static_cast<int>(keep_top_region->size()) != N)
    throw DimensionError("domain_transfer: keep_top_region must have one flag per top token");

  std::vector<std::pair<int, int>> frozen_top;
  for (int i = 0; i < N; ++i)
    if (!keep_top_region || (*keep_top_region)[i]) frozen_top.emplace_back(i, src.top[i]);

  Rng rng(decode_stream(cfg.seed));
  TokenGrid out;
  out.top = decode_level(top_, N, cfg.steps_top, target_class, cfg, rng, &frozen_top, nullptr,
                         nullptr);
  // bottom-level re-prediction: every bottom token is re-decoded
  out.bottom = decode_level(bottom_, tokenizer_.bottom_tokens(), cfg.steps_bottom,
                            target_class, cfg, rng, nullptr, &out.top, bottom_audit);
  if (src_grid) *src_grid = src;
  Tensor result = tokenizer_.detokenize(out);
  if (out_grid) *out_grid = std::move(out);
  return result;
}

}  // namespace stratgen
