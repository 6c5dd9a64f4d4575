// Command-line harness: data generation, the three training stages, sampling
// and editing, evaluation, and the scripted ablation recipes.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "stratgen/checkpoint.hpp"
#include "stratgen/config.hpp"
#include "stratgen/dataset.hpp"
#include "stratgen/decoder.hpp"
#include "stratgen/image_io.hpp"
#include "stratgen/metrics.hpp"
#include "stratgen/train.hpp"

using namespace stratgen;
namespace fs = std::filesystem;

namespace {

constexpr int kExitAssertion = 2;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "run";
  int seed = -1;  // -1: keep the config value
  bool trace = false;
  int steps_top = -1;
  int steps_bottom = -1;
  std::string schedule;
  float guidance_scale = -1.0f;
  float temperature = -1.0f;
};

void attach_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file (key = value)");
  cmd->add_option("--out", args.out_dir, "run directory for artifacts and logs");
  cmd->add_option("--seed", args.seed, "overrides the config seed");
  cmd->add_flag("--trace", args.trace, "emit per-step decode audit logs and canvases");
  cmd->add_option("--steps-top", args.steps_top, "top-level decoding steps");
  cmd->add_option("--steps-bottom", args.steps_bottom, "bottom-level decoding steps");
  cmd->add_option("--schedule", args.schedule, "mask schedule name");
  cmd->add_option("--guidance-scale", args.guidance_scale, "classifier-free guidance scale");
  cmd->add_option("--temperature", args.temperature, "sampling temperature");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = RunConfig::load_file(args.config_path);
  if (args.seed >= 0) cfg.seed = args.seed;
  if (args.steps_top > 0) cfg.steps_top = args.steps_top;
  if (args.steps_bottom > 0) cfg.steps_bottom = args.steps_bottom;
  if (!args.schedule.empty()) cfg.schedule = args.schedule;
  if (args.guidance_scale >= 0.0f) cfg.guidance_scale = args.guidance_scale;
  if (args.temperature >= 0.0f) cfg.temperature = args.temperature;
  cfg.validate();
  return cfg;
}

ShapesTexSpec data_spec(const RunConfig& cfg) {
  ShapesTexSpec spec;
  spec.image_size = cfg.image_size;
  spec.shape_kinds = cfg.shape_kinds;
  spec.texture_families = cfg.texture_families;
  spec.seed = static_cast<uint64_t>(cfg.seed);
  return spec;
}

std::string art(const std::string& out_dir, const std::string& name) {
  return (fs::path(out_dir) / name).string();
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw IoError("missing prerequisite: " + path + " (produce it with '" + producer + "')");
}

// Tokenizer geometry always comes from the tokenizer checkpoint so later
// stages cannot silently diverge from the first one.
RunConfig adopt_tokenizer_geometry(RunConfig cfg, const std::string& tok_path) {
  RunConfig stored = checkpoint_run_config(tok_path);
  cfg.image_size = stored.image_size;
  cfg.codebook_size = stored.codebook_size;
  cfg.codebook_dim = stored.codebook_dim;
  cfg.shared_codebook = stored.shared_codebook;
  cfg.codebook_size_top = stored.codebook_size_top;
  cfg.codebook_size_bottom = stored.codebook_size_bottom;
  cfg.fusion = stored.fusion;
  cfg.channels = stored.channels;
  cfg.res_blocks = stored.res_blocks;
  cfg.shape_kinds = stored.shape_kinds;
  cfg.texture_families = stored.texture_families;
  return cfg;
}

VqTokenizer load_tokenizer(const RunConfig& cfg, const std::string& path) {
  VqTokenizer tok(cfg, 0);
  load_checkpoint_into(path, kTokenizerKind, tok.parameters());
  return tok;
}

NarTransformer load_model(const ModelConfig& mc, const char* kind, const std::string& path) {
  NarTransformer model(mc, 0);
  load_checkpoint_into(path, kind, model.parameters());
  return model;
}

Tensor contact_sheet(const std::vector<Tensor>& images, int cols) {
  if (images.empty()) throw ContractError("contact_sheet: no images");
  const int s = images[0].shape[0];
  const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  Tensor sheet = Tensor::zeros({rows * s, cols * s, 3});
  for (size_t i = 0; i < images.size(); ++i) {
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    for (int y = 0; y < s; ++y)
      std::copy(images[i].ptr() + y * s * 3, images[i].ptr() + (y + 1) * s * 3,
                sheet.ptr() + ((r * s + y) * static_cast<int64_t>(cols) * s + c * s) * 3);
  }
  return sheet;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct StackOnDisk {
  RunConfig cfg;
  VqTokenizer tokenizer;
  NarTransformer top;
  NarTransformer bottom;
};

StackOnDisk load_stack(RunConfig cfg, const std::string& out_dir) {
  const std::string tok_path = art(out_dir, "tokenizer.ckpt");
  const std::string top_path = art(out_dir, "top.ckpt");
  const std::string bottom_path = art(out_dir, "bottom.ckpt");
  require_artifact(tok_path, "train-tokenizer");
  require_artifact(top_path, "train-top");
  require_artifact(bottom_path, "train-bottom");
  cfg = adopt_tokenizer_geometry(cfg, tok_path);
  RunConfig top_stored = checkpoint_run_config(top_path);
  cfg.top_layers = top_stored.top_layers;
  cfg.model_dim = top_stored.model_dim;
  cfg.heads = top_stored.heads;
  cfg.mlp_dim = top_stored.mlp_dim;
  cfg.bottom_layers = checkpoint_run_config(bottom_path).bottom_layers;
  return StackOnDisk{cfg, load_tokenizer(cfg, tok_path),
                     load_model(top_model_config(cfg), kTopKind, top_path),
                     load_model(bottom_model_config(cfg), kBottomKind, bottom_path)};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const CommonArgs& args, int count) {
  RunConfig cfg = resolve_config(args);
  fs::create_directories(fs::path(args.out_dir) / "dataset");
  ShapesTexSpec spec = data_spec(cfg);
  std::ofstream manifest(art(args.out_dir, "dataset/manifest.csv"));
  manifest << "index,class_id,path\n";
  std::vector<Tensor> preview;
  for (int i = 0; i < count; ++i) {
    LabeledImage item = gen_shapes_tex_item(spec, i);
    char name[64];
    std::snprintf(name, sizeof(name), "dataset/img_%05d_c%02d.ppm", i, item.class_id);
    write_ppm(item.image, art(args.out_dir, name));
    manifest << i << "," << item.class_id << "," << name << "\n";
    if (static_cast<int>(preview.size()) < 48) preview.push_back(item.image);
  }
  write_ppm(contact_sheet(preview, 8), art(args.out_dir, "dataset_preview.ppm"));
  write_text(art(args.out_dir, "config.echo"), cfg.to_text());
  std::printf("wrote %d images to %s/dataset\n", count, args.out_dir.c_str());
  return 0;
}

int cmd_train_tokenizer(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  fs::create_directories(args.out_dir);
  ShapesTexSpec spec = data_spec(cfg);
  std::vector<LabeledImage> train = gen_shapes_tex(spec, 0, cfg.train_count);
  std::vector<LabeledImage> val = gen_shapes_tex(spec, cfg.train_count, cfg.val_count);

  VqTokenizer tok(cfg, static_cast<uint64_t>(cfg.seed));
  TokenizerTrainResult res = train_tokenizer(
      tok, cfg, train, val, static_cast<uint64_t>(cfg.seed),
      art(args.out_dir, "tokenizer_loss.csv"), [](int step, float loss) {
        std::printf("  step %6d  loss %.4f\n", step, loss);
        std::fflush(stdout);
      });
  save_tokenizer_checkpoint(art(args.out_dir, "tokenizer.ckpt"), tok, cfg);

  std::ofstream metrics(art(args.out_dir, "tokenizer_metrics.csv"));
  metrics << "fusion,ppl_top,ppl_bottom,util_top,util_bottom,val_psnr,val_psnr_top_only\n"
          << cfg.fusion << "," << res.ppl_top << "," << res.ppl_bottom << "," << res.util_top
          << "," << res.util_bottom << "," << res.val_psnr << "," << res.val_psnr_top_only
          << "\n";
  std::printf("tokenizer: ppl_top %.1f ppl_bottom %.1f  psnr %.2f (top-only %.2f)\n",
              res.ppl_top, res.ppl_bottom, res.val_psnr, res.val_psnr_top_only);
  return 0;
}

int cmd_train_level(const CommonArgs& args, bool bottom_level, bool shuffled_conditions) {
  RunConfig cfg = resolve_config(args);
  const std::string tok_path = art(args.out_dir, "tokenizer.ckpt");
  require_artifact(tok_path, "train-tokenizer");
  cfg = adopt_tokenizer_geometry(cfg, tok_path);
  VqTokenizer tok = load_tokenizer(cfg, tok_path);

  ShapesTexSpec spec = data_spec(cfg);
  std::vector<LabeledImage> train = gen_shapes_tex(spec, 0, cfg.train_count);
  std::vector<TokenGrid> grids = tokenize_dataset(tok, train);
  std::vector<int> classes(train.size());
  for (size_t i = 0; i < train.size(); ++i) classes[i] = train[i].class_id;

  if (shuffled_conditions) {
    // mismatched teacher forcing: permute the conditioning across the corpus
    Rng rng(splitmix64(static_cast<uint64_t>(cfg.seed) ^ 0x5caa1eULL));
    std::vector<int> perm = rng.permutation(static_cast<int>(grids.size()));
    std::vector<std::vector<int>> tops(grids.size());
    for (size_t i = 0; i < grids.size(); ++i) tops[i] = grids[perm[i]].top;
    for (size_t i = 0; i < grids.size(); ++i) grids[i].top = std::move(tops[i]);
  }

  const char* kind = bottom_level ? kBottomKind : kTopKind;
  const std::string name = bottom_level ? "bottom" : "top";
  ModelConfig mc = bottom_level ? bottom_model_config(cfg) : top_model_config(cfg);
  NarTransformer model(mc, static_cast<uint64_t>(cfg.seed) + (bottom_level ? 1 : 0));

  NarTransformer* top_for_aug = nullptr;
  std::optional<NarTransformer> top_model;
  if (bottom_level && cfg.cond_aug) {
    const std::string top_path = art(args.out_dir, "top.ckpt");
    require_artifact(top_path, "train-top");
    top_model.emplace(load_model(top_model_config(cfg), kTopKind, top_path));
    top_for_aug = &*top_model;
  }

  TransformerTrainResult res = train_level(
      model, grids, classes, cfg, static_cast<uint64_t>(cfg.seed),
      art(args.out_dir, name + "_loss.csv"), top_for_aug, [&](int step, float loss) {
        std::printf("  %s step %6d  loss %.4f\n", name.c_str(), step, loss);
        std::fflush(stdout);
      });
  save_model_checkpoint(art(args.out_dir, name + ".ckpt"), kind, model, cfg);
  std::printf("%s model: first loss %.3f, final %.4f\n", name.c_str(), res.first_loss,
              res.final_loss);
  return 0;
}

void write_audit_csv(const std::string& path, const DecodeAudit& audit) {
  std::ofstream out(path);
  out << "step,committed,mean_confidence\n";
  for (const DecodeTraceRow& r : audit.rows)
    out << r.step << "," << r.committed << "," << r.mean_confidence << "\n";
}

// Renders the partially decoded top canvases of one generation the way the
// intermediate-step figures do: uncommitted positions take a fixed random
// token and the bottom level is a fixed random sample.
void write_trace_canvases(const std::string& dir, VqTokenizer& tok,
                          const DecodeAudit& top_audit, const DecodeAudit& bottom_audit,
                          uint64_t seed) {
  Rng rng(splitmix64(seed ^ 0x7afceULL));
  const int mask_top = tok.top_codebook().size();
  std::vector<int> filler_top(tok.top_tokens());
  for (int& v : filler_top) v = rng.randint(tok.top_codebook().size());
  std::vector<int> filler_bottom(tok.bottom_tokens());
  for (int& v : filler_bottom) v = rng.randint(tok.bottom_codebook().size());

  for (size_t i = 0; i < top_audit.canvases.size(); ++i) {
    TokenGrid g;
    g.top = top_audit.canvases[i];
    for (size_t p = 0; p < g.top.size(); ++p)
      if (g.top[p] >= mask_top) g.top[p] = filler_top[p];
    g.bottom = filler_bottom;
    char name[64];
    std::snprintf(name, sizeof(name), "top_step_%02d.ppm", static_cast<int>(i + 1));
    write_ppm(tok.detokenize(g), (fs::path(dir) / name).string());
  }
  if (!top_audit.canvases.empty()) {
    const std::vector<int>& final_top = top_audit.canvases.back();
    const int mask_bottom = tok.bottom_codebook().size();
    for (size_t i = 0; i < bottom_audit.canvases.size(); ++i) {
      TokenGrid g;
      g.top = final_top;
      g.bottom = bottom_audit.canvases[i];
      for (size_t p = 0; p < g.bottom.size(); ++p)
        if (g.bottom[p] >= mask_bottom) g.bottom[p] = filler_bottom[p];
      char name[64];
      std::snprintf(name, sizeof(name), "bottom_step_%02d.ppm", static_cast<int>(i + 1));
      write_ppm(tok.detokenize(g), (fs::path(dir) / name).string());
    }
  }
}

int cmd_sample(const CommonArgs& args, int per_class, int only_class) {
  RunConfig cfg = resolve_config(args);
  StackOnDisk stack = load_stack(cfg, args.out_dir);
  StratifiedSampler sampler(stack.tokenizer, stack.top, stack.bottom);
  DecodeConfig dc = DecodeConfig::from_run(stack.cfg);
  fs::create_directories(fs::path(args.out_dir) / "samples");

  const int C = stack.cfg.num_classes();
  for (int c = 0; c < C; ++c) {
    if (only_class >= 0 && c != only_class) continue;
    std::vector<Tensor> images;
    for (int i = 0; i < per_class; ++i) {
      DecodeConfig one = dc;
      one.seed =
          splitmix64(dc.seed ^ (static_cast<uint64_t>(c) << 20) ^ static_cast<uint64_t>(i));
      if (args.trace && i == 0) {
        DecodeAudit ta, ba;
        GenerateResult g = sampler.generate(c, one, &ta, &ba);
        images.push_back(g.image);
        const std::string trace_dir = art(args.out_dir, "trace_c" + std::to_string(c));
        fs::create_directories(trace_dir);
        write_audit_csv((fs::path(trace_dir) / "top_audit.csv").string(), ta);
        write_audit_csv((fs::path(trace_dir) / "bottom_audit.csv").string(), ba);
        write_trace_canvases(trace_dir, stack.tokenizer, ta, ba, one.seed);
      } else {
        images.push_back(sampler.generate(c, one).image);
      }
    }
    char name[64];
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(per_class))));
    std::snprintf(name, sizeof(name), "samples/class_%02d.ppm", c);
    write_ppm(contact_sheet(images, std::max(1, cols)), art(args.out_dir, name));
    std::printf("class %d: %d samples\n", c, per_class);
    std::fflush(stdout);
  }
  return 0;
}

std::vector<uint8_t> rect_region(int image_size, const std::string& rect) {
  int x0, y0, x1, y1;
  if (std::sscanf(rect.c_str(), "%d,%d,%d,%d", &x0, &y0, &x1, &y1) != 4)
    throw ConfigError("--rect expects x0,y0,x1,y1");
  std::vector<uint8_t> region(static_cast<size_t>(image_size) * image_size, 0);
  for (int y = std::max(0, y0); y < std::min(image_size, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(image_size, x1); ++x)
      region[y * image_size + x] = 1;
  return region;
}

int cmd_inpaint(const CommonArgs& args, const std::string& input, const std::string& rect,
                int class_id) {
  RunConfig cfg = resolve_config(args);
  StackOnDisk stack = load_stack(cfg, args.out_dir);
  StratifiedSampler sampler(stack.tokenizer, stack.top, stack.bottom);
  Tensor image = read_ppm(input);
  std::vector<uint8_t> region = rect_region(stack.cfg.image_size, rect);
  bool degenerate = false;
  Tensor out = sampler.inpaint(image, region, class_id, DecodeConfig::from_run(stack.cfg),
                               &degenerate);
  if (degenerate)
    std::fprintf(stderr, "warning: region covers every token; this is a full generation\n");
  const std::string path = art(args.out_dir, "inpaint.ppm");
  write_ppm(out, path);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_transfer(const CommonArgs& args, const std::string& input, int target_class) {
  RunConfig cfg = resolve_config(args);
  StackOnDisk stack = load_stack(cfg, args.out_dir);
  StratifiedSampler sampler(stack.tokenizer, stack.top, stack.bottom);
  Tensor image = read_ppm(input);
  Tensor out =
      sampler.domain_transfer(image, target_class, DecodeConfig::from_run(stack.cfg));
  const std::string path = art(args.out_dir, "transfer.ppm");
  write_ppm(out, path);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_eval(const CommonArgs& args, int gen_per_class) {
  RunConfig cfg = resolve_config(args);
  StackOnDisk stack = load_stack(cfg, args.out_dir);
  StratifiedSampler sampler(stack.tokenizer, stack.top, stack.bottom);
  ShapesTexSpec spec = data_spec(stack.cfg);
  std::vector<LabeledImage> val =
      gen_shapes_tex(spec, stack.cfg.train_count, stack.cfg.val_count);

  const double psnr_two = eval_psnr(stack.tokenizer, val, false);
  const double psnr_top = eval_psnr(stack.tokenizer, val, true);

  // per-batch codebook statistics over the validation stream
  std::vector<TokenGrid> grids = tokenize_dataset(stack.tokenizer, val);
  const int kt = stack.tokenizer.top_codebook().size();
  const int kb = stack.tokenizer.bottom_codebook().size();
  double ppl_t = 0.0, ppl_b = 0.0;
  int batches = 0;
  const int B = stack.cfg.batch_size;
  for (size_t i = 0; i + B <= grids.size(); i += B) {
    std::vector<int> t, b;
    for (int j = 0; j < B; ++j) {
      t.insert(t.end(), grids[i + j].top.begin(), grids[i + j].top.end());
      b.insert(b.end(), grids[i + j].bottom.begin(), grids[i + j].bottom.end());
    }
    ppl_t += perplexity(t, kt);
    ppl_b += perplexity(b, kb);
    ++batches;
  }
  ppl_t /= batches;
  ppl_b /= batches;

  DecodeConfig dc = DecodeConfig::from_run(stack.cfg);
  const int C = stack.cfg.num_classes();
  std::vector<std::vector<Tensor>> real_by_class(C);
  for (const LabeledImage& item : val) real_by_class[item.class_id].push_back(item.image);
  double frechet_sum = 0.0;
  std::ofstream csv(art(args.out_dir, "metrics.csv"));
  csv << "metric,class,value\n";
  for (int c = 0; c < C; ++c) {
    std::vector<Tensor> gen;
    for (int i = 0; i < gen_per_class; ++i) {
      DecodeConfig one = dc;
      one.seed = splitmix64(dc.seed ^ (static_cast<uint64_t>(c) << 20) ^
                            static_cast<uint64_t>(i) ^ 0xe7a1ULL);
      gen.push_back(sampler.generate(c, one).image);
    }
    const double fd = toy_frechet(real_by_class[c], gen);
    frechet_sum += fd;
    csv << "toy_frechet," << c << "," << fd << "\n";
  }
  csv << "toy_frechet_mean,all," << frechet_sum / C << "\n";
  csv << "val_psnr,all," << psnr_two << "\n";
  csv << "val_psnr_top_only,all," << psnr_top << "\n";
  csv << "val_ppl_top,all," << ppl_t << "\n";
  csv << "val_ppl_bottom,all," << ppl_b << "\n";
  std::printf("psnr %.2f (top-only %.2f)  ppl %.1f/%.1f  frechet %.3f\n", psnr_two, psnr_top,
              ppl_t, ppl_b, frechet_sum / C);
  return 0;
}

int cmd_ablate_fusion(const CommonArgs& args, int n_seeds) {
  RunConfig base = resolve_config(args);
  fs::create_directories(args.out_dir);
  ShapesTexSpec spec = data_spec(base);
  std::vector<LabeledImage> train = gen_shapes_tex(spec, 0, base.train_count);
  std::vector<LabeledImage> val = gen_shapes_tex(spec, base.train_count, base.val_count);

  std::ofstream csv(art(args.out_dir, "ablate_fusion.csv"));
  csv << "variant,seed,ppl_top,ppl_bottom,util_top,util_bottom,val_psnr,val_psnr_top_only\n";
  std::map<std::string, std::vector<double>> ppl_top, ppl_bottom;
  for (const char* fusion : {"residual", "concat"}) {
    for (int s = 0; s < n_seeds; ++s) {
      RunConfig cfg = base;
      cfg.fusion = fusion;
      cfg.seed = base.seed + s;
      VqTokenizer tok(cfg, static_cast<uint64_t>(cfg.seed));
      std::printf("training %s tokenizer, seed %d (%d steps)\n", fusion, cfg.seed,
                  cfg.tokenizer_steps);
      std::fflush(stdout);
      TokenizerTrainResult res =
          train_tokenizer(tok, cfg, train, val, static_cast<uint64_t>(cfg.seed));
      csv << cfg.fusion << "," << cfg.seed << "," << res.ppl_top << "," << res.ppl_bottom << ","
          << res.util_top << "," << res.util_bottom << "," << res.val_psnr << ","
          << res.val_psnr_top_only << "\n";
      csv.flush();
      ppl_top[cfg.fusion].push_back(res.ppl_top);
      ppl_bottom[cfg.fusion].push_back(res.ppl_bottom);
    }
  }
  // paper-scale pattern rows (Table values), clearly out of desk reach
  csv << "residual,paper reference - not reproduced at desk scale,5632,1644,,,,\n";
  csv << "concat,paper reference - not reproduced at desk scale,405,6428,,,,\n";

  const double r_top = median(ppl_top["residual"]), r_bot = median(ppl_bottom["residual"]);
  const double c_top = median(ppl_top["concat"]), c_bot = median(ppl_bottom["concat"]);
  std::printf("medians: residual %.1f/%.1f  concat %.1f/%.1f\n", r_top, r_bot, c_top, c_bot);
  const bool ok = r_top > r_bot && c_bot > c_top;
  if (!ok) {
    std::fprintf(stderr, "stratification direction check FAILED (report retained)\n");
    return kExitAssertion;
  }
  std::printf("stratification direction check passed\n");
  return 0;
}

int cmd_ablate_steps(const CommonArgs& args, int n_samples) {
  RunConfig cfg = resolve_config(args);
  StackOnDisk stack = load_stack(cfg, args.out_dir);
  StratifiedSampler sampler(stack.tokenizer, stack.top, stack.bottom);
  ShapesTexSpec spec = data_spec(stack.cfg);
  std::vector<LabeledImage> val =
      gen_shapes_tex(spec, stack.cfg.train_count, stack.cfg.val_count);
  std::vector<Tensor> real;
  for (const LabeledImage& item : val) real.push_back(item.image);

  const std::vector<std::pair<int, int>> grid = {{3, 21}, {6, 18},  {9, 15}, {12, 12},
                                                 {15, 9}, {18, 6}, {21, 3}};
  // reference results at ImageNet scale for the same allocations
  const char* paper_ref[] = {"5.4,193,0.6x",   "5.6,192,0.7x",   "4.5,201.3,0.9x",
                             "4.21,202.7,1x",  "4.05,214,1.2x",  "3.97,214.1,1.5x",
                             "4.0,209,1.6x"};
  const int N = stack.tokenizer.top_tokens();
  const int C = stack.cfg.num_classes();

  struct Row {
    int t_top, t_bottom, eff_top, eff_bottom;
    double frechet, decode_ms;
  };
  std::vector<Row> rows;
  for (const auto& [t_top, t_bottom] : grid) {
    DecodeConfig dc = DecodeConfig::from_run(stack.cfg);
    dc.steps_top = t_top;
    dc.steps_bottom = t_bottom;
    std::vector<Tensor> gen;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < n_samples; ++i) {
      DecodeConfig one = dc;
      one.seed = splitmix64(dc.seed ^ 0xab1a7eULL ^ static_cast<uint64_t>(i));
      gen.push_back(sampler.generate(i % C, one).image);
    }
    const double ms =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() * 1000 /
        n_samples;
    rows.push_back({t_top, t_bottom, std::min(t_top, N), std::min(t_bottom, 4 * N),
                    toy_frechet(real, gen), ms});
    std::printf("(%d,%d): frechet %.3f, %.1f ms/sample\n", t_top, t_bottom,
                rows.back().frechet, ms);
    std::fflush(stdout);
  }
  double base_ms = 1.0;
  for (const Row& r : rows)
    if (r.t_top == 12) base_ms = r.decode_ms;
  std::ofstream csv(art(args.out_dir, "ablate_steps.csv"));
  csv << "steps_top,steps_bottom,effective_top,effective_bottom,toy_frechet,ms_per_sample,"
         "speed_vs_12_12,paper_fid,paper_is,paper_speedup\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    csv << r.t_top << "," << r.t_bottom << "," << r.eff_top << "," << r.eff_bottom << ","
        << r.frechet << "," << r.decode_ms << "," << base_ms / r.decode_ms << ","
        << paper_ref[i] << "\n";
  }
  csv << "# paper reference columns: ImageNet-scale Table values - not reproduced at desk "
         "scale\n";
  return 0;
}

int cmd_ablate_schedule(const CommonArgs& args, int n_samples) {
  RunConfig cfg = resolve_config(args);
  StackOnDisk stack = load_stack(cfg, args.out_dir);
  StratifiedSampler sampler(stack.tokenizer, stack.top, stack.bottom);
  ShapesTexSpec spec = data_spec(stack.cfg);
  std::vector<LabeledImage> val =
      gen_shapes_tex(spec, stack.cfg.train_count, stack.cfg.val_count);
  std::vector<Tensor> real;
  for (const LabeledImage& item : val) real.push_back(item.image);
  const int C = stack.cfg.num_classes();

  std::ofstream csv(art(args.out_dir, "ablate_schedule.csv"));
  csv << "schedule,toy_frechet,commit_counts_top,commit_counts_bottom\n";
  for (Schedule s : all_schedules()) {
    DecodeConfig dc = DecodeConfig::from_run(stack.cfg);
    dc.schedule = s;
    std::vector<Tensor> gen;
    for (int i = 0; i < n_samples; ++i) {
      DecodeConfig one = dc;
      one.seed = splitmix64(dc.seed ^ 0x5cedULL ^ static_cast<uint64_t>(i));
      gen.push_back(sampler.generate(i % C, one).image);
    }
    auto counts_str = [&](int T, int L) {
      std::string out;
      for (int c : commit_counts(s, std::min(T, L), L))
        out += (out.empty() ? "" : " ") + std::to_string(c);
      return out;
    };
    const double fd = toy_frechet(real, gen);
    csv << schedule_to_string(s) << "," << fd << ","
        << counts_str(dc.steps_top, stack.tokenizer.top_tokens()) << ","
        << counts_str(dc.steps_bottom, stack.tokenizer.bottom_tokens()) << "\n";
    std::printf("%-12s frechet %.3f\n", schedule_to_string(s).c_str(), fd);
    std::fflush(stdout);
  }
  csv << "# paper reference (ImageNet-scale FID - not reproduced here): cosine 3.96, square "
         "4.13, exponential 4.09, cubic 4.97, linear 5.13, square_root 7.89, logarithmic "
         "11.32\n";
  return 0;
}

int cmd_ablate_seqlen(const CommonArgs& args, int n_samples) {
  RunConfig cfg = resolve_config(args);
  const std::string tok_path = art(args.out_dir, "tokenizer.ckpt");
  require_artifact(tok_path, "train-tokenizer");
  cfg = adopt_tokenizer_geometry(cfg, tok_path);
  VqTokenizer tok = load_tokenizer(cfg, tok_path);

  ShapesTexSpec spec = data_spec(cfg);
  std::vector<LabeledImage> train = gen_shapes_tex(spec, 0, cfg.train_count);
  std::vector<LabeledImage> val = gen_shapes_tex(spec, cfg.train_count, cfg.val_count);
  std::vector<TokenGrid> grids = tokenize_dataset(tok, train);
  std::vector<TokenGrid> val_grids = tokenize_dataset(tok, val);
  std::vector<int> classes(train.size()), val_classes(val.size());
  for (size_t i = 0; i < train.size(); ++i) classes[i] = train[i].class_id;
  for (size_t i = 0; i < val.size(); ++i) val_classes[i] = val[i].class_id;

  // short sequence: the usual top model; long sequence: the bottom
  // architecture with cross-scale conditioning removed. Self-attention
  // models read their targets from grid.top, so the flat variant gets the
  // bottom sequences moved there.
  NarTransformer top(top_model_config(cfg), static_cast<uint64_t>(cfg.seed));
  std::printf("training short-sequence model (N tokens)\n");
  train_level(top, grids, classes, cfg, static_cast<uint64_t>(cfg.seed));
  NarTransformer flat(flat_bottom_model_config(cfg), static_cast<uint64_t>(cfg.seed) + 1);
  std::printf("training long-sequence model (4N tokens, no conditioning)\n");
  std::vector<TokenGrid> flat_grids = grids;
  for (TokenGrid& g : flat_grids) g.top = g.bottom;
  train_level(flat, flat_grids, classes, cfg, static_cast<uint64_t>(cfg.seed) + 1);

  const float top_nll = eval_masked_loss(top, val_grids, val_classes, cfg, 404);
  std::vector<TokenGrid> flat_val = val_grids;
  for (TokenGrid& g : flat_val) g.top = g.bottom;
  const float flat_nll = eval_masked_loss(flat, flat_val, val_classes, cfg, 404);

  std::ofstream csv(art(args.out_dir, "ablate_seqlen.csv"));
  csv << "variant,seq_len,val_masked_nll\n";
  csv << "top_n," << top.config().seq_len << "," << top_nll << "\n";
  csv << "flat_4n," << flat.config().seq_len << "," << flat_nll << "\n";
  csv << "# reported only; the sequence-length comparison is not asserted at desk scale\n";
  std::printf("val masked nll: short %.4f  long-unconditioned %.4f (reported, not asserted)\n",
              top_nll, flat_nll);

  if (fs::exists(art(args.out_dir, "bottom.ckpt")) &&
      fs::exists(art(args.out_dir, "top.ckpt"))) {
    StackOnDisk stack = load_stack(cfg, args.out_dir);
    StratifiedSampler sampler(stack.tokenizer, stack.top, stack.bottom);
    std::vector<Tensor> real, gen_a, gen_b;
    for (const LabeledImage& item : val) real.push_back(item.image);
    DecodeConfig dc = DecodeConfig::from_run(stack.cfg);
    const int C = stack.cfg.num_classes();
    for (int i = 0; i < n_samples; ++i) {
      DecodeConfig one = dc;
      one.seed = splitmix64(dc.seed ^ 0x5e91eULL ^ static_cast<uint64_t>(i));
      gen_a.push_back(sampler.generate(i % C, one).image);
      Rng rng(splitmix64(one.seed ^ 0xb0ULL));
      std::vector<int> topseq =
          decode_level(stack.top, tok.top_tokens(), std::min(dc.steps_top, tok.top_tokens()),
                       i % C, one, rng, nullptr, nullptr);
      std::vector<int> botseq = decode_level(
          flat, tok.bottom_tokens(), std::min(dc.steps_bottom, tok.bottom_tokens()), i % C,
          one, rng, nullptr, nullptr);
      TokenGrid g;
      g.top = topseq;
      g.bottom = botseq;
      gen_b.push_back(tok.detokenize(g));
    }
    csv << "pipeline_conditional_frechet,," << toy_frechet(real, gen_a) << "\n";
    csv << "pipeline_unconditioned_frechet,," << toy_frechet(real, gen_b) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stratified two-level VQ image generation pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  int gen_count = 96;
  int per_class = 16;
  int only_class = -1;
  int gen_per_class = 32;
  int n_seeds = 3;
  int n_samples = 64;
  std::string input_path, rect;
  int class_id = 0, target_class = 0;
  bool shuffled = false;

  CLI::App* c_gen = app.add_subcommand("gen-data", "materialize dataset samples");
  attach_common(c_gen, args);
  c_gen->add_option("--count", gen_count, "number of images to write");

  CLI::App* c_tok = app.add_subcommand("train-tokenizer", "stage 1: train the tokenizer");
  attach_common(c_tok, args);

  CLI::App* c_top = app.add_subcommand("train-top", "stage 2: train the top-level model");
  attach_common(c_top, args);

  CLI::App* c_bot =
      app.add_subcommand("train-bottom", "stage 3: train the bottom-level model");
  attach_common(c_bot, args);
  c_bot->add_flag("--shuffled-conditions", shuffled,
                  "train with mismatched top conditioning (control experiment)");

  CLI::App* c_sample = app.add_subcommand("sample", "generate a contact sheet per class");
  attach_common(c_sample, args);
  c_sample->add_option("--n", per_class, "samples per class");
  c_sample->add_option("--class", only_class, "restrict to one class");

  CLI::App* c_inpaint = app.add_subcommand("inpaint", "regenerate a pixel region");
  attach_common(c_inpaint, args);
  c_inpaint->add_option("--input", input_path, "source image (ppm)")->required();
  c_inpaint->add_option("--rect", rect, "region x0,y0,x1,y1")->required();
  c_inpaint->add_option("--class", class_id, "conditioning class");

  CLI::App* c_transfer = app.add_subcommand("transfer", "semantic domain transfer");
  attach_common(c_transfer, args);
  c_transfer->add_option("--input", input_path, "source image (ppm)")->required();
  c_transfer->add_option("--target-class", target_class, "target class")->required();

  CLI::App* c_eval = app.add_subcommand("eval", "evaluation metrics for a trained run");
  attach_common(c_eval, args);
  c_eval->add_option("--gen-per-class", gen_per_class, "generated samples per class");

  CLI::App* c_af = app.add_subcommand("ablate-fusion", "residual vs concat over seeds");
  attach_common(c_af, args);
  c_af->add_option("--seeds", n_seeds, "number of seeds");

  CLI::App* c_as = app.add_subcommand("ablate-steps", "step-allocation sweep");
  attach_common(c_as, args);
  c_as->add_option("--samples", n_samples, "samples per allocation");

  CLI::App* c_ash = app.add_subcommand("ablate-schedule", "mask schedule sweep");
  attach_common(c_ash, args);
  c_ash->add_option("--samples", n_samples, "samples per schedule");

  CLI::App* c_asl = app.add_subcommand("ablate-seqlen", "sequence length recipe (reported)");
  attach_common(c_asl, args);
  c_asl->add_option("--samples", n_samples, "samples per pipeline variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_gen->parsed()) return cmd_gen_data(args, gen_count);
    if (c_tok->parsed()) return cmd_train_tokenizer(args);
    if (c_top->parsed()) return cmd_train_level(args, false, false);
    if (c_bot->parsed()) return cmd_train_level(args, true, shuffled);
    if (c_sample->parsed()) return cmd_sample(args, per_class, only_class);
    if (c_inpaint->parsed()) return cmd_inpaint(args, input_path, rect, class_id);
    if (c_transfer->parsed()) return cmd_transfer(args, input_path, target_class);
    if (c_eval->parsed()) return cmd_eval(args, gen_per_class);
    if (c_af->parsed()) return cmd_ablate_fusion(args, n_seeds);
    if (c_as->parsed()) return cmd_ablate_steps(args, n_samples);
    if (c_ash->parsed()) return cmd_ablate_schedule(args, n_samples);
    if (c_asl->parsed()) return cmd_ablate_seqlen(args, n_samples);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
