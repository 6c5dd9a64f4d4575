#include "stratgen/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace stratgen {

namespace {

struct Field {
  const char* name;
  enum Kind { kInt, kFloat, kBool, kString } kind;
  int RunConfig::* i = nullptr;
  float RunConfig::* f = nullptr;
  bool RunConfig::* b = nullptr;
  std::string RunConfig::* s = nullptr;
};

Field fi(const char* n, int RunConfig::* p) {
  Field f;
  f.name = n;
  f.kind = Field::kInt;
  f.i = p;
  return f;
}
Field ff(const char* n, float RunConfig::* p) {
  Field f;
  f.name = n;
  f.kind = Field::kFloat;
  f.f = p;
  return f;
}
Field fb(const char* n, bool RunConfig::* p) {
  Field f;
  f.name = n;
  f.kind = Field::kBool;
  f.b = p;
  return f;
}
Field fs(const char* n, std::string RunConfig::* p) {
  Field f;
  f.name = n;
  f.kind = Field::kString;
  f.s = p;
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> v = {
      fi("image_size", &RunConfig::image_size),
      fi("shape_kinds", &RunConfig::shape_kinds),
      fi("texture_families", &RunConfig::texture_families),
      fi("train_count", &RunConfig::train_count),
      fi("val_count", &RunConfig::val_count),
      fi("seed", &RunConfig::seed),
      fi("codebook_size", &RunConfig::codebook_size),
      fi("codebook_dim", &RunConfig::codebook_dim),
      fb("shared_codebook", &RunConfig::shared_codebook),
      fi("codebook_size_top", &RunConfig::codebook_size_top),
      fi("codebook_size_bottom", &RunConfig::codebook_size_bottom),
      fs("fusion", &RunConfig::fusion),
      fi("channels", &RunConfig::channels),
      fi("res_blocks", &RunConfig::res_blocks),
      ff("commitment_cost", &RunConfig::commitment_cost),
      fb("dead_code_revival", &RunConfig::dead_code_revival),
      fi("tokenizer_steps", &RunConfig::tokenizer_steps),
      ff("tokenizer_lr", &RunConfig::tokenizer_lr),
      ff("tokenizer_weight_decay", &RunConfig::tokenizer_weight_decay),
      fi("batch_size", &RunConfig::batch_size),
      fi("top_layers", &RunConfig::top_layers),
      fi("bottom_layers", &RunConfig::bottom_layers),
      fi("model_dim", &RunConfig::model_dim),
      fi("heads", &RunConfig::heads),
      fi("mlp_dim", &RunConfig::mlp_dim),
      ff("dropout", &RunConfig::dropout),
      fi("transformer_steps", &RunConfig::transformer_steps),
      ff("learning_rate", &RunConfig::learning_rate),
      ff("weight_decay", &RunConfig::weight_decay),
      ff("beta1", &RunConfig::beta1),
      ff("beta2", &RunConfig::beta2),
      ff("grad_clip", &RunConfig::grad_clip),
      ff("label_smoothing", &RunConfig::label_smoothing),
      fi("warmup_steps", &RunConfig::warmup_steps),
      ff("uncond_cutoff", &RunConfig::uncond_cutoff),
      fb("cond_aug", &RunConfig::cond_aug),
      ff("cond_aug_ratio", &RunConfig::cond_aug_ratio),
      fi("steps_top", &RunConfig::steps_top),
      fi("steps_bottom", &RunConfig::steps_bottom),
      fs("schedule", &RunConfig::schedule),
      ff("temperature", &RunConfig::temperature),
      ff("conf_temperature", &RunConfig::conf_temperature),
      ff("guidance_scale", &RunConfig::guidance_scale),
  };
  return v;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string format_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

std::string valid_keys() {
  std::string out;
  for (const Field& f : fields()) {
    if (!out.empty()) out += ", ";
    out += f.name;
  }
  return out;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    const Field* fld = nullptr;
    for (const Field& f : fields())
      if (key == f.name) {
        fld = &f;
        break;
      }
    if (!fld)
      throw ConfigError("unknown config key '" + key + "' (line " + std::to_string(lineno) +
                        "); valid keys: " + valid_keys());
    try {
      size_t used = 0;
      switch (fld->kind) {
        case Field::kInt: {
          int v = std::stoi(val, &used);
          if (used != val.size()) throw std::invalid_argument("trailing");
          cfg.*(fld->i) = v;
          break;
        }
        case Field::kFloat: {
          float v = std::stof(val, &used);
          if (used != val.size()) throw std::invalid_argument("trailing");
          cfg.*(fld->f) = v;
          break;
        }
        case Field::kBool: {
          if (val == "true" || val == "1")
            cfg.*(fld->b) = true;
          else if (val == "false" || val == "0")
            cfg.*(fld->b) = false;
          else
            throw std::invalid_argument("bool");
          break;
        }
        case Field::kString:
          cfg.*(fld->s) = val;
          break;
      }
    } catch (const std::exception&) {
      throw ParseError("config line " + std::to_string(lineno) + ": cannot parse '" + val +
                       "' as value for '" + key + "'");
    }
  }
  return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  for (const Field& f : fields()) {
    out << f.name << " = ";
    switch (f.kind) {
      case Field::kInt:
        out << this->*(f.i);
        break;
      case Field::kFloat:
        out << format_float(this->*(f.f));
        break;
      case Field::kBool:
        out << ((this->*(f.b)) ? "true" : "false");
        break;
      case Field::kString:
        out << this->*(f.s);
        break;
    }
    out << "\n";
  }
  return out.str();
}

void RunConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0)
    throw ConfigError("image_size must be a positive multiple of 16");
  if (codebook_size < 2 || codebook_size_top < 2 || codebook_size_bottom < 2)
    throw ConfigError("codebook sizes must be >= 2");
  if (fusion != "residual" && fusion != "concat")
    throw ConfigError("fusion must be 'residual' or 'concat', got '" + fusion + "'");
  if (model_dim % heads != 0) throw ConfigError("model_dim must be divisible by heads");
  if (shape_kinds < 1 || texture_families < 1)
    throw ConfigError("class grid extents must be positive");
  if (steps_top < 1 || steps_bottom < 1)
    throw ConfigError("decoding needs at least one step per level");
  if (temperature < 0.0f || conf_temperature < 0.0f)
    throw ConfigError("temperatures must be >= 0");
  if (guidance_scale < 0.0f) throw ConfigError("guidance_scale must be >= 0");
  if (uncond_cutoff < 0.0f || uncond_cutoff > 1.0f)
    throw ConfigError("uncond_cutoff must be in [0,1]");
  if (label_smoothing < 0.0f || label_smoothing >= 1.0f)
    throw ConfigError("label_smoothing must be in [0,1)");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
}

}  // namespace stratgen
