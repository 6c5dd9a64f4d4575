#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "stratgen/checkpoint.hpp"
#include "stratgen/config.hpp"
#include "stratgen/dataset.hpp"
#include "stratgen/image_io.hpp"

using namespace stratgen;

namespace {
std::string tmp_path(const char* name) {
  return std::string("/tmp/stratgen_test_") + name;
}
}  // namespace

TEST_CASE("shapes-tex generation is a pure function of (seed, index)") {
  ShapesTexSpec spec;
  spec.seed = 41;
  LabeledImage a = gen_shapes_tex_item(spec, 137);
  LabeledImage b = gen_shapes_tex_item(spec, 137);
  REQUIRE(a.image.size() == b.image.size());
  for (int64_t i = 0; i < a.image.size(); ++i)
    CHECK((*a.image.data)[i] == (*b.image.data)[i]);
  CHECK(a.class_id == b.class_id);

  LabeledImage c = gen_shapes_tex_item(spec, 138);
  bool any_diff = false;
  for (int64_t i = 0; i < a.image.size() && !any_diff; ++i)
    any_diff = (*a.image.data)[i] != (*c.image.data)[i];
  CHECK(any_diff);
}

TEST_CASE("class histogram uniform and pixels in range") {
  ShapesTexSpec spec;
  spec.seed = 7;
  std::vector<int> hist(spec.num_classes(), 0);
  for (int i = 0; i < 1200; ++i) {
    LabeledImage item = gen_shapes_tex_item(spec, i);
    ++hist[item.class_id];
    if (i < 24)
      for (float v : *item.image.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
  }
  const double expected = 1200.0 / spec.num_classes();
  for (int h : hist) CHECK(std::fabs(h - expected) <= 0.10 * expected);
}

TEST_CASE("train/val splits are disjoint index ranges") {
  std::set<int64_t> train, val;
  for (int64_t i = 0; i < 100; ++i) train.insert(i);
  for (int64_t i = 100; i < 150; ++i) val.insert(i);
  for (int64_t i : val) CHECK(train.count(i) == 0);
}

TEST_CASE("ppm 1x1 white byte-exact format") {
  Tensor img = Tensor::full({1, 1, 3}, 1.0f);
  const std::string path = tmp_path("white.ppm");
  write_ppm(img, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 14);  // 11-byte header + RGB triple
  CHECK(bytes.substr(0, 11) == "P6\n1 1\n255\n");
  CHECK(static_cast<unsigned char>(bytes[11]) == 255);
  CHECK(static_cast<unsigned char>(bytes[12]) == 255);
  CHECK(static_cast<unsigned char>(bytes[13]) == 255);
}

TEST_CASE("ppm round trip error bounded by quantization") {
  ShapesTexSpec spec;
  spec.image_size = 32;
  spec.seed = 3;
  Tensor img = gen_shapes_tex_item(spec, 5).image;
  const std::string path = tmp_path("roundtrip.ppm");
  write_ppm(img, path);
  Tensor back = read_ppm(path);
  REQUIRE(back.shape == img.shape);
  float max_err = 0.0f;
  for (int64_t i = 0; i < img.size(); ++i)
    max_err = std::max(max_err, std::fabs((*img.data)[i] - (*back.data)[i]));
  CHECK(max_err <= 1.0f / 255.0f);
}

TEST_CASE("ppm truncated and malformed files raise parse errors") {
  const std::string path = tmp_path("trunc.ppm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n4 4\n255\n";
    out << "abc";  // far fewer than 48 payload bytes
  }
  CHECK_THROWS_AS(read_ppm(path), ParseError);

  const std::string bad = tmp_path("bad.ppm");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "P5\n1 1\n255\n";
    out.put('\0');
  }
  CHECK_THROWS_AS(read_ppm(bad), ParseError);

  const std::string badmax = tmp_path("badmax.ppm");
  {
    std::ofstream out(badmax, std::ios::binary);
    out << "P6\n1 1\n65535\n";
    out << "abcdef";
  }
  CHECK_THROWS_AS(read_ppm(badmax), ParseError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(99);
  Parameter a("enc.w", Tensor::randn({4, 7}, rng, 1.0f, true));
  Parameter b("dec.b", Tensor::randn({13}, rng, 2.0f, true));
  const std::string path = tmp_path("ck.bin");
  save_checkpoint(path, "vq_tokenizer", "fusion = residual\n", {&a, &b});

  Checkpoint ck = read_checkpoint(path);
  CHECK(ck.kind == "vq_tokenizer");
  CHECK(ck.config_text == "fusion = residual\n");
  REQUIRE(ck.arrays.size() == 2);
  CHECK(ck.arrays[0].first == "enc.w");
  for (int64_t i = 0; i < a.tensor.size(); ++i)
    CHECK((*ck.arrays[0].second.data)[i] == (*a.tensor.data)[i]);

  Parameter a2("enc.w", Tensor::zeros({4, 7}, true));
  Parameter b2("dec.b", Tensor::zeros({13}, true));
  load_checkpoint_into(path, "vq_tokenizer", {&a2, &b2});
  for (int64_t i = 0; i < a.tensor.size(); ++i)
    CHECK((*a2.tensor.data)[i] == (*a.tensor.data)[i]);
  for (int64_t i = 0; i < b.tensor.size(); ++i)
    CHECK((*b2.tensor.data)[i] == (*b.tensor.data)[i]);
}

TEST_CASE("checkpoint kind mismatch and corruption are load errors") {
  Rng rng(5);
  Parameter a("w", Tensor::randn({3, 3}, rng, 1.0f, true));
  const std::string path = tmp_path("kind.bin");
  save_checkpoint(path, "nar_top", "", {&a});

  Parameter a2("w", Tensor::zeros({3, 3}, true));
  CHECK_THROWS_AS(load_checkpoint_into(path, "vq_tokenizer", {&a2}), IoError);
  CHECK(checkpoint_kind(path) == "nar_top");

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const std::string cut = tmp_path("cut.bin");
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
  }
  CHECK_THROWS_AS(read_checkpoint(cut), IoError);

  const std::string junk = tmp_path("junk.bin");
  {
    std::ofstream out(junk, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  CHECK_THROWS_AS(read_checkpoint(junk), IoError);
}

TEST_CASE("config parsing: defaults, paper values, rejection") {
  RunConfig def = RunConfig::parse("");
  CHECK(def.commitment_cost == doctest::Approx(0.25));
  CHECK(def.uncond_cutoff == doctest::Approx(0.1));
  CHECK(def.label_smoothing == doctest::Approx(0.1));
  CHECK(def.beta1 == doctest::Approx(0.9));
  CHECK(def.beta2 == doctest::Approx(0.96));
  CHECK(def.weight_decay == doctest::Approx(0.045));
  CHECK(def.grad_clip == doctest::Approx(3.0));
  CHECK(def.steps_top == 18);
  CHECK(def.steps_bottom == 6);
  CHECK(def.guidance_scale == doctest::Approx(0.2));

  RunConfig c = RunConfig::parse("commitment_cost = 0.25\nuncond_cutoff = 0.1\n");
  CHECK(c.commitment_cost == doctest::Approx(0.25));
  CHECK(c.uncond_cutoff == doctest::Approx(0.1));

  CHECK_THROWS_AS(RunConfig::parse("no_such_key = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("batch_size = banana\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::parse("batch_size\n"), ParseError);

  // type-mismatch errors carry the line number
  try {
    RunConfig::parse("seed = 1\nbatch_size = oops\n");
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("config canonical round trip") {
  RunConfig c;
  c.fusion = "concat";
  c.learning_rate = 0.00025f;
  c.batch_size = 16;
  const std::string text = c.to_text();
  RunConfig back = RunConfig::parse(text);
  CHECK(back.to_text() == text);
  CHECK(back.fusion == "concat");
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(back.batch_size == 16);

  RunConfig with_comments = RunConfig::parse("# a comment\n\nbatch_size = 4\n");
  CHECK(with_comments.batch_size == 4);
}

TEST_CASE("config validation") {
  RunConfig c;
  c.fusion = "other";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  RunConfig d;
  d.image_size = 60;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  RunConfig ok;
  CHECK_NOTHROW(ok.validate());
}
