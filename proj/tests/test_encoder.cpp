#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "trace/encoder.hpp"

using namespace trace;
using testutil::random_tensor;

namespace {

EncoderConfig tiny_cfg() {
  EncoderConfig cfg;
  cfg.input_size = 16;
  cfg.patch = 4;
  cfg.stages = 2;
  cfg.width = 6;
  cfg.seed = 77;
  return cfg;
}

// Minimal second implementation of the encoder interface: echoes prompts as
// stage features (zeros when absent) and passes stage gradients straight
// back. Exists to show the rest of the pipeline only depends on the
// interface, i.e. the backbone is swappable.
class EchoEncoder : public EncoderInterface {
 public:
  explicit EchoEncoder(const EncoderConfig& cfg) : cfg_(cfg), shapes_(cfg.stage_shapes()) {}

  const EncoderConfig& config() const override { return cfg_; }

  StageFeatures forward(const Tensor& images, const std::vector<Tensor>* prompts) override {
    const int n = images.dim(0);
    StageFeatures out;
    for (std::size_t s = 0; s < shapes_.size(); ++s) {
      if (prompts) {
        out.push_back((*prompts)[s]);
      } else {
        out.emplace_back(
            std::vector<int>{n, shapes_[s].c, shapes_[s].h, shapes_[s].w});
      }
    }
    return out;
  }

  std::vector<Tensor> backward_to_prompts(const std::vector<Tensor>& dstages) override {
    return dstages;
  }

  std::uint64_t param_hash() const override { return 42; }

 private:
  EncoderConfig cfg_;
  std::vector<StageShape> shapes_;
};

}  // namespace

TEST_CASE("stage shapes: constant width, halving grids") {
  const EncoderConfig cfg = tiny_cfg();
  const auto shapes = cfg.stage_shapes();
  REQUIRE(shapes.size() == 2);
  CHECK(shapes[0].h == 4);  // 16 / patch 4
  CHECK(shapes[0].w == 4);
  CHECK(shapes[0].c == 6);
  CHECK(shapes[1].h == 2);  // halved
  CHECK(shapes[1].w == 2);
  CHECK(shapes[1].c == 6);

  EncoderConfig bad = cfg;
  bad.patch = 5;  // does not divide 16
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("ToyEncoder forward shapes and determinism") {
  const EncoderConfig cfg = tiny_cfg();
  ToyEncoder enc1(cfg), enc2(cfg);
  Rng rng(5);
  Tensor images = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);

  StageFeatures f1 = enc1.forward(images, nullptr);
  StageFeatures f2 = enc2.forward(images, nullptr);
  REQUIRE(f1.size() == 2);
  CHECK(f1[0].shape() == std::vector<int>{2, 6, 4, 4});
  CHECK(f1[1].shape() == std::vector<int>{2, 6, 2, 2});
  // Same seed -> identical frozen weights -> identical features.
  CHECK(testutil::bit_equal(f1[0], f2[0]));
  CHECK(testutil::bit_equal(f1[1], f2[1]));

  EncoderConfig other = cfg;
  other.seed = 78;
  ToyEncoder enc3(other);
  CHECK(enc1.param_hash() != enc3.param_hash());
  CHECK(enc1.param_hash() == enc2.param_hash());
}

TEST_CASE("ToyEncoder is linear in the prompts and zero prompts are a no-op") {
  const EncoderConfig cfg = tiny_cfg();
  ToyEncoder enc(cfg);
  Rng rng(6);
  Tensor images = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  const auto shapes = cfg.stage_shapes();

  std::vector<Tensor> zeros;
  for (const auto& s : shapes) zeros.emplace_back(std::vector<int>{1, s.c, s.h, s.w});
  StageFeatures plain = enc.forward(images, nullptr);
  StageFeatures zeroed = enc.forward(images, &zeros);
  for (std::size_t s = 0; s < plain.size(); ++s)
    CHECK(testutil::max_abs_diff(plain[s], zeroed[s]) < 1e-12);
}

TEST_CASE("ToyEncoder prompt gradients match finite differences") {
  const EncoderConfig cfg = tiny_cfg();
  ToyEncoder enc(cfg);
  Rng rng(7);
  Tensor images = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  const auto shapes = cfg.stage_shapes();

  std::vector<Tensor> prompts;
  for (const auto& s : shapes)
    prompts.push_back(random_tensor({1, s.c, s.h, s.w}, rng, -0.1, 0.1));

  StageFeatures out = enc.forward(images, &prompts);
  testutil::Projection p0(out[0], rng), p1(out[1], rng);
  const auto loss = [&] {
    StageFeatures o = enc.forward(images, &prompts);
    return p0.dot(o[0]) + p1.dot(o[1]);
  };

  enc.forward(images, &prompts);
  std::vector<Tensor> dp = enc.backward_to_prompts({p0.r, p1.r});
  REQUIRE(dp.size() == 2);
  CHECK(testutil::fd_max_rel_err(prompts[0], dp[0], loss, 1e-5, 48) < 1e-5);
  CHECK(testutil::fd_max_rel_err(prompts[1], dp[1], loss, 1e-5, 24) < 1e-5);
}

TEST_CASE("frozen weights: hash is invariant under use") {
  const EncoderConfig cfg = tiny_cfg();
  ToyEncoder enc(cfg);
  const std::uint64_t before = enc.param_hash();
  Rng rng(8);
  for (int i = 0; i < 3; ++i) {
    Tensor images = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
    StageFeatures out = enc.forward(images, nullptr);
    std::vector<Tensor> dstages;
    for (auto& o : out) dstages.push_back(random_tensor(o.shape(), rng));
    enc.backward_to_prompts(dstages);
  }
  CHECK(enc.param_hash() == before);
}

TEST_CASE("encoder factory: toy works, external and unknown profiles throw") {
  const EncoderConfig cfg = tiny_cfg();
  auto enc = make_encoder("toy", cfg);
  REQUIRE(enc != nullptr);
  CHECK(enc->config().width == 6);
  CHECK_THROWS_AS(make_encoder("external", cfg), std::invalid_argument);
  CHECK_THROWS_AS(make_encoder("resnet", cfg), std::invalid_argument);
}

TEST_CASE("the decoder runs against any EncoderInterface implementation") {
  const EncoderConfig cfg = tiny_cfg();
  EchoEncoder echo(cfg);
  Rng rng(9);
  Tensor images = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);

  std::vector<Tensor> prompts;
  for (const auto& s : cfg.stage_shapes())
    prompts.push_back(random_tensor({2, s.c, s.h, s.w}, rng));
  StageFeatures feats = echo.forward(images, &prompts);

  CoarseDecoder dec(cfg.stage_shapes(), cfg.input_size, 5, rng);
  Tensor m0 = dec.forward(feats);
  CHECK(m0.shape() == std::vector<int>{2, 1, 16, 16});
  for (std::size_t i = 0; i < m0.size(); ++i) {
    CHECK(m0[i] > 0.0);
    CHECK(m0[i] < 1.0);
  }
  // Prompt gradients come back through the same interface.
  StageFeatures dstages = dec.backward(random_tensor(m0.shape(), rng));
  std::vector<Tensor> dp = echo.backward_to_prompts(dstages);
  CHECK(dp.size() == 2);
  CHECK(dp[0].same_shape(prompts[0]));
}

TEST_CASE("CoarseDecoder: logits match probabilities and grads check out") {
  const EncoderConfig cfg = tiny_cfg();
  ToyEncoder enc(cfg);
  Rng rng(10);
  CoarseDecoder dec(cfg.stage_shapes(), cfg.input_size, 4, rng);
  Tensor images = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  StageFeatures feats = enc.forward(images, nullptr);

  Tensor m0 = dec.forward(feats);
  const Tensor& z = dec.logits();
  REQUIRE(z.same_shape(m0));
  for (std::size_t i = 0; i < m0.size(); ++i)
    CHECK(m0[i] == doctest::Approx(1.0 / (1.0 + std::exp(-z[i]))).epsilon(1e-12));

  testutil::Projection proj(m0, rng);
  const auto loss = [&] { return proj.dot(dec.forward(feats)); };

  ParamRefs refs;
  dec.params(refs);
  REQUIRE(refs.size() == 2 * 2 + 4);  // two stage projections + two convs, w/b each
  for (Param* p : refs) p->zero_grad();
  dec.forward(feats);
  StageFeatures dstages = dec.backward(proj.r);
  REQUIRE(dstages.size() == feats.size());

  for (Param* p : refs) {
    Tensor g = p->grad;
    CHECK_MESSAGE(testutil::fd_max_rel_err(p->value, g, loss, 1e-5, 40) < 1e-4, p->name);
  }
  // Input (stage-feature) gradients via FD as well.
  CHECK(testutil::fd_max_rel_err(feats[0], dstages[0], loss, 1e-5, 40) < 1e-4);
  CHECK(testutil::fd_max_rel_err(feats[1], dstages[1], loss, 1e-5, 24) < 1e-4);

  // Param names are unique and all decoder-scoped.
  for (std::size_t i = 0; i < refs.size(); ++i) {
    CHECK(refs[i]->name.rfind("decoder.", 0) == 0);
    for (std::size_t j = i + 1; j < refs.size(); ++j) CHECK(refs[i]->name != refs[j]->name);
  }
}
