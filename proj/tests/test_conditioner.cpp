#include "doctest_torch.hpp"

#include "test_support.hpp"
#include "ugdiml/conditioner.hpp"
#include "ugdiml/errors.hpp"

using namespace ugdiml;
using ugdiml::testing::max_abs_diff;

namespace {

torch::Tensor images(int64_t b, int64_t size, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn({b, 3, size, size}, gen);
}

void check_pyramid(const FeaturePyramid& p, int64_t size, const std::vector<int64_t>& widths) {
  REQUIRE(p.size() == 4);
  for (int i = 0; i < 4; ++i) {
    const int64_t side = size / (int64_t{4} << i);
    CHECK(p[i].size(1) == widths[i]);
    CHECK(p[i].size(2) == side);
    CHECK(p[i].size(3) == side);
  }
}

}  // namespace

TEST_CASE("tiny encoder pyramid at 64x64") {
  torch::manual_seed(0);
  Conditioner c(ModelConfig::tiny());
  c->eval();
  torch::NoGradGuard ng;
  const auto p = c->encode_image(images(2, 64, 1));
  check_pyramid(p, 64, ModelConfig::tiny().encoder_widths);
  const auto cond = c->forward(images(2, 64, 1));
  CHECK(cond.sizes() == torch::IntArrayRef({2, 64, 16, 16}));
}

TEST_CASE("swin encoder pyramid at 512x512") {
  torch::manual_seed(0);
  SwinEncoder enc(16, {1, 1, 1, 1}, {1, 2, 4, 8}, 7);
  enc.eval();
  torch::NoGradGuard ng;
  check_pyramid(enc.forward(images(1, 512, 2)), 512, {16, 32, 64, 128});
}

TEST_CASE("full profile honors the same contract") {
  torch::manual_seed(0);
  auto cfg = ModelConfig::full();
  Conditioner c(cfg);
  c->eval();
  torch::NoGradGuard ng;
  const auto x = images(1, 64, 3);
  check_pyramid(c->encode_image(x), 64, cfg.encoder_widths);
  CHECK(c->forward(x).sizes() == torch::IntArrayRef({1, cfg.fpn_channels, 16, 16}));
}

TEST_CASE("encoder is deterministic in inference mode") {
  torch::manual_seed(1);
  Conditioner c(ModelConfig::tiny());
  c->eval();
  torch::NoGradGuard ng;
  const auto x = images(2, 64, 4);
  CHECK(torch::equal(c->forward(x), c->forward(x)));
}

TEST_CASE("encoder rejects non-conforming images") {
  Conditioner c(ModelConfig::tiny());
  CHECK_THROWS_AS(c->encode_image(torch::zeros({1, 3, 48, 64})), ShapeError);
  CHECK_THROWS_AS(c->encode_image(torch::zeros({1, 1, 64, 64})), ShapeError);
  CHECK_THROWS_AS(c->encode_image(torch::zeros({3, 64, 64})), ShapeError);
}

TEST_CASE("fpn of a zero pyramid is constant per channel") {
  torch::manual_seed(2);
  Fpn fpn(std::vector<int64_t>{8, 16, 24, 32}, 12);
  torch::NoGradGuard ng;
  FeaturePyramid zeros;
  for (int i = 0; i < 4; ++i) {
    const int64_t side = 16 >> i;
    zeros.push_back(torch::zeros({1, 8 * (i + 1), side, side}));
  }
  const auto out = fpn->forward(zeros);
  CHECK(out.sizes() == torch::IntArrayRef({1, 12, 16, 16}));
  const auto centered = out - out.mean({2, 3}, true);
  CHECK(centered.abs().max().item<double>() < 1e-6);
}

TEST_CASE("fpn output width is independent of the backbone") {
  torch::NoGradGuard ng;
  for (auto widths : {std::vector<int64_t>{8, 8, 8, 8}, std::vector<int64_t>{32, 64, 96, 128}}) {
    auto cfg = ModelConfig::tiny();
    cfg.encoder_widths = widths;
    cfg.fpn_channels = 40;
    Conditioner c(cfg);
    CHECK(c->forward(images(1, 64, 5)).size(1) == 40);
    CHECK(c->forward(images(1, 96, 5)).size(2) == 24);
  }
}

TEST_CASE("build_condition respects the task mode") {
  torch::manual_seed(3);
  Conditioner c(ModelConfig::tiny());
  c->eval();
  torch::NoGradGuard ng;
  const auto forged = images(2, 64, 6);
  const auto original = images(2, 64, 7);

  const auto iml = c->build_condition(TaskMode::IML, forged, std::nullopt);
  CHECK(iml.mode() == TaskMode::IML);
  CHECK_FALSE(iml.original.has_value());
  CHECK_THROWS_AS(c->build_condition(TaskMode::IML, forged, original), ModeError);
  CHECK_THROWS_AS(c->build_condition(TaskMode::CIML, forged, std::nullopt), ModeError);
  CHECK_THROWS_AS(c->build_condition(TaskMode::CIML, forged, images(1, 64, 7)), ShapeError);

  const auto same = c->build_condition(TaskMode::CIML, forged, forged);
  CHECK(torch::equal(same.forged, *same.original));

  const auto pair = c->build_condition(TaskMode::CIML, forged, original);
  CHECK(pair.forged.sizes() == pair.original->sizes());
  CHECK(max_abs_diff(pair.forged, *pair.original) > 1e-3);
  CHECK(torch::equal(pair.forged, iml.forged));
}

TEST_CASE("perturbing an encoder weight moves both CIML conditions") {
  torch::manual_seed(4);
  Conditioner c(ModelConfig::tiny());
  c->eval();
  torch::NoGradGuard ng;
  const auto forged = images(1, 64, 8);
  const auto original = images(1, 64, 9);
  const auto before = c->build_condition(TaskMode::CIML, forged, original);
  auto params = c->encoder().named_parameters();
  std::size_t touched = 0;
  for (const auto& item : params) {
    if (item.key().find("weight") == std::string::npos || item.value().dim() < 4) continue;
    auto w = item.value();
    w.add_(0.05);
    const auto after = c->build_condition(TaskMode::CIML, forged, original);
    CHECK(max_abs_diff(before.forged, after.forged) > 0.0);
    CHECK(max_abs_diff(*before.original, *after.original) > 0.0);
    w.sub_(0.05);
    if (++touched == 3) break;
  }
  CHECK(touched == 3);
}

TEST_CASE("CIML adds no parameters") {
  Conditioner c(ModelConfig::tiny());
  const auto before = c->parameters().size();
  c->build_condition(TaskMode::CIML, images(1, 64, 10), images(1, 64, 11));
  CHECK(c->parameters().size() == before);
}
