#include "doctest_torch.hpp"

#include <set>

#include "test_support.hpp"
#include "ugdiml/denoiser.hpp"
#include "ugdiml/errors.hpp"
#include "ugdiml/model.hpp"

using namespace ugdiml;
using ugdiml::testing::max_abs_diff;

namespace {

torch::Tensor randn(std::vector<int64_t> shape, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn(shape, gen);
}

ModelConfig deformable_tiny() {
  auto cfg = ModelConfig::tiny();
  cfg.decoder_attention = DecoderAttention::Deformable;
  return cfg;
}

DenoiserInput input_for(const ModelConfig& cfg, int64_t b, bool ciml, uint64_t seed,
                        int t = 10) {
  const int64_t s = cfg.latent_size();
  DenoiserInput in;
  in.noisy = randn({b, cfg.embed_dim, s, s}, seed);
  in.conditions.forged = randn({b, cfg.fpn_channels, s, s}, seed + 1);
  if (ciml) in.conditions.original = randn({b, cfg.fpn_channels, s, s}, seed + 2);
  in.timesteps = torch::full({b}, t, torch::kLong);
  return in;
}

}  // namespace

TEST_CASE("timestep encoding") {
  const auto t = torch::tensor({1, 500, 1000}, torch::kLong);
  const auto e = timestep_encoding(t, 64);
  CHECK(e.sizes() == torch::IntArrayRef({3, 64}));
  CHECK(torch::equal(e, timestep_encoding(t, 64)));
  CHECK(max_abs_diff(e[0], e[1]) > 0.1);
  CHECK(e.abs().max().item<double>() <= 1.0);
}

TEST_CASE("logit shape for both decoders and modes") {
  for (const auto& cfg : {ModelConfig::tiny(), deformable_tiny()}) {
    torch::manual_seed(0);
    Denoiser d(cfg, 1000);
    torch::NoGradGuard ng;
    for (bool ciml : {false, true}) {
      const auto out = d->forward(input_for(cfg, 3, ciml, 1));
      CHECK(out.values.sizes() == torch::IntArrayRef({3, 2, 16, 16}));
      CHECK(torch::isfinite(out.values).all().item<bool>());
    }
  }
}

TEST_CASE("fusion slots") {
  const auto cfg = ModelConfig::tiny();
  torch::manual_seed(1);
  Denoiser d(cfg, 1000);
  torch::NoGradGuard ng;
  const int64_t f = cfg.fusion_channels;

  const auto iml = d->fuse_inputs(input_for(cfg, 2, false, 3));
  CHECK(iml.size(1) == 2 * f);
  CHECK(iml.narrow(1, f, f).abs().max().item<double>() == 0.0);
  CHECK(iml.narrow(1, 0, f).abs().max().item<double>() > 0.0);

  auto same = input_for(cfg, 2, true, 3);
  same.conditions.original = same.conditions.forged;
  const auto ciml = d->fuse_inputs(same);
  CHECK(ciml.size(1) == 2 * f);
  CHECK(torch::equal(ciml.narrow(1, 0, f), ciml.narrow(1, f, f)));
  CHECK(torch::equal(ciml.narrow(1, 0, f), iml.narrow(1, 0, f)));
}

TEST_CASE("denoiser is deterministic and sensitive to t") {
  for (const auto& cfg : {ModelConfig::tiny(), deformable_tiny()}) {
    torch::manual_seed(2);
    Denoiser d(cfg, 1000);
    d->eval();
    torch::NoGradGuard ng;
    auto in = input_for(cfg, 2, true, 4, 1);
    const auto a = d->forward(in).values;
    CHECK(torch::equal(a, d->forward(in).values));
    in.timesteps.fill_(1000);
    CHECK(max_abs_diff(a, d->forward(in).values) > 1e-4);
  }
}

TEST_CASE("denoiser input validation") {
  const auto cfg = ModelConfig::tiny();
  Denoiser d(cfg, 100);
  torch::NoGradGuard ng;
  auto in = input_for(cfg, 2, false, 5);
  in.timesteps = torch::tensor({0, 5}, torch::kLong);
  CHECK_THROWS_AS(d->forward(in), RangeError);
  in.timesteps = torch::tensor({1, 101}, torch::kLong);
  CHECK_THROWS_AS(d->forward(in), RangeError);
  in.timesteps = torch::tensor({1}, torch::kLong);
  CHECK_THROWS_AS(d->forward(in), ShapeError);
  in = input_for(cfg, 2, false, 5);
  in.conditions.forged = randn({2, cfg.fpn_channels, 8, 8}, 6);
  CHECK_THROWS_AS(d->forward(in), ShapeError);
  in = input_for(cfg, 2, true, 5);
  in.conditions.original = randn({2, cfg.fpn_channels, 8, 8}, 6);
  CHECK_THROWS_AS(d->forward(in), ShapeError);
}

TEST_CASE("backprop matches finite differences on random weights") {
  for (const auto& cfg : {ModelConfig::tiny(), deformable_tiny()}) {
    torch::manual_seed(3);
    Denoiser d(cfg, 1000);
    d->eval();
    const auto in = input_for(cfg, 1, true, 7, 300);
    const auto projection = randn({1, 2, 16, 16}, 8);
    auto objective = [&] { return (d->forward(in).values * projection).sum(); };

    d->zero_grad();
    objective().backward();

    std::mt19937_64 rng(9);
    auto params = d->named_parameters();
    std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
    int checked = 0;
    double worst = 0.0;
    while (checked < 10) {
      auto item = params[pick_param(rng)];
      auto w = item.value();
      if (!w.grad().defined()) continue;
      const auto flat_w = w.view(-1);
      const auto flat_g = w.grad().view(-1);
      std::uniform_int_distribution<int64_t> pick(0, flat_w.numel() - 1);
      const int64_t k = pick(rng);
      const double analytic = flat_g[k].item<double>();
      const double scale = flat_g.abs().mean().item<double>();
      const double h = 1e-2;
      double numeric;
      {
        torch::NoGradGuard ng;
        const float orig = flat_w[k].item<float>();
        flat_w[k] = orig + h;
        const double up = objective().item<double>();
        flat_w[k] = orig - h;
        const double down = objective().item<double>();
        flat_w[k] = orig;
        numeric = (up - down) / (2 * h);
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), scale});
      const double rel = std::abs(analytic - numeric) / denom;
      INFO(item.key(), "[", k, "] analytic ", analytic, " numeric ", numeric);
      CHECK(rel < 1e-2);
      worst = std::max(worst, rel);
      ++checked;
    }
    MESSAGE("worst relative error ", worst);
  }
}

TEST_CASE("unified model has identical parameters in both modes") {
  torch::manual_seed(4);
  const auto cfg = ModelConfig::tiny();
  UgdImlModel model(cfg, 1000);
  const auto names = model->parameter_names();
  const auto count = model->parameter_count();
  const auto masks = torch::randint(0, 2, {2, 64, 64}, torch::kUInt8);
  const auto forged = randn({2, 3, 64, 64}, 10);
  const auto original = randn({2, 3, 64, 64}, 11);
  const auto t = torch::full({2}, 100, torch::kLong);

  // The table rows are normalized to +-1 codes per channel, so the table's
  // gradient is zero up to rounding. Everything else must learn in both modes.
  double table_grad = 0.0;
  auto receiving = [&](TaskMode mode) {
    model->zero_grad();
    const auto conds = model->condition(
        mode, forged, mode == TaskMode::CIML ? std::optional(original) : std::nullopt);
    const auto noisy = model->embed(masks).values;
    model->denoise(noisy, conds, t).values.square().sum().backward();
    std::set<std::string> out;
    for (const auto& item : model->named_parameters()) {
      if (!item.value().grad().defined()) continue;
      const double g = item.value().grad().abs().max().item<double>();
      if (item.key() == "class_embed.weight") {
        table_grad = std::max(table_grad, g);
      } else if (g > 0) {
        out.insert(item.key());
      }
    }
    return out;
  };
  const auto iml = receiving(TaskMode::IML);
  CHECK(model->parameter_names() == names);
  const auto ciml = receiving(TaskMode::CIML);
  CHECK(model->parameter_names() == names);
  CHECK(model->parameter_count() == count);
  CHECK(iml == ciml);
  CHECK(iml.size() + 1 == names.size());
  MESSAGE("table gradient ", table_grad);
  CHECK(table_grad < 1e-4);
}

TEST_CASE("model wiring") {
  torch::manual_seed(5);
  UgdImlModel model(ModelConfig::tiny(), 1000);
  CHECK(model->diffusion_steps() == 1000);
  const auto e = model->embed(torch::zeros({1, 64, 64}, torch::kUInt8));
  CHECK(e.values.sizes() == torch::IntArrayRef({1, 16, 16, 16}));
  CHECK(e.stride == 4);
  const auto r = model->reembed(MaskLogits{torch::zeros({1, 2, 16, 16})});
  CHECK(r.stride == 4);
  CHECK(r.values.sizes() == e.values.sizes());
  const auto names = model->parameter_names();
  CHECK(std::is_sorted(names.begin(), names.end()));
  CHECK(std::find(names.begin(), names.end(), "class_embed.weight") != names.end());
}

TEST_CASE("full profile model builds and runs at small input") {
  torch::manual_seed(6);
  auto cfg = ModelConfig::full();
  cfg.input_size = 64;
  UgdImlModel model(cfg, 1000);
  model->eval();
  torch::NoGradGuard ng;
  const auto conds = model->condition(TaskMode::CIML, randn({1, 3, 64, 64}, 12),
                                      randn({1, 3, 64, 64}, 13));
  const auto noisy = randn({1, cfg.embed_dim, 16, 16}, 14);
  const auto out = model->denoise(noisy, conds, torch::full({1}, 500, torch::kLong));
  CHECK(out.values.sizes() == torch::IntArrayRef({1, 2, 16, 16}));
  MESSAGE("full profile parameters: ", model->parameter_count());
}
