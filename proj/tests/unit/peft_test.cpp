#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mpft/autodiff/gradcheck.hpp"
#include "mpft/errors.hpp"
#include "mpft/meta/meta.hpp"
#include "mpft/objective/objective.hpp"
#include "test_util.hpp"

using namespace mpft;
using namespace mpft::testing;
using ad::Tensor;
using peft::PeftKind;
using peft::PeftPlan;

namespace {

PeftPlan plan_for(PeftKind kind, std::vector<InsertionSite> sites, peft::ScalingMode scaling,
                  std::size_t rank = 2) {
  PeftPlan plan;
  plan.kind = kind;
  plan.sites = std::move(sites);
  plan.rank = rank;
  plan.scaling = scaling;
  return plan;
}

std::vector<InsertionSite> mlp2_sites(std::size_t blocks) {
  std::vector<InsertionSite> out;
  for (std::size_t d = 1; d <= blocks; ++d) out.push_back({d, Position::MLP2});
  return out;
}

// Singular values of a small matrix by one-sided Jacobi rotations.
std::vector<double> singular_values(const Tensor& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<std::vector<double>> c(cols, std::vector<double>(rows));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) c[j][i] = m.at(i, j);
  }
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += c[p][i] * c[p][i];
          beta += c[q][i] * c[q][i];
          gamma += c[p][i] * c[q][i];
        }
        if (gamma == 0.0) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t), sn = cs * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double a = c[p][i], b = c[q][i];
          c[p][i] = cs * a - sn * b;
          c[q][i] = sn * a + cs * b;
        }
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<double> s;
  for (const auto& col : c) {
    double n = 0.0;
    for (double v : col) n += v * v;
    s.push_back(std::sqrt(n));
  }
  std::sort(s.rbegin(), s.rend());
  return s;
}

}  // namespace

TEST(SingularValueOracle, DiagonalMatrix) {
  const auto s = singular_values(Tensor::matrix({{3, 0}, {0, -4}, {0, 0}}));
  EXPECT_NEAR(s[0], 4.0, 1e-12);
  EXPECT_NEAR(s[1], 3.0, 1e-12);
}

TEST(Attach, ZeroInitIsTransparentForEveryKind) {
  const auto cfg = tiny_config();
  const auto backbone = frozen_backbone(cfg);
  const auto head = init_head(cfg);
  const Tensor x = random_input(cfg, 4, 11);
  const Tensor reference = frozen_logits(*backbone, head, x);
  const std::vector<std::pair<PeftKind, std::vector<InsertionSite>>> cases{
      {PeftKind::LoRA, all_sites(cfg.num_blocks)},
      {PeftKind::Adapter, all_sites(cfg.num_blocks)},
      {PeftKind::AdaptFormer, mlp2_sites(cfg.num_blocks)}};
  for (const auto& [kind, sites] : cases) {
    for (peft::ScalingMode mode : {peft::ScalingMode{peft::FixedAlpha{0.7}}, peft::ScalingMode{peft::Modulated{}}}) {
      auto model = peft::attach(backbone, head, plan_for(kind, sites, mode, 3), 5);
      EXPECT_TRUE(ad::bit_equal(model.logits(x), reference)) << peft::kind_name(kind);
    }
  }
}

TEST(Attach, RepeatedAttachIsIdempotentInOutputs) {
  const auto cfg = tiny_config();
  const auto backbone = frozen_backbone(cfg);
  const auto head = init_head(cfg);
  const Tensor x = random_input(cfg, 3, 12);
  auto a = peft::attach(backbone, head, plan_for(PeftKind::LoRA, all_sites(2), peft::FixedAlpha{}, 1), 1);
  auto b = peft::attach(backbone, head, plan_for(PeftKind::LoRA, all_sites(2), peft::FixedAlpha{}, 6), 9);
  EXPECT_TRUE(ad::bit_equal(a.logits(x), b.logits(x)));
}

TEST(Attach, AllPositionsOnTwoBlocksCreateTwelveModules) {
  const auto cfg = tiny_config(2);
  auto model = peft::attach(frozen_backbone(cfg), init_head(cfg),
                            plan_for(PeftKind::LoRA, all_sites(2), peft::Modulated{}), 0);
  EXPECT_EQ(model.modules().size(), 12u);
  EXPECT_EQ(model.modulator()->sites().size(), 12u);
  for (const auto& [site, gamma] : model.modulator()->gamma_table()) EXPECT_EQ(gamma, 1.0);
}

TEST(Attach, PlanErrors) {
  const auto cfg = tiny_config(2);
  const auto backbone = frozen_backbone(cfg);
  const auto head = init_head(cfg);
  auto make = [&](PeftPlan plan) { return peft::attach(backbone, head, plan, 0); };
  EXPECT_THROW(make(plan_for(PeftKind::LoRA, {{1, Position::Q}, {1, Position::Q}}, peft::FixedAlpha{})),
               PlanError);
  EXPECT_THROW(make(plan_for(PeftKind::LoRA, {}, peft::FixedAlpha{})), PlanError);
  EXPECT_THROW(make(plan_for(PeftKind::LoRA, {{1, Position::Q}}, peft::FixedAlpha{0.0})), PlanError);
  EXPECT_THROW(make(plan_for(PeftKind::LoRA, {{1, Position::Q}}, peft::FixedAlpha{}, 0)), PlanError);
  EXPECT_THROW(make(plan_for(PeftKind::AdaptFormer, {{1, Position::K}}, peft::FixedAlpha{})), PlanError);
  EXPECT_THROW(make(plan_for(PeftKind::LoRA, {{3, Position::Q}}, peft::FixedAlpha{})), SiteError);
}

TEST(Attach, NeedsFrozenBackbone) {
  const auto cfg = tiny_config();
  auto w = std::make_shared<BackboneWeights>(init_backbone(cfg));
  EXPECT_THROW(peft::attach(w, init_head(cfg), plan_for(PeftKind::LoRA, {{1, Position::Q}}, peft::FixedAlpha{}), 0),
               ContractError);
}

TEST(DeltaLora, ZeroBGivesZero) {
  std::mt19937_64 rng(1);
  const auto m = peft::make_lora(4, 3, 2, rng);
  const Tensor delta = peft::delta_lora(random_tensor({5, 4}, 2), m);
  for (double v : delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(DeltaLora, IdentityFactorizationReturnsInput) {
  peft::PeftModule m;
  m.kind = PeftKind::LoRA;
  m.a = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  m.b = m.a;
  const Tensor x = random_tensor({4, 3}, 3);
  EXPECT_TRUE(ad::bit_equal(peft::delta_lora(x, m), x));
}

TEST(DeltaLora, RankOneFactorsGiveRankOneOutput) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    peft::PeftModule m = peft::make_lora(5, 4, 1, rng);
    m.b = random_tensor({5, 1}, 100 + trial);
    const Tensor out = peft::delta_lora(random_tensor({6, 5}, 200 + trial), m);
    const auto s = singular_values(out);
    EXPECT_GT(s[0], 1e-3);
    EXPECT_LT(s[1], 1e-10);
  }
}

TEST(DeltaLora, ShapeMismatch) {
  std::mt19937_64 rng(1);
  const auto m = peft::make_lora(4, 3, 2, rng);
  EXPECT_THROW(peft::delta_lora(Tensor::zeros({2, 5}), m), DimensionError);
}

TEST(DeltaAdapter, ZeroUpGivesZero) {
  std::mt19937_64 rng(1);
  const auto m = peft::make_bottleneck(PeftKind::Adapter, 4, 2, peft::Activation::Relu, rng);
  const Tensor delta = peft::delta_adapter(random_tensor({3, 4}, 5), m);
  for (double v : delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(DeltaAdapter, IdentityActivationOrthonormalIsProjection) {
  const double c = std::cos(0.3), s = std::sin(0.3);
  peft::PeftModule m;
  m.kind = PeftKind::Adapter;
  m.activation = peft::Activation::Identity;
  m.down = Tensor::matrix({{c, 0}, {s, 0}, {0, 1}, {0, 0}});
  m.up = Tensor::matrix({{c, s, 0, 0}, {0, 0, 1, 0}});
  m.down_bias = Tensor::zeros({2});
  m.up_bias = Tensor::zeros({4});
  const Tensor x = random_tensor({3, 4}, 6);
  const Tensor once = peft::delta_adapter(x, m);
  const Tensor twice = peft::delta_adapter(once, m);
  EXPECT_LT(ad::max_abs_diff(once, twice), 1e-12);
  for (std::size_t r = 0; r < 3; ++r) {
    const double along = c * x.at(r, 0) + s * x.at(r, 1);
    EXPECT_NEAR(once.at(r, 0), c * along, 1e-12);
    EXPECT_NEAR(once.at(r, 1), s * along, 1e-12);
    EXPECT_NEAR(once.at(r, 2), x.at(r, 2), 1e-12);
    EXPECT_EQ(once.at(r, 3), 0.0);
  }
}

TEST(DeltaAdapter, NegativePreActivationsGiveZero) {
  std::mt19937_64 rng(2);
  auto m = peft::make_bottleneck(PeftKind::Adapter, 4, 2, peft::Activation::Relu, rng);
  m.up = random_tensor({2, 4}, 7);
  m.down_bias = Tensor::filled({2}, -1e3);
  const Tensor delta = peft::delta_adapter(random_tensor({3, 4}, 8), m);
  for (double v : delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(DeltaAdapter, ShapeMismatch) {
  std::mt19937_64 rng(1);
  const auto m = peft::make_bottleneck(PeftKind::Adapter, 4, 2, peft::Activation::Relu, rng);
  EXPECT_THROW(peft::delta_adapter(Tensor::zeros({2, 3}), m), DimensionError);
}

TEST(DeltaAdaptFormer, ZeroUpLeavesFfnOutputUnchanged) {
  std::mt19937_64 rng(1);
  const auto m = peft::make_bottleneck(PeftKind::AdaptFormer, 4, 2, peft::Activation::Relu, rng);
  const Tensor delta = peft::delta_adaptformer(random_tensor({3, 4}, 9), m);
  for (double v : delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(DeltaAdaptFormer, SameBottleneckAsAdapter) {
  std::mt19937_64 rng(3);
  auto m = peft::make_bottleneck(PeftKind::AdaptFormer, 4, 3, peft::Activation::Relu, rng);
  m.up = random_tensor({3, 4}, 10);
  m.up_bias = random_tensor({4}, 11);
  const Tensor x = random_tensor({5, 4}, 12);
  EXPECT_TRUE(ad::bit_equal(peft::delta_adaptformer(x, m), peft::delta_adapter(x, m)));
}

TEST(DeltaAdaptFormer, ZeroInputZeroBiasesGiveZero) {
  std::mt19937_64 rng(3);
  auto m = peft::make_bottleneck(PeftKind::AdaptFormer, 4, 3, peft::Activation::Relu, rng);
  m.up = random_tensor({3, 4}, 10);
  const Tensor delta = peft::delta_adaptformer(Tensor::zeros({2, 4}), m);
  for (double v : delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(Modulator, StartsAtExactlyOne) {
  const std::vector<InsertionSite> sites{{1, Position::Q}, {2, Position::MLP2}};
  peft::Modulator mod(sites);
  for (const auto& s : sites) EXPECT_EQ(mod.gamma(s), 1.0);
}

TEST(ModulatedForward, ForcedZeroGammaMatchesFrozenBackbone) {
  const auto cfg = tiny_config();
  const auto backbone = frozen_backbone(cfg);
  const auto head = init_head(cfg);
  auto model = peft::attach(backbone, head, plan_for(PeftKind::LoRA, all_sites(2), peft::Modulated{}), 3);
  randomize_modules(model, 4);
  const Tensor x = random_input(cfg, 4, 13);
  ASSERT_FALSE(ad::bit_equal(model.logits(x), frozen_logits(*backbone, head, x)));
  for (const auto& s : model.plan().sites) model.modulator()->force_gamma_for_testing(s, 0.0);
  EXPECT_TRUE(ad::bit_equal(model.logits(x), frozen_logits(*backbone, head, x)));
}

TEST(ModulatedForward, GammaOneEqualsAlphaOne) {
  const auto cfg = tiny_config();
  const auto backbone = frozen_backbone(cfg);
  const auto head = init_head(cfg);
  for (PeftKind kind : {PeftKind::LoRA, PeftKind::Adapter}) {
    auto mod = peft::attach(backbone, head, plan_for(kind, all_sites(2), peft::Modulated{}), 3);
    auto fixed = peft::attach(backbone, head, plan_for(kind, all_sites(2), peft::FixedAlpha{1.0}), 3);
    randomize_modules(mod, 5);
    randomize_modules(fixed, 5);
    const Tensor x = random_input(cfg, 4, 14);
    EXPECT_TRUE(ad::bit_equal(mod.logits(x), fixed.logits(x))) << peft::kind_name(kind);
  }
}

TEST(ModulatedForward, DoublingGammaDoublesThatSitesDelta) {
  const auto cfg = tiny_config();
  const InsertionSite upstream{1, Position::Q}, target{2, Position::V};
  auto model = peft::attach(frozen_backbone(cfg), init_head(cfg),
                            plan_for(PeftKind::LoRA, {upstream, target}, peft::Modulated{}), 3);
  randomize_modules(model, 6);
  const Tensor x = random_input(cfg, 3, 15);
  auto capture = [&](double gamma) {
    model.modulator()->force_gamma_for_testing(target, gamma);
    Tensor out;
    model.set_probe([&](const InsertionSite& s, const Tensor&, const Tensor* delta, const Tensor&) {
      if (s == target) out = *delta;
    });
    model.logits(x);
    return out;
  };
  const Tensor single = capture(0.75);
  const Tensor doubled = capture(1.5);
  ASSERT_EQ(single.size(), doubled.size());
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(doubled[i], 2.0 * single[i]);
}

TEST(ModulatedForward, RawGradientMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  const auto head = init_head(cfg);
  auto model = peft::attach(frozen_backbone(cfg), head,
                            plan_for(PeftKind::LoRA, {{1, Position::V}, {2, Position::MLP1}}, peft::Modulated{}), 3);
  randomize_modules(model, 7);
  const auto batch = random_batch(cfg, 8, 16);
  const objective::LossConfig loss{1.0, {0.4, 0.3, 0.2, 0.1}};
  const auto analytic = meta::outer_gradient(model, batch, loss);
  ASSERT_EQ(analytic.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const InsertionSite site = model.plan().sites[i];
    Tensor& raw = model.modulator()->raw(site);
    auto f = [&](const Tensor& r) {
      const Tensor saved = raw;
      raw.mutable_data()[0] = r[0];
      const double v = meta::validation_loss(model, batch, loss);
      raw.mutable_data()[0] = saved[0];
      return v;
    };
    const Tensor numeric = ad::finite_diff_grad(f, Tensor::scalar(raw[0]));
    EXPECT_NE(analytic[i], 0.0);
    EXPECT_LT(ad::max_relative_error(std::span<const double>(&analytic[i], 1), numeric.data()), 1e-5);
  }
}

TEST(CountTrainable, LoraOneSite) {
  BackboneConfig cfg = tiny_config();
  cfg.model_dim = 8;
  auto model = peft::attach(frozen_backbone(cfg), init_head(cfg),
                            plan_for(PeftKind::LoRA, {{1, Position::Q}}, peft::FixedAlpha{}, 4), 0);
  const auto counts = peft::count_trainable(model);
  EXPECT_EQ(counts.tuner, 64u);
  EXPECT_EQ(counts.head, cfg.model_dim * cfg.num_classes + cfg.num_classes);
  EXPECT_EQ(counts.modulator, 0u);
}

TEST(CountTrainable, TwelveBlocksAllSitesGiveSeventyTwoScalars) {
  const auto cfg = tiny_config(12);
  auto model = peft::attach(frozen_backbone(cfg), init_head(cfg),
                            plan_for(PeftKind::LoRA, all_sites(12), peft::Modulated{}, 1), 0);
  EXPECT_EQ(peft::count_trainable(model).modulator, 72u);
}

TEST(ScalingEquivalence, EtaAlphaProductControlsTheUpdate) {
  const auto cfg = tiny_config();
  const auto backbone = frozen_backbone(cfg);
  const auto head = init_head(cfg);
  const auto batch = random_batch(cfg, 8, 17);
  const objective::LossConfig loss{1.0, {0.25, 0.25, 0.25, 0.25}};
  const double c = 0.3, eta0 = 0.05;
  auto updated = [&](double alpha, double eta) {
    auto model = peft::attach(backbone, head,
                              plan_for(PeftKind::LoRA, {{1, Position::Q}, {2, Position::MLP1}}, peft::FixedAlpha{alpha}), 8);
    meta::Sgd sgd(eta);
    meta::inner_step(model, sgd, batch, loss, 1);
    std::vector<double> out;
    for (auto& [name, t] : model.peft_parameters()) out.insert(out.end(), t->values().begin(), t->values().end());
    return out;
  };
  const auto a = updated(2 * c, eta0);
  const auto b = updated(c, 2 * eta0);
  const auto product = updated(1.0, 2 * c * eta0);
  ASSERT_EQ(a.size(), b.size());
  bool moved = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-12);
    EXPECT_NEAR(a[i], product[i], 1e-12);
    moved |= a[i] != 0.0;
  }
  EXPECT_TRUE(moved);
}
