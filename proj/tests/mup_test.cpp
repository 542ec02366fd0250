#include <gtest/gtest.h>

#include <cmath>

#include "optlab/coord_check.hpp"
#include "optlab/data.hpp"
#include "optlab/model.hpp"
#include "optlab/model_config.hpp"
#include "optlab/mup.hpp"
#include "optlab/train.hpp"

using namespace optlab;

namespace {

MupContext ctx_with_mult(double m) {
  MupContext ctx;
  ctx.base_width = 64;
  ctx.width = static_cast<int64_t>(64 * m);
  ctx.alpha_embedding = 16.0;
  return ctx;
}

}  // namespace

TEST(Classify, RolesByParameterKind) {
  ModelConfig c = ModelConfig::gpt(2, 4, 16, 256, 64);
  auto roles = mup_classify(c);
  EXPECT_EQ(roles.at("tok_emb"), MupRole::kInputWeight);
  EXPECT_EQ(roles.at("head"), MupRole::kOutputWeight);
  for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w_up", "mlp.w_down"}) {
    EXPECT_EQ(roles.at("layers.0." + std::string(w)), MupRole::kHiddenWeight) << w;
  }
  EXPECT_EQ(roles.at("layers.1.attn.bq"), MupRole::kBias);
  EXPECT_EQ(roles.at("layers.1.norm1.gain"), MupRole::kNormGain);
}

TEST(Classify, TotalOverParameterSet) {
  for (auto c : {ModelConfig::gpt(3, 4, 16, 100, 64), ModelConfig::llama(3, 4, 16, 100, 64)}) {
    auto roles = mup_classify(c);
    auto specs = param_specs(c);
    EXPECT_EQ(roles.size(), specs.size());
    for (const auto& s : specs) EXPECT_EQ(roles.at(s.name), s.role);
  }
}

TEST(InitStd, BaseAndScaled) {
  EXPECT_DOUBLE_EQ(init_std(MupRole::kHiddenWeight, ctx_with_mult(1.0)), 0.073);
  EXPECT_DOUBLE_EQ(init_std(MupRole::kInputWeight, ctx_with_mult(1.0)), 0.073);
  EXPECT_DOUBLE_EQ(init_std(MupRole::kOutputWeight, ctx_with_mult(1.0)), 0.073);
  EXPECT_DOUBLE_EQ(init_std(MupRole::kHiddenWeight, ctx_with_mult(4.0)), 0.0365);
  EXPECT_DOUBLE_EQ(init_std(MupRole::kBias, ctx_with_mult(4.0)), 0.0);
}

TEST(LrScale, HiddenOnly) {
  EXPECT_DOUBLE_EQ(lr_scale(MupRole::kHiddenWeight, ctx_with_mult(10.0)), 0.1);
  EXPECT_DOUBLE_EQ(lr_scale(MupRole::kInputWeight, ctx_with_mult(10.0)), 1.0);
  EXPECT_DOUBLE_EQ(lr_scale(MupRole::kOutputWeight, ctx_with_mult(10.0)), 1.0);
  EXPECT_DOUBLE_EQ(lr_scale(MupRole::kBias, ctx_with_mult(10.0)), 1.0);
  for (MupRole r : {MupRole::kInputWeight, MupRole::kOutputWeight, MupRole::kHiddenWeight,
                    MupRole::kBias, MupRole::kNormGain}) {
    EXPECT_DOUBLE_EQ(lr_scale(r, ctx_with_mult(1.0)), 1.0);
  }
}

TEST(LrScale, MultiplicativeInWidth) {
  const double m1 = 2.0, m2 = 4.0;
  EXPECT_NEAR(lr_scale(MupRole::kHiddenWeight, ctx_with_mult(m1 * m2)),
              lr_scale(MupRole::kHiddenWeight, ctx_with_mult(m1)) *
                  lr_scale(MupRole::kHiddenWeight, ctx_with_mult(m2)),
              1e-15);
}

TEST(WdScale, LionScalesWithWidth) {
  EXPECT_DOUBLE_EQ(wd_scale(OptimizerKind::kLion, ctx_with_mult(10.0)), 10.0);
  EXPECT_DOUBLE_EQ(wd_scale(OptimizerKind::kAdamW, ctx_with_mult(10.0)), 1.0);
  EXPECT_DOUBLE_EQ(wd_scale(OptimizerKind::kSophia, ctx_with_mult(10.0)), 1.0);
  for (OptimizerKind k : {OptimizerKind::kAdamW, OptimizerKind::kLion, OptimizerKind::kSophia}) {
    EXPECT_DOUBLE_EQ(wd_scale(k, ctx_with_mult(1.0)), 1.0);
  }
}

TEST(OutputMultiplier, DividedByWidthMult) {
  MupContext ctx = ctx_with_mult(1.0);
  ctx.alpha_output = 1.5;
  EXPECT_DOUBLE_EQ(output_multiplier_effective(ctx), 1.5);
  ctx = ctx_with_mult(10.0);
  ctx.alpha_output = 1.5;
  EXPECT_DOUBLE_EQ(output_multiplier_effective(ctx), 0.15);
  ctx.alpha_output = 0.0;
  EXPECT_DOUBLE_EQ(output_multiplier_effective(ctx), 0.0);
}

TEST(InitStd, WidthConstantOutputVariant) {
  MupContext ctx = ctx_with_mult(4.0);
  EXPECT_DOUBLE_EQ(init_std(MupRole::kOutputWeight, ctx), 0.0365);
  ctx.output_init_width_constant = true;
  EXPECT_DOUBLE_EQ(init_std(MupRole::kOutputWeight, ctx), 0.073);
  EXPECT_DOUBLE_EQ(init_std(MupRole::kHiddenWeight, ctx), 0.0365);  // unchanged
}

TEST(Mup, DisabledIsStandardParametrization) {
  MupContext ctx = ctx_with_mult(4.0);
  ctx.enabled = false;
  ctx.alpha_output = 1.5;
  // 1/fan_in init: hidden and output still shrink, the embedding does not
  EXPECT_DOUBLE_EQ(init_std(MupRole::kInputWeight, ctx), 0.073);
  EXPECT_DOUBLE_EQ(init_std(MupRole::kHiddenWeight, ctx), 0.0365);
  EXPECT_DOUBLE_EQ(init_std(MupRole::kOutputWeight, ctx), 0.0365);
  for (MupRole r : {MupRole::kInputWeight, MupRole::kHiddenWeight, MupRole::kOutputWeight}) {
    EXPECT_DOUBLE_EQ(lr_scale(r, ctx), 1.0);
  }
  EXPECT_DOUBLE_EQ(wd_scale(OptimizerKind::kLion, ctx), 1.0);
  EXPECT_DOUBLE_EQ(output_multiplier_effective(ctx), 1.5);
}

TEST(Mup, IdentityAtBaseWidth) {
  MupContext ctx = ctx_with_mult(1.0);
  ctx.alpha_output = 1.3;
  for (MupRole r : {MupRole::kInputWeight, MupRole::kOutputWeight, MupRole::kHiddenWeight}) {
    EXPECT_DOUBLE_EQ(init_std(r, ctx), ctx.base_sigma);
    EXPECT_DOUBLE_EQ(lr_scale(r, ctx), 1.0);
  }
  EXPECT_DOUBLE_EQ(output_multiplier_effective(ctx), 1.3);
}

TEST(Mup, EveryParamGetsExactlyOneScaleTuple) {
  ModelConfig c = ModelConfig::llama(2, 4, 16, 100, 64);
  MupContext ctx = ctx_with_mult(2.0);
  Model model = build_model(c, ctx, 9);
  LrScales scales = LrScales::from_mup(model.params, ctx, OptimizerKind::kAdamW);
  EXPECT_EQ(scales.lr.size(), model.params.size());
  for (const auto& p : model.params) {
    EXPECT_GT(scales.scale_for(p.name), 0.0);
  }
}

namespace {

struct CoordCheckFixture {
  Corpus corpus;
  TrainConfig cfg;

  CoordCheckFixture() {
    SyntheticSpec spec{64, 1, 0.2, 11};
    corpus = generate_markov(spec, 60000);
    cfg.plan = {32, 1024, DataRegime::kUnique, 1, 3, 0.1, true};
    cfg.schedule = {4e-3, 1024, 1024 * 52, 0.1};
    cfg.opt = OptimizerConfig::adamw();
    cfg.eval_interval_tokens = 0;
  }

  std::function<Model(int64_t)> builder(bool fault_output) const {
    return [fault_output](int64_t width) {
      ModelConfig mc = ModelConfig::gpt(2, width / 16, 16, 64, 32);
      MupContext ctx = MupContext::for_width(width, 32, 128, 1.0);
      Model m = build_model(mc, ctx, 5);
      if (fault_output) {
        // alpha * m instead of alpha / m
        const double mult = ctx.width_mult();
        m.output_multiplier = ctx.alpha_output * mult;
      }
      return m;
    };
  }
};

}  // namespace

TEST(CoordCheck, WellScaledModelHasNoFlags) {
  CoordCheckFixture fx;
  auto report = coord_check(fx.builder(false), {32, 64, 128}, 30, fx.corpus, fx.cfg);
  EXPECT_TRUE(report.flagged.empty()) << report.text();
}

TEST(CoordCheck, MisScaledOutputIsFlagged) {
  CoordCheckFixture fx;
  auto report = coord_check(fx.builder(true), {32, 64, 128}, 30, fx.corpus, fx.cfg);
  bool logits_flagged = false;
  for (const auto& l : report.flagged) logits_flagged = logits_flagged || l == "logits";
  EXPECT_TRUE(logits_flagged) << report.text();
}

TEST(CoordCheck, SingleWidthHasNothingToCompare) {
  CoordCheckFixture fx;
  auto report = coord_check(fx.builder(false), {64}, 5, fx.corpus, fx.cfg);
  EXPECT_TRUE(report.flagged.empty());
  EXPECT_FALSE(report.records.empty());
}
