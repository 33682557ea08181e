#include "entstream/model.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "entstream/attention.hpp"
#include "entstream/gradcheck.hpp"
#include "entstream/rng.hpp"
#include "test_support.hpp"

namespace {

using entstream::AttentionMode;
using entstream::AttentionStep;
using entstream::ConfigError;
using entstream::ModelConfig;
using entstream::PatchFieldT;
using entstream::Rng;
using entstream::ShapeError;
using entstream::StreamModel;
using entstream::Tensor;
using entstream::TensorT;

ModelConfig shrunken_config(AttentionMode mode) {
  ModelConfig cfg;
  cfg.hidden_dim = 12;
  cfg.stream_len = 2;
  cfg.image_size = 12;
  cfg.conv_layers = 2;
  cfg.use_batch_norm = false;
  cfg.attention = mode;
  return cfg;
}

TEST(ModelConfig_, ValidationAndGeometry) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.grid_size(), 5);   // 75 -> 38 -> 19 -> 10 -> 5
  EXPECT_EQ(cfg.patches(), 25);
  cfg.validate();

  ModelConfig bad;
  bad.hidden_dim = 10;  // must hold the 11-dim question
  EXPECT_THROW(bad.validate(), ConfigError);
  ModelConfig bad2;
  bad2.stream_len = 0;
  EXPECT_THROW(bad2.validate(), ConfigError);
}

TEST(PatchSlice, AppendsCornerToCornerCoordinates) {
  // 3x3 grid: patch 0 -> (-1,-1), center -> (0,0), patch 8 -> (1,1).
  Tensor maps = Tensor::zeros({1, 4, 3, 3});
  for (std::size_t i = 0; i < maps.data().size(); ++i)
    maps.data()[i] = static_cast<float>(i);
  Tensor sliced = entstream::patch_slice(maps, 0, 4);
  ASSERT_EQ(sliced.ndim(), 3);
  EXPECT_EQ(sliced.dim(1), 9);
  EXPECT_EQ(sliced.dim(2), 6);  // 4 channels + 2 coords
  auto at = [&](int p, int d) {
    return sliced.data()[static_cast<std::size_t>(p * 6 + d)];
  };
  EXPECT_FLOAT_EQ(at(0, 4), -1);
  EXPECT_FLOAT_EQ(at(0, 5), -1);
  EXPECT_FLOAT_EQ(at(4, 4), 0);
  EXPECT_FLOAT_EQ(at(4, 5), 0);
  EXPECT_FLOAT_EQ(at(8, 4), 1);
  EXPECT_FLOAT_EQ(at(8, 5), 1);
  // feature part is the channel-major map transposed to patch-major
  EXPECT_FLOAT_EQ(at(0, 0), 0);   // channel 0, pixel (0,0)
  EXPECT_FLOAT_EQ(at(0, 1), 9);   // channel 1, pixel (0,0)
  EXPECT_FLOAT_EQ(at(1, 0), 1);   // channel 0, pixel (0,1)
}

TEST(Encoder, ProducesKeyValuePatchField) {
  Rng rng(3);
  ModelConfig cfg;  // production geometry
  StreamModel<float> m(cfg, rng);
  Tensor img = Tensor::zeros({2, 3, 75, 75});
  testsupport::fill_uniform(img, rng);
  auto field = m.encode(img, false);
  ASSERT_EQ(field.keys.ndim(), 3);
  EXPECT_EQ(field.keys.dim(0), 2);
  EXPECT_EQ(field.keys.dim(1), 25);
  EXPECT_EQ(field.keys.dim(2), 16);  // 14 channels + 2 coords
  EXPECT_EQ(field.values.dim(2), 12);  // 10 channels + 2 coords
  EXPECT_THROW(m.encode(Tensor::zeros({2, 3, 64, 64}), false), ShapeError);
}

TEST(InitHidden, QuestionThenTrainablePad) {
  Rng rng(4);
  ModelConfig cfg = shrunken_config(AttentionMode::soft);
  StreamModel<float> m(cfg, rng);
  Tensor q = testsupport::make_questions<float>({{2, 0, 1}, {5, 1, 2}});
  Tensor pad = Tensor::zeros({1});  // resolved inside via model pads
  (void)pad;
  auto named = m.named_tensors();
  Tensor ef0_pad;
  for (auto& [n, t] : named)
    if (n == "pad.ef0") ef0_pad = t;
  ASSERT_GT(ef0_pad.size(), 0u);
  Tensor h = m.init_hidden(q, ef0_pad);
  ASSERT_EQ(h.dim(0), 2);
  ASSERT_EQ(h.dim(1), 12);
  for (int b = 0; b < 2; ++b) {
    for (int d = 0; d < 11; ++d)
      EXPECT_FLOAT_EQ(h.data()[static_cast<std::size_t>(b * 12 + d)],
                      q.data()[static_cast<std::size_t>(b * 11 + d)]);
    EXPECT_FLOAT_EQ(h.data()[static_cast<std::size_t>(b * 12 + 11)],
                    ef0_pad.data()[0]);
  }
}

// ---------------------------------------------------------------------------
// Attention primitives

TEST(Attention, ScoresAreBatchedDotProducts) {
  Tensor q = Tensor::from_data({1, 2}, {1, 2});
  Tensor keys = Tensor::from_data({1, 3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor s = entstream::attn_scores(q, keys);
  ASSERT_EQ(s.dim(1), 3);
  EXPECT_FLOAT_EQ(s.data()[0], 1);
  EXPECT_FLOAT_EQ(s.data()[1], 2);
  EXPECT_FLOAT_EQ(s.data()[2], 3);
}

TEST(Attention, CombineWithOneHotIsExactRowSelection) {
  Rng rng(5);
  Tensor values = Tensor::zeros({2, 4, 3});
  testsupport::fill_uniform(values, rng, -5, 5);
  Tensor w = Tensor::zeros({2, 4});
  w.data()[2] = 1.0f;      // batch 0 selects row 2
  w.data()[4 + 1] = 1.0f;  // batch 1 selects row 1
  Tensor out = entstream::attn_combine(w, values);
  for (int d = 0; d < 3; ++d) {
    EXPECT_EQ(out.data()[static_cast<std::size_t>(d)],
              values.data()[static_cast<std::size_t>(2 * 3 + d)]);
    EXPECT_EQ(out.data()[static_cast<std::size_t>(3 + d)],
              values.data()[static_cast<std::size_t>(4 * 3 + 1 * 3 + d)]);
  }
}

TEST(Attention, CombineWithUniformWeightsIsMean) {
  Tensor values = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::full({1, 2}, 0.5f);
  Tensor out = entstream::attn_combine(w, values);
  EXPECT_FLOAT_EQ(out.data()[0], 2);
  EXPECT_FLOAT_EQ(out.data()[1], 3);
}

TEST(Gumbel, DeterministicPerSeedAndLocatedAtEulerGamma) {
  Rng a(11), b(11);
  auto g1 = entstream::sample_gumbel<float>(a, 100);
  auto g2 = entstream::sample_gumbel<float>(b, 100);
  EXPECT_EQ(g1, g2);
  Rng c(12);
  auto big = entstream::sample_gumbel<double>(c, 20000);
  double mean = 0;
  for (double v : big) mean += v / 20000;
  EXPECT_NEAR(mean, 0.5772, 0.05);  // Euler-Mascheroni constant
}

TEST(Gumbel, FiftyUnitLogitGapDominatesSelection) {
  // P(select the small logit) = huge gap -> effectively never.
  Rng rng(13);
  Tensor logits = Tensor::from_data({1, 2}, {0, 50});
  int picked_large = 0;
  for (int i = 0; i < 1000; ++i) {
    auto noise = entstream::sample_gumbel<float>(rng, 2);
    auto idx = entstream::noisy_argmax(logits, noise);
    picked_large += idx[0] == 1;
  }
  EXPECT_GE(picked_large, 990);
}

TEST(HardOneHot, ForwardIsExactOneHotAtNoisyArgmax) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = Tensor::zeros({3, 7});
    testsupport::fill_uniform(logits, rng, -2, 2);
    auto noise = entstream::sample_gumbel<float>(rng, 21);
    Tensor oh = entstream::hard_one_hot(logits, noise, 1.0, false);
    auto idx = entstream::noisy_argmax(logits, noise);
    for (int b = 0; b < 3; ++b)
      for (int p = 0; p < 7; ++p)
        EXPECT_EQ(oh.data()[static_cast<std::size_t>(b * 7 + p)],
                  p == idx[static_cast<std::size_t>(b)] ? 1.0f : 0.0f);
  }
}

TEST(HardOneHot, SurrogateRowsSumToOneAndSharpenWithTemperature) {
  Rng rng(15);
  Tensor logits = Tensor::zeros({2, 5});
  testsupport::fill_uniform(logits, rng, -1, 1);
  auto noise = entstream::sample_gumbel<float>(rng, 10);
  Tensor warm = entstream::hard_one_hot(logits, noise, 1.0, true);
  Tensor cold = entstream::hard_one_hot(logits, noise, 0.1, true);
  for (int b = 0; b < 2; ++b) {
    double s = 0;
    float warm_max = 0, cold_max = 0;
    for (int p = 0; p < 5; ++p) {
      const auto i = static_cast<std::size_t>(b * 5 + p);
      s += warm.data()[i];
      warm_max = std::max(warm_max, warm.data()[i]);
      cold_max = std::max(cold_max, cold.data()[i]);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_GT(cold_max, warm_max);  // lower temperature concentrates mass
  }
}

TEST(HardOneHot, RejectsBadTemperatureAndNoiseSize) {
  Tensor logits = Tensor::zeros({1, 3});
  std::vector<float> noise(3, 0.f);
  EXPECT_THROW(entstream::hard_one_hot(logits, noise, 0.0, false),
               ConfigError);
  std::vector<float> short_noise(2, 0.f);
  EXPECT_THROW(entstream::hard_one_hot(logits, short_noise, 1.0, false),
               ShapeError);
}

// ---------------------------------------------------------------------------
// Full model

TEST(StreamModel_, ForwardShapesAndTrace) {
  Rng rng(20);
  ModelConfig cfg = shrunken_config(AttentionMode::soft);
  StreamModel<float> m(cfg, rng);
  Tensor img = Tensor::zeros({3, 3, 12, 12});
  testsupport::fill_uniform(img, rng);
  Tensor q = testsupport::make_questions<float>({{0, 0, 0}, {1, 1, 2}, {5, 0, 1}});
  std::vector<AttentionStep<float>> trace;
  Rng fwd(21);
  Tensor logits = m.forward(img, q, false, fwd, &trace);
  EXPECT_EQ(logits.dim(0), 3);
  EXPECT_EQ(logits.dim(1), 10);
  ASSERT_EQ(trace.size(), 2u);  // stream_len
  const int P = cfg.patches();
  for (const auto& step : trace) {
    ASSERT_EQ(step.weights.size(), static_cast<std::size_t>(3 * P));
    EXPECT_TRUE(step.hard_indices.empty());  // soft mode
    for (int b = 0; b < 3; ++b) {
      double s = 0;
      for (int p = 0; p < P; ++p)
        s += step.weights[static_cast<std::size_t>(b * P + p)];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(StreamModel_, StreamLengthOneIsDegenerate) {
  Rng rng(22);
  ModelConfig cfg = shrunken_config(AttentionMode::soft);
  cfg.stream_len = 1;
  StreamModel<float> m(cfg, rng);
  Tensor img = Tensor::zeros({1, 3, 12, 12});
  testsupport::fill_uniform(img, rng);
  Tensor q = testsupport::make_questions<float>({{3, 1, 0}});
  std::vector<AttentionStep<float>> trace;
  Rng fwd(23);
  m.forward(img, q, false, fwd, &trace);
  EXPECT_EQ(trace.size(), 1u);
}

TEST(StreamModel_, SoftForwardIsDeterministic) {
  Rng rng(24);
  ModelConfig cfg = shrunken_config(AttentionMode::soft);
  StreamModel<float> m(cfg, rng);
  Tensor img = Tensor::zeros({2, 3, 12, 12});
  testsupport::fill_uniform(img, rng);
  Tensor q = testsupport::make_questions<float>({{0, 0, 0}, {4, 1, 1}});
  Rng r1(1), r2(999);  // soft mode never consumes rng
  Tensor a = m.forward(img, q, false, r1);
  Tensor b = m.forward(img, q, false, r2);
  EXPECT_EQ(a.data(), b.data());
}

TEST(StreamModel_, HardEntityRowsAreExactlyValueRows) {
  Rng rng(25);
  ModelConfig cfg = shrunken_config(AttentionMode::hard);
  StreamModel<float> m(cfg, rng);
  const int P = cfg.patches();
  Tensor img = Tensor::zeros({2, 3, 12, 12});
  testsupport::fill_uniform(img, rng);
  Tensor q = testsupport::make_questions<float>({{1, 0, 2}, {2, 1, 0}});
  Rng fwd(26);
  int steps_checked = 0;
  for (int pass = 0; pass < 50; ++pass) {
    std::vector<AttentionStep<float>> trace;
    m.forward(img, q, false, fwd, &trace);
    auto field = m.encode(img, false);
    for (const auto& step : trace) {
      ASSERT_EQ(step.hard_indices.size(), 2u);
      for (int b = 0; b < 2; ++b) {
        const int sel = step.hard_indices[static_cast<std::size_t>(b)];
        ASSERT_GE(sel, 0);
        ASSERT_LT(sel, P);
        // bitwise equality: hard selection must not blend patches
        EXPECT_EQ(0, std::memcmp(
            step.entities.data() + static_cast<std::size_t>(b) * 12,
            field.values.data().data() +
                (static_cast<std::size_t>(b) * P + static_cast<std::size_t>(sel)) * 12,
            12 * sizeof(float)));
        ++steps_checked;
      }
    }
  }
  EXPECT_EQ(steps_checked, 50 * 2 * 2);
}

TEST(StreamModel_, LogitsInvariantUnderPatchPermutation) {
  Rng rng(27);
  ModelConfig cfg = shrunken_config(AttentionMode::soft);
  StreamModel<float> m(cfg, rng);
  Tensor img = Tensor::zeros({2, 3, 12, 12});
  testsupport::fill_uniform(img, rng);
  Tensor q = testsupport::make_questions<float>({{0, 1, 1}, {3, 0, 2}});
  auto field = m.encode(img, false);
  const int P = cfg.patches();

  std::vector<int> perm(static_cast<std::size_t>(P));
  for (int i = 0; i < P; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng prng(28);
  prng.shuffle(perm);
  PatchFieldT<float> shuffled{Tensor::zeros({2, P, 16}),
                              Tensor::zeros({2, P, 12})};
  for (int b = 0; b < 2; ++b)
    for (int p = 0; p < P; ++p) {
      const auto src = static_cast<std::size_t>(perm[static_cast<std::size_t>(p)]);
      std::memcpy(shuffled.keys.data().data() +
                      (static_cast<std::size_t>(b) * P + p) * 16,
                  field.keys.data().data() +
                      (static_cast<std::size_t>(b) * P + src) * 16,
                  16 * sizeof(float));
      std::memcpy(shuffled.values.data().data() +
                      (static_cast<std::size_t>(b) * P + p) * 12,
                  field.values.data().data() +
                      (static_cast<std::size_t>(b) * P + src) * 12,
                  12 * sizeof(float));
    }

  Rng r1(0), r2(0);
  Tensor base = m.forward_from_patches(field, q, false, r1);
  Tensor perm_out = m.forward_from_patches(shuffled, q, false, r2);
  for (std::size_t i = 0; i < base.data().size(); ++i)
    EXPECT_NEAR(base.data()[i], perm_out.data()[i], 1e-5);
}

TEST(StreamModel_, InitializationIsSeedDeterministic) {
  ModelConfig cfg = shrunken_config(AttentionMode::soft);
  Rng a(77), b(77), c(78);
  StreamModel<float> m1(cfg, a), m2(cfg, b), m3(cfg, c);
  auto n1 = m1.named_tensors(), n2 = m2.named_tensors(), n3 = m3.named_tensors();
  ASSERT_EQ(n1.size(), n2.size());
  bool any_differs_from_third = false;
  for (std::size_t i = 0; i < n1.size(); ++i) {
    EXPECT_EQ(n1[i].first, n2[i].first);
    EXPECT_EQ(n1[i].second.data(), n2[i].second.data());
    if (n1[i].second.data() != n3[i].second.data())
      any_differs_from_third = true;
  }
  EXPECT_TRUE(any_differs_from_third);
}

TEST(StreamModel_, ParameterCountsMatchHandAnalysis) {
  Rng rng(30);
  ModelConfig rfs;  // hidden 32
  StreamModel<float> m32(rfs, rng);
  auto pc = entstream::count_parameters(m32.trainable());
  EXPECT_EQ(pc.first, 38562);
  EXPECT_EQ(pc.second, 154248);

  ModelConfig rfsh;
  rfsh.hidden_dim = 64;
  rfsh.attention = AttentionMode::hard;
  StreamModel<float> m64(rfsh, rng);
  auto pc64 = entstream::count_parameters(m64.trainable());
  EXPECT_EQ(pc64.first, 97506);
  EXPECT_EQ(pc64.second, 390024);
}

// ---------------------------------------------------------------------------
// Whole-model gradient checks (shrunken, double precision, batch norm off,
// frozen Gumbel noise, biases nudged off ReLU kinks)

template <AttentionMode Mode>
double model_grad_check() {
  ModelConfig cfg = shrunken_config(Mode);
  Rng rng(17);
  StreamModel<double> m(cfg, rng);
  auto img = TensorT<double>::zeros({2, 3, 12, 12}, true);
  Rng ir(5);
  for (auto& v : img.data()) v = ir.uniform();
  auto q = testsupport::make_questions<double>({{0, 0, 0}, {2, 1, 2}});
  testsupport::clear_kink_zones<double>(m.named_tensors(), img,
                                        cfg.conv_layers, 0.015);
  std::vector<int> targets{3, 7};
  Rng nr(31);
  auto noise = entstream::sample_gumbel<double>(
      nr, static_cast<std::size_t>(cfg.stream_len) * 2 *
              static_cast<std::size_t>(cfg.patches()));
  auto params = m.trainable();
  params.push_back(img);
  Rng unused(0);
  const bool hard = Mode == AttentionMode::hard;
  auto fn = [&] {
    return cross_entropy(m.forward(img, q, true, unused, nullptr,
                                   hard ? &noise : nullptr, hard),
                         targets);
  };
  return entstream::grad_check<double>(fn, params);
}

TEST(StreamModel_, GradCheckSoft) {
  EXPECT_LT(model_grad_check<AttentionMode::soft>(), 1e-3);
}

TEST(StreamModel_, GradCheckHardSurrogate) {
  EXPECT_LT(model_grad_check<AttentionMode::hard>(), 1e-3);
}

}  // namespace
