// Finite-difference gradient checks, 20 randomized trials per operation.
// All checks run in double precision at the central-difference step the
// checker defaults to; the acceptance threshold is 1e-3 max relative error.

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "entstream/attention.hpp"
#include "entstream/baselines.hpp"
#include "entstream/gradcheck.hpp"
#include "entstream/model.hpp"
#include "entstream/nn.hpp"
#include "entstream/rng.hpp"
#include "entstream/tensor.hpp"

namespace {

using entstream::grad_check;
using entstream::Rng;
using entstream::TensorT;
using DTensor = TensorT<double>;

constexpr int kTrials = 20;
constexpr double kTol = 1e-3;

DTensor rand_tensor(std::vector<int> shape, Rng& rng, bool rg = true,
                    double lo = -1, double hi = 1) {
  auto t = DTensor::zeros(std::move(shape), rg);
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Keeps values away from the ReLU kink so finite differences are valid.
void shift_from_zero(DTensor& t, double margin = 0.05) {
  for (auto& v : t.data())
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
}

TEST(GradCheckOps, Add) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(100 + static_cast<std::uint64_t>(trial));
    auto a = rand_tensor({3, 4}, rng);
    auto b = rand_tensor({3, 4}, rng);
    auto c = rand_tensor({3, 4}, rng, false);
    auto fn = [&] { return sum_all(mul(add(a, b), c)); };
    EXPECT_LT(grad_check<double>(fn, {a, b}), kTol);
  }
}

TEST(GradCheckOps, SubMulScale) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(200 + static_cast<std::uint64_t>(trial));
    auto a = rand_tensor({2, 5}, rng);
    auto b = rand_tensor({2, 5}, rng);
    auto fn = [&] { return sum_all(scale(mul(sub(a, b), a), 1.7)); };
    EXPECT_LT(grad_check<double>(fn, {a, b}), kTol);
  }
}

TEST(GradCheckOps, ReluAtGenericPoints) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(300 + static_cast<std::uint64_t>(trial));
    auto a = rand_tensor({4, 4}, rng);
    shift_from_zero(a);
    auto w = rand_tensor({4, 4}, rng, false);
    auto fn = [&] { return sum_all(mul(relu(a), w)); };
    EXPECT_LT(grad_check<double>(fn, {a}), kTol);
  }
}

TEST(GradCheckOps, SigmoidTanh) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(400 + static_cast<std::uint64_t>(trial));
    auto a = rand_tensor({3, 3}, rng, true, -2, 2);
    auto fn = [&] { return sum_all(mul(sigmoid(a), tanh_t(a))); };
    EXPECT_LT(grad_check<double>(fn, {a}), kTol);
  }
}

TEST(GradCheckOps, ReshapeBroadcastConcat) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(500 + static_cast<std::uint64_t>(trial));
    auto a = rand_tensor({2, 6}, rng);
    auto v = rand_tensor({4}, rng);
    auto w = rand_tensor({2, 10}, rng, false);
    auto fn = [&] {
      auto left = reshape(a, {2, 3, 2});
      auto joined = concat_cols(reshape(left, {2, 6}),
                                scale(broadcast_row(v, 2), 0.5));
      return sum_all(mul(joined, w));
    };
    EXPECT_LT(grad_check<double>(fn, {a, v}), kTol);
  }
}

TEST(GradCheckOps, MatmulLinearAddRowvec) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(600 + static_cast<std::uint64_t>(trial));
    auto x = rand_tensor({3, 4}, rng);
    auto w = rand_tensor({4, 2}, rng);
    auto b = rand_tensor({2}, rng);
    auto c = rand_tensor({3, 2}, rng, false);
    auto fn = [&] { return sum_all(mul(linear(x, w, b), c)); };
    EXPECT_LT(grad_check<double>(fn, {x, w, b}), kTol);
  }
}

TEST(GradCheckOps, Reductions) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(700 + static_cast<std::uint64_t>(trial));
    auto a = rand_tensor({5, 2}, rng);
    auto fn = [&] { return add(sum_all(mul(a, a)), mean_all(a)); };
    EXPECT_LT(grad_check<double>(fn, {a}), kTol);
  }
}

TEST(GradCheckOps, Softmax) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(800 + static_cast<std::uint64_t>(trial));
    auto a = rand_tensor({3, 6}, rng, true, -3, 3);
    auto c = rand_tensor({3, 6}, rng, false);
    auto fn = [&] { return sum_all(mul(softmax(a), c)); };
    EXPECT_LT(grad_check<double>(fn, {a}), kTol);
  }
}

TEST(GradCheckOps, CrossEntropy) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(900 + static_cast<std::uint64_t>(trial));
    auto logits = rand_tensor({4, 10}, rng, true, -2, 2);
    std::vector<int> targets;
    for (int i = 0; i < 4; ++i)
      targets.push_back(static_cast<int>(rng.uniform_int(10)));
    auto fn = [&] { return cross_entropy(logits, targets); };
    EXPECT_LT(grad_check<double>(fn, {logits}), kTol);
  }
}

TEST(GradCheckOps, Conv2d) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1000 + static_cast<std::uint64_t>(trial));
    auto x = rand_tensor({2, 2, 7, 7}, rng);
    auto w = rand_tensor({3, 2, 3, 3}, rng);
    auto b = rand_tensor({3}, rng);
    auto c = rand_tensor({2, 3, 4, 4}, rng, false);
    auto fn = [&] {
      return sum_all(mul(entstream::conv2d(x, w, b, 2, 1), c));
    };
    EXPECT_LT(grad_check<double>(fn, {x, w, b}), kTol);
  }
}

TEST(GradCheckOps, BatchNormTrainAndEval) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1100 + static_cast<std::uint64_t>(trial));
    auto x = rand_tensor({3, 2, 2, 2}, rng, true, -2, 2);
    auto gamma = rand_tensor({2}, rng, true, 0.5, 1.5);
    auto beta = rand_tensor({2}, rng);
    auto c = rand_tensor({3, 2, 2, 2}, rng, false);
    const bool training = trial % 2 == 0;
    auto rmean = DTensor::zeros({2});
    auto rvar = DTensor::full({2}, 1.0);
    if (!training) {  // give eval mode nontrivial stats
      for (auto& v : rmean.data()) v = rng.uniform() - 0.5;
      for (auto& v : rvar.data()) v = 0.5 + rng.uniform();
    }
    auto fn = [&] {
      return sum_all(mul(
          entstream::batch_norm(x, gamma, beta, rmean, rvar, training), c));
    };
    EXPECT_LT(grad_check<double>(fn, {x, gamma, beta}), kTol);
  }
}

TEST(GradCheckOps, DropoutWithFrozenMask) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1200 + static_cast<std::uint64_t>(trial));
    auto x = rand_tensor({4, 5}, rng);
    auto c = rand_tensor({4, 5}, rng, false);
    const std::uint64_t mask_seed = 77 + static_cast<std::uint64_t>(trial);
    auto fn = [&] {
      Rng mask_rng(mask_seed);  // same mask on every probe
      return sum_all(mul(entstream::dropout(x, 0.3, true, mask_rng), c));
    };
    EXPECT_LT(grad_check<double>(fn, {x}), kTol);
  }
}

TEST(GradCheckOps, GruCell) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1300 + static_cast<std::uint64_t>(trial));
    auto x = rand_tensor({2, 3}, rng);
    auto h = rand_tensor({2, 4}, rng);
    entstream::GruParams<double> p;
    p.wr = rand_tensor({7, 4}, rng, true, -0.5, 0.5);
    p.br = rand_tensor({4}, rng);
    p.wz = rand_tensor({7, 4}, rng, true, -0.5, 0.5);
    p.bz = rand_tensor({4}, rng);
    p.wh = rand_tensor({7, 4}, rng, true, -0.5, 0.5);
    p.bh = rand_tensor({4}, rng);
    auto c = rand_tensor({2, 4}, rng, false);
    auto fn = [&] { return sum_all(mul(entstream::gru_cell(x, h, p), c)); };
    EXPECT_LT(
        grad_check<double>(fn, {x, h, p.wr, p.br, p.wz, p.bz, p.wh, p.bh}),
        kTol);
  }
}

TEST(GradCheckOps, AttentionScoresAndCombine) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1400 + static_cast<std::uint64_t>(trial));
    auto q = rand_tensor({2, 4}, rng);
    auto keys = rand_tensor({2, 5, 4}, rng);
    auto values = rand_tensor({2, 5, 3}, rng);
    auto c = rand_tensor({2, 3}, rng, false);
    auto fn = [&] {
      auto w = softmax(scale(entstream::attn_scores(q, keys), 0.5));
      return sum_all(mul(entstream::attn_combine(w, values), c));
    };
    EXPECT_LT(grad_check<double>(fn, {q, keys, values}), kTol);
  }
}

TEST(GradCheckOps, HardOneHotSurrogate) {
  // The straight-through surrogate softmax((l+g)/T) is smooth, so finite
  // differences apply directly; the backward pass is shared with the
  // one-hot forward.
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1500 + static_cast<std::uint64_t>(trial));
    auto logits = rand_tensor({2, 6}, rng, true, -2, 2);
    Rng noise_rng(9000 + static_cast<std::uint64_t>(trial));
    auto noise = entstream::sample_gumbel<double>(noise_rng, 12);
    auto c = rand_tensor({2, 6}, rng, false);
    auto fn = [&] {
      return sum_all(
          mul(entstream::hard_one_hot(logits, noise, 1.0, true), c));
    };
    EXPECT_LT(grad_check<double>(fn, {logits}), kTol);
  }
}

TEST(GradCheckOps, PatchSlice) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1600 + static_cast<std::uint64_t>(trial));
    auto maps = rand_tensor({2, 6, 3, 3}, rng);
    auto c = rand_tensor({2, 9, 6}, rng, false);  // 4 channels + 2 coords
    auto fn = [&] {
      return sum_all(mul(entstream::patch_slice(maps, 1, 5), c));
    };
    EXPECT_LT(grad_check<double>(fn, {maps}), kTol);
  }
}

TEST(GradCheckOps, RnPairsAndSumGroups) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1700 + static_cast<std::uint64_t>(trial));
    auto patches = rand_tensor({2, 4, 3}, rng);
    auto question = rand_tensor({2, 11}, rng);
    auto c = rand_tensor({2, 17}, rng, false);  // 3+3+11
    auto fn = [&] {
      auto pairs = entstream::rn_pairs(patches, question);  // [2*16, 17]
      auto summed = entstream::sum_groups(pairs, 16);       // [2, 17]
      return sum_all(mul(summed, c));
    };
    EXPECT_LT(grad_check<double>(fn, {patches, question}), kTol);
  }
}

}  // namespace
