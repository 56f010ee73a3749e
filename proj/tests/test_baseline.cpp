#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gamseg/baseline.hpp"
#include "gamseg/error.hpp"
#include "gamseg/synth.hpp"
#include "test_util.hpp"

using namespace gamseg;

namespace {

constexpr double kFps = 22050.0 / 512.0;

// Block-diagonal SSM: 1 inside a block, 0 across blocks.
SelfSimilarityMatrix block_ssm(const std::vector<std::size_t>& block_sizes) {
  std::size_t n = 0;
  for (auto b : block_sizes) n += b;
  std::vector<std::size_t> label(n);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < block_sizes.size(); ++k) {
    for (std::size_t i = 0; i < block_sizes[k]; ++i) label[pos++] = k;
  }
  SelfSimilarityMatrix ssm{Matrix(n, n), kFps};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) ssm.values(i, j) = label[i] == label[j] ? 1.0 : 0.0;
  }
  return ssm;
}

}  // namespace

TEST(Ssm, IdenticalColumnsGiveOnes) {
  Matrix m(3, 5);
  for (std::size_t c = 0; c < 5; ++c) {
    m(0, c) = 1.0;
    m(1, c) = -2.0;
    m(2, c) = 0.5;
  }
  const auto ssm = compute_ssm(m, kFps);
  for (double v : ssm.values.data) EXPECT_NEAR(v, 1.0, 1e-12);
  EXPECT_EQ(ssm.frame_rate, kFps);
}

TEST(Ssm, OrthogonalColumnsGiveIdentity) {
  Matrix m(4, 4);
  for (std::size_t i = 0; i < 4; ++i) m(i, i) = 2.0 + static_cast<double>(i);
  const auto ssm = compute_ssm(m, kFps);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(ssm.values(i, j), i == j ? 1.0 : 0.0, 1e-12);
  }
}

TEST(Ssm, HandCosine) {
  Matrix m(2, 2);
  m(0, 0) = 1.0;
  m(1, 0) = 0.0;
  m(0, 1) = 1.0;
  m(1, 1) = 1.0;
  const auto ssm = compute_ssm(m, kFps);
  EXPECT_NEAR(ssm.values(0, 1), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(ssm.values(1, 0), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Ssm, ZeroColumnsAndInvariants) {
  Matrix m(3, 6);
  Rng rng(3);
  for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
  for (std::size_t r = 0; r < 3; ++r) m(r, 2) = 0.0;
  const auto ssm = compute_ssm(m, kFps);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(ssm.values(i, i), 1.0, 1e-12);
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(ssm.values(i, j), ssm.values(j, i), 1e-12);
      EXPECT_LE(std::abs(ssm.values(i, j)), 1.0 + 1e-12);
      if (i != j && (i == 2 || j == 2)) {
        EXPECT_EQ(ssm.values(i, j), 0.0);
      }
    }
  }
}

TEST(Ssm, TooLongRejected) {
  EXPECT_THROW(compute_ssm(Matrix(1, kMaxSsmFrames + 1), kFps), SequenceTooLong);
}

TEST(Novelty, TwoBlocksPeakAtBoundary) {
  const auto novelty = foote_novelty(block_ssm({100, 100}), 20);
  ASSERT_EQ(novelty.size(), 200u);
  const auto argmax = static_cast<std::size_t>(
      std::max_element(novelty.begin(), novelty.end()) - novelty.begin());
  EXPECT_LE(std::abs(static_cast<int>(argmax) - 100), 1);
  EXPECT_DOUBLE_EQ(*std::max_element(novelty.begin(), novelty.end()), 1.0);
  for (double v : novelty) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Novelty, ConstantSsmIsZero) {
  SelfSimilarityMatrix ssm{Matrix(60, 60), kFps};
  std::fill(ssm.values.data.begin(), ssm.values.data.end(), 1.0);
  for (double v : foote_novelty(ssm, 10)) EXPECT_EQ(v, 0.0);
}

TEST(Novelty, KernelExactlyFits) {
  const auto novelty = foote_novelty(block_ssm({10, 10}), 10);
  ASSERT_EQ(novelty.size(), 20u);
  for (std::size_t i = 0; i < novelty.size(); ++i) {
    if (i != 10) {
      EXPECT_EQ(novelty[i], 0.0) << i;
    }
  }
}

TEST(Novelty, KernelTooLarge) {
  EXPECT_THROW(foote_novelty(block_ssm({10, 9}), 10), KernelTooLarge);
  EXPECT_THROW(foote_novelty(block_ssm({10, 10}), 0), KernelTooLarge);
}

TEST(Novelty, KernelShape) {
  const Matrix k = checkerboard_kernel(4);
  ASSERT_EQ(k.rows, 8u);
  for (std::size_t a = 0; a < 8; ++a) {
    for (std::size_t b = 0; b < 8; ++b) {
      EXPECT_EQ(k(a, b) > 0.0, (a < 4) == (b < 4));
      EXPECT_DOUBLE_EQ(k(a, b), k(7 - a, 7 - b));
      EXPECT_DOUBLE_EQ(k(a, b), k(b, a));
    }
  }
}

TEST(Novelty, ReversalSymmetry) {
  Matrix m(5, 150);
  Rng rng(8);
  for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
  Matrix rev(5, 150);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 150; ++c) rev(r, c) = m(r, 149 - c);
  }
  const std::size_t L = 12;
  const auto fwd = foote_novelty(compute_ssm(m, kFps), L);
  const auto bwd = foote_novelty(compute_ssm(rev, kFps), L);
  // Kernel position i covers frames [i − L, i + L); its mirror image is T − i.
  for (std::size_t i = L; i <= 150 - L; ++i) EXPECT_NEAR(bwd[i], fwd[150 - i], 1e-9) << i;
}

TEST(Novelty, EveryBlockBoundaryAmongTopPeaks) {
  const std::vector<std::vector<std::size_t>> layouts{{80, 120}, {90, 110, 70}, {60, 100, 80, 90}};
  for (const auto& sizes : layouts) {
    const auto novelty = foote_novelty(block_ssm(sizes), 24);
    auto peaks = local_maxima(novelty, 8);
    std::stable_sort(peaks.begin(), peaks.end(),
                     [&](std::size_t a, std::size_t b) { return novelty[a] > novelty[b]; });
    peaks.resize(std::min(peaks.size(), sizes.size()));
    std::size_t edge = 0;
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
      edge += sizes[k];
      const bool found = std::any_of(peaks.begin(), peaks.end(), [&](std::size_t p) {
        return std::abs(static_cast<long>(p) - static_cast<long>(edge)) <= 1;
      });
      EXPECT_TRUE(found) << "boundary " << edge << " with " << sizes.size() << " blocks";
    }
  }
}

TEST(Baseline, ThreeSectionSynthTrack) {
  SynthSpec spec;
  spec.seed = 4;
  spec.sections = {{15.0, {Waveform::Sine, 220.0, 1}, 0.0, 0.5},
                   {15.0, {Waveform::Saw, 330.0, 8}, 120.0, 0.5},
                   {15.0, {Waveform::Square, 150.0, 6}, 0.0, 0.5}};
  const auto track = generate_synthetic_track(spec);
  const auto result = baseline_segment(extract_features(track.clip));
  EXPECT_EQ(result.novelty.size(), frame_count(track.clip.size(), 512));
  const auto score = evaluate_track(result.prediction.times, track.annotation.interior_times(), 3.0);
  EXPECT_EQ(score.matches.size(), 2u);
}

TEST(Baseline, SingleTextureRunsAndIsSorted) {
  const auto result = baseline_segment(extract_features(test::sine(330.0, 20.0)));
  EXPECT_TRUE(std::is_sorted(result.prediction.times.begin(), result.prediction.times.end()));
}

TEST(Baseline, WhiteNoiseSortedUnique) {
  const auto result = baseline_segment(extract_features(test::noise(22050 * 20, 6)));
  const auto& t = result.prediction.times;
  EXPECT_TRUE(std::is_sorted(t.begin(), t.end()));
  EXPECT_EQ(std::adjacent_find(t.begin(), t.end()), t.end());
  for (double p : result.prediction.probabilities) EXPECT_GE(p, 0.3);
}
