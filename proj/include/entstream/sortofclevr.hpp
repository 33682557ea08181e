#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "entstream/errors.hpp"
#include "entstream/rng.hpp"

namespace entstream::soc {

// Scene scheme: 75x75 RGB canvas, six objects (one per color), half-size 5.
inline constexpr int kImageSize = 75;
inline constexpr int kChannels = 3;
inline constexpr int kNumObjects = 6;
inline constexpr int kNumColors = 6;
inline constexpr int kHalfSize = 5;
// Centers keep the full +-kHalfSize extent inside the canvas (circles reach
// c + kHalfSize inclusive, so the max center is 69).
inline constexpr int kMinCenter = kHalfSize;
inline constexpr int kMaxCenter = kImageSize - kHalfSize - 1;
inline constexpr int kQuestionDims = 11;
inline constexpr int kAnswerClasses = 10;
inline constexpr std::size_t kImageFloats =
    static_cast<std::size_t>(kChannels) * kImageSize * kImageSize;

enum class Shape : std::uint8_t { rectangle = 0, circle = 1 };
enum class Family : std::uint8_t { nonrel = 0, birel = 1 };

// Non-relational subtypes: 0 shape, 1 left-of-center, 2 below-center.
// Binary-relational subtypes: 0 closest shape, 1 furthest shape, 2 same-shape
// count.
inline constexpr int kNumSubtypes = 3;

inline const char* color_name(int c) {
  static constexpr const char* names[kNumColors] = {"red",    "green", "blue",
                                                    "orange", "gray",  "yellow"};
  if (c < 0 || c >= kNumColors)
    throw IndexError("color index " + std::to_string(c) + " out of range");
  return names[c];
}

inline std::array<float, 3> color_rgb(int c) {
  static constexpr float table[kNumColors][3] = {
      {1.0f, 0.0f, 0.0f},          // red
      {0.0f, 1.0f, 0.0f},          // green
      {0.0f, 0.0f, 1.0f},          // blue
      {1.0f, 156.0f / 255, 0.0f},  // orange
      {0.5f, 0.5f, 0.5f},          // gray
      {1.0f, 1.0f, 0.0f},          // yellow
  };
  if (c < 0 || c >= kNumColors)
    throw IndexError("color index " + std::to_string(c) + " out of range");
  return {table[c][0], table[c][1], table[c][2]};
}

inline constexpr float kBackground = 0.1f;

struct SceneObject {
  int color = 0;  // 0..5; doubles as object index within the scene
  Shape shape = Shape::rectangle;
  int cx = 0, cy = 0;  // pixel center
};

struct Scene {
  std::array<SceneObject, kNumObjects> objects;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Scene generation: one object per color, shape by fair coin, centers by
// rejection sampling. Chebyshev separation >= diameter + 1 keeps bounding
// boxes disjoint and center distances strictly above the diameter.

inline constexpr int kMinSeparation = 2 * kHalfSize + 1;
inline constexpr int kPlacementRetries = 1000;

inline Scene generate_scene(Rng& rng) {
  Scene scene;
  scene.seed = 0;
  const int lo = kMinCenter;
  const int span = kMaxCenter - kMinCenter + 1;
  for (int i = 0; i < kNumObjects; ++i) {
    SceneObject obj;
    obj.color = i;
    obj.shape = rng.uniform_int(2) == 0 ? Shape::rectangle : Shape::circle;
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
      obj.cx = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span)));
      obj.cy = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span)));
      bool ok = true;
      for (int j = 0; j < i; ++j) {
        const int dx = std::abs(obj.cx - scene.objects[static_cast<std::size_t>(j)].cx);
        const int dy = std::abs(obj.cy - scene.objects[static_cast<std::size_t>(j)].cy);
        if (std::max(dx, dy) < kMinSeparation) {
          ok = false;
          break;
        }
      }
      if (ok) {
        placed = true;
        break;
      }
    }
    if (!placed)
      throw GenerationError("could not place object " + std::to_string(i) +
                            " after " + std::to_string(kPlacementRetries) +
                            " attempts");
    scene.objects[static_cast<std::size_t>(i)] = obj;
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Rendering: channel-major [3][75][75] floats in [0,1].

inline std::vector<float> render(const Scene& scene) {
  std::vector<float> img(kImageFloats, kBackground);
  auto put = [&img](int x, int y, const std::array<float, 3>& rgb) {
    for (int c = 0; c < kChannels; ++c)
      img[(static_cast<std::size_t>(c) * kImageSize + static_cast<std::size_t>(y)) *
              kImageSize +
          static_cast<std::size_t>(x)] = rgb[static_cast<std::size_t>(c)];
  };
  for (const auto& obj : scene.objects) {
    const auto rgb = color_rgb(obj.color);
    if (obj.shape == Shape::rectangle) {
      // Half-open square [c-5, c+5): exactly 10x10 = 100 pixels.
      for (int y = obj.cy - kHalfSize; y < obj.cy + kHalfSize; ++y)
        for (int x = obj.cx - kHalfSize; x < obj.cx + kHalfSize; ++x)
          put(x, y, rgb);
    } else {
      // Disc over pixel centers: dx^2 + dy^2 <= r^2 (81 pixels for r = 5).
      for (int dy = -kHalfSize; dy <= kHalfSize; ++dy)
        for (int dx = -kHalfSize; dx <= kHalfSize; ++dx)
          if (dx * dx + dy * dy <= kHalfSize * kHalfSize)
            put(obj.cx + dx, obj.cy + dy, rgb);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Ground-truth predicates (exhaustive over the six objects, strict
// comparisons, distance ties broken by lowest object index).

inline long sq_dist(const SceneObject& a, const SceneObject& b) {
  const long dx = a.cx - b.cx, dy = a.cy - b.cy;
  return dx * dx + dy * dy;
}

inline int closest_index(const Scene& scene, int i) {
  int best = -1;
  long best_d = 0;
  for (int j = 0; j < kNumObjects; ++j) {
    if (j == i) continue;
    const long d = sq_dist(scene.objects[static_cast<std::size_t>(i)],
                           scene.objects[static_cast<std::size_t>(j)]);
    if (best < 0 || d < best_d) {
      best = j;
      best_d = d;
    }
  }
  return best;
}

inline int furthest_index(const Scene& scene, int i) {
  int best = -1;
  long best_d = 0;
  for (int j = 0; j < kNumObjects; ++j) {
    if (j == i) continue;
    const long d = sq_dist(scene.objects[static_cast<std::size_t>(i)],
                           scene.objects[static_cast<std::size_t>(j)]);
    if (best < 0 || d > best_d) {
      best = j;
      best_d = d;
    }
  }
  return best;
}

inline int same_shape_count(const Scene& scene, int i) {
  int count = 0;
  for (const auto& obj : scene.objects)
    if (obj.shape == scene.objects[static_cast<std::size_t>(i)].shape) ++count;
  return count;  // includes the query object itself, so always in [1,6]
}

// ---------------------------------------------------------------------------
// Answer vocabulary: [yes, no, rectangle, circle, 1, 2, 3, 4, 5, 6].

inline int answer_index(const std::string& token) {
  static const std::array<const char*, kAnswerClasses> vocab = {
      "yes", "no", "rectangle", "circle", "1", "2", "3", "4", "5", "6"};
  for (int i = 0; i < kAnswerClasses; ++i)
    if (token == vocab[static_cast<std::size_t>(i)]) return i;
  throw VocabularyError("unknown answer token '" + token + "'");
}

inline const char* answer_name(int index) {
  static const std::array<const char*, kAnswerClasses> vocab = {
      "yes", "no", "rectangle", "circle", "1", "2", "3", "4", "5", "6"};
  if (index < 0 || index >= kAnswerClasses)
    throw IndexError("answer index " + std::to_string(index) + " out of range");
  return vocab[static_cast<std::size_t>(index)];
}

inline int shape_answer(Shape s) {
  return s == Shape::rectangle ? 2 : 3;
}

inline int yes_no_answer(bool yes) { return yes ? 0 : 1; }

inline int count_answer(int count) {
  if (count < 1 || count > kNumObjects)
    throw VocabularyError("count answer " + std::to_string(count) +
                          " outside [1,6]");
  return 3 + count;
}

/// Answer for (color, family, subtype) against a scene; exhaustive ground
/// truth, image midline at 37.5 with strict comparisons.
inline int answer_for(const Scene& scene, int color, Family family,
                      int subtype) {
  const auto& obj = scene.objects[static_cast<std::size_t>(color)];
  const double mid = kImageSize / 2.0;
  if (family == Family::nonrel) {
    switch (subtype) {
      case 0: return shape_answer(obj.shape);
      case 1: return yes_no_answer(obj.cx < mid);
      case 2: return yes_no_answer(obj.cy > mid);
      default: break;
    }
  } else {
    switch (subtype) {
      case 0:
        return shape_answer(
            scene.objects[static_cast<std::size_t>(closest_index(scene, color))]
                .shape);
      case 1:
        return shape_answer(
            scene.objects[static_cast<std::size_t>(furthest_index(scene, color))]
                .shape);
      case 2: return count_answer(same_shape_count(scene, color));
      default: break;
    }
  }
  throw IndexError("question subtype " + std::to_string(subtype) +
                   " out of range");
}

// ---------------------------------------------------------------------------
// Question encoding: [6 color one-hot | 2 family one-hot | 3 subtype one-hot].

inline std::array<float, kQuestionDims> encode_question(int color,
                                                        Family family,
                                                        int subtype) {
  if (color < 0 || color >= kNumColors)
    throw IndexError("color index " + std::to_string(color) + " out of range");
  if (subtype < 0 || subtype >= kNumSubtypes)
    throw IndexError("subtype index " + std::to_string(subtype) +
                     " out of range");
  std::array<float, kQuestionDims> q{};
  q[static_cast<std::size_t>(color)] = 1.0f;
  q[family == Family::nonrel ? 6 : 7] = 1.0f;
  q[static_cast<std::size_t>(8 + subtype)] = 1.0f;
  return q;
}

struct QuestionSpec {
  int color = 0;
  Family family = Family::nonrel;
  int subtype = 0;
};

inline QuestionSpec decode_question(const std::array<float, kQuestionDims>& q) {
  QuestionSpec spec;
  int colors = 0, families = 0, subtypes = 0;
  for (int i = 0; i < kQuestionDims; ++i) {
    const float v = q[static_cast<std::size_t>(i)];
    if (v != 0.0f && v != 1.0f)
      throw FormatError("question vector entry " + std::to_string(i) +
                        " is not binary");
    if (v != 1.0f) continue;
    if (i < 6) {
      spec.color = i;
      ++colors;
    } else if (i < 8) {
      spec.family = i == 6 ? Family::nonrel : Family::birel;
      ++families;
    } else {
      spec.subtype = i - 8;
      ++subtypes;
    }
  }
  if (colors != 1 || families != 1 || subtypes != 1)
    throw FormatError("question vector must have exactly one color, family, "
                      "and subtype bit set");
  return spec;
}

// ---------------------------------------------------------------------------
// Question/answer sample emission.

struct QaSample {
  std::vector<float> image;  // [3][75][75]
  std::array<float, kQuestionDims> question{};
  std::uint8_t answer = 0;    // class index into the answer vocabulary
  std::uint8_t category = 0;  // Family as u8: 0 nonrel, 1 birel
};

/// Renders the scene once and emits n_per_family questions per family with
/// uniformly random (color, subtype); non-relational questions come first.
inline std::vector<QaSample> generate_questions(const Scene& scene, Rng& rng,
                                                int n_per_family) {
  const auto image = render(scene);
  std::vector<QaSample> samples;
  samples.reserve(static_cast<std::size_t>(n_per_family) * 2);
  for (Family family : {Family::nonrel, Family::birel}) {
    for (int k = 0; k < n_per_family; ++k) {
      QaSample s;
      s.image = image;
      const int color = static_cast<int>(rng.uniform_int(kNumColors));
      const int subtype = static_cast<int>(rng.uniform_int(kNumSubtypes));
      s.question = encode_question(color, family, subtype);
      s.answer = static_cast<std::uint8_t>(answer_for(scene, color, family, subtype));
      s.category = static_cast<std::uint8_t>(family);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

}  // namespace entstream::soc
