#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace ser {

/// Codes 0..7; also the confusion-matrix axis order.
enum class EmotionLabel : int {
  neutral = 0,
  calm = 1,
  happy = 2,
  sad = 3,
  angry = 4,
  fearful = 5,
  disgust = 6,
  surprised = 7,
};

inline constexpr std::size_t kNumEmotions = 8;

inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "neutral", "calm", "happy", "sad", "angry", "fearful", "disgust", "surprised"};

constexpr int code(EmotionLabel l) { return static_cast<int>(l); }
constexpr std::string_view name(EmotionLabel l) { return kEmotionNames[static_cast<std::size_t>(l)]; }

inline std::optional<EmotionLabel> label_from_code(int c) {
  if (c < 0 || c >= static_cast<int>(kNumEmotions)) return std::nullopt;
  return static_cast<EmotionLabel>(c);
}

inline std::optional<EmotionLabel> label_from_name(std::string_view s) {
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    if (kEmotionNames[i] == s) return static_cast<EmotionLabel>(i);
  }
  return std::nullopt;
}

}  // namespace ser
