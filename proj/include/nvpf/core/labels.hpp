#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "nvpf/core/errors.hpp"

namespace nvpf {

// Group / frame / video level label space. The enumerator order is the
// tie-breaking order used by every argmax in the library.
enum class GroupClass : int { positive = 0, negative = 1, neutral = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<GroupClass, kNumClasses> kAllClasses = {
    GroupClass::positive, GroupClass::negative, GroupClass::neutral};

inline constexpr std::size_t index_of(GroupClass c) { return static_cast<std::size_t>(c); }

inline GroupClass class_from_index(std::size_t i) {
  if (i >= kNumClasses) throw DomainError("unknown class index " + std::to_string(i));
  return static_cast<GroupClass>(i);
}

inline std::string_view to_string(GroupClass c) {
  switch (c) {
    case GroupClass::positive: return "positive";
    case GroupClass::negative: return "negative";
    case GroupClass::neutral: return "neutral";
  }
  return "?";
}

inline GroupClass parse_group_class(std::string_view s) {
  for (auto c : kAllClasses)
    if (to_string(c) == s) return c;
  throw DomainError("unknown group class '" + std::string(s) + "'");
}

// Face-level expression categories, in the order of the AU table.
enum class FaceEmotion : int { happy, sad, fearful, angry, surprised, disgusted, awed, neutral };

inline constexpr std::size_t kNumFaceEmotions = 8;
inline constexpr std::array<FaceEmotion, kNumFaceEmotions> kAllFaceEmotions = {
    FaceEmotion::happy,     FaceEmotion::sad,       FaceEmotion::fearful, FaceEmotion::angry,
    FaceEmotion::surprised, FaceEmotion::disgusted, FaceEmotion::awed,    FaceEmotion::neutral};

inline std::string_view to_string(FaceEmotion e) {
  switch (e) {
    case FaceEmotion::happy: return "Happy";
    case FaceEmotion::sad: return "Sad";
    case FaceEmotion::fearful: return "Fearful";
    case FaceEmotion::angry: return "Angry";
    case FaceEmotion::surprised: return "Surprised";
    case FaceEmotion::disgusted: return "Disgusted";
    case FaceEmotion::awed: return "Awed";
    case FaceEmotion::neutral: return "Neutral";
  }
  return "?";
}

inline FaceEmotion parse_face_emotion(std::string_view s) {
  for (auto e : kAllFaceEmotions)
    if (to_string(e) == s) return e;
  throw DomainError("unknown face emotion '" + std::string(s) + "'");
}

inline GroupClass valence_of(FaceEmotion e) {
  switch (e) {
    case FaceEmotion::happy:
    case FaceEmotion::surprised:
    case FaceEmotion::awed: return GroupClass::positive;
    case FaceEmotion::neutral: return GroupClass::neutral;
    default: return GroupClass::negative;
  }
}

// First index of the maximum; earlier classes win ties.
template <typename Range>
std::size_t argmax_index(const Range& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < std::size(values); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace nvpf
