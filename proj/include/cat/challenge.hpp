#ifndef CAT_CHALLENGE_HPP
#define CAT_CHALLENGE_HPP

#include <array>
#include <set>
#include <stdexcept>
#include <string>

namespace cat {

// The five annotated challenge attributes. FM/SV/OCC affect both modalities
// alike (modality-shared); IV hurts RGB, TC hurts thermal (modality-specific).
enum class ChallengeLabel { IV, TC, FM, SV, OCC };

// Aggregation order of the five branch outputs within a layer.
inline constexpr std::array<ChallengeLabel, 5> kAllChallenges{
    ChallengeLabel::FM, ChallengeLabel::SV, ChallengeLabel::OCC,
    ChallengeLabel::IV, ChallengeLabel::TC};

inline constexpr std::array<ChallengeLabel, 3> kSharedChallenges{
    ChallengeLabel::FM, ChallengeLabel::SV, ChallengeLabel::OCC};

inline constexpr std::array<ChallengeLabel, 2> kSpecificChallenges{
    ChallengeLabel::IV, ChallengeLabel::TC};

inline bool is_shared(ChallengeLabel c) {
  return c == ChallengeLabel::FM || c == ChallengeLabel::SV || c == ChallengeLabel::OCC;
}
inline bool is_specific(ChallengeLabel c) { return !is_shared(c); }

inline const char* to_string(ChallengeLabel c) {
  switch (c) {
    case ChallengeLabel::IV: return "IV";
    case ChallengeLabel::TC: return "TC";
    case ChallengeLabel::FM: return "FM";
    case ChallengeLabel::SV: return "SV";
    case ChallengeLabel::OCC: return "OCC";
  }
  return "?";
}

inline ChallengeLabel parse_challenge(const std::string& s) {
  if (s == "IV") return ChallengeLabel::IV;
  if (s == "TC") return ChallengeLabel::TC;
  if (s == "FM") return ChallengeLabel::FM;
  if (s == "SV") return ChallengeLabel::SV;
  if (s == "OCC") return ChallengeLabel::OCC;
  throw std::invalid_argument("unknown challenge tag '" + s + "'");
}

using ChallengeSet = std::set<ChallengeLabel>;

// Network variants for the ablation toggles.
//   full        - gated guidance (the complete model)
//   no_gate     - guidance without the sigmoid gate        (CAT-NS)
//   direct_add  - adds the other modality's features as-is (CAT-NG)
//   no_guidance - specific branches without any guidance   (CAT-NA)
//   film        - channel-wise affine conditioning         (CAT-FiLM)
//   baseline    - all challenge branches off
enum class VariantMode { full, no_gate, direct_add, no_guidance, film, baseline };

struct VariantFlags {
  VariantMode mode = VariantMode::full;
  std::array<bool, 3> active_layers{true, true, true};

  bool layer_active(int layer) const {
    return mode != VariantMode::baseline && active_layers[layer];
  }
};

inline const char* to_string(VariantMode m) {
  switch (m) {
    case VariantMode::full: return "full";
    case VariantMode::no_gate: return "no_gate";
    case VariantMode::direct_add: return "direct_add";
    case VariantMode::no_guidance: return "no_guidance";
    case VariantMode::film: return "film";
    case VariantMode::baseline: return "baseline";
  }
  return "?";
}

inline VariantMode parse_variant(const std::string& s) {
  if (s == "full") return VariantMode::full;
  if (s == "no_gate") return VariantMode::no_gate;
  if (s == "direct_add") return VariantMode::direct_add;
  if (s == "no_guidance") return VariantMode::no_guidance;
  if (s == "film") return VariantMode::film;
  if (s == "baseline") return VariantMode::baseline;
  throw std::invalid_argument("unknown variant mode '" + s + "'");
}

}  // namespace cat

#endif
