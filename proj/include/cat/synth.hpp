#ifndef CAT_SYNTH_HPP
#define CAT_SYNTH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cat/bbox.hpp"
#include "cat/challenge.hpp"
#include "cat/tensor.hpp"

namespace cat {

// Inclusive frame range carrying a set of challenge tags.
struct ChallengeWindow {
  int start = 0;
  int end = 0;
  ChallengeSet tags;
};

// Deterministic description of a two-modality sequence. Spec files are flat
// key=value text; `challenge = <start>:<end> TAG [TAG...]` may repeat.
struct SequenceSpec {
  std::uint64_t seed = 0;
  int length = 100;
  int width = 160, height = 120;
  std::string shape = "rectangle";  // or "ellipse"
  double target_w = 24, target_h = 24;
  double speed = 2.0;         // base drift, px/frame
  double noise_sigma = 0.02;  // Gaussian pixel noise, both modalities
  std::vector<ChallengeWindow> schedule;

  ChallengeSet tags_at(int frame) const;
  void validate() const;

  static SequenceSpec load(const std::string& path);
};

struct FramePair {
  Tensor<float> rgb;      // [3,H,W] in [0,1]
  Tensor<float> thermal;  // [1,H,W] in [0,1]
  BBox gt_rgb, gt_t;
  ChallengeSet challenges;
};

// Lazily loaded on-disk sequence: rgb/%06d.ppm, t/%06d.pgm, gt_rgb.txt,
// gt_t.txt (one "x,y,w,h" line per frame), challenges.txt (space-separated
// tags per line, possibly empty).
struct Sequence {
  std::string dir;
  int length = 0;
  std::vector<BBox> gt_rgb, gt_t;
  std::vector<ChallengeSet> challenges;

  FramePair frame(int i) const;
};

// Renders the sequence to `out_dir`. Pure function of the spec: the same spec
// always produces byte-identical files.
void generate(const SequenceSpec& spec, const std::string& out_dir);

Sequence load_sequence(const std::string& dir);

// Indices of frames tagged with challenge c.
std::vector<int> challenge_subset(const Sequence& seq, ChallengeLabel c);

}  // namespace cat

#endif
