#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bssard/rng.hpp"

namespace bssard {

/// Row-major float feature matrix, the on-disk and in-memory video layout.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Inclusive frame interval [start, end], 0-based.
struct Moment {
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  friend bool operator==(const Moment&, const Moment&) = default;
};

/// Throws kInvalidArgument unless 0 <= start <= end <= n_true - 1.
void validate_moment(const Moment& moment, int n_true);

enum class PositionChannel : int { kBackground = 0, kForeground = 1, kIgnored = 2 };

/// Three mutually exclusive binary channels over n positions.
class PositionLabel {
 public:
  explicit PositionLabel(int n) : n_(n), mask_(static_cast<std::size_t>(3 * n), 0) {}

  int length() const { return n_; }
  std::uint8_t at(PositionChannel channel, int t) const {
    return mask_[static_cast<std::size_t>(static_cast<int>(channel) * n_ + t)];
  }
  void set(PositionChannel channel, int t, std::uint8_t value) {
    mask_[static_cast<std::size_t>(static_cast<int>(channel) * n_ + t)] = value;
  }
  /// Channel-major [3, n] storage.
  const std::vector<std::uint8_t>& mask() const { return mask_; }

 private:
  int n_;
  std::vector<std::uint8_t> mask_;
};

enum class NoiseKind { kAppearance, kMotion, kQueryContext, kQueryPosition };

struct NoiseVector {
  NoiseKind kind = NoiseKind::kAppearance;
  std::vector<double> values;
};

enum class Split { kTrain, kVal, kTestIid, kTestOod };

inline constexpr Split kAllSplits[] = {Split::kTrain, Split::kVal, Split::kTestIid, Split::kTestOod};

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct GroundingSample {
  std::string id;
  FeatureMatrix video;          // [n, d_v]; rows >= n_true are padding
  std::vector<std::int32_t> query;
  Moment moment;
  int n_true = 0;
  Split split = Split::kTrain;
  std::optional<std::string> bias_tag;
  int motif = -1;               // generator metadata; -1 when unknown
};

/// Background/foreground/ignored mask for `moment` inside a length-n sequence whose
/// first n_true positions are real frames.
PositionLabel encode_moment(const Moment& moment, int n, int n_true);

/// Uniform draw over all n_true(n_true+1)/2 ordered pairs start <= end.
Moment sample_fake_moment(int n_true, Rng& rng);

NoiseVector sample_noise(NoiseKind kind, int dim, Rng& rng);

/// IoU of two inclusive frame intervals, measured on [start, end + 1).
double temporal_iou(const Moment& a, const Moment& b);

}  // namespace bssard
