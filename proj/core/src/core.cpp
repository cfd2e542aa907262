#include "bssard/core.hpp"

#include <algorithm>
#include <cmath>

#include "bssard/error.hpp"

namespace bssard {

void validate_moment(const Moment& moment, int n_true) {
  if (moment.start < 0 || moment.start > moment.end || moment.end > n_true - 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "moment (" + std::to_string(moment.start) + "," + std::to_string(moment.end) +
                    ") outside [0," + std::to_string(n_true - 1) + "]");
  }
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTestIid: return "test-iid";
    case Split::kTestOod: return "test-ood";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  for (Split s : kAllSplits) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown split '" + std::string(name) + "'");
}

PositionLabel encode_moment(const Moment& moment, int n, int n_true) {
  if (n_true < 1 || n_true > n) {
    throw Error(ErrorCode::kInvalidArgument, "n_true must lie in [1, n]");
  }
  validate_moment(moment, n_true);
  PositionLabel label(n);
  for (int t = 0; t < n; ++t) {
    PositionChannel ch = PositionChannel::kBackground;
    if (t >= n_true) {
      ch = PositionChannel::kIgnored;
    } else if (t >= moment.start && t <= moment.end) {
      ch = PositionChannel::kForeground;
    }
    label.set(ch, t, 1);
  }
  return label;
}

Moment sample_fake_moment(int n_true, Rng& rng) {
  if (n_true < 1) throw Error(ErrorCode::kInvalidArgument, "sample_fake_moment: n_true = 0");
  // Index the triangle of legal pairs row by row: start s owns n_true - s pairs.
  const std::int64_t total = static_cast<std::int64_t>(n_true) * (n_true + 1) / 2;
  std::int64_t k = rng.uniform_int(0, total - 1);
  int start = 0;
  while (k >= n_true - start) {
    k -= n_true - start;
    ++start;
  }
  return Moment{start, start + static_cast<int>(k)};
}

NoiseVector sample_noise(NoiseKind kind, int dim, Rng& rng) {
  if (dim < 1) throw Error(ErrorCode::kInvalidArgument, "sample_noise: dim = 0");
  NoiseVector out;
  out.kind = kind;
  out.values.resize(static_cast<std::size_t>(dim));
  for (double& v : out.values) v = rng.normal();
  return out;
}

double temporal_iou(const Moment& a, const Moment& b) {
  if (a.start < 0 || a.start > a.end || b.start < 0 || b.start > b.end) {
    throw Error(ErrorCode::kInvalidArgument, "temporal_iou: invalid moment");
  }
  const double inter = std::max(0, std::min(a.end, b.end) + 1 - std::max(a.start, b.start));
  const double uni = std::max(a.end, b.end) + 1 - std::min(a.start, b.start);
  if (inter <= 0.0) return 0.0;
  // The hull equals the union whenever the intervals overlap.
  return inter / uni;
}

}  // namespace bssard
