#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bssard/backbone.hpp"
#include "bssard/synthdata.hpp"

namespace bssard {

/// Fraction of pairs whose temporal IoU is >= m. Empty input is rejected.
double recall_at(std::span<const Moment> predicted, std::span<const Moment> truth, double m);
double mean_iou(std::span<const Moment> predicted, std::span<const Moment> truth);

struct SplitMetrics {
  std::size_t count = 0;
  double r1_iou5 = 0.0;  // R@1, IoU >= 0.5
  double r1_iou7 = 0.0;  // R@1, IoU >= 0.7
  double miou = 0.0;
};

SplitMetrics summarize(std::span<const Moment> predicted, std::span<const Moment> truth);

struct PredictionRecord {
  std::string id;
  Split split = Split::kTrain;
  Moment predicted;
  Moment truth;
  double iou = 0.0;
};

struct MetricsReport {
  std::vector<std::pair<Split, SplitMetrics>> splits;
  /// test-iid minus test-ood for every metric, when both splits were evaluated.
  std::optional<SplitMetrics> iid_ood_gap;

  const SplitMetrics* find(Split s) const;
};

struct Evaluation {
  MetricsReport report;
  std::vector<PredictionRecord> predictions;
};

/// Maps a sample plus the query to ground (normally the sample's own) to a moment.
using Predictor = std::function<Moment(const GroundingSample&, std::span<const std::int32_t> query)>;

Evaluation evaluate(const Predictor& predictor, const Corpus& corpus, std::span<const Split> splits);

/// Decodes the backbone's real-branch span distributions.
Predictor backbone_predictor(Backbone<float>& model);

/// Rebuilds the backbone stored in a checkpoint. When `expect` is given, its
/// n / m / d_v / vocab must match the checkpoint or kDimensionMismatch is thrown.
std::unique_ptr<Backbone<float>> load_backbone(const std::filesystem::path& checkpoint,
                                               const CorpusConfig* expect = nullptr);

struct ShuffleProbe {
  std::size_t count = 0;
  double original_miou = 0.0;
  double shuffled_miou = 0.0;
  double relative_drop = 0.0;  // (original - shuffled) / original
};

/// Same tokens in a seeded random order, one permutation per sample index.
std::vector<std::int32_t> shuffled_query(std::span<const std::int32_t> query, std::uint64_t seed,
                                         std::size_t index);

/// Grounds every test-ood sample with its original and its shuffled query.
ShuffleProbe shuffle_query_probe(const Predictor& predictor, const Corpus& corpus, std::uint64_t seed);

double relative_drop(double original, double shuffled);

/// Writes metrics.txt (key=value), metrics.csv and predictions.jsonl into dir.
void write_evaluation(const Evaluation& evaluation, const std::optional<ShuffleProbe>& probe,
                      const std::filesystem::path& dir);

}  // namespace bssard
