#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bssard/backbone.hpp"
#include "bssard/biasgen.hpp"
#include "bssard/checkpoint.hpp"
#include "bssard/losses.hpp"
#include "bssard/optim.hpp"
#include "bssard/synthdata.hpp"

namespace bssard {

enum class Schedule { kAlternateEachStep, kAlternateEachEpoch, kRandomEachStep };
/// Which generators take part. Baseline trains the backbone on the real-branch span
/// loss alone.
enum class TrainMode { kBssard, kBaseline, kVisualOnly, kQueryOnly };
enum class Phase { kVisual, kQuery, kBaseline };

std::string_view to_string(Schedule s);
std::string_view to_string(TrainMode m);
std::string_view to_string(Phase p);
Schedule parse_schedule(std::string_view s);
TrainMode parse_train_mode(std::string_view s);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  AdamWConfig optimizer;
  Schedule schedule = Schedule::kAlternateEachStep;
  InjectionConfig injection;
  LossWeights weights;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kBssard;
  /// Recompute the forward with the updated generator before the discriminator
  /// update instead of reusing the generator-phase forward.
  bool refresh_forward = false;
  BackboneConfig model;  // n, m, d_v and vocab are taken from the corpus
  VisualGeneratorConfig visual_generator;
  QueryGeneratorConfig query_generator;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Copies the corpus dimensions into the model and generator configs.
TrainConfig resolve_dimensions(TrainConfig config, const CorpusConfig& data);

/// Hash comparisons of every group that must stay fixed during a sub-update.
struct FreezeAudit {
  bool backbone_fixed_during_generator_update = true;
  bool generator_fixed_during_discriminator_update = true;
  bool idle_generator_fixed = true;

  bool all() const {
    return backbone_fixed_during_generator_update && generator_fixed_during_discriminator_update &&
           idle_generator_fixed;
  }
};

struct StepReport {
  long long step = 0;
  int epoch = 0;
  Phase phase = Phase::kVisual;
  LossBreakdown losses;  // batch means
  FreezeAudit audit;
  int generator_updates = 0;
  int discriminator_updates = 0;
};

/// Parameters and per-group optimizer state. Generators absent from the mode are null.
struct Models {
  explicit Models(const TrainConfig& config);

  Backbone<float> backbone;
  std::unique_ptr<VisualBiasGenerator<float>> vbg;
  std::unique_ptr<QueryBiasGenerator<float>> qbg;
  AdamW<float> backbone_opt;
  std::unique_ptr<AdamW<float>> vbg_opt;
  std::unique_ptr<AdamW<float>> qbg_opt;
};

class Trainer {
 public:
  /// `config` must already carry resolved dimensions.
  explicit Trainer(const TrainConfig& config);

  const TrainConfig& config() const { return config_; }
  Models& models() { return *models_; }
  Rng& rng() { return rng_; }
  long long step() const { return step_; }
  int epoch() const { return epoch_; }

  /// Where non-finite-loss snapshots go; empty disables writing them.
  void set_diagnostics_dir(std::filesystem::path dir) { diagnostics_ = std::move(dir); }

  StepReport train_step(std::span<const GroundingSample* const> batch, Phase phase);
  /// One pass over the train split in a freshly shuffled order.
  std::vector<StepReport> train_epoch(const Corpus& corpus);
  /// Phases run for one iteration of the current epoch under the configured schedule.
  std::vector<Phase> iteration_phases();

  /// Everything needed to continue training bit-exactly.
  Checkpoint to_checkpoint() const;
  void restore(const Checkpoint& ckpt);

  double best_val_miou = -1.0;
  int best_epoch = -1;

 private:
  StepReport baseline_step(std::span<const GroundingSample* const> batch);
  [[noreturn]] void numerical_failure(std::span<const GroundingSample* const> batch, Phase phase,
                                      const LossBreakdown& losses);

  TrainConfig config_;
  std::unique_ptr<Models> models_;
  Rng rng_;
  long long step_ = 0;
  int epoch_ = 0;  // completed epochs
  std::filesystem::path diagnostics_;
};

struct FitOptions {
  bool resume = false;
  /// Stop after this many epochs in total (simulates an interrupted run); -1 runs all.
  int stop_after_epochs = -1;
  std::function<void(const std::string&)> log;
};

struct FitResult {
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  int epochs_completed = 0;
  long long steps = 0;
  int best_epoch = -1;
  double best_val_miou = 0.0;
  bool freeze_audit_clean = true;
};

/// Trains with per-epoch checkpoints under out_dir/checkpoints, best-on-val mIoU at
/// out_dir/best.ckpt, the per-step loss log at out_dir/metrics.csv and validation
/// scores at out_dir/epochs.csv.
FitResult fit(const Corpus& corpus, const TrainConfig& config, const std::filesystem::path& out_dir,
              const FitOptions& options = {});

/// Long-format metrics rows for one step: step,epoch,phase,term,value.
std::string metrics_rows(const StepReport& report);
inline constexpr std::string_view kMetricsHeader = "step,epoch,phase,term,value";

}  // namespace bssard
