#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "bssard/core.hpp"

namespace bssard {

enum class TriggerKind { kQueryToken, kVisualMotif };

/// Box over (normalized start, normalized duration).
struct Region {
  double start_lo = 0.0;
  double start_hi = 0.1;
  double duration_lo = 0.1;
  double duration_hi = 0.4;
};

/// A planted correlation: samples carrying `trigger` land in `region` with
/// probability `strength` outside the test-ood split.
struct BiasRule {
  std::string name;
  TriggerKind kind = TriggerKind::kQueryToken;
  int trigger = 0;
  Region region;
  double strength = 0.9;
};

struct SplitSizes {
  int train = 2000;
  int val = 400;
  int test_iid = 400;
  int test_ood = 400;

  int of(Split s) const;
};

struct CorpusConfig {
  int n = 32;
  int d_v = 32;
  int m = 8;
  int vocab = 50;
  int motifs = 8;
  int n_true_min = 24;          // true video lengths are uniform in [n_true_min, n]
  SplitSizes sizes;
  std::vector<BiasRule> rules;
  double trigger_rate = 0.75;   // chance a sample carries one of the query-token triggers
  double motif_scale = 1.0;     // norm of a motif embedding added on moment frames
  double noise_scale = 0.3;     // per-entry std of background frames
  double distractor_rate = 0.5; // chance a second, different motif segment appears
  double trigger_distractor_rate = 0.0;  // untriggered samples showing a trigger token anyway
  double min_duration = 0.1;    // base (unbiased) moment duration range, normalized
  double max_duration = 0.4;
  bool ordered_pairs = true;    // motifs named by an ordered token pair (order matters)
  std::uint64_t seed = 0;

  /// Throws kUnsatisfiableConfig / kInvalidArgument with the offending key.
  void validate() const;
};

/// Three query-token rules: early, late and middle placement.
std::vector<BiasRule> default_rules(const CorpusConfig& config, double strength);

struct Corpus {
  CorpusConfig config;
  std::vector<GroundingSample> samples;  // grouped by split in kAllSplits order

  std::vector<const GroundingSample*> split(Split s) const;
};

/// Token ids naming motif k, in query order.
std::vector<std::int32_t> motif_tokens(const CorpusConfig& config, int motif);
/// Ids usable as filler words (neither motif nor trigger tokens).
std::vector<std::int32_t> filler_tokens(const CorpusConfig& config);
/// Fixed motif embeddings [motifs, d_v], derived from the corpus seed.
FeatureMatrix motif_embeddings(const CorpusConfig& config);
/// True if the sample's query contains the token of a query-token rule, or its motif
/// is the rule's visual trigger.
bool has_trigger(const GroundingSample& sample, const BiasRule& rule);

Corpus generate_corpus(const CorpusConfig& config);

// On-disk format: <dir>/corpus.json (format version, sample count, config),
// <dir>/manifest.jsonl (one record per sample) and <dir>/features/<id>.bin payloads.
inline constexpr std::uint16_t kCorpusFormatVersion = 1;

std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Little-endian float32 array with header "BSSD", u16 version, u8 rank, u32 dims.
void write_float_array(const std::filesystem::path& path, const FeatureMatrix& data);
FeatureMatrix read_float_array(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

}  // namespace bssard
