#include "bssard/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "bssard/error.hpp"
#include "bssard/json_keys.hpp"

namespace bssard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kMotifStream = 0x6d6f74696600ULL;

// Inclusive frame ranges a region allows for a video with n_true frames.
struct FrameBox {
  int start_lo, start_hi, dur_lo, dur_hi;
};

FrameBox frames_of(const Region& r, int n_true) {
  FrameBox b{};
  b.start_lo = static_cast<int>(std::ceil(r.start_lo * n_true - 1e-9));
  b.start_hi = static_cast<int>(std::floor(r.start_hi * n_true + 1e-9));
  b.dur_lo = std::max(1, static_cast<int>(std::ceil(r.duration_lo * n_true - 1e-9)));
  b.dur_hi = static_cast<int>(std::floor(r.duration_hi * n_true + 1e-9));
  return b;
}

bool satisfiable(const FrameBox& b, int n_true) {
  return b.start_lo <= b.start_hi && b.dur_lo <= b.dur_hi && b.start_lo >= 0 && b.start_hi + b.dur_lo <= n_true;
}

Moment sample_in_box(const FrameBox& b, int n_true, Rng& rng) {
  const int s = static_cast<int>(rng.uniform_int(b.start_lo, b.start_hi));
  const int dur = static_cast<int>(rng.uniform_int(b.dur_lo, std::min(b.dur_hi, n_true - s)));
  return Moment{s, s + dur - 1};
}

// Base distribution: start uniform over every frame that fits the shortest duration.
FrameBox base_box(const CorpusConfig& c, int n_true) {
  FrameBox b{};
  b.dur_lo = std::max(1, static_cast<int>(std::lround(c.min_duration * n_true)));
  b.dur_hi = std::max(b.dur_lo, static_cast<int>(std::lround(c.max_duration * n_true)));
  b.start_lo = 0;
  b.start_hi = n_true - b.dur_lo;
  return b;
}

std::uint64_t split_offset(Split s) {
  switch (s) {
    case Split::kTrain: return 0;
    case Split::kVal: return 1ULL << 32;
    case Split::kTestIid: return 2ULL << 32;
    case Split::kTestOod: return 3ULL << 32;
  }
  return 0;
}

std::string sample_id(Split s, int index) {
  std::ostringstream os;
  os << to_string(s) << "-" << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

}  // namespace

int SplitSizes::of(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTestIid: return test_iid;
    case Split::kTestOod: return test_ood;
  }
  return 0;
}

void CorpusConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw Error(ErrorCode::kInvalidArgument, "'" + key + "' " + why);
  };
  if (n < 1) fail("n", "must be >= 1");
  if (d_v < 1) fail("d_v", "must be >= 1");
  if (m < 1) fail("m", "must be >= 1");
  if (motifs < 2) fail("motifs", "must be >= 2");
  if (n_true_min < 1 || n_true_min > n) fail("n_true_min", "must lie in [1, n]");
  if (sizes.train < 1) fail("sizes.train", "must be >= 1");
  if (sizes.val < 1) fail("sizes.val", "must be >= 1");
  if (sizes.test_iid < 1) fail("sizes.test_iid", "must be >= 1");
  if (sizes.test_ood < 1) fail("sizes.test_ood", "must be >= 1");
  if (ordered_pairs && motifs % 2 != 0) fail("motifs", "must be even when ordered_pairs is set");
  if (trigger_rate < 0.0 || trigger_rate > 1.0) fail("trigger_rate", "must lie in [0, 1]");
  if (distractor_rate < 0.0 || distractor_rate > 1.0) fail("distractor_rate", "must lie in [0, 1]");
  if (trigger_distractor_rate < 0.0 || trigger_distractor_rate > 1.0) {
    fail("trigger_distractor_rate", "must lie in [0, 1]");
  }
  if (noise_scale < 0.0) fail("noise_scale", "must be >= 0");
  if (!(min_duration > 0.0) || max_duration < min_duration || max_duration > 1.0) {
    fail("min_duration", "base durations need 0 < min_duration <= max_duration <= 1");
  }
  const int words = ordered_pairs ? 2 : 1;
  if (m < words + 1) fail("m", "too short for motif and trigger tokens");

  std::set<int> trigger_tokens;
  for (const auto& r : rules) {
    const std::string key = "rules." + r.name;
    if (r.strength < 0.0 || r.strength > 1.0) fail(key + ".strength", "must lie in [0, 1]");
    const Region& g = r.region;
    if (g.start_lo < 0.0 || g.start_hi < g.start_lo || g.duration_lo < 0.0 || g.duration_hi < g.duration_lo ||
        g.start_lo + g.duration_lo > 1.0 + 1e-12) {
      fail(key + ".region", "must lie in the unit square with start + duration <= 1");
    }
    if (r.kind == TriggerKind::kQueryToken) {
      if (r.trigger < motifs || r.trigger >= vocab) fail(key + ".trigger", "token must be a non-motif vocabulary id");
      if (!trigger_tokens.insert(r.trigger).second) fail(key + ".trigger", "token used by two rules");
    } else if (r.trigger < 0 || r.trigger >= motifs) {
      fail(key + ".trigger", "motif id out of range");
    }
    for (int len = n_true_min; len <= n; ++len) {
      if (!satisfiable(frames_of(g, len), len)) {
        throw Error(ErrorCode::kUnsatisfiableConfig,
                    "'" + key + ".region' admits no moment for a video of " + std::to_string(len) + " frames");
      }
    }
  }
  if (vocab < motifs + static_cast<int>(trigger_tokens.size()) + 1) fail("vocab", "no room for filler tokens");
}

std::vector<BiasRule> default_rules(const CorpusConfig& config, double strength) {
  const int base = config.motifs;
  return {
      BiasRule{"early", TriggerKind::kQueryToken, base + 0, Region{0.0, 0.1, 0.15, 0.4}, strength},
      BiasRule{"late", TriggerKind::kQueryToken, base + 1, Region{0.55, 0.7, 0.15, 0.3}, strength},
      BiasRule{"middle", TriggerKind::kQueryToken, base + 2, Region{0.3, 0.45, 0.1, 0.25}, strength},
  };
}

std::vector<const GroundingSample*> Corpus::split(Split s) const {
  std::vector<const GroundingSample*> out;
  for (const auto& sample : samples) {
    if (sample.split == s) out.push_back(&sample);
  }
  return out;
}

std::vector<std::int32_t> motif_tokens(const CorpusConfig& config, int motif) {
  if (!config.ordered_pairs) return {motif};
  const int pair = motif / 2;
  const int a = 2 * pair;
  const int b = 2 * pair + 1;
  return motif % 2 == 0 ? std::vector<std::int32_t>{a, b} : std::vector<std::int32_t>{b, a};
}

std::vector<std::int32_t> filler_tokens(const CorpusConfig& config) {
  std::set<int> reserved;
  for (const auto& r : config.rules) {
    if (r.kind == TriggerKind::kQueryToken) reserved.insert(r.trigger);
  }
  std::vector<std::int32_t> out;
  for (int t = config.motifs; t < config.vocab; ++t) {
    if (reserved.count(t) == 0) out.push_back(t);
  }
  return out;
}

FeatureMatrix motif_embeddings(const CorpusConfig& config) {
  Rng rng(derive_seed(config.seed, kMotifStream));
  FeatureMatrix out(config.motifs, config.d_v);
  for (int k = 0; k < config.motifs; ++k) {
    double norm = 0.0;
    for (int j = 0; j < config.d_v; ++j) {
      const double v = rng.normal();
      out(k, j) = static_cast<float>(v);
      norm += v * v;
    }
    out.row(k) *= static_cast<float>(config.motif_scale / std::sqrt(norm));
  }
  return out;
}

bool has_trigger(const GroundingSample& sample, const BiasRule& rule) {
  if (rule.kind == TriggerKind::kVisualMotif) return sample.motif == rule.trigger;
  return std::find(sample.query.begin(), sample.query.end(), rule.trigger) != sample.query.end();
}

namespace {

GroundingSample make_sample(const CorpusConfig& c, const FeatureMatrix& motifs,
                            const std::vector<std::int32_t>& fillers, Split split, int index) {
  Rng rng(derive_seed(c.seed, split_offset(split) + static_cast<std::uint64_t>(index)));
  GroundingSample s;
  s.id = sample_id(split, index);
  s.split = split;
  s.n_true = static_cast<int>(rng.uniform_int(c.n_true_min, c.n));
  s.motif = static_cast<int>(rng.uniform_int(0, c.motifs - 1));

  std::vector<const BiasRule*> token_rules;
  for (const auto& r : c.rules) {
    if (r.kind == TriggerKind::kQueryToken) token_rules.push_back(&r);
  }
  const BiasRule* active = nullptr;
  int shown_trigger = -1;
  if (!token_rules.empty() && rng.bernoulli(c.trigger_rate)) {
    active = token_rules[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(token_rules.size()) - 1))];
    shown_trigger = active->trigger;
  } else if (!token_rules.empty() && rng.bernoulli(c.trigger_distractor_rate)) {
    shown_trigger = token_rules[static_cast<std::size_t>(
                                    rng.uniform_int(0, static_cast<std::int64_t>(token_rules.size()) - 1))]->trigger;
  }
  if (active == nullptr) {
    for (const auto& r : c.rules) {
      if (r.kind == TriggerKind::kVisualMotif && r.trigger == s.motif) {
        active = &r;
        break;
      }
    }
  }

  // Moment placement.
  const bool obey = active != nullptr && split != Split::kTestOod && rng.bernoulli(active->strength);
  if (obey) {
    s.moment = sample_in_box(frames_of(active->region, s.n_true), s.n_true, rng);
  } else {
    s.moment = sample_in_box(base_box(c, s.n_true), s.n_true, rng);
  }
  if (active != nullptr) s.bias_tag = active->name;

  // Video: low-variance background, motif embedding on the moment frames and
  // optionally a second motif on a disjoint segment.
  s.video = FeatureMatrix::Zero(c.n, c.d_v);
  for (int t = 0; t < s.n_true; ++t) {
    for (int j = 0; j < c.d_v; ++j) s.video(t, j) = static_cast<float>(c.noise_scale * rng.normal());
  }
  for (int t = s.moment.start; t <= s.moment.end; ++t) s.video.row(t) += motifs.row(s.motif);
  if (rng.bernoulli(c.distractor_rate)) {
    int other = c.ordered_pairs ? (s.motif ^ 1) : static_cast<int>(rng.uniform_int(0, c.motifs - 2));
    if (!c.ordered_pairs && other >= s.motif) ++other;
    // Longest free stretch on either side of the moment.
    const int left = s.moment.start;
    const int right = s.n_true - 1 - s.moment.end;
    const FrameBox base = base_box(c, s.n_true);
    const int room = std::max(left, right);
    if (room >= base.dur_lo) {
      const int dur = static_cast<int>(rng.uniform_int(base.dur_lo, std::min(base.dur_hi, room)));
      int start = 0;
      if (left >= right) {
        start = static_cast<int>(rng.uniform_int(0, left - dur));
      } else {
        start = static_cast<int>(rng.uniform_int(s.moment.end + 1, s.n_true - dur));
      }
      for (int t = start; t < start + dur; ++t) s.video.row(t) += motifs.row(other);
    }
  }

  // Query: motif words adjacent at a random offset, the trigger word (if any) in a
  // free slot, filler elsewhere.
  s.query.assign(static_cast<std::size_t>(c.m), -1);
  const auto words = motif_tokens(c, s.motif);
  const int width = static_cast<int>(words.size());
  const int at = static_cast<int>(rng.uniform_int(0, c.m - width));
  for (int i = 0; i < width; ++i) s.query[static_cast<std::size_t>(at + i)] = words[static_cast<std::size_t>(i)];
  if (shown_trigger >= 0) {
    std::vector<int> free;
    for (int i = 0; i < c.m; ++i) {
      if (s.query[static_cast<std::size_t>(i)] < 0) free.push_back(i);
    }
    const int slot = free[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(free.size()) - 1))];
    s.query[static_cast<std::size_t>(slot)] = shown_trigger;
  }
  for (auto& tok : s.query) {
    if (tok < 0) tok = fillers[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(fillers.size()) - 1))];
  }
  return s;
}

}  // namespace

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  const FeatureMatrix motifs = motif_embeddings(config);
  const auto fillers = filler_tokens(config);
  for (Split s : kAllSplits) {
    for (int i = 0; i < config.sizes.of(s); ++i) corpus.samples.push_back(make_sample(config, motifs, fillers, s, i));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_file(const fs::path& path, ErrorCode missing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(missing, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* trigger_kind_name(TriggerKind k) { return k == TriggerKind::kQueryToken ? "query-token" : "visual-motif"; }

}  // namespace

void write_float_array(const fs::path& path, const FeatureMatrix& data) {
  std::string buf = "BSSD";
  put_u16(buf, kCorpusFormatVersion);
  buf.push_back(static_cast<char>(2));
  put_u32(buf, static_cast<std::uint32_t>(data.rows()));
  put_u32(buf, static_cast<std::uint32_t>(data.cols()));
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    std::uint32_t bits = 0;
    const float f = data.data()[i];
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32(buf, bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write " + path.string());
}

FeatureMatrix read_float_array(const fs::path& path) {
  const std::string buf = read_file(path, ErrorCode::kMissingPayload);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 7 || std::memcmp(p, "BSSD", 4) != 0) {
    throw Error(ErrorCode::kPayloadCorrupt, "bad magic in " + path.string());
  }
  const std::uint16_t version = static_cast<std::uint16_t>(p[4] | (p[5] << 8));
  if (version != kCorpusFormatVersion) {
    throw Error(ErrorCode::kUnknownVersion, "payload version " + std::to_string(version));
  }
  const int rank = p[6];
  if (rank != 2 || buf.size() < 7 + 4u * rank) throw Error(ErrorCode::kPayloadCorrupt, "rank in " + path.string());
  const std::uint32_t rows = get_u32(p + 7);
  const std::uint32_t cols = get_u32(p + 11);
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  if (buf.size() != 15 + 4 * count) throw Error(ErrorCode::kPayloadCorrupt, "size of " + path.string());
  FeatureMatrix out(rows, cols);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32(p + 15 + 4 * i);
    std::memcpy(out.data() + i, &bits, sizeof(float));
  }
  return out;
}

void to_json(json& j, const CorpusConfig& c) {
  json rules = json::array();
  for (const auto& r : c.rules) {
    rules.push_back({{"name", r.name},
                     {"kind", trigger_kind_name(r.kind)},
                     {"trigger", r.trigger},
                     {"start", {r.region.start_lo, r.region.start_hi}},
                     {"duration", {r.region.duration_lo, r.region.duration_hi}},
                     {"strength", r.strength}});
  }
  j = json{{"n", c.n},
           {"d_v", c.d_v},
           {"m", c.m},
           {"vocab", c.vocab},
           {"motifs", c.motifs},
           {"n_true_min", c.n_true_min},
           {"sizes", {{"train", c.sizes.train}, {"val", c.sizes.val}, {"test_iid", c.sizes.test_iid},
                      {"test_ood", c.sizes.test_ood}}},
           {"rules", rules},
           {"trigger_rate", c.trigger_rate},
           {"motif_scale", c.motif_scale},
           {"noise_scale", c.noise_scale},
           {"distractor_rate", c.distractor_rate},
           {"trigger_distractor_rate", c.trigger_distractor_rate},
           {"min_duration", c.min_duration},
           {"max_duration", c.max_duration},
           {"ordered_pairs", c.ordered_pairs},
           {"seed", c.seed}};
}

void from_json(const json& j, CorpusConfig& c) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, "corpus config must be an object");
  json_keys::reject_unknown(j, "", {"n", "d_v", "m", "vocab", "motifs", "n_true_min", "sizes", "rules", "rule_strength",
                         "trigger_rate", "motif_scale", "noise_scale", "distractor_rate",
                         "trigger_distractor_rate", "min_duration", "max_duration", "ordered_pairs", "seed"});
  json_keys::read(j, "", "n", c.n);
  json_keys::read(j, "", "d_v", c.d_v);
  json_keys::read(j, "", "m", c.m);
  json_keys::read(j, "", "vocab", c.vocab);
  json_keys::read(j, "", "motifs", c.motifs);
  json_keys::read(j, "", "n_true_min", c.n_true_min);
  if (auto it = j.find("sizes"); it != j.end()) {
    if (!it->is_object()) throw Error(ErrorCode::kConfig, "'sizes' must be an object");
    json_keys::reject_unknown(*it, "sizes.", {"train", "val", "test_iid", "test_ood"});
    json_keys::read(*it, "sizes.", "train", c.sizes.train);
    json_keys::read(*it, "sizes.", "val", c.sizes.val);
    json_keys::read(*it, "sizes.", "test_iid", c.sizes.test_iid);
    json_keys::read(*it, "sizes.", "test_ood", c.sizes.test_ood);
  }
  json_keys::read(j, "", "trigger_rate", c.trigger_rate);
  json_keys::read(j, "", "motif_scale", c.motif_scale);
  json_keys::read(j, "", "noise_scale", c.noise_scale);
  json_keys::read(j, "", "distractor_rate", c.distractor_rate);
  json_keys::read(j, "", "trigger_distractor_rate", c.trigger_distractor_rate);
  json_keys::read(j, "", "min_duration", c.min_duration);
  json_keys::read(j, "", "max_duration", c.max_duration);
  json_keys::read(j, "", "ordered_pairs", c.ordered_pairs);
  json_keys::read(j, "", "seed", c.seed);
  if (auto it = j.find("rules"); it != j.end()) {
    if (!it->is_array()) throw Error(ErrorCode::kConfig, "'rules' must be an array");
    c.rules.clear();
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& r = (*it)[i];
      const std::string prefix = "rules[" + std::to_string(i) + "].";
      if (!r.is_object()) throw Error(ErrorCode::kConfig, "'" + prefix + "' must be an object");
      json_keys::reject_unknown(r, prefix, {"name", "kind", "trigger", "start", "duration", "strength"});
      BiasRule rule;
      rule.name = "rule" + std::to_string(i);
      json_keys::read(r, prefix, "name", rule.name);
      std::string kind = "query-token";
      json_keys::read(r, prefix, "kind", kind);
      if (kind == "query-token") {
        rule.kind = TriggerKind::kQueryToken;
      } else if (kind == "visual-motif") {
        rule.kind = TriggerKind::kVisualMotif;
      } else {
        throw Error(ErrorCode::kConfig, "'" + prefix + "kind' must be query-token or visual-motif");
      }
      json_keys::read(r, prefix, "trigger", rule.trigger);
      std::array<double, 2> start{rule.region.start_lo, rule.region.start_hi};
      std::array<double, 2> duration{rule.region.duration_lo, rule.region.duration_hi};
      json_keys::read(r, prefix, "start", start);
      json_keys::read(r, prefix, "duration", duration);
      rule.region = Region{start[0], start[1], duration[0], duration[1]};
      json_keys::read(r, prefix, "strength", rule.strength);
      c.rules.push_back(rule);
    }
  } else if (auto rs = j.find("rule_strength"); rs != j.end()) {
    double strength = 0.9;
    json_keys::read(j, "", "rule_strength", strength);
    c.rules = default_rules(c, strength);
  }
}

fs::path write_corpus(const Corpus& corpus, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  json header{{"format_version", kCorpusFormatVersion},
               {"num_samples", corpus.samples.size()},
               {"config", corpus.config}};
  {
    std::ofstream out(dir / "corpus.json", std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write corpus.json");
    out << header.dump(2) << "\n";
  }
  const fs::path manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write manifest.jsonl");
  for (const auto& s : corpus.samples) {
    const std::string rel = "features/" + s.id + ".bin";
    write_float_array(dir / rel, s.video);
    json rec{{"id", s.id},
             {"split", to_string(s.split)},
             {"moment", {s.moment.start, s.moment.end}},
             {"n_true", s.n_true},
             {"bias_tag", s.bias_tag ? json(*s.bias_tag) : json(nullptr)},
             {"motif", s.motif},
             {"query", s.query},
             {"payload", rel}};
    out << rec.dump() << "\n";
  }
  if (!out) throw Error(ErrorCode::kIo, "short write on manifest.jsonl");
  return manifest;
}

Corpus read_corpus(const fs::path& dir) {
  json header;
  try {
    header = json::parse(read_file(dir / "corpus.json", ErrorCode::kManifestCorrupt));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestCorrupt, std::string("corpus.json: ") + e.what());
  }
  if (!header.contains("format_version") || !header["format_version"].is_number_integer()) {
    throw Error(ErrorCode::kManifestCorrupt, "corpus.json lacks format_version");
  }
  if (header["format_version"].get<int>() != kCorpusFormatVersion) {
    throw Error(ErrorCode::kUnknownVersion, "corpus format " + header["format_version"].dump());
  }
  Corpus corpus;
  std::size_t declared = 0;
  try {
    corpus.config = header.at("config").get<CorpusConfig>();
    declared = header.at("num_samples").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestCorrupt, std::string("corpus.json: ") + e.what());
  }

  const std::string text = read_file(dir / "manifest.jsonl", ErrorCode::kManifestCorrupt);
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    GroundingSample s;
    std::string payload;
    try {
      const json rec = json::parse(line);
      s.id = rec.at("id").get<std::string>();
      s.split = parse_split(rec.at("split").get<std::string>());
      const auto mom = rec.at("moment").get<std::array<int, 2>>();
      s.moment = Moment{mom[0], mom[1]};
      s.n_true = rec.at("n_true").get<int>();
      if (!rec.at("bias_tag").is_null()) s.bias_tag = rec.at("bias_tag").get<std::string>();
      s.motif = rec.value("motif", -1);
      s.query = rec.at("query").get<std::vector<std::int32_t>>();
      payload = rec.at("payload").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kManifestCorrupt, "manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::kManifestCorrupt, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    s.video = read_float_array(dir / payload);
    if (s.video.rows() != corpus.config.n || s.video.cols() != corpus.config.d_v) {
      throw Error(ErrorCode::kShapeMismatch, "payload of " + s.id + " is not [n, d_v]");
    }
    if (static_cast<int>(s.query.size()) != corpus.config.m) {
      throw Error(ErrorCode::kShapeMismatch, "query of " + s.id + " is not length m");
    }
    corpus.samples.push_back(std::move(s));
  }
  if (corpus.samples.size() != declared) {
    throw Error(ErrorCode::kManifestInconsistent, "manifest has " + std::to_string(corpus.samples.size()) +
                                                      " records, corpus.json declares " + std::to_string(declared));
  }
  return corpus;
}

}  // namespace bssard
