#include "bssard/eval.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "bssard/checkpoint.hpp"

namespace bssard {

namespace fs = std::filesystem;

namespace {

void check_pairs(std::span<const Moment> a, std::span<const Moment> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeMismatch, "prediction and truth counts differ");
  if (a.empty()) throw Error(ErrorCode::kInvalidArgument, "no predictions to score");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double recall_at(std::span<const Moment> predicted, std::span<const Moment> truth, double m) {
  check_pairs(predicted, truth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (temporal_iou(predicted[i], truth[i]) >= m) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double mean_iou(std::span<const Moment> predicted, std::span<const Moment> truth) {
  check_pairs(predicted, truth);
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) total += temporal_iou(predicted[i], truth[i]);
  return total / static_cast<double>(predicted.size());
}

SplitMetrics summarize(std::span<const Moment> predicted, std::span<const Moment> truth) {
  SplitMetrics m;
  m.count = predicted.size();
  if (predicted.empty() && truth.empty()) return m;  // an empty split reports zeros
  m.r1_iou5 = recall_at(predicted, truth, 0.5);
  m.r1_iou7 = recall_at(predicted, truth, 0.7);
  m.miou = mean_iou(predicted, truth);
  return m;
}

const SplitMetrics* MetricsReport::find(Split s) const {
  for (const auto& [split, metrics] : splits) {
    if (split == s) return &metrics;
  }
  return nullptr;
}

Evaluation evaluate(const Predictor& predictor, const Corpus& corpus, std::span<const Split> splits) {
  Evaluation out;
  for (Split s : splits) {
    std::vector<Moment> pred;
    std::vector<Moment> truth;
    for (const GroundingSample* sample : corpus.split(s)) {
      PredictionRecord r;
      r.id = sample->id;
      r.split = s;
      r.predicted = predictor(*sample, sample->query);
      r.truth = sample->moment;
      r.iou = temporal_iou(r.predicted, r.truth);
      pred.push_back(r.predicted);
      truth.push_back(r.truth);
      out.predictions.push_back(std::move(r));
    }
    out.report.splits.emplace_back(s, summarize(pred, truth));
  }
  const SplitMetrics* iid = out.report.find(Split::kTestIid);
  const SplitMetrics* ood = out.report.find(Split::kTestOod);
  if (iid != nullptr && ood != nullptr) {
    SplitMetrics gap;
    gap.r1_iou5 = iid->r1_iou5 - ood->r1_iou5;
    gap.r1_iou7 = iid->r1_iou7 - ood->r1_iou7;
    gap.miou = iid->miou - ood->miou;
    out.report.iid_ood_gap = gap;
  }
  return out;
}

Predictor backbone_predictor(Backbone<float>& model) {
  return [&model](const GroundingSample& sample, std::span<const std::int32_t> query) {
    GroundingInput input{&sample.video, query, sample.n_true};
    SpanPrediction p = model.predict(input);
    return decode_span(p.p_s, p.p_e);
  };
}

std::unique_ptr<Backbone<float>> load_backbone(const fs::path& checkpoint, const CorpusConfig* expect) {
  Checkpoint ckpt = read_checkpoint(checkpoint);
  if (!ckpt.meta.contains("model")) throw Error(ErrorCode::kCheckpointCorrupt, "checkpoint has no model config");
  BackboneConfig cfg = ckpt.meta.at("model").get<BackboneConfig>();
  if (expect != nullptr) {
    auto mismatch = [](const char* key, int ckpt_value, int data_value) {
      throw Error(ErrorCode::kDimensionMismatch, std::string("checkpoint ") + key + "=" +
                                                     std::to_string(ckpt_value) + " but corpus " + key +
                                                     "=" + std::to_string(data_value));
    };
    if (cfg.n != expect->n) mismatch("n", cfg.n, expect->n);
    if (cfg.m != expect->m) mismatch("m", cfg.m, expect->m);
    if (cfg.d_v != expect->d_v) mismatch("d_v", cfg.d_v, expect->d_v);
    if (cfg.vocab != expect->vocab) mismatch("vocab", cfg.vocab, expect->vocab);
  }
  Rng unused(0);
  auto model = std::make_unique<Backbone<float>>(cfg, unused);
  load_store(ckpt, model->params());
  return model;
}

std::vector<std::int32_t> shuffled_query(std::span<const std::int32_t> query, std::uint64_t seed,
                                         std::size_t index) {
  std::vector<std::int32_t> out(query.begin(), query.end());
  Rng rng(derive_seed(seed, index));
  for (std::size_t i = out.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(out[i - 1], out[j]);
  }
  return out;
}

double relative_drop(double original, double shuffled) {
  if (original == 0.0) return 0.0;
  return (original - shuffled) / original;
}

ShuffleProbe shuffle_query_probe(const Predictor& predictor, const Corpus& corpus, std::uint64_t seed) {
  std::vector<Moment> truth;
  std::vector<Moment> original;
  std::vector<Moment> shuffled;
  const auto samples = corpus.split(Split::kTestOod);
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "shuffle probe needs a non-empty test-ood split");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const GroundingSample& s = *samples[i];
    truth.push_back(s.moment);
    original.push_back(predictor(s, s.query));
    const auto q = shuffled_query(s.query, seed, i);
    shuffled.push_back(predictor(s, q));
  }
  ShuffleProbe p;
  p.count = samples.size();
  p.original_miou = mean_iou(original, truth);
  p.shuffled_miou = mean_iou(shuffled, truth);
  p.relative_drop = relative_drop(p.original_miou, p.shuffled_miou);
  return p;
}

void write_evaluation(const Evaluation& evaluation, const std::optional<ShuffleProbe>& probe, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream txt(dir / "metrics.txt");
  std::ofstream csv(dir / "metrics.csv");
  if (!txt || !csv) throw Error(ErrorCode::kIo, "cannot write metrics into " + dir.string());
  csv << "split,count,r1_iou0.5,r1_iou0.7,miou,r1_iou0.5_pct,r1_iou0.7_pct,miou_pct\n";
  auto emit = [&](const std::string& name, const SplitMetrics& m, bool with_count) {
    if (with_count) txt << name << ".count=" << m.count << "\n";
    txt << name << ".r1_iou0.5=" << fmt(m.r1_iou5) << "\n";
    txt << name << ".r1_iou0.7=" << fmt(m.r1_iou7) << "\n";
    txt << name << ".miou=" << fmt(m.miou) << "\n";
    txt << name << ".miou_pct=" << fmt(100.0 * m.miou) << "\n";
    csv << name << "," << m.count << "," << fmt(m.r1_iou5) << "," << fmt(m.r1_iou7) << "," << fmt(m.miou) << ","
        << fmt(100.0 * m.r1_iou5) << "," << fmt(100.0 * m.r1_iou7) << "," << fmt(100.0 * m.miou) << "\n";
  };
  for (const auto& [split, m] : evaluation.report.splits) emit(std::string(to_string(split)), m, true);
  if (evaluation.report.iid_ood_gap) emit("iid_ood_gap", *evaluation.report.iid_ood_gap, false);
  if (probe) {
    txt << "shuffle_probe.count=" << probe->count << "\n";
    txt << "shuffle_probe.original_miou=" << fmt(probe->original_miou) << "\n";
    txt << "shuffle_probe.shuffled_miou=" << fmt(probe->shuffled_miou) << "\n";
    txt << "shuffle_probe.relative_drop=" << fmt(probe->relative_drop) << "\n";
  }

  std::ofstream jl(dir / "predictions.jsonl");
  if (!jl) throw Error(ErrorCode::kIo, "cannot write predictions into " + dir.string());
  for (const auto& r : evaluation.predictions) {
    nlohmann::json j = {{"id", r.id},
                        {"split", std::string(to_string(r.split))},
                        {"pred", {r.predicted.start, r.predicted.end}},
                        {"truth", {r.truth.start, r.truth.end}},
                        {"iou", r.iou}};
    jl << j.dump() << "\n";
  }
}

}  // namespace bssard
