#include "bssard/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "bssard/eval.hpp"
#include "bssard/json_keys.hpp"

namespace bssard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;
constexpr std::uint64_t kVisualInitStream = 0x76626721ULL;
constexpr std::uint64_t kQueryInitStream = 0x71626721ULL;
constexpr std::uint64_t kTrainStream = 0x747261696eULL;

bool uses_visual(TrainMode m) { return m == TrainMode::kBssard || m == TrainMode::kVisualOnly; }
bool uses_query(TrainMode m) { return m == TrainMode::kBssard || m == TrainMode::kQueryOnly; }

bool finite(const LossBreakdown& l) {
  for (double v : {l.gen_cls, l.gen_loc, l.gen_total, l.disc_cls, l.disc_loc, l.disc_kl, l.disc_total}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void add_into(LossBreakdown& acc, const LossBreakdown& x, double w) {
  acc.gen_cls += w * x.gen_cls;
  acc.gen_loc += w * x.gen_loc;
  acc.gen_total += w * x.gen_total;
  acc.disc_cls += w * x.disc_cls;
  acc.disc_loc += w * x.disc_loc;
  acc.disc_kl += w * x.disc_kl;
  acc.disc_total += w * x.disc_total;
  acc.clamped += x.clamped;
}

// One sample's generator inputs, drawn before any forward so the refreshed forward
// can reuse them.
struct Draw {
  Moment fake;
  NoiseVector first;   // z_a (visual) or z_w (query)
  NoiseVector second;  // z_m (visual) or the position input (query)
  std::optional<PositionLabel> label;
};

template <typename T>
void save_optimizer(Checkpoint& ckpt, const std::string& tag, const AdamW<T>& opt, const ag::ParamStore<T>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    ckpt.tables.push_back(to_table("opt/" + tag + "/m/" + store[i].name, opt.first_moments()[i]));
    ckpt.tables.push_back(to_table("opt/" + tag + "/v/" + store[i].name, opt.second_moments()[i]));
  }
  ckpt.meta["optimizer_steps"][tag] = opt.steps();
}

template <typename T>
void load_optimizer(const Checkpoint& ckpt, const std::string& tag, AdamW<T>& opt, const ag::ParamStore<T>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    from_table(ckpt, "opt/" + tag + "/m/" + store[i].name, opt.first_moments()[i]);
    from_table(ckpt, "opt/" + tag + "/v/" + store[i].name, opt.second_moments()[i]);
  }
  opt.set_steps(ckpt.meta.at("optimizer_steps").at(tag).get<long long>());
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string_view to_string(Schedule s) {
  switch (s) {
    case Schedule::kAlternateEachStep: return "alternate-each-step";
    case Schedule::kAlternateEachEpoch: return "alternate-each-epoch";
    case Schedule::kRandomEachStep: return "random-each-step";
  }
  return "?";
}

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kBssard: return "bssard";
    case TrainMode::kBaseline: return "baseline";
    case TrainMode::kVisualOnly: return "visual-only";
    case TrainMode::kQueryOnly: return "query-only";
  }
  return "?";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kVisual: return "V";
    case Phase::kQuery: return "Q";
    case Phase::kBaseline: return "B";
  }
  return "?";
}

Schedule parse_schedule(std::string_view s) {
  for (Schedule v : {Schedule::kAlternateEachStep, Schedule::kAlternateEachEpoch, Schedule::kRandomEachStep}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::kConfig, "unknown schedule '" + std::string(s) + "'");
}

TrainMode parse_train_mode(std::string_view s) {
  for (TrainMode v : {TrainMode::kBssard, TrainMode::kBaseline, TrainMode::kVisualOnly, TrainMode::kQueryOnly}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::kConfig, "unknown mode '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw Error(ErrorCode::kConfig, "'" + key + "' " + why);
  };
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(optimizer.lr >= 0.0)) fail("lr", "must be >= 0");
  if (optimizer.weight_decay < 0.0) fail("weight_decay", "must be >= 0");
  if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0) fail("beta1", "must lie in [0, 1)");
  if (optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0) fail("beta2", "must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) fail("adam_eps", "must be > 0");
  if (query_generator.position_noise < 0.0) fail("query_generator.position_noise", "must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.optimizer.lr},
       {"weight_decay", c.optimizer.weight_decay},
       {"beta1", c.optimizer.beta1},
       {"beta2", c.optimizer.beta2},
       {"adam_eps", c.optimizer.eps},
       {"schedule", std::string(to_string(c.schedule))},
       {"injection", c.injection},
       {"weights", {{"lambda1", c.weights.lambda1}, {"lambda2", c.weights.lambda2}, {"lambda3", c.weights.lambda3}}},
       {"seed", c.seed},
       {"mode", std::string(to_string(c.mode))},
       {"refresh_forward", c.refresh_forward},
       {"model", c.model},
       {"visual_generator", c.visual_generator},
       {"query_generator", c.query_generator}};
}

void from_json(const json& j, TrainConfig& c) {
  json_keys::require_object(j, "train");
  json_keys::reject_unknown(j, "", {"epochs", "batch_size", "lr", "weight_decay", "beta1", "beta2", "adam_eps",
                                    "schedule", "injection", "weights", "seed", "mode", "refresh_forward", "model",
                                    "visual_generator", "query_generator"});
  json_keys::read(j, "", "epochs", c.epochs);
  json_keys::read(j, "", "batch_size", c.batch_size);
  json_keys::read(j, "", "lr", c.optimizer.lr);
  json_keys::read(j, "", "weight_decay", c.optimizer.weight_decay);
  json_keys::read(j, "", "beta1", c.optimizer.beta1);
  json_keys::read(j, "", "beta2", c.optimizer.beta2);
  json_keys::read(j, "", "adam_eps", c.optimizer.eps);
  if (auto it = j.find("schedule"); it != j.end()) {
    std::string s;
    json_keys::read(j, "", "schedule", s);
    c.schedule = parse_schedule(s);
  }
  if (auto it = j.find("injection"); it != j.end()) c.injection = it->get<InjectionConfig>();
  if (auto it = j.find("weights"); it != j.end()) {
    json_keys::require_object(*it, "weights");
    json_keys::reject_unknown(*it, "weights.", {"lambda1", "lambda2", "lambda3"});
    json_keys::read(*it, "weights.", "lambda1", c.weights.lambda1);
    json_keys::read(*it, "weights.", "lambda2", c.weights.lambda2);
    json_keys::read(*it, "weights.", "lambda3", c.weights.lambda3);
  }
  json_keys::read(j, "", "seed", c.seed);
  if (auto it = j.find("mode"); it != j.end()) {
    std::string s;
    json_keys::read(j, "", "mode", s);
    c.mode = parse_train_mode(s);
  }
  json_keys::read(j, "", "refresh_forward", c.refresh_forward);
  if (auto it = j.find("model"); it != j.end()) from_json(*it, c.model);
  if (auto it = j.find("visual_generator"); it != j.end()) from_json(*it, c.visual_generator);
  if (auto it = j.find("query_generator"); it != j.end()) from_json(*it, c.query_generator);
}

TrainConfig resolve_dimensions(TrainConfig config, const CorpusConfig& data) {
  config.model.n = data.n;
  config.model.m = data.m;
  config.model.d_v = data.d_v;
  config.model.vocab = data.vocab;
  config.visual_generator.n = data.n;
  config.visual_generator.d = config.model.d;
  config.query_generator.n = data.n;
  config.query_generator.m = data.m;
  config.query_generator.d = config.model.d;
  return config;
}

// Each group initializes from its own stream so the backbone starts identically in
// every mode.
Models::Models(const TrainConfig& config)
    : backbone([&] {
        Rng rng(derive_seed(config.seed, kInitStream));
        return Backbone<float>(config.model, rng);
      }()),
      backbone_opt(backbone.params(), config.optimizer) {
  if (uses_visual(config.mode)) {
    Rng rng(derive_seed(config.seed, kVisualInitStream));
    vbg = std::make_unique<VisualBiasGenerator<float>>(config.visual_generator, rng);
    vbg_opt = std::make_unique<AdamW<float>>(vbg->params(), config.optimizer);
  }
  if (uses_query(config.mode)) {
    Rng rng(derive_seed(config.seed, kQueryInitStream));
    qbg = std::make_unique<QueryBiasGenerator<float>>(config.query_generator, rng);
    qbg_opt = std::make_unique<AdamW<float>>(qbg->params(), config.optimizer);
  }
}

Trainer::Trainer(const TrainConfig& config)
    : config_(config), models_(std::make_unique<Models>(config)), rng_(derive_seed(config.seed, kTrainStream)) {
  config_.validate();
}

StepReport Trainer::baseline_step(std::span<const GroundingSample* const> batch) {
  Models& md = *models_;
  StepReport rep;
  rep.phase = Phase::kBaseline;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const GroundingSample* s : batch) {
    ag::Graph<float> g;
    GroundingInput in{&s->video, s->query, s->n_true};
    auto real = md.backbone.forward(g, in, std::nullopt, std::nullopt, config_.injection);
    LossClampCount clamps;
    auto loss = losses::span_loss(real.p_s, real.p_e, s->moment, &clamps);
    LossBreakdown one;
    one.disc_loc = loss.scalar();
    one.disc_total = one.disc_loc;
    one.clamped = clamps.count;
    add_into(rep.losses, one, inv);
    if (!finite(one)) numerical_failure(batch, Phase::kBaseline, one);
    g.backward(loss, &md.backbone.params(), static_cast<float>(inv));
  }
  md.backbone_opt.step();
  rep.discriminator_updates = 1;
  return rep;
}

StepReport Trainer::train_step(std::span<const GroundingSample* const> batch, Phase phase) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  for (const GroundingSample* s : batch) {
    if (s->split != Split::kTrain) throw Error(ErrorCode::kInvalidArgument, "batch sample " + s->id + " is not train");
  }
  Models& md = *models_;
  StepReport rep;
  if (phase == Phase::kBaseline) {
    rep = baseline_step(batch);
  } else {
    const bool visual = phase == Phase::kVisual;
    if ((visual && !md.vbg) || (!visual && !md.qbg)) {
      throw Error(ErrorCode::kInvalidArgument, "phase " + std::string(to_string(phase)) + " needs a generator this mode lacks");
    }
    rep.phase = phase;
    const int n = config_.model.n;

    std::vector<Draw> draws;
    draws.reserve(batch.size());
    for (const GroundingSample* s : batch) {
      Draw d;
      d.fake = sample_fake_moment(s->n_true, rng_);
      if (visual) {
        d.first = sample_noise(NoiseKind::kAppearance, config_.visual_generator.appearance_dim, rng_);
        d.second = sample_noise(NoiseKind::kMotion, config_.visual_generator.motion_dim, rng_);
        d.label = encode_moment(d.fake, n, s->n_true);
      } else {
        d.first = sample_noise(NoiseKind::kQueryContext, config_.query_generator.context_dim, rng_);
        d.second = query_position_input(d.fake, n, s->n_true, config_.query_generator.position_noise, rng_);
      }
      draws.push_back(std::move(d));
    }

    ag::ParamStore<float>& gen_store = visual ? md.vbg->params() : md.qbg->params();
    AdamW<float>& gen_opt = visual ? *md.vbg_opt : *md.qbg_opt;
    const ag::ParamStore<float>* idle = visual ? (md.qbg ? &md.qbg->params() : nullptr)
                                               : (md.vbg ? &md.vbg->params() : nullptr);
    const double inv = 1.0 / static_cast<double>(batch.size());
    const LossWeights& w = config_.weights;

    // One pass over the batch; accumulates the requested gradients and batch-mean losses.
    auto pass = [&](bool gen_grad, bool disc_grad, LossBreakdown& acc) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const GroundingSample& s = *batch[i];
        const Draw& d = draws[i];
        ag::Graph<float> g;
        GroundingInput in{&s.video, s.query, s.n_true};
        auto real = md.backbone.forward(g, in, std::nullopt, std::nullopt, config_.injection);
        BackboneOutputs<float> fake;
        if (visual) {
          auto bias = md.vbg->forward(g, d.first, d.second, *d.label);
          fake = md.backbone.forward(g, in, bias, std::nullopt, config_.injection);
        } else {
          auto bias = md.qbg->forward(g, d.first, d.second);
          fake = md.backbone.forward(g, in, std::nullopt, bias, config_.injection);
        }
        LossClampCount clamps;
        auto g_cls = losses::gen_cls_loss(fake.p_d, &clamps);
        auto g_loc = losses::gen_loc_loss(fake.p_s, fake.p_e, d.fake, &clamps);
        auto g_total = losses::gen_total(g_loc, g_cls, w.lambda1);
        auto d_cls = losses::disc_cls_loss(real.p_d, fake.p_d, &clamps);
        auto d_loc = losses::disc_loc_loss(real.p_s, real.p_e, fake.p_s, fake.p_e, s.moment, &clamps);
        auto d_kl = losses::kl_regularizer(real.p_s, real.p_e, fake.p_s, fake.p_e);
        auto d_total = losses::disc_total(d_loc, d_cls, d_kl, w.lambda2, w.lambda3);
        LossBreakdown one{g_cls.scalar(), g_loc.scalar(), g_total.scalar(), d_cls.scalar(),
                          d_loc.scalar(), d_kl.scalar(),  d_total.scalar(), clamps.count};
        if (!finite(one)) numerical_failure(batch, phase, one);
        add_into(acc, one, inv);
        if (gen_grad) g.backward(g_total, &gen_store, static_cast<float>(inv));
        if (disc_grad) g.backward(d_total, &md.backbone.params(), static_cast<float>(inv));
      }
    };

    LossBreakdown first;
    pass(true, !config_.refresh_forward, first);
    rep.losses = first;

    const std::uint64_t idle_before = idle ? idle->hash() : 0;
    const std::uint64_t backbone_before = md.backbone.params().hash();
    gen_opt.step();
    rep.audit.backbone_fixed_during_generator_update = md.backbone.params().hash() == backbone_before;

    if (config_.refresh_forward) {
      md.backbone.params().zero_grad();
      LossBreakdown second;
      pass(false, true, second);
      rep.losses.disc_cls = second.disc_cls;
      rep.losses.disc_loc = second.disc_loc;
      rep.losses.disc_kl = second.disc_kl;
      rep.losses.disc_total = second.disc_total;
      rep.losses.clamped += second.clamped;
      gen_store.zero_grad();
    }

    const std::uint64_t gen_before = gen_store.hash();
    md.backbone_opt.step();
    rep.audit.generator_fixed_during_discriminator_update = gen_store.hash() == gen_before;
    rep.audit.idle_generator_fixed = idle ? idle->hash() == idle_before : true;
    rep.generator_updates = 1;
    rep.discriminator_updates = 1;
  }
  rep.step = step_++;
  rep.epoch = epoch_;
  return rep;
}

std::vector<Phase> Trainer::iteration_phases() {
  switch (config_.mode) {
    case TrainMode::kBaseline: return {Phase::kBaseline};
    case TrainMode::kVisualOnly: return {Phase::kVisual};
    case TrainMode::kQueryOnly: return {Phase::kQuery};
    case TrainMode::kBssard: break;
  }
  switch (config_.schedule) {
    case Schedule::kAlternateEachStep: return {Phase::kVisual, Phase::kQuery};
    case Schedule::kAlternateEachEpoch: return {epoch_ % 2 == 0 ? Phase::kVisual : Phase::kQuery};
    case Schedule::kRandomEachStep: return {rng_.bernoulli(0.5) ? Phase::kVisual : Phase::kQuery};
  }
  return {};
}

std::vector<StepReport> Trainer::train_epoch(const Corpus& corpus) {
  auto train = corpus.split(Split::kTrain);
  if (train.empty()) throw Error(ErrorCode::kInvalidArgument, "train split is empty");
  for (std::size_t i = train.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(train[i - 1], train[j]);
  }
  std::vector<StepReport> reports;
  const auto b = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < train.size(); start += b) {
    std::span<const GroundingSample* const> batch(train.data() + start, std::min(b, train.size() - start));
    for (Phase p : iteration_phases()) reports.push_back(train_step(batch, p));
  }
  ++epoch_;
  return reports;
}

void Trainer::numerical_failure(std::span<const GroundingSample* const> batch, Phase phase,
                                const LossBreakdown& l) {
  std::ostringstream msg;
  msg << "non-finite loss at step " << step_ << " (phase " << to_string(phase) << ")";
  if (!diagnostics_.empty()) {
    std::error_code ec;
    fs::create_directories(diagnostics_, ec);
    json snap = {{"step", step_},
                 {"epoch", epoch_},
                 {"phase", std::string(to_string(phase))},
                 {"losses",
                  {{"gen_cls", l.gen_cls},
                   {"gen_loc", l.gen_loc},
                   {"gen_total", l.gen_total},
                   {"disc_cls", l.disc_cls},
                   {"disc_loc", l.disc_loc},
                   {"disc_kl", l.disc_kl},
                   {"disc_total", l.disc_total}}},
                 {"clamped", l.clamped}};
    for (const GroundingSample* s : batch) snap["batch"].push_back(s->id);
    const fs::path stem = diagnostics_ / ("nonfinite-step" + std::to_string(step_));
    std::ofstream(stem.string() + ".json") << snap.dump(2, ' ', false, json::error_handler_t::replace) << "\n";
    try {
      write_checkpoint(stem.string() + ".ckpt", to_checkpoint());
    } catch (const Error&) {
      // The JSON snapshot is the part that matters; the parameters are best effort.
    }
    msg << "; snapshot at " << stem.string() << ".json";
  }
  throw Error(ErrorCode::kNumericalFailure, msg.str());
}

Checkpoint Trainer::to_checkpoint() const {
  const Models& md = *models_;
  Checkpoint ckpt;
  ckpt.meta["model"] = config_.model;
  ckpt.meta["train"] = config_;
  ckpt.meta["epoch"] = epoch_;
  ckpt.meta["step"] = step_;
  ckpt.meta["rng"] = rng_.state();
  ckpt.meta["best_val_miou"] = best_val_miou;
  ckpt.meta["best_epoch"] = best_epoch;
  add_store(ckpt, md.backbone.params());
  save_optimizer(ckpt, "backbone", md.backbone_opt, md.backbone.params());
  if (md.vbg) {
    add_store(ckpt, md.vbg->params());
    save_optimizer(ckpt, "vbg", *md.vbg_opt, md.vbg->params());
  }
  if (md.qbg) {
    add_store(ckpt, md.qbg->params());
    save_optimizer(ckpt, "qbg", *md.qbg_opt, md.qbg->params());
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  Models& md = *models_;
  try {
    const BackboneConfig saved = ckpt.meta.at("model").get<BackboneConfig>();
    const json ours = config_.model;
    if (json(saved) != ours) throw Error(ErrorCode::kDimensionMismatch, "checkpoint model config differs from the run");
    load_store(ckpt, md.backbone.params());
    load_optimizer(ckpt, "backbone", md.backbone_opt, md.backbone.params());
    if (md.vbg) {
      load_store(ckpt, md.vbg->params());
      load_optimizer(ckpt, "vbg", *md.vbg_opt, md.vbg->params());
    }
    if (md.qbg) {
      load_store(ckpt, md.qbg->params());
      load_optimizer(ckpt, "qbg", *md.qbg_opt, md.qbg->params());
    }
    epoch_ = ckpt.meta.at("epoch").get<int>();
    step_ = ckpt.meta.at("step").get<long long>();
    rng_.set_state(ckpt.meta.at("rng").get<std::string>());
    best_val_miou = ckpt.meta.at("best_val_miou").get<double>();
    best_epoch = ckpt.meta.at("best_epoch").get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointCorrupt, std::string("checkpoint metadata: ") + e.what());
  }
}

std::string metrics_rows(const StepReport& r) {
  std::ostringstream os;
  auto row = [&](const char* term, double v) {
    os << r.step << "," << r.epoch << "," << to_string(r.phase) << "," << term << "," << format_value(v) << "\n";
  };
  if (r.phase != Phase::kBaseline) {
    row("gen_cls", r.losses.gen_cls);
    row("gen_loc", r.losses.gen_loc);
    row("gen_total", r.losses.gen_total);
    row("disc_cls", r.losses.disc_cls);
  }
  row("disc_loc", r.losses.disc_loc);
  if (r.phase != Phase::kBaseline) row("disc_kl", r.losses.disc_kl);
  row("disc_total", r.losses.disc_total);
  return os.str();
}

namespace {

fs::path epoch_checkpoint(const fs::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch-%04d.ckpt", epoch);
  return dir / "checkpoints" / name;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  const fs::path ckdir = dir / "checkpoints";
  if (!fs::exists(ckdir)) return std::nullopt;
  std::optional<fs::path> best;
  int best_epoch = -1;
  const std::regex re("epoch-(\\d+)\\.ckpt");
  for (const auto& e : fs::directory_iterator(ckdir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re) && std::stoi(m[1]) > best_epoch) {
      best_epoch = std::stoi(m[1]);
      best = e.path();
    }
  }
  return best;
}

// Keeps the header plus rows whose leading integer is below `limit`.
void truncate_log(const fs::path& path, long long limit) {
  std::ifstream in(path);
  if (!in) return;
  std::string line;
  std::string kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) < limit) kept += line + "\n";
  }
  in.close();
  std::ofstream(path, std::ios::trunc) << kept;
}

}  // namespace

FitResult fit(const Corpus& corpus, const TrainConfig& raw_config, const fs::path& out_dir, const FitOptions& options) {
  const TrainConfig config = resolve_dimensions(raw_config, corpus.config);
  Trainer trainer(config);
  fs::create_directories(out_dir / "checkpoints");
  trainer.set_diagnostics_dir(out_dir / "diagnostics");
  const fs::path metrics_path = out_dir / "metrics.csv";
  const fs::path epochs_path = out_dir / "epochs.csv";
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };

  FitResult result;
  std::optional<fs::path> resume_from = options.resume ? latest_checkpoint(out_dir) : std::nullopt;
  if (resume_from) {
    trainer.restore(read_checkpoint(*resume_from));
    truncate_log(metrics_path, trainer.step());
    truncate_log(epochs_path, trainer.epoch() + 1);
    log("resumed from " + resume_from->string() + " at epoch " + std::to_string(trainer.epoch()));
  } else {
    std::ofstream(metrics_path, std::ios::trunc) << kMetricsHeader << "\n";
    std::ofstream(epochs_path, std::ios::trunc) << "epoch,val_miou\n";
  }
  if (trainer.best_epoch >= 0) result.best_checkpoint = out_dir / "best.ckpt";

  std::ofstream metrics(metrics_path, std::ios::app);
  std::ofstream epochs(epochs_path, std::ios::app);
  if (!metrics || !epochs) throw Error(ErrorCode::kIo, "cannot open logs in " + out_dir.string());

  const int stop = options.stop_after_epochs >= 0 ? std::min(options.stop_after_epochs, config.epochs) : config.epochs;
  const std::vector<Split> val_split{Split::kVal};
  while (trainer.epoch() < stop) {
    for (const StepReport& r : trainer.train_epoch(corpus)) {
      metrics << metrics_rows(r);
      result.freeze_audit_clean = result.freeze_audit_clean && r.audit.all();
    }
    metrics.flush();
    if (!metrics) throw Error(ErrorCode::kIo, "write failed: " + metrics_path.string());

    const int epoch = trainer.epoch();
    const double val = evaluate(backbone_predictor(trainer.models().backbone), corpus, val_split)
                           .report.find(Split::kVal)
                           ->miou;
    epochs << epoch << "," << format_value(val) << "\n";
    epochs.flush();
    const bool improved = val > trainer.best_val_miou;
    if (improved) {
      trainer.best_val_miou = val;
      trainer.best_epoch = epoch;
    }
    const Checkpoint ckpt = trainer.to_checkpoint();
    result.last_checkpoint = epoch_checkpoint(out_dir, epoch);
    write_checkpoint(result.last_checkpoint, ckpt);
    if (improved) {
      result.best_checkpoint = out_dir / "best.ckpt";
      write_checkpoint(result.best_checkpoint, ckpt);
      std::ofstream(out_dir / "best.json") << json{{"epoch", epoch}, {"val_miou", val}}.dump(2) << "\n";
    }
    log("epoch " + std::to_string(epoch) + " val_miou=" + format_value(val));
  }
  result.epochs_completed = trainer.epoch();
  result.steps = trainer.step();
  result.best_epoch = trainer.best_epoch;
  result.best_val_miou = trainer.best_val_miou;
  return result;
}

}  // namespace bssard
