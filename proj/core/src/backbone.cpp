#include "bssard/backbone.hpp"

#include <cmath>
#include <string>

#include "bssard/json_keys.hpp"

namespace bssard {

std::string_view to_string(InjectionPoint p) {
  return p == InjectionPoint::kBefore ? "before" : "after";
}

InjectionPoint parse_injection_point(std::string_view s) {
  if (s == "before") return InjectionPoint::kBefore;
  if (s == "after") return InjectionPoint::kAfter;
  throw Error(ErrorCode::kInvalidArgument, "injection point must be 'before' or 'after', got '" +
                                               std::string(s) + "'");
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = {{"n", c.n},         {"m", c.m},           {"d_v", c.d_v}, {"vocab", c.vocab},
       {"d", c.d},         {"layers", c.layers}, {"ffn", c.ffn}, {"conv_kernel", c.conv_kernel}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  json_keys::require_object(j, "model");
  json_keys::reject_unknown(j, "model.", {"n", "m", "d_v", "vocab", "d", "layers", "ffn", "conv_kernel"});
  json_keys::read(j, "model.", "n", c.n);
  json_keys::read(j, "model.", "m", c.m);
  json_keys::read(j, "model.", "d_v", c.d_v);
  json_keys::read(j, "model.", "vocab", c.vocab);
  json_keys::read(j, "model.", "d", c.d);
  json_keys::read(j, "model.", "layers", c.layers);
  json_keys::read(j, "model.", "ffn", c.ffn);
  json_keys::read(j, "model.", "conv_kernel", c.conv_kernel);
}

void to_json(nlohmann::json& j, const InjectionConfig& c) {
  j = {{"visual", std::string(to_string(c.visual))}, {"query", std::string(to_string(c.query))}};
}

void from_json(const nlohmann::json& j, InjectionConfig& c) {
  json_keys::require_object(j, "injection");
  json_keys::reject_unknown(j, "injection.", {"visual", "query"});
  std::string v(to_string(c.visual));
  std::string q(to_string(c.query));
  json_keys::read(j, "injection.", "visual", v);
  json_keys::read(j, "injection.", "query", q);
  try {
    c.visual = parse_injection_point(v);
    c.query = parse_injection_point(q);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, std::string("injection: ") + e.what());
  }
}

template <typename T>
ag::Mat<T> sinusoidal_positions(int len, int d) {
  ag::Mat<T> pe(len, d);
  for (int t = 0; t < len; ++t) {
    for (int i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      const double angle = t * freq;
      pe(t, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& rng)
    : config_(config), params_("backbone") {
  if (config.n < 1 || config.m < 1 || config.d_v < 1 || config.vocab < 1 || config.d < 1 ||
      config.layers < 1 || config.ffn < 1 || config.conv_kernel < 1 || config.conv_kernel % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument, "backbone config: dims must be positive, kernel odd");
  }
  const int d = config.d;
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
  video_positions_ = sinusoidal_positions<T>(config.n, d);
  query_positions_ = sinusoidal_positions<T>(config.m, d);

  video_proj_w_ = &params_.add("video_proj/w", config.d_v, d, 1.0 / std::sqrt(config.d_v), rng);
  video_proj_b_ = &params_.add_constant("video_proj/b", 1, d, T(0));
  token_embedding_ = &params_.add("token_embedding", config.vocab, d, 1.0, rng);
  for (int l = 0; l < config.layers; ++l) {
    video_encoder_.push_back(make_block("video_encoder/" + std::to_string(l), rng));
  }
  for (int l = 0; l < config.layers; ++l) {
    query_encoder_.push_back(make_block("query_encoder/" + std::to_string(l), rng));
  }
  cross_ = make_block("interactor/cross", rng);
  fuse_w_ = &params_.add("interactor/fuse/w", 3 * d, d, 1.0 / std::sqrt(3.0 * d), rng);
  fuse_b_ = &params_.add_constant("interactor/fuse/b", 1, d, T(0));
  conv_w_ = &params_.add("interactor/conv/w", config.conv_kernel * d, d,
                         1.0 / std::sqrt(static_cast<double>(config.conv_kernel * d)), rng);
  conv_b_ = &params_.add_constant("interactor/conv/b", 1, d, T(0));
  modeling_ = make_block("interactor/modeling", rng);
  start_w_ = &params_.add("span/start/w", d, 1, in_scale, rng);
  start_b_ = &params_.add_constant("span/start/b", 1, 1, T(0));
  end_w_ = &params_.add("span/end/w", d, 1, in_scale, rng);
  end_b_ = &params_.add_constant("span/end/b", 1, 1, T(0));
  disc_w_ = &params_.add("discriminator/w", d, 2, in_scale, rng);
  disc_b_ = &params_.add_constant("discriminator/b", 1, 2, T(0));
}

template <typename T>
typename Backbone<T>::Block Backbone<T>::make_block(const std::string& name, Rng& rng) {
  const int d = config_.d;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  Block b{};
  b.ln1_g = &params_.add_constant(name + "/ln1/g", 1, d, T(1));
  b.ln1_b = &params_.add_constant(name + "/ln1/b", 1, d, T(0));
  b.wq = &params_.add(name + "/attn/wq", d, d, s, rng);
  b.wk = &params_.add(name + "/attn/wk", d, d, s, rng);
  b.wv = &params_.add(name + "/attn/wv", d, d, s, rng);
  b.wo = &params_.add(name + "/attn/wo", d, d, s, rng);
  b.ln2_g = &params_.add_constant(name + "/ln2/g", 1, d, T(1));
  b.ln2_b = &params_.add_constant(name + "/ln2/b", 1, d, T(0));
  b.w1 = &params_.add(name + "/ffn/w1", d, config_.ffn, s, rng);
  b.b1 = &params_.add_constant(name + "/ffn/b1", 1, config_.ffn, T(0));
  b.w2 = &params_.add(name + "/ffn/w2", config_.ffn, d, 1.0 / std::sqrt(config_.ffn), rng);
  b.b2 = &params_.add_constant(name + "/ffn/b2", 1, d, T(0));
  return b;
}

template <typename T>
ag::Var<T> Backbone<T>::attention(ag::Graph<T>& g, ag::Var<T> xq, ag::Var<T> xkv,
                                  ag::Parameter<T>* wq, ag::Parameter<T>* wk, ag::Parameter<T>* wv,
                                  ag::Parameter<T>* wo, const std::vector<std::uint8_t>& key_mask) {
  auto q = ag::matmul(xq, g.param(*wq));
  auto k = ag::matmul(xkv, g.param(*wk));
  auto v = ag::matmul(xkv, g.param(*wv));
  auto scores = ag::scale(ag::matmul_bt(q, k), static_cast<T>(1.0 / std::sqrt(config_.d)));
  auto weights = ag::softmax_rows(scores, key_mask);
  return ag::matmul(ag::matmul(weights, v), g.param(*wo));
}

template <typename T>
ag::Var<T> Backbone<T>::encoder_block(ag::Graph<T>& g, const Block& b, ag::Var<T> x,
                                      const std::vector<std::uint8_t>& key_mask) {
  auto h = ag::layer_norm(x, g.param(*b.ln1_g), g.param(*b.ln1_b));
  x = ag::add(x, attention(g, h, h, b.wq, b.wk, b.wv, b.wo, key_mask));
  auto h2 = ag::layer_norm(x, g.param(*b.ln2_g), g.param(*b.ln2_b));
  auto ff = ag::linear(ag::relu(ag::linear(h2, g.param(*b.w1), g.param(*b.b1))), g.param(*b.w2),
                       g.param(*b.b2));
  return ag::add(x, ff);
}

template <typename T>
BackboneOutputs<T> Backbone<T>::forward(ag::Graph<T>& g, const GroundingInput& input,
                                        std::optional<ag::Var<T>> visual_bias,
                                        std::optional<ag::Var<T>> query_bias,
                                        const InjectionConfig& injection) {
  const int n = config_.n;
  const int m = config_.m;
  const int d = config_.d;
  if (input.video == nullptr || input.video->rows() != n || input.video->cols() != config_.d_v) {
    throw Error(ErrorCode::kShapeMismatch, "video must be [n, d_v]");
  }
  if (static_cast<int>(input.query.size()) != m) {
    throw Error(ErrorCode::kShapeMismatch, "query must have m tokens");
  }
  if (input.n_true < 1 || input.n_true > n) {
    throw Error(ErrorCode::kShapeMismatch, "n_true outside [1, n]");
  }
  if (visual_bias && query_bias) {
    throw Error(ErrorCode::kInvalidArgument, "at most one bias vector per forward");
  }
  if (visual_bias && (visual_bias->rows() != n || visual_bias->cols() != d)) {
    throw Error(ErrorCode::kShapeMismatch, "visual bias must be [n, d]");
  }
  if (query_bias && (query_bias->rows() != m || query_bias->cols() != d)) {
    throw Error(ErrorCode::kShapeMismatch, "query bias must be [m, d]");
  }

  std::vector<std::uint8_t> frame_mask(static_cast<std::size_t>(n), 0);
  for (int t = 0; t < input.n_true; ++t) frame_mask[static_cast<std::size_t>(t)] = 1;

  // Visual branch.
  auto raw = g.constant(input.video->template cast<T>());
  auto v = ag::linear(raw, g.param(*video_proj_w_), g.param(*video_proj_b_));
  v = ag::add(v, g.constant(video_positions_));
  if (visual_bias && injection.visual == InjectionPoint::kBefore) v = ag::add(v, *visual_bias);
  for (const Block& b : video_encoder_) v = encoder_block(g, b, v, frame_mask);
  if (visual_bias && injection.visual == InjectionPoint::kAfter) v = ag::add(v, *visual_bias);

  // Query branch.
  std::vector<int> ids(input.query.begin(), input.query.end());
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab) throw Error(ErrorCode::kShapeMismatch, "token id out of vocabulary");
  }
  auto q = ag::gather_rows(g.param(*token_embedding_), std::move(ids));
  q = ag::add(q, g.constant(query_positions_));
  if (query_bias && injection.query == InjectionPoint::kBefore) q = ag::add(q, *query_bias);
  for (const Block& b : query_encoder_) q = encoder_block(g, b, q, {});
  if (query_bias && injection.query == InjectionPoint::kAfter) q = ag::add(q, *query_bias);

  // Interactor: every frame attends over the query tokens, then context fusion,
  // a temporal convolution and one masked self-attention modeling block.
  auto vn = ag::layer_norm(v, g.param(*cross_.ln1_g), g.param(*cross_.ln1_b));
  auto qn = ag::layer_norm(q, g.param(*cross_.ln2_g), g.param(*cross_.ln2_b));
  auto ctx = attention(g, vn, qn, cross_.wq, cross_.wk, cross_.wv, cross_.wo, {});
  auto fused_in = ag::concat_cols(ag::concat_cols(vn, ctx), ag::hadamard(vn, ctx));
  auto f = ag::relu(ag::linear(fused_in, g.param(*fuse_w_), g.param(*fuse_b_)));
  const int pad = config_.conv_kernel / 2;
  f = ag::add(f, ag::relu(ag::conv1d(f, g.param(*conv_w_), g.param(*conv_b_), config_.conv_kernel, pad)));
  auto x = encoder_block(g, modeling_, f, frame_mask);

  BackboneOutputs<T> out;
  out.x = x;
  auto start_logits = ag::transpose(ag::linear(x, g.param(*start_w_), g.param(*start_b_)));
  auto end_logits = ag::transpose(ag::linear(x, g.param(*end_w_), g.param(*end_b_)));
  out.p_s = ag::softmax_rows(start_logits, frame_mask);
  out.p_e = ag::softmax_rows(end_logits, frame_mask);
  auto pooled = ag::mean_rows(x, input.n_true);
  out.p_d = ag::softmax_rows(ag::linear(pooled, g.param(*disc_w_), g.param(*disc_b_)));
  out.provenance = visual_bias ? Provenance::kVisualBias
                               : (query_bias ? Provenance::kQueryBias : Provenance::kReal);
  return out;
}

template <typename T>
SpanPrediction Backbone<T>::predict(const GroundingInput& input,
                                    const std::optional<ag::Mat<T>>& visual_bias,
                                    const std::optional<ag::Mat<T>>& query_bias,
                                    const InjectionConfig& injection) {
  ag::Graph<T> g;
  std::optional<ag::Var<T>> vb;
  std::optional<ag::Var<T>> qb;
  if (visual_bias) vb = g.constant(*visual_bias);
  if (query_bias) qb = g.constant(*query_bias);
  auto out = forward(g, input, vb, qb, injection);
  auto to_vec = [](const ag::Mat<T>& m) {
    std::vector<double> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<double>(m.data()[i]);
    return v;
  };
  return SpanPrediction{to_vec(out.p_s.value()), to_vec(out.p_e.value()), to_vec(out.p_d.value())};
}

Moment decode_span(std::span<const double> p_s, std::span<const double> p_e) {
  if (p_s.size() != p_e.size() || p_s.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "decode_span: p_s and p_e must be equal, nonempty");
  }
  const int n = static_cast<int>(p_s.size());
  // For each end e the best start is the earliest prefix argmax of p_s, or 0 when
  // every product at e is zero. Across ends, compare (score, -start); equal pairs
  // keep the earlier end because e only grows.
  Moment best{0, 0};
  double best_score = -1.0;
  int arg_s = 0;
  for (int e = 0; e < n; ++e) {
    if (p_s[static_cast<std::size_t>(e)] > p_s[static_cast<std::size_t>(arg_s)]) arg_s = e;
    const double score = p_s[static_cast<std::size_t>(arg_s)] * p_e[static_cast<std::size_t>(e)];
    const int start = score == 0.0 ? 0 : arg_s;
    if (score > best_score || (score == best_score && start < best.start)) {
      best_score = score;
      best = Moment{start, e};
    }
  }
  return best;
}

template ag::Mat<float> sinusoidal_positions<float>(int, int);
template ag::Mat<double> sinusoidal_positions<double>(int, int);
template class Backbone<float>;
template class Backbone<double>;

}  // namespace bssard
