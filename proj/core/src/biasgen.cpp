#include "bssard/biasgen.hpp"

#include <cmath>
#include <string>

#include "bssard/json_keys.hpp"

namespace bssard {

namespace {

template <typename T>
ag::Mat<T> row_of(const NoiseVector& z) {
  ag::Mat<T> m(1, static_cast<int>(z.values.size()));
  for (std::size_t i = 0; i < z.values.size(); ++i) m(0, static_cast<int>(i)) = static_cast<T>(z.values[i]);
  return m;
}

double fan_in_scale(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

void to_json(nlohmann::json& j, const VisualGeneratorConfig& c) {
  j = {{"appearance_dim", c.appearance_dim}, {"motion_dim", c.motion_dim},
       {"hidden", c.hidden},                 {"spatial", c.spatial},
       {"blocks_before", c.blocks_before},   {"blocks_after", c.blocks_after},
       {"kernel", c.kernel}};
}

void from_json(const nlohmann::json& j, VisualGeneratorConfig& c) {
  const std::string p = "visual_generator.";
  json_keys::require_object(j, "visual_generator");
  json_keys::reject_unknown(j, p, {"appearance_dim", "motion_dim", "hidden", "spatial", "blocks_before",
                                   "blocks_after", "kernel"});
  json_keys::read(j, p, "appearance_dim", c.appearance_dim);
  json_keys::read(j, p, "motion_dim", c.motion_dim);
  json_keys::read(j, p, "hidden", c.hidden);
  json_keys::read(j, p, "spatial", c.spatial);
  json_keys::read(j, p, "blocks_before", c.blocks_before);
  json_keys::read(j, p, "blocks_after", c.blocks_after);
  json_keys::read(j, p, "kernel", c.kernel);
}

void to_json(nlohmann::json& j, const QueryGeneratorConfig& c) {
  j = {{"context_dim", c.context_dim},     {"position_embed", c.position_embed},
       {"hidden", c.hidden},               {"channels", c.channels},
       {"linear_layers", c.linear_layers}, {"deconv_layers", c.deconv_layers},
       {"position_noise", c.position_noise}};
}

void from_json(const nlohmann::json& j, QueryGeneratorConfig& c) {
  const std::string p = "query_generator.";
  json_keys::require_object(j, "query_generator");
  json_keys::reject_unknown(j, p, {"context_dim", "position_embed", "hidden", "channels", "linear_layers",
                                   "deconv_layers", "position_noise"});
  json_keys::read(j, p, "context_dim", c.context_dim);
  json_keys::read(j, p, "position_embed", c.position_embed);
  json_keys::read(j, p, "hidden", c.hidden);
  json_keys::read(j, p, "channels", c.channels);
  json_keys::read(j, p, "linear_layers", c.linear_layers);
  json_keys::read(j, p, "deconv_layers", c.deconv_layers);
  json_keys::read(j, p, "position_noise", c.position_noise);
}

// ---------------------------------------------------------------------------
// Visual bias generator
// ---------------------------------------------------------------------------

template <typename T>
VisualBiasGenerator<T>::VisualBiasGenerator(const VisualGeneratorConfig& config, Rng& rng)
    : config_(config), params_("vbg") {
  const auto& c = config;
  if (c.n < 1 || c.d < 1 || c.appearance_dim < 1 || c.motion_dim < 1 || c.hidden < 1 ||
      c.spatial < 1 || c.blocks_before < 0 || c.blocks_after < 1 || c.kernel % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument, "visual generator config");
  }
  spatial_in_w_ = &params_.add("input/spatial/w", c.appearance_dim, c.spatial, fan_in_scale(c.appearance_dim), rng);
  spatial_in_b_ = &params_.add_constant("input/spatial/b", 1, c.spatial, T(0));
  temporal_in_w_ = &params_.add("input/temporal/w", c.motion_dim, c.n * c.hidden, fan_in_scale(c.motion_dim), rng);
  temporal_in_b_ = &params_.add_constant("input/temporal/b", 1, c.n * c.hidden, T(0));
  video_in_w_ = &params_.add("input/video/w", c.spatial, c.hidden, fan_in_scale(c.spatial), rng);
  for (int i = 0; i < c.blocks_before; ++i) {
    before_.push_back(make_block("pre/" + std::to_string(i), c.hidden, rng));
  }
  for (int i = 0; i < c.blocks_after; ++i) {
    // The first post-fusion block sees the three label channels as extra inputs.
    after_.push_back(make_block("post/" + std::to_string(i), i == 0 ? c.hidden + 3 : c.hidden, rng));
  }
  out_w_ = &params_.add("output/w", c.hidden, c.d, fan_in_scale(c.hidden), rng);
  out_b_ = &params_.add_constant("output/b", 1, c.d, T(0));
}

template <typename T>
typename VisualBiasGenerator<T>::Block VisualBiasGenerator<T>::make_block(const std::string& name,
                                                                          int in_channels, Rng& rng) {
  const auto& c = config_;
  Block b{};
  const int conv_in = c.kernel * in_channels;
  b.t_w = &params_.add(name + "/temporal/w", conv_in, c.hidden, fan_in_scale(conv_in), rng);
  b.t_b = &params_.add_constant(name + "/temporal/b", 1, c.hidden, T(0));
  b.s_w = &params_.add(name + "/spatial/w", c.spatial, c.spatial, fan_in_scale(c.spatial), rng);
  b.s_b = &params_.add_constant(name + "/spatial/b", 1, c.spatial, T(0));
  b.v_w = &params_.add(name + "/video/w", conv_in, c.hidden, fan_in_scale(conv_in), rng);
  b.v_b = &params_.add_constant(name + "/video/b", 1, c.hidden, T(0));
  b.sv_w = &params_.add(name + "/spatial_to_video/w", c.spatial, c.hidden, fan_in_scale(c.spatial), rng);
  return b;
}

template <typename T>
StreamBundle<T> VisualBiasGenerator<T>::apply(ag::Graph<T>& g, const Block& b, const StreamBundle<T>& in) {
  const int pad = config_.kernel / 2;
  StreamBundle<T> out;
  out.temporal = ag::relu(ag::conv1d(in.temporal, g.param(*b.t_w), g.param(*b.t_b), config_.kernel, pad));
  out.spatial = ag::relu(ag::linear(in.spatial, g.param(*b.s_w), g.param(*b.s_b)));
  // Joint video path: its own convolution plus the sum of the two decoupled streams.
  auto own = ag::conv1d(in.video, g.param(*b.v_w), g.param(*b.v_b), config_.kernel, pad);
  auto appearance = ag::broadcast_rows(ag::matmul(out.spatial, g.param(*b.sv_w)), config_.n);
  out.video = ag::relu(ag::add(ag::add(own, out.temporal), appearance));
  return out;
}

template <typename T>
ag::Var<T> VisualBiasGenerator<T>::forward(ag::Graph<T>& g, const NoiseVector& z_a,
                                           const NoiseVector& z_m, const PositionLabel& z_p) {
  const auto& c = config_;
  if (static_cast<int>(z_a.values.size()) != c.appearance_dim ||
      static_cast<int>(z_m.values.size()) != c.motion_dim) {
    throw Error(ErrorCode::kShapeMismatch, "visual generator latent dimension mismatch");
  }
  if (z_p.length() != c.n) throw Error(ErrorCode::kShapeMismatch, "position label length != n");

  StreamBundle<T> s;
  s.spatial = ag::relu(ag::linear(g.constant(row_of<T>(z_a)), g.param(*spatial_in_w_), g.param(*spatial_in_b_)));
  auto motion = ag::linear(g.constant(row_of<T>(z_m)), g.param(*temporal_in_w_), g.param(*temporal_in_b_));
  s.temporal = ag::relu(ag::reshape(motion, c.n, c.hidden));
  s.video = ag::add(s.temporal, ag::broadcast_rows(ag::matmul(s.spatial, g.param(*video_in_w_)), c.n));
  for (const Block& b : before_) s = apply(g, b, s);

  ag::Mat<T> label(c.n, 3);
  for (int t = 0; t < c.n; ++t) {
    for (int ch = 0; ch < 3; ++ch) label(t, ch) = static_cast<T>(z_p.at(static_cast<PositionChannel>(ch), t));
  }
  auto label_var = g.constant(std::move(label));
  s.temporal = ag::concat_cols(s.temporal, label_var);
  s.video = ag::concat_cols(s.video, label_var);
  for (const Block& b : after_) s = apply(g, b, s);
  return ag::linear(s.video, g.param(*out_w_), g.param(*out_b_));
}

template <typename T>
ag::Mat<T> VisualBiasGenerator<T>::generate(const NoiseVector& z_a, const NoiseVector& z_m,
                                            const PositionLabel& z_p) {
  ag::Graph<T> g;
  return forward(g, z_a, z_m, z_p).value();
}

// ---------------------------------------------------------------------------
// Query bias generator
// ---------------------------------------------------------------------------

template <typename T>
QueryBiasGenerator<T>::QueryBiasGenerator(const QueryGeneratorConfig& config, Rng& rng)
    : config_(config), params_("qbg") {
  const auto& c = config;
  if (c.n < 1 || c.m < 1 || c.d < 1 || c.context_dim < 1 || c.position_embed < 1 || c.hidden < 1 ||
      c.channels < 1 || c.linear_layers < 1 || c.deconv_layers < 1) {
    throw Error(ErrorCode::kInvalidArgument, "query generator config");
  }
  // Use as many exact doublings as m allows (at most three and at most M2 - 1), the rest
  // of the transposed convolutions keep the length.
  while (upsample_ < std::min(3, c.deconv_layers - 1) && c.m % (1 << (upsample_ + 1)) == 0) ++upsample_;
  seed_length_ = c.m >> upsample_;

  pos_w_ = &params_.add("position/w", c.n, c.position_embed, fan_in_scale(c.n), rng);
  pos_b_ = &params_.add_constant("position/b", 1, c.position_embed, T(0));
  int width = c.context_dim + c.position_embed;
  for (int i = 0; i < c.linear_layers; ++i) {
    const bool last = i + 1 == c.linear_layers;
    const int out = last ? seed_length_ * c.channels : c.hidden;
    auto* w = &params_.add("linear/" + std::to_string(i) + "/w", width, out, fan_in_scale(width), rng);
    auto* b = &params_.add_constant("linear/" + std::to_string(i) + "/b", 1, out, T(0));
    linears_.emplace_back(w, b);
    width = out;
  }
  for (int i = 0; i < c.deconv_layers; ++i) {
    const bool up = i < upsample_;
    const bool last = i + 1 == c.deconv_layers;
    Deconv dc{};
    dc.kernel = up ? 2 : 3;
    dc.stride = up ? 2 : 1;
    dc.pad = up ? 0 : 1;
    const int out_ch = last ? c.d : c.channels;
    dc.w = &params_.add("deconv/" + std::to_string(i) + "/w", c.channels, dc.kernel * out_ch,
                        fan_in_scale(c.channels), rng);
    dc.b = &params_.add_constant("deconv/" + std::to_string(i) + "/b", 1, out_ch, T(0));
    deconvs_.push_back(dc);
  }
}

template <typename T>
ag::Var<T> QueryBiasGenerator<T>::forward(ag::Graph<T>& g, const NoiseVector& z_w,
                                          const NoiseVector& position) {
  const auto& c = config_;
  if (static_cast<int>(z_w.values.size()) != c.context_dim) {
    throw Error(ErrorCode::kShapeMismatch, "query generator context length mismatch");
  }
  if (static_cast<int>(position.values.size()) != c.n) {
    throw Error(ErrorCode::kShapeMismatch, "query generator position input must have length n");
  }
  auto pos = ag::relu(ag::linear(g.constant(row_of<T>(position)), g.param(*pos_w_), g.param(*pos_b_)));
  auto h = ag::concat_cols(g.constant(row_of<T>(z_w)), pos);
  for (const auto& [w, b] : linears_) h = ag::relu(ag::linear(h, g.param(*w), g.param(*b)));
  auto seq = ag::reshape(h, seed_length_, c.channels);
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    const Deconv& dc = deconvs_[i];
    seq = ag::conv_transpose1d(seq, g.param(*dc.w), g.param(*dc.b), dc.kernel, dc.stride, dc.pad);
    if (i + 1 < deconvs_.size()) seq = ag::relu(seq);
  }
  return seq;
}

template <typename T>
ag::Mat<T> QueryBiasGenerator<T>::generate(const NoiseVector& z_w, const NoiseVector& position) {
  ag::Graph<T> g;
  return forward(g, z_w, position).value();
}

NoiseVector query_position_input(const Moment& fake, int n, int n_true, double sigma, Rng& rng) {
  if (n_true < 1 || n_true > n) throw Error(ErrorCode::kInvalidArgument, "n_true outside [1, n]");
  validate_moment(fake, n_true);
  NoiseVector out;
  out.kind = NoiseKind::kQueryPosition;
  out.values.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const double fg = (t >= fake.start && t <= fake.end) ? 1.0 : 0.0;
    out.values[static_cast<std::size_t>(t)] = fg + sigma * rng.normal();
  }
  return out;
}

FeatureMatrix make_bias_conflict(const FeatureMatrix& feature, const FeatureMatrix& bias) {
  if (feature.rows() != bias.rows() || feature.cols() != bias.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "bias shape must match feature shape");
  }
  return feature + bias;
}

template class VisualBiasGenerator<float>;
template class VisualBiasGenerator<double>;
template class QueryBiasGenerator<float>;
template class QueryBiasGenerator<double>;

}  // namespace bssard
