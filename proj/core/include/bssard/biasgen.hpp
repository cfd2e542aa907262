#pragma once

#include <nlohmann/json.hpp>

#include "bssard/autograd.hpp"
#include "bssard/core.hpp"

namespace bssard {

struct VisualGeneratorConfig {
  int n = 32;            // temporal length of the produced bias
  int d = 32;            // output feature width
  int appearance_dim = 16;
  int motion_dim = 16;
  int hidden = 16;       // channels of the temporal and video streams
  int spatial = 16;      // width of the spatial stream
  int blocks_before = 4; // stacked blocks before the position label is fused (N1)
  int blocks_after = 2;  // stacked blocks after the fusion (M1)
  int kernel = 3;
};

struct QueryGeneratorConfig {
  int n = 32;            // length of the position input
  int m = 8;             // query length of the produced bias
  int d = 32;
  int context_dim = 16;
  int position_embed = 16;
  int hidden = 64;
  int channels = 32;     // channels of the transposed-convolution stack
  int linear_layers = 2;  // N2
  int deconv_layers = 4;  // M2
  double position_noise = 0.1;
};

// Only the generator's own knobs are serialized; n, m and d follow the backbone.
void to_json(nlohmann::json& j, const VisualGeneratorConfig& c);
void from_json(const nlohmann::json& j, VisualGeneratorConfig& c);
void to_json(nlohmann::json& j, const QueryGeneratorConfig& c);
void from_json(const nlohmann::json& j, QueryGeneratorConfig& c);

/// The three streams a G3-style block carries.
template <typename T>
struct StreamBundle {
  ag::Var<T> temporal;  // F_T [n, h]
  ag::Var<T> spatial;   // F_S [1, h_s]
  ag::Var<T> video;     // F_V [n, h]
};

/// Visual bias generator: appearance and motion latents pass through stacked
/// three-stream blocks; the [3, n] position label is concatenated onto the temporal
/// and video streams once, between the two block stacks.
template <typename T>
class VisualBiasGenerator {
 public:
  VisualBiasGenerator(const VisualGeneratorConfig& config, Rng& rng);

  const VisualGeneratorConfig& config() const { return config_; }
  ag::ParamStore<T>& params() { return params_; }
  const ag::ParamStore<T>& params() const { return params_; }

  /// Returns V_b [n, d].
  ag::Var<T> forward(ag::Graph<T>& g, const NoiseVector& z_a, const NoiseVector& z_m,
                     const PositionLabel& z_p);
  ag::Mat<T> generate(const NoiseVector& z_a, const NoiseVector& z_m, const PositionLabel& z_p);

 private:
  struct Block {
    ag::Parameter<T>* t_w;
    ag::Parameter<T>* t_b;
    ag::Parameter<T>* s_w;
    ag::Parameter<T>* s_b;
    ag::Parameter<T>* v_w;
    ag::Parameter<T>* v_b;
    ag::Parameter<T>* sv_w;  // spatial -> video channel projection
  };

  Block make_block(const std::string& name, int in_channels, Rng& rng);
  StreamBundle<T> apply(ag::Graph<T>& g, const Block& b, const StreamBundle<T>& in);

  VisualGeneratorConfig config_;
  ag::ParamStore<T> params_;
  ag::Parameter<T>* spatial_in_w_;
  ag::Parameter<T>* spatial_in_b_;
  ag::Parameter<T>* temporal_in_w_;
  ag::Parameter<T>* temporal_in_b_;
  ag::Parameter<T>* video_in_w_;
  std::vector<Block> before_;
  std::vector<Block> after_;
  ag::Parameter<T>* out_w_;
  ag::Parameter<T>* out_b_;
};

/// Query bias generator: an embedded length-n position input concatenated with a
/// context latent, N2 linear layers, then M2 transposed 1-D convolutions up to [m, d].
template <typename T>
class QueryBiasGenerator {
 public:
  QueryBiasGenerator(const QueryGeneratorConfig& config, Rng& rng);

  const QueryGeneratorConfig& config() const { return config_; }
  ag::ParamStore<T>& params() { return params_; }
  const ag::ParamStore<T>& params() const { return params_; }

  /// Returns Q_b [m, d].
  ag::Var<T> forward(ag::Graph<T>& g, const NoiseVector& z_w, const NoiseVector& position);
  ag::Mat<T> generate(const NoiseVector& z_w, const NoiseVector& position);

  /// Number of stride-2 upsampling layers and the seed sequence length.
  int upsampling_layers() const { return upsample_; }
  int seed_length() const { return seed_length_; }

 private:
  struct Deconv {
    ag::Parameter<T>* w;
    ag::Parameter<T>* b;
    int kernel;
    int stride;
    int pad;
  };

  QueryGeneratorConfig config_;
  ag::ParamStore<T> params_;
  int upsample_ = 0;
  int seed_length_ = 1;
  ag::Parameter<T>* pos_w_;
  ag::Parameter<T>* pos_b_;
  std::vector<std::pair<ag::Parameter<T>*, ag::Parameter<T>*>> linears_;
  std::vector<Deconv> deconvs_;
};

/// Length-n position input for the query generator: foreground indicator of the
/// fake moment plus N(0, sigma^2) perturbation on every entry.
NoiseVector query_position_input(const Moment& fake, int n, int n_true, double sigma, Rng& rng);

/// Element-wise feature + bias; the input feature is left untouched.
FeatureMatrix make_bias_conflict(const FeatureMatrix& feature, const FeatureMatrix& bias);

template <typename T>
ag::Var<T> make_bias_conflict(ag::Var<T> feature, ag::Var<T> bias) {
  if (feature.rows() != bias.rows() || feature.cols() != bias.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "bias shape must match feature shape");
  }
  return ag::add(feature, bias);
}

extern template class VisualBiasGenerator<float>;
extern template class VisualBiasGenerator<double>;
extern template class QueryBiasGenerator<float>;
extern template class QueryBiasGenerator<double>;

}  // namespace bssard
