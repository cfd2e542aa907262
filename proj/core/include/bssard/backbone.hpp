#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bssard/autograd.hpp"
#include "bssard/core.hpp"

namespace bssard {

enum class InjectionPoint { kBefore, kAfter };

std::string_view to_string(InjectionPoint p);
InjectionPoint parse_injection_point(std::string_view s);

/// Where each modality's bias vector is added relative to its feature encoder.
struct InjectionConfig {
  InjectionPoint visual = InjectionPoint::kBefore;
  InjectionPoint query = InjectionPoint::kAfter;
};

struct BackboneConfig {
  int n = 32;        // padded video length
  int m = 8;         // query length
  int d_v = 32;      // raw visual feature width
  int vocab = 50;
  int d = 32;        // shared model width
  int layers = 1;    // encoder blocks per modality
  int ffn = 64;      // feed-forward hidden width
  int conv_kernel = 3;
};

enum class Provenance { kReal, kVisualBias, kQueryBias };

/// Graph handles produced by one backbone forward.
template <typename T>
struct BackboneOutputs {
  ag::Var<T> x;    // fused cross-modal features [n, d]
  ag::Var<T> p_s;  // [1, n]
  ag::Var<T> p_e;  // [1, n]
  ag::Var<T> p_d;  // [1, 2]
  Provenance provenance = Provenance::kReal;
};

/// Plain-valued prediction for inference and inspection.
struct SpanPrediction {
  std::vector<double> p_s;
  std::vector<double> p_e;
  std::vector<double> p_d;
};

/// Inputs of one grounding forward pass.
struct GroundingInput {
  const FeatureMatrix* video = nullptr;  // [n, d_v]
  std::span<const std::int32_t> query;   // [m]
  int n_true = 0;
};

/// Span-based grounding model: per-modality transformer encoders, query-to-video
/// cross attention with a temporal modeling block, a span predictor and a bias
/// discriminator. Both bias-injection seams are exposed through forward().
template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, Rng& rng);

  const BackboneConfig& config() const { return config_; }
  ag::ParamStore<T>& params() { return params_; }
  const ag::ParamStore<T>& params() const { return params_; }

  /// At most one of the bias vectors may be given. Bias shapes: visual [n, d],
  /// query [m, d]. Throws kShapeMismatch on any shape violation.
  BackboneOutputs<T> forward(ag::Graph<T>& g, const GroundingInput& input,
                             std::optional<ag::Var<T>> visual_bias,
                             std::optional<ag::Var<T>> query_bias,
                             const InjectionConfig& injection);

  SpanPrediction predict(const GroundingInput& input,
                         const std::optional<ag::Mat<T>>& visual_bias = std::nullopt,
                         const std::optional<ag::Mat<T>>& query_bias = std::nullopt,
                         const InjectionConfig& injection = {});

 private:
  struct Block {
    ag::Parameter<T>* ln1_g;
    ag::Parameter<T>* ln1_b;
    ag::Parameter<T>* wq;
    ag::Parameter<T>* wk;
    ag::Parameter<T>* wv;
    ag::Parameter<T>* wo;
    ag::Parameter<T>* ln2_g;
    ag::Parameter<T>* ln2_b;
    ag::Parameter<T>* w1;
    ag::Parameter<T>* b1;
    ag::Parameter<T>* w2;
    ag::Parameter<T>* b2;
  };

  Block make_block(const std::string& name, Rng& rng);
  ag::Var<T> encoder_block(ag::Graph<T>& g, const Block& b, ag::Var<T> x,
                           const std::vector<std::uint8_t>& key_mask);
  ag::Var<T> attention(ag::Graph<T>& g, ag::Var<T> xq, ag::Var<T> xkv, ag::Parameter<T>* wq,
                       ag::Parameter<T>* wk, ag::Parameter<T>* wv, ag::Parameter<T>* wo,
                       const std::vector<std::uint8_t>& key_mask);

  BackboneConfig config_;
  ag::ParamStore<T> params_;
  ag::Mat<T> video_positions_;
  ag::Mat<T> query_positions_;

  ag::Parameter<T>* video_proj_w_;
  ag::Parameter<T>* video_proj_b_;
  ag::Parameter<T>* token_embedding_;
  std::vector<Block> video_encoder_;
  std::vector<Block> query_encoder_;
  Block cross_;
  ag::Parameter<T>* fuse_w_;
  ag::Parameter<T>* fuse_b_;
  ag::Parameter<T>* conv_w_;
  ag::Parameter<T>* conv_b_;
  Block modeling_;
  ag::Parameter<T>* start_w_;
  ag::Parameter<T>* start_b_;
  ag::Parameter<T>* end_w_;
  ag::Parameter<T>* end_b_;
  ag::Parameter<T>* disc_w_;
  ag::Parameter<T>* disc_b_;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);
void to_json(nlohmann::json& j, const InjectionConfig& c);
void from_json(const nlohmann::json& j, InjectionConfig& c);

/// Sinusoidal position table [len, d].
template <typename T>
ag::Mat<T> sinusoidal_positions(int len, int d);

/// argmax over s <= e of p_s[s] * p_e[e]; ties go to the smaller s, then smaller e.
Moment decode_span(std::span<const double> p_s, std::span<const double> p_e);

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace bssard
