#pragma once

// UACANet assembly: backbone -> three PAA encoders -> PAA decoder -> three
// UACA stages (coarse to fine), four deeply supervised saliency logits.

#include <array>
#include <nlohmann/json.hpp>

#include "uacanet/attention.hpp"
#include "uacanet/uaca.hpp"

namespace uacanet {

struct ModelConfig {
  std::int64_t width = 32;  // 32 small, 256 large
  std::vector<std::int64_t> backbone_widths{16, 32, 64, 128};
  std::int64_t side = 352;
  std::int64_t reduction = 8;
  bool disable_paa = false;
  bool disable_uncertainty = false;

  void validate() const {
    if (side < 32 || side % 32 != 0) {
      throw std::invalid_argument(detail::concat_msg("model.side must be a positive multiple of 32, got ", side));
    }
    if (width < 1 || width % reduction != 0) {
      throw std::invalid_argument(detail::concat_msg("model.width ", width,
                                                     " must be a positive multiple of the attention reduction ",
                                                     reduction));
    }
    if (backbone_widths.size() != 4) {
      throw std::invalid_argument("model.backbone_widths needs 4 stage widths");
    }
    for (auto c : backbone_widths)
      if (c < 1) throw std::invalid_argument("model.backbone_widths must be positive");
  }

  nlohmann::json to_json() const {
    return {{"width", width},
            {"backbone_widths", backbone_widths},
            {"side", side},
            {"reduction", reduction},
            {"disable_paa", disable_paa},
            {"disable_uncertainty", disable_uncertainty}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.width = j.at("width").get<std::int64_t>();
    c.backbone_widths = j.at("backbone_widths").get<std::vector<std::int64_t>>();
    c.side = j.at("side").get<std::int64_t>();
    c.reduction = j.at("reduction").get<std::int64_t>();
    c.disable_paa = j.at("disable_paa").get<bool>();
    c.disable_uncertainty = j.at("disable_uncertainty").get<bool>();
    return c;
  }

  /// Name of the first field that differs, or empty when equal.
  std::string first_difference(const ModelConfig& other) const {
    const auto a = to_json(), b = other.to_json();
    for (auto it = a.begin(); it != a.end(); ++it)
      if (!b.contains(it.key()) || b.at(it.key()) != it.value()) return it.key();
    return {};
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Convolutional stand-in for the classification backbone: four stages of
/// two 3x3 conv + group norm + relu blocks, each stage halving resolution.
template <typename T>
struct BackboneLite {
  std::array<std::array<ConvNormAct<T>, 2>, 4> stages;

  BackboneLite() = default;
  BackboneLite(Initializer& init, const std::vector<std::int64_t>& widths) {
    std::int64_t cin = 3;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto c = widths.at(s);
      stages[s][0] = ConvNormAct<T>(init, cin, c, 3, 3, Conv2dOptions{2, 1, 1, 1});
      stages[s][1] = ConvNormAct<T>(init, c, c, 3, 3, Conv2dOptions::same(3, 3));
      cin = c;
    }
  }

  /// Features at strides 4, 8 and 16.
  std::array<Tensor<T>, 3> operator()(const Tensor<T>& image) const {
    if (image.ndim() != 4 || image.dim(1) != 3 || image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
      throw ShapeError("backbone expects [B,3,S,S] with S divisible by 32, got " +
                       shape_str(image.shape()));
    }
    std::array<Tensor<T>, 3> out;
    Tensor<T> y = image;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      y = stages[s][1](stages[s][0](y));
      if (s >= 1) out[s - 1] = y;
    }
    return out;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t l = 0; l < 2; ++l)
        stages[s][l].collect(detail::concat_msg(prefix, ".stage", s + 1, ".", l), out);
  }
};

template <typename T>
struct ModelOutput {
  /// decoder, UACA-1, UACA-2, UACA-3 logits at input resolution
  std::array<Tensor<T>, 4> logits;
  Tensor<T> decoder_logit;  // at stride 4
  std::array<UACAOutput<T>, 3> stages;

  /// Final probability map, sigmoid of the last logit.
  Tensor<T> probability() const { return sigmoid(logits[3]); }
};

template <typename T>
class UACANet {
 public:
  explicit UACANet(ModelConfig config, std::uint64_t seed = 0) : config_(std::move(config)) {
    config_.validate();
    Initializer init(seed);
    const bool with_paa = !config_.disable_paa;
    const auto width = config_.width;
    backbone_ = BackboneLite<T>(init, config_.backbone_widths);
    for (std::size_t k = 0; k < 3; ++k)
      encoders_[k] = PAAEncoder<T>(init, config_.backbone_widths[k + 1], width, with_paa, config_.reduction);
    decoder_ = PAADecoder<T>(init, width, with_paa, config_.reduction);
    for (auto& stage : uaca_)
      stage = UACAParams<T>(init, 2 * width, width, !config_.disable_uncertainty);
  }

  const ModelConfig& config() const { return config_; }

  ModelOutput<T> forward(const Tensor<T>& image) const {
    if (image.ndim() != 4 || image.dim(2) != config_.side || image.dim(3) != config_.side) {
      throw ShapeError(detail::concat_msg("model expects [B,3,", config_.side, ",", config_.side,
                                          "], got ", shape_str(image.shape())));
    }
    const auto feats = backbone_(image);
    std::array<Tensor<T>, 3> enc;
    for (std::size_t k = 0; k < 3; ++k) enc[k] = encoders_[k](feats[k]);
    const auto decoded = decoder_(enc[0], enc[1], enc[2]);

    ModelOutput<T> out;
    out.decoder_logit = decoded.logit;
    // Bottom-up stream: coarsest encoder output first.
    Tensor<T> prev_feature = decoded.feature;
    Tensor<T> guidance = decoded.logit;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& e = enc[2 - s];
      auto x = concat_channels<T>({e, bilinear_resize(prev_feature, e.dim(2), e.dim(3))});
      out.stages[s] = uaca_forward(x, guidance, uaca_[s]);
      prev_feature = out.stages[s].feature;
      guidance = out.stages[s].logit;
    }
    const auto side = config_.side;
    out.logits[0] = bilinear_resize(decoded.logit, side, side);
    for (std::size_t s = 0; s < 3; ++s) out.logits[s + 1] = bilinear_resize(out.stages[s].logit, side, side);
    return out;
  }

  /// Zeroes every UACA saliency head so each stage's logit equals its
  /// resized guidance.
  void zero_uaca_heads() {
    for (auto& stage : uaca_) stage.head.zero_();
  }

  NamedParams<T> named_parameters() const {
    NamedParams<T> out;
    backbone_.collect("backbone", out);
    for (std::size_t k = 0; k < 3; ++k) encoders_[k].collect(detail::concat_msg("encoder", k + 2), out);
    decoder_.collect("decoder", out);
    for (std::size_t s = 0; s < 3; ++s) uaca_[s].collect(detail::concat_msg("uaca", s + 1), out);
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : named_parameters()) n += p.numel();
    return n;
  }

  const BackboneLite<T>& backbone() const { return backbone_; }
  const PAAEncoder<T>& encoder(std::size_t k) const { return encoders_.at(k); }
  const PAADecoder<T>& decoder() const { return decoder_; }
  const UACAParams<T>& uaca(std::size_t s) const { return uaca_.at(s); }

 private:
  ModelConfig config_;
  BackboneLite<T> backbone_;
  std::array<PAAEncoder<T>, 3> encoders_;
  PAADecoder<T> decoder_;
  std::array<UACAParams<T>, 3> uaca_;
};

}  // namespace uacanet
