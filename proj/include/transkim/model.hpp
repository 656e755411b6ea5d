#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transkim/skim.hpp"

namespace transkim {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// Encoder with one skim predictor in front of every layer, plus a task head.
template <typename T>
class Model {
 public:
  // Random initialization (weights N(0, sigma), zero biases, unit LN gains,
  // unbalanced predictor biases). Draws happen in parameters() order.
  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& config() { return cfg_; }

  // Fixed, name-sorted-by-construction list of every trainable tensor.
  std::vector<NamedParam<T>> parameters() const;
  std::size_t parameter_count() const;
  std::size_t predictor_parameter_count() const;
  std::size_t encoder_layer_parameter_count() const;
  void zero_grad();

  // Deep copy converted to another precision.
  template <typename U>
  Model<U> cast() const;

  EmbeddingParams<T> embedding;
  std::vector<EncoderLayerParams<T>> layers;
  std::vector<SkimPredictorParams<T>> predictors;
  TaskHead<T> head;

 private:
  template <typename U>
  friend class Model;
  ModelConfig cfg_;
};

// Binary checkpoint: "TSKM", u32 version, config record, u32 parameter count,
// then per parameter: u32 name length, name bytes, u32 rank, u32 dims, f32
// values. All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model);
Model<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Model<float>& model, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace transkim
