#include "transkim/model.hpp"

namespace transkim {

template <typename T>
Model<T> Model<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model m;
  m.cfg_ = cfg;
  const auto d = static_cast<std::size_t>(cfg.d_model);
  auto normal_tensor = [&](Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape), true);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, cfg.sigma));
    return t;
  };
  m.embedding.token = normal_tensor({static_cast<std::size_t>(cfg.vocab_size), d});
  m.embedding.position = normal_tensor({static_cast<std::size_t>(cfg.max_len), d});
  m.embedding.ln = make_layer_norm<T>(d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    m.predictors.push_back(make_skim_predictor<T>(cfg, rng));
    m.layers.push_back(make_encoder_layer<T>(cfg, rng));
  }
  m.head.kind = cfg.head;
  m.head.proj = make_linear<T>(d, static_cast<std::size_t>(cfg.n_classes), cfg.sigma, rng);
  return m;
}

template <typename T>
std::vector<NamedParam<T>> Model<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  auto lin = [&](const std::string& prefix, const Linear<T>& l) {
    out.push_back({prefix + ".weight", l.weight});
    out.push_back({prefix + ".bias", l.bias});
  };
  auto ln = [&](const std::string& prefix, const LayerNormParams<T>& p) {
    out.push_back({prefix + ".gain", p.gain});
    out.push_back({prefix + ".bias", p.bias});
  };
  out.push_back({"embed.token", embedding.token});
  out.push_back({"embed.position", embedding.position});
  ln("embed.ln", embedding.ln);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string s = "skim" + std::to_string(l + 1);
    lin(s + ".fc1", predictors[l].fc1);
    ln(s + ".ln", predictors[l].ln);
    lin(s + ".fc2", predictors[l].fc2);
    const std::string p = "layer" + std::to_string(l + 1);
    lin(p + ".attn.q", layers[l].q);
    lin(p + ".attn.k", layers[l].k);
    lin(p + ".attn.v", layers[l].v);
    lin(p + ".attn.o", layers[l].o);
    ln(p + ".ln_attn", layers[l].ln_attn);
    lin(p + ".ffn.in", layers[l].ffn_in);
    lin(p + ".ffn.out", layers[l].ffn_out);
    ln(p + ".ln_ffn", layers[l].ln_ffn);
  }
  lin("head", head.proj);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
std::size_t Model<T>::predictor_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) {
    if (p.name.rfind("skim1.", 0) == 0) n += p.tensor.numel();
  }
  return n;
}

template <typename T>
std::size_t Model<T>::encoder_layer_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) {
    if (p.name.rfind("layer1.", 0) == 0) n += p.tensor.numel();
  }
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.cfg_ = cfg_;
  auto ct = [](const Tensor<T>& t) {
    auto c = t.template cast<U>();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  auto lin = [&](const Linear<T>& l) { return Linear<U>{ct(l.weight), ct(l.bias)}; };
  auto ln = [&](const LayerNormParams<T>& p) {
    return LayerNormParams<U>{ct(p.gain), ct(p.bias)};
  };
  m.embedding = {ct(embedding.token), ct(embedding.position), ln(embedding.ln)};
  for (const auto& l : layers) {
    m.layers.push_back({lin(l.q), lin(l.k), lin(l.v), lin(l.o), lin(l.ffn_in),
                        lin(l.ffn_out), ln(l.ln_attn), ln(l.ln_ffn)});
  }
  for (const auto& p : predictors) {
    m.predictors.push_back({lin(p.fc1), ln(p.ln), lin(p.fc2)});
  }
  m.head = {head.kind, lin(head.proj)};
  return m;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace transkim
