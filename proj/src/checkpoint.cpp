#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "transkim/errors.hpp"
#include "transkim/model.hpp"

namespace transkim {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'K', 'M'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) {
      throw SchemaError("checkpoint: truncated at byte " + std::to_string(pos_));
    }
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const ModelConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.n_layers));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.d_ffn));
  w.u32(static_cast<std::uint32_t>(c.vocab_size));
  w.u32(static_cast<std::uint32_t>(c.max_len));
  w.u32(static_cast<std::uint32_t>(c.n_classes));
  w.u32(static_cast<std::uint32_t>(c.head));
  w.u32(static_cast<std::uint32_t>(c.force_keep));
  w.u32(static_cast<std::uint32_t>(c.force_keep_positions.size()));
  for (int p : c.force_keep_positions) w.u32(static_cast<std::uint32_t>(p));
  w.u32(static_cast<std::uint32_t>(c.mask_mode));
  w.f64(c.tau);
  w.f64(c.lambda);
  w.f64(c.mu0);
  w.f64(c.sigma);
  w.f64(c.ln_eps);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.n_layers = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.d_model = static_cast<int>(r.u32());
  c.d_ffn = static_cast<int>(r.u32());
  c.vocab_size = static_cast<int>(r.u32());
  c.max_len = static_cast<int>(r.u32());
  c.n_classes = static_cast<int>(r.u32());
  const auto head = r.u32();
  const auto force = r.u32();
  if (head > 1 || force > 2) throw SchemaError("checkpoint: bad enum in config record");
  c.head = static_cast<HeadKind>(head);
  c.force_keep = static_cast<ForceKeep>(force);
  const auto nforce = r.u32();
  for (std::uint32_t i = 0; i < nforce; ++i) {
    c.force_keep_positions.push_back(static_cast<int>(r.u32()));
  }
  const auto mode = r.u32();
  if (mode > 1) throw SchemaError("checkpoint: bad mask mode in config record");
  c.mask_mode = static_cast<MaskMode>(mode);
  c.tau = r.f64();
  c.lambda = r.f64();
  c.mu0 = r.f64();
  c.sigma = r.f64();
  c.ln_eps = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("checkpoint: invalid config record: ") + e.what());
  }
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  write_config(w, model.config());
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (const auto d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (const float v : p.tensor.data()) w.f32(v);
  }
  return w.take();
}

Model<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw SchemaError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw SchemaError("checkpoint: unsupported version " + std::to_string(version));
  }
  const ModelConfig cfg = read_config(r);
  Model<float> model = Model<float>::init(cfg, 0);
  std::map<std::string, Tensor<float>> by_name;
  for (auto& p : model.parameters()) by_name.emplace(p.name, p.tensor);
  const auto count = r.u32();
  if (count != by_name.size()) {
    throw SchemaError("checkpoint: expected " + std::to_string(by_name.size()) +
                      " parameters, found " + std::to_string(count));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw SchemaError("checkpoint: unknown parameter " + name);
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (shape != it->second.shape()) {
      throw SchemaError("checkpoint: parameter " + name + " has shape " + shape_str(shape) +
                        ", expected " + shape_str(it->second.shape()));
    }
    for (auto& v : it->second.data()) v = r.f32();
  }
  if (!r.done()) throw SchemaError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const Model<float>& model, const std::string& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SchemaError("cannot read checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace transkim
