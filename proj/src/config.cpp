#include "transkim/config.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "transkim/errors.hpp"

namespace transkim {

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("model." + field + ": " + why);
}

}  // namespace

void ModelConfig::validate() const {
  require(n_layers >= 1, "n_layers", "must be >= 1");
  require(n_heads >= 1, "n_heads", "must be >= 1");
  require(d_model >= 1, "d_model", "must be >= 1");
  require(d_model % n_heads == 0, "d_model", "must be divisible by n_heads");
  require(d_ffn >= 1, "d_ffn", "must be >= 1");
  require(vocab_size >= 1, "vocab_size", "must be >= 1");
  require(max_len >= 1, "max_len", "must be >= 1");
  require(n_classes >= 1, "n_classes", "must be >= 1");
  require(tau > 0, "tau", "must be > 0");
  require(lambda >= 0, "lambda", "must be >= 0");
  require(sigma > 0, "sigma", "must be > 0");
  require(ln_eps > 0, "ln_eps", "must be > 0");
  if (force_keep == ForceKeep::kCustom) {
    for (int p : force_keep_positions) {
      require(p >= 0 && p < max_len, "force_keep", "position out of range");
    }
  }
}

std::vector<std::size_t> ModelConfig::forced_positions(std::size_t len) const {
  std::vector<std::size_t> out;
  switch (force_keep) {
    case ForceKeep::kClsOnly:
      if (len > 0) out.push_back(0);
      break;
    case ForceKeep::kNone:
      break;
    case ForceKeep::kCustom:
      for (int p : force_keep_positions) {
        if (static_cast<std::size_t>(p) < len) out.push_back(static_cast<std::size_t>(p));
      }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      break;
  }
  return out;
}

std::string to_string(ForceKeep f) {
  switch (f) {
    case ForceKeep::kClsOnly: return "cls_only";
    case ForceKeep::kNone: return "none";
    case ForceKeep::kCustom: return "custom";
  }
  return "?";
}

std::string to_string(MaskMode m) {
  return m == MaskMode::kAdditive ? "additive" : "multiplicative";
}

std::string to_string(HeadKind h) {
  return h == HeadKind::kSequence ? "sequence" : "token";
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "n_layers=" << n_layers << ";n_heads=" << n_heads << ";d_model=" << d_model
     << ";d_ffn=" << d_ffn << ";vocab_size=" << vocab_size << ";max_len=" << max_len
     << ";n_classes=" << n_classes << ";head=" << to_string(head)
     << ";force_keep=" << to_string(force_keep);
  if (force_keep == ForceKeep::kCustom) {
    os << ":";
    for (std::size_t i = 0; i < force_keep_positions.size(); ++i) {
      os << (i ? "," : "") << force_keep_positions[i];
    }
  }
  os << ";mask_mode=" << to_string(mask_mode);
  return os.str();
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string ModelConfig::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

}  // namespace transkim
