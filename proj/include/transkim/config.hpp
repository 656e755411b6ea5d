#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace transkim {

enum class ForceKeep { kClsOnly, kNone, kCustom };

// How skimmed keys are hidden from attention during the full-length pass.
//  kAdditive:       softmax renormalizes over surviving keys (identical to
//                   physically removing them).
//  kMultiplicative: attention probabilities are multiplied by the mask after
//                   softmax, without renormalization.
enum class MaskMode { kAdditive, kMultiplicative };

enum class HeadKind { kSequence, kToken };

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int d_ffn = 256;
  int vocab_size = 1024;
  int max_len = 64;
  int n_classes = 2;
  HeadKind head = HeadKind::kSequence;

  double tau = 0.1;
  double lambda = 0.0;
  double mu0 = 5.0;
  double sigma = 0.02;
  double ln_eps = 1e-5;

  ForceKeep force_keep = ForceKeep::kClsOnly;
  std::vector<int> force_keep_positions;  // used with kCustom
  MaskMode mask_mode = MaskMode::kAdditive;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // Positions that are never skimmed, for a sequence of the given length.
  std::vector<std::size_t> forced_positions(std::size_t len) const;

  std::size_t head_dim() const { return static_cast<std::size_t>(d_model / n_heads); }

  // Stable textual form; its FNV-1a hash is the config digest.
  std::string canonical() const;
  std::string digest() const;
};

std::string to_string(ForceKeep f);
std::string to_string(MaskMode m);
std::string to_string(HeadKind h);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace transkim
