#pragma once

#include <cstdint>

// Instrumented FLOP counting. Graph operations report their cost to the
// innermost active FlopScope on the calling thread; with no scope active the
// calls are no-ops.
//
// Convention: one multiply-add is 2 FLOPs. Elementwise and row costs:
//   add / sub / mul / scale / add_scalar    1 per output element
//   softmax (plain or key-masked)           5 per element (max, sub, exp, sum, div)
//   layer norm                              7 per element (mean, center, square,
//                                           accumulate, scale, gain, bias)
//   gelu                                    8 per element
//   gather / reshape / transpose / select   0
namespace transkim::flops {

inline constexpr std::int64_t kSoftmaxPerElement = 5;
inline constexpr std::int64_t kLayerNormPerElement = 7;
inline constexpr std::int64_t kGeluPerElement = 8;

class FlopScope {
 public:
  FlopScope();
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

  std::int64_t total() const { return total_; }

 private:
  friend void add(std::int64_t);
  std::int64_t total_ = 0;
  FlopScope* parent_;
};

void add(std::int64_t n);

// Temporarily detaches counting (e.g. for embedding or head work that sits
// outside the counted encoder stack).
class PauseScope {
 public:
  PauseScope();
  ~PauseScope();
  PauseScope(const PauseScope&) = delete;
  PauseScope& operator=(const PauseScope&) = delete;

 private:
  FlopScope* saved_;
};

}  // namespace transkim::flops
