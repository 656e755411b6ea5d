#include "transkim/flops.hpp"

namespace transkim::flops {

namespace {
thread_local FlopScope* g_active = nullptr;
}

FlopScope::FlopScope() : parent_(g_active) { g_active = this; }

FlopScope::~FlopScope() {
  g_active = parent_;
  if (parent_) parent_->total_ += total_;
}

void add(std::int64_t n) {
  if (g_active) g_active->total_ += n;
}

PauseScope::PauseScope() : saved_(g_active) { g_active = nullptr; }

PauseScope::~PauseScope() { g_active = saved_; }

}  // namespace transkim::flops
