#include <atomic>
#include <cstdlib>
#include <cstring>

#include "maf/autograd.hpp"
#include "maf/ops.hpp"
#include "maf/tensor.hpp"

namespace maf {

namespace {

bool checked_from_env() {
  const char* v = std::getenv("MAF_CHECKED");
  return !(v && std::strcmp(v, "0") == 0);
}

std::atomic<bool>& checked_flag() {
  static std::atomic<bool> flag{checked_from_env()};
  return flag;
}

thread_local Index conv_calls = 0;

}  // namespace

bool checked_mode() noexcept { return checked_flag().load(std::memory_order_relaxed); }
void set_checked_mode(bool on) noexcept { checked_flag().store(on, std::memory_order_relaxed); }

Index conv_call_count() noexcept { return conv_calls; }
void reset_conv_call_count() noexcept { conv_calls = 0; }
void note_conv_call() noexcept { ++conv_calls; }

namespace detail {

bool& grad_enabled_flag() noexcept {
  thread_local bool enabled = true;
  return enabled;
}

std::string& corrupt_backward_op() noexcept {
  static std::string op;
  return op;
}

}  // namespace detail

}  // namespace maf

#include "maf/cost.hpp"

namespace maf {

namespace {
thread_local CostRecorder* active_recorder = nullptr;
}

CostRecorder::CostRecorder() : prev_(active_recorder) { active_recorder = this; }
CostRecorder::~CostRecorder() { active_recorder = prev_; }
CostRecorder* CostRecorder::active() noexcept { return active_recorder; }

}  // namespace maf
