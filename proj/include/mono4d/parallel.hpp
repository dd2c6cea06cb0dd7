#pragma once

#include <cstddef>
#include <functional>

namespace mono4d {

/// Worker cap from the MONO4D_THREADS environment variable.
/// Unset or 0 means auto (hardware concurrency); 1 disables threading.
int thread_limit();

/// Runs fn(i) for i in [0, n). Work items write only to their own output
/// slots, so results are identical for any thread count; reductions over the
/// slots must be done by the caller in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Compensated (Kahan) accumulator: running sums are independent of chunk
/// boundaries to well below 1e-12 relative.
class KahanSum {
 public:
  void add(double x) {
    double y = x - c_;
    double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

}  // namespace mono4d
