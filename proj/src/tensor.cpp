#include "spectralseg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace spectralseg {

#if defined(__GLIBC__)
// Activation tensors are tens of megabytes and short-lived; keep them on the
// main arena free lists instead of round-tripping through mmap/munmap (page
// faults dominated step time otherwise).
namespace {
struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  }
} const malloc_tuning;
}  // namespace
#endif

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  std::int64_t n = 1;
  for (int d : shape_) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= d;
  }
  v_.assign(static_cast<size_t>(n), 0.0);
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

void Tensor::fill(double value) { std::fill(v_.begin(), v_.end(), value); }

bool Tensor::all_finite() const {
  for (double x : v_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ", ";
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite values in tensor " + t.shape_str());
  }
}

}  // namespace spectralseg
