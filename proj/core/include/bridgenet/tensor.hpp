#pragma once
// Dense row-major tensor with reverse-mode autodiff on an explicit tape.
// float is the training dtype; the double instantiation backs the
// finite-difference gradient oracle.

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace bridgenet {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Rng: splitmix64. The raw stream is produced by integer ops only, so a seed
// reproduces the same draws on every platform. normal() sums 12 uniforms
// (Irwin-Hall) to stay free of libm transcendentals.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), unbiased via rejection
  int uniform_int(int n);

  // mean 0, stddev 1 (Irwin-Hall approximation)
  double normal() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
  }

  // independent derived stream, e.g. one per dataset sample
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0xD1B54A32D192ED03ull * (stream + 1)));
    r.next_u64();
    return r;
  }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

// ---------------------------------------------------------------------------
// Tensor storage. Shape is fixed at creation; reshape/permute produce new
// tensors. Copying a TensorT copies the handle, not the buffer.
// ---------------------------------------------------------------------------
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  // tape linkage; valid only while tape_id matches the active tape
  uint64_t tape_id = 0;
  int node = -1;
};

template <typename T>
class GradTapeT;

template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape shape, T fill = T(0), bool requires_grad = false);
  TensorT(Shape shape, std::vector<T> values, bool requires_grad = false);

  static TensorT scalar(T v) { return TensorT(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }

  std::vector<T>& values() { return impl_->values; }
  const std::vector<T>& values() const { return impl_->values; }
  T* data() { return impl_->values.data(); }
  const T* data() const { return impl_->values.data(); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  TensorT& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  // grad buffer, allocated (zeroed) on demand
  std::vector<T>& grad();
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad();

  T item() const;
  T at(const std::vector<int>& idx) const;

  TensorT clone() const;  // deep copy, detached from any tape

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Plain integer map (labels, masks as written to disk). No autodiff.
class IntTensor {
 public:
  IntTensor() = default;
  explicit IntTensor(Shape shape, int32_t fill = 0);
  IntTensor(Shape shape, std::vector<int32_t> values);

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(values_.size()); }
  std::vector<int32_t>& values() { return values_; }
  const std::vector<int32_t>& values() const { return values_; }

 private:
  Shape shape_;
  std::vector<int32_t> values_;
};

// ---------------------------------------------------------------------------
// GradTape: ordered op records; construction installs the tape as the
// thread-local active tape, destruction restores the previous one. Backward
// runs one reverse sweep, visiting each record at most once; gradients
// accumulate into existing buffers (callers zero explicitly).
// ---------------------------------------------------------------------------
template <typename T>
class GradTapeT {
 public:
  GradTapeT();
  ~GradTapeT();
  GradTapeT(const GradTapeT&) = delete;
  GradTapeT& operator=(const GradTapeT&) = delete;

  static GradTapeT* active();
  // active tape if recording is enabled, else nullptr
  static GradTapeT* recording();

  size_t num_ops() const { return ops_.size(); }
  void reset();

  void backward(const TensorT<T>& loss);

  // -- recording interface used by ops --
  int node_for(const std::shared_ptr<TensorImpl<T>>& t);
  void record_op(std::vector<int> input_nodes,
                 const std::shared_ptr<TensorImpl<T>>& out,
                 std::function<void()> backward_fn);

 private:
  struct OpRecord {
    std::vector<int> inputs;
    int output;
    std::function<void()> backward;
  };
  std::vector<OpRecord> ops_;
  std::vector<int> producer_;  // node id -> op index, -1 for leaves
  std::vector<std::shared_ptr<TensorImpl<T>>> node_impls_;
  uint64_t id_;
  GradTapeT* prev_ = nullptr;
};

// Disables tape recording for its lifetime (evaluation / oracle re-runs).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  int prev_;
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;
using GradTape = GradTapeT<float>;
using GradTapeD = GradTapeT<double>;

extern template class TensorT<float>;
extern template class TensorT<double>;
extern template class GradTapeT<float>;
extern template class GradTapeT<double>;

}  // namespace bridgenet
