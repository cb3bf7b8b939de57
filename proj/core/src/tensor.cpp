#include "bridgenet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace bridgenet {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw ValueError("uniform_int: n must be positive");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

// ---------------------------------------------------------------------------
// TensorT
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T>::TensorT(Shape shape, T fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  impl_->shape = std::move(shape);
  impl_->values.assign(static_cast<size_t>(shape_numel(impl_->shape)), fill);
  impl_->requires_grad = requires_grad;
}

template <typename T>
TensorT<T>::TensorT(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
std::vector<T>& TensorT<T>::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), T(0));
  return impl_->grad;
}

template <typename T>
void TensorT<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
T TensorT<T>::item() const {
  if (numel() != 1)
    throw ShapeError("item() requires a single-element tensor, got shape " +
                     shape_str(impl_->shape));
  return impl_->values[0];
}

template <typename T>
T TensorT<T>::at(const std::vector<int>& idx) const {
  if (idx.size() != impl_->shape.size())
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " does not match shape " + shape_str(impl_->shape));
  int64_t off = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= impl_->shape[i])
      throw ShapeError("index out of range for shape " + shape_str(impl_->shape));
    off = off * impl_->shape[i] + idx[i];
  }
  return impl_->values[static_cast<size_t>(off)];
}

template <typename T>
TensorT<T> TensorT<T>::clone() const {
  TensorT<T> out;
  out.impl_ = std::make_shared<TensorImpl<T>>();
  out.impl_->shape = impl_->shape;
  out.impl_->values = impl_->values;
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

// ---------------------------------------------------------------------------
// IntTensor
// ---------------------------------------------------------------------------

IntTensor::IntTensor(Shape shape, int32_t fill) : shape_(std::move(shape)) {
  values_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

IntTensor::IntTensor(Shape shape, std::vector<int32_t> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_numel(shape_) != static_cast<int64_t>(values_.size()))
    throw ShapeError("value count " + std::to_string(values_.size()) +
                     " does not match shape " + shape_str(shape_));
}

// ---------------------------------------------------------------------------
// GradTapeT
// ---------------------------------------------------------------------------

namespace {
template <typename T>
GradTapeT<T>*& active_tape_slot() {
  thread_local GradTapeT<T>* slot = nullptr;
  return slot;
}
thread_local int no_grad_depth = 0;
uint64_t next_tape_id = 1;
}  // namespace

template <typename T>
GradTapeT<T>::GradTapeT() : id_(next_tape_id++) {
  prev_ = active_tape_slot<T>();
  active_tape_slot<T>() = this;
}

template <typename T>
GradTapeT<T>::~GradTapeT() {
  active_tape_slot<T>() = prev_;
}

template <typename T>
GradTapeT<T>* GradTapeT<T>::active() {
  return active_tape_slot<T>();
}

template <typename T>
GradTapeT<T>* GradTapeT<T>::recording() {
  return no_grad_depth == 0 ? active_tape_slot<T>() : nullptr;
}

template <typename T>
void GradTapeT<T>::reset() {
  ops_.clear();
  producer_.clear();
  node_impls_.clear();
}

template <typename T>
int GradTapeT<T>::node_for(const std::shared_ptr<TensorImpl<T>>& t) {
  if (t->tape_id == id_ && t->node >= 0) return t->node;
  t->tape_id = id_;
  t->node = static_cast<int>(producer_.size());
  producer_.push_back(-1);
  node_impls_.push_back(t);
  return t->node;
}

template <typename T>
void GradTapeT<T>::record_op(std::vector<int> input_nodes,
                             const std::shared_ptr<TensorImpl<T>>& out,
                             std::function<void()> backward_fn) {
  const int out_node = node_for(out);
  producer_[static_cast<size_t>(out_node)] = static_cast<int>(ops_.size());
  ops_.push_back(OpRecord{std::move(input_nodes), out_node, std::move(backward_fn)});
}

template <typename T>
void GradTapeT<T>::backward(const TensorT<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ValueError("backward: loss must be a defined scalar tensor");
  const auto& li = loss.impl();
  if (li->tape_id != id_ || li->node < 0)
    throw ValueError("backward: loss is not a node on this tape");

  // Mark records reachable from the loss, walking producers backwards.
  std::vector<char> needed(ops_.size(), 0);
  std::vector<char> node_needed(producer_.size(), 0);
  node_needed[static_cast<size_t>(li->node)] = 1;
  for (int i = static_cast<int>(ops_.size()) - 1; i >= 0; --i) {
    const OpRecord& op = ops_[static_cast<size_t>(i)];
    if (!node_needed[static_cast<size_t>(op.output)]) continue;
    needed[static_cast<size_t>(i)] = 1;
    for (int in : op.inputs) node_needed[static_cast<size_t>(in)] = 1;
  }

  // Interior (op-produced) grads are scratch for this sweep; only leaf
  // buffers persist and accumulate across backward calls.
  for (size_t n = 0; n < node_impls_.size(); ++n) {
    if (!node_needed[n] || producer_[n] < 0) continue;
    auto& g = node_impls_[n]->grad;
    if (!g.empty()) std::fill(g.begin(), g.end(), T(0));
  }

  // Seed and sweep. Each backward closure reads its output grad buffer and
  // accumulates into its input grad buffers, so a single reverse pass
  // propagates everything.
  {
    auto& g = li->grad;
    if (g.empty()) g.assign(li->values.size(), T(0));
    g[0] += T(1);
  }
  for (int i = static_cast<int>(ops_.size()) - 1; i >= 0; --i) {
    if (!needed[static_cast<size_t>(i)]) continue;
    ops_[static_cast<size_t>(i)].backward();
  }
}

// ---------------------------------------------------------------------------
// NoGradGuard
// ---------------------------------------------------------------------------

NoGradGuard::NoGradGuard() : prev_(no_grad_depth) { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { no_grad_depth = prev_; }
bool NoGradGuard::active() { return no_grad_depth > 0; }

template class TensorT<float>;
template class TensorT<double>;
template class GradTapeT<float>;
template class GradTapeT<double>;

}  // namespace bridgenet
