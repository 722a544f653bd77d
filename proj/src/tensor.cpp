#include "signformer/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace signformer {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

static void validate_shape(const Shape& s) {
  for (int d : s) check(d >= 1, "tensor dimension must be >= 1, got shape ", shape_str(s));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  validate_shape(shape);
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(shape_numel(t.impl_->shape), value);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  validate_shape(shape);
  check(shape_numel(shape) == data.size(), "data length ", data.size(),
        " does not match shape ", shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

int Tensor::dim(int i) const {
  int r = rank();
  if (i < 0) i += r;
  check(i >= 0 && i < r, "dim index ", i, " out of range for ", shape_str(shape()));
  return impl_->shape[i];
}

std::span<float> Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

std::span<const float> Tensor::grad() const {
  check(has_grad(), "tensor has no gradient buffer");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
}

float Tensor::item() const {
  check(size() == 1, "item() called on non-scalar ", shape_str(shape()));
  return impl_->data[0];
}

float Tensor::at(std::initializer_list<int> idx) const {
  check(static_cast<int>(idx.size()) == rank(), "index rank mismatch");
  std::size_t flat = 0;
  int i = 0;
  for (int v : idx) {
    check(v >= 0 && v < impl_->shape[i], "index ", v, " out of bounds at dim ", i);
    flat = flat * static_cast<std::size_t>(impl_->shape[i]) + static_cast<std::size_t>(v);
    ++i;
  }
  return impl_->data[flat];
}

bool Tensor::all_finite() const {
  for (float v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_rule) {
  nodes_.push_back(std::move(backward_rule));
}

void Tape::touch(const Tensor& t) {
  if (t.requires_grad()) touched_.push_back(t.impl_);
}

void Tape::backward(Tensor& loss) {
  check(loss.size() == 1, "backward requires a scalar loss, got ", shape_str(loss.shape()));
  std::sort(touched_.begin(), touched_.end());
  touched_.erase(std::unique(touched_.begin(), touched_.end()), touched_.end());
  std::vector<std::vector<float>> stashed(touched_.size());
  for (std::size_t i = 0; i < touched_.size(); ++i)
    if (!touched_[i]->grad.empty()) {
      stashed[i] = std::move(touched_[i]->grad);
      touched_[i]->grad.clear();
    }
  loss.grad()[0] += 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  for (std::size_t i = 0; i < touched_.size(); ++i) {
    if (stashed[i].empty()) continue;
    auto& impl = *touched_[i];
    impl.ensure_grad();
    for (std::size_t e = 0; e < stashed[i].size(); ++e) impl.grad[e] += stashed[i][e];
  }
  nodes_.clear();
  touched_.clear();
}

}  // namespace signformer
