#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "signformer/error.hpp"

namespace signformer {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
};
}  // namespace detail

// Dense row-major float32 tensor. Values are written once at creation; only
// the grad buffer mutates afterwards. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const;
  std::size_t size() const { return impl_->data.size(); }

  std::span<const float> data() const { return impl_->data; }
  std::span<float> data_mut() { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<float> grad();           // allocates zeros on first use
  std::span<const float> grad() const;
  void zero_grad();

  float item() const;
  float at(std::initializer_list<int> idx) const;

  bool all_finite() const;

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Records the backward rule of every op whose inputs carry gradients, in
// creation order. Constructing a Tape makes it the active tape for the
// current thread; destruction restores the previous one (LIFO). Tapes on
// different threads are independent.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_rule);
  // Registers a tensor whose grad buffer this pass will accumulate into.
  // Pre-existing grads are set aside during backward and added back once at
  // the end, so repeating an identical pass doubles gradients bit-exactly.
  void touch(const Tensor& t);
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1, runs recorded rules newest-first accumulating
  // into grad buffers, then clears the tape. loss must be scalar.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<std::shared_ptr<detail::TensorImpl>> touched_;
  Tape* prev_ = nullptr;
};

// True when a tape is active and any argument needs gradients.
inline bool should_record(const Tensor& a) {
  return Tape::active() != nullptr && a.requires_grad();
}
inline bool should_record(const Tensor& a, const Tensor& b) {
  return Tape::active() != nullptr && (a.requires_grad() || b.requires_grad());
}

}  // namespace signformer
