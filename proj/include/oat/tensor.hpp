#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <vector>

namespace oat {

namespace detail {

// leaves doubles default-initialized so fully-overwritten buffers skip the
// zero-fill; Tensor's constructors still produce zeroed data
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  template <class U>
  void construct(U* p) noexcept(noexcept(::new (static_cast<void*>(p)) U)) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

/// Channel-major feature map: value (c, y, x) lives at v[(c*h + y)*w + x].
struct Tensor {
  using Buffer = std::vector<double, detail::DefaultInitAllocator<double>>;

  int c = 0;
  int h = 0;
  int w = 0;
  Buffer v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_) {
    v.resize(static_cast<std::size_t>(c_) * h_ * w_);
    std::fill(v.begin(), v.end(), 0.0);
  }

  static Tensor uninitialized(int c_, int h_, int w_) {
    Tensor t;
    t.c = c_;
    t.h = h_;
    t.w = w_;
    t.v.resize(static_cast<std::size_t>(c_) * h_ * w_);
    return t;
  }

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  double* channel(int ch) { return v.data() + static_cast<std::size_t>(ch) * plane(); }
  const double* channel(int ch) const { return v.data() + static_cast<std::size_t>(ch) * plane(); }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

}  // namespace oat
