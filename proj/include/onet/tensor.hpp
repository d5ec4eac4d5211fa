#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace onet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// Activation layout is N x C x H x W; lower-rank tensors use leading size-1
// extents.
struct Shape {
  std::array<std::int64_t, 4> d{1, 1, 1, 1};

  Shape() = default;
  Shape(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
      : d{n, c, h, w} {}

  std::int64_t n() const { return d[0]; }
  std::int64_t c() const { return d[1]; }
  std::int64_t h() const { return d[2]; }
  std::int64_t w() const { return d[3]; }

  std::int64_t numel() const { return d[0] * d[1] * d[2] * d[3]; }

  bool operator==(const Shape& o) const { return d == o.d; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << d[0] << "x" << d[1] << "x" << d[2] << "x" << d[3];
    return os.str();
  }

  // C x H x W rendering used by shape tables.
  std::string chw_str() const {
    std::ostringstream os;
    os << d[1] << "x" << d[2] << "x" << d[3];
    return os.str();
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape s, T fill = T(0)) : shape_(s) {
    for (auto e : s.d) {
      if (e < 1) fail("tensor extent must be >= 1, got shape " + s.str());
    }
    data_.assign(static_cast<std::size_t>(s.numel()), fill);
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>(
        ((n * shape_.c() + c) * shape_.h() + y) * shape_.w() + x)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t y,
              std::int64_t x) const {
    return data_[static_cast<std::size_t>(
        ((n * shape_.c() + c) * shape_.h() + y) * shape_.w() + x)];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  Shape shape_{1, 1, 1, 1};
  std::vector<T> data_{T(0)};
};

}  // namespace onet
