#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dgm/rng.hpp"

namespace dgm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace ad {
class Tape;
}

/// Dense row-major array of doubles. A tensor produced from taped inputs
/// carries a reference to its Tape node; the Tape must outlive it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor filled(Shape shape, double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor randn(Shape shape, Rng& rng);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  /// Leading dimension (1 for scalars).
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_.front(); }
  /// Trailing dimension (1 for scalars).
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  /// Value of a single-element tensor.
  double item() const;

  bool taped() const noexcept { return tape_ != nullptr; }
  ad::Tape* tape() const noexcept { return tape_; }
  int node() const noexcept { return node_; }
  /// Copy of the values with no tape attached.
  Tensor detached() const { return Tensor(shape_, data_); }

  /// Row slice [begin, end) of a rank >= 1 tensor, untaped.
  Tensor rows_slice(std::size_t begin, std::size_t end) const;
  /// Rows gathered by index, untaped.
  Tensor gather_rows(std::span<const std::size_t> idx) const;

  bool all_finite() const noexcept;

 private:
  friend class ad::Tape;
  Shape shape_;
  std::vector<double> data_;
  ad::Tape* tape_ = nullptr;
  int node_ = -1;
};

}  // namespace dgm
