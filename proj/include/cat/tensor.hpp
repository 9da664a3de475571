#ifndef CAT_TENSOR_HPP
#define CAT_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cat {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major N-d array. The single value type used throughout the
// network; float for training/inference, double for gradient checking.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape sh) : shape(std::move(sh)), data(shape_numel(shape), S(0)) {}
  Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError("data length does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }
  static Tensor full(Shape sh, S v) {
    Tensor t(std::move(sh));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(i); }

  S& operator[](std::int64_t i) { return data[i]; }
  const S& operator[](std::int64_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

  // Eigen views over the flat storage.
  using MatrixS = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ArrayS = Eigen::Array<S, Eigen::Dynamic, 1>;

  Eigen::Map<MatrixS> mat(std::int64_t rows, std::int64_t cols) {
    if (rows * cols != size())
      throw ShapeError("matrix view size mismatch for " + shape_str(shape));
    return Eigen::Map<MatrixS>(data.data(), rows, cols);
  }
  Eigen::Map<const MatrixS> mat(std::int64_t rows, std::int64_t cols) const {
    if (rows * cols != size())
      throw ShapeError("matrix view size mismatch for " + shape_str(shape));
    return Eigen::Map<const MatrixS>(data.data(), rows, cols);
  }
  Eigen::Map<ArrayS> array() { return Eigen::Map<ArrayS>(data.data(), size()); }
  Eigen::Map<const ArrayS> array() const {
    return Eigen::Map<const ArrayS>(data.data(), size());
  }
};

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
}

}  // namespace cat

#endif
