#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advsyn/errors.hpp"

namespace advsyn {

// Dense n-dimensional array of 64-bit floats, row-major.
// Invariant: product(shape) == data.size().
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(check_shape(shape_)), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (check_shape(shape_) != static_cast<int64_t>(data_.size())) {
            throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double value) {
        Tensor t(std::move(shape));
        t.fill(value);
        return t;
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // NCHW indexing helpers.
    int64_t offset4(int n, int c, int h, int w) const {
        return ((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }
    double& at4(int n, int c, int h, int w) { return data_[static_cast<size_t>(offset4(n, c, h, w))]; }
    double at4(int n, int c, int h, int w) const { return data_[static_cast<size_t>(offset4(n, c, h, w))]; }

    double& at2(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double at2(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor reshaped(std::vector<int> new_shape) const {
        if (check_shape(new_shape) != size()) {
            throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " +
                             shape_string(new_shape));
        }
        return Tensor(std::move(new_shape), data_);
    }

    double sum() const {
        double s = 0.0;
        for (double v : data_) s += v;
        return s;
    }

    double min() const {
        double m = data_.empty() ? 0.0 : data_[0];
        for (double v : data_) m = v < m ? v : m;
        return m;
    }

    double max() const {
        double m = data_.empty() ? 0.0 : data_[0];
        for (double v : data_) m = v > m ? v : m;
        return m;
    }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static std::string shape_string(const std::vector<int>& shape) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) os << ",";
            os << shape[i];
        }
        os << "]";
        return os.str();
    }

    std::string shape_string() const { return shape_string(shape_); }

  private:
    static int64_t check_shape(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_string(shape));
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace advsyn
