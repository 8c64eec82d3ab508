#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace bidc {

/// Dense row-major f64 array of rank 1 or 2. Values are finite by contract;
/// ops that could overflow (softmax, sigmoid, log-sum-exp) are implemented in
/// shifted form.
class Array {
public:
    Array() = default;
    explicit Array(std::vector<std::size_t> shape);  // zero-filled
    Array(std::vector<std::size_t> shape, std::vector<double> data);

    static Array zeros_like(const Array& other) { return Array(other.shape_); }
    static Array full(std::vector<std::size_t> shape, double value);
    static Array row_matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Array vec(std::initializer_list<double> values);
    static Array scalar(double value) { return Array({1}, {value}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    // 2-D accessors; a rank-1 array behaves as a single row.
    std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    void fill(double value);
    bool same_shape(const Array& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    std::string shape_str() const;  // e.g. "[3x4]"

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Raw matrix kernels (Eigen-backed). `a` and `b` are treated as 2-D.
Array matmul_values(const Array& a, const Array& b);
Array transpose_values(const Array& a);
// acc += a * b^T   and   acc += a^T * b  (gradient accumulation forms)
void matmul_nt_acc(const Array& a, const Array& b, Array& acc);
void matmul_tn_acc(const Array& a, const Array& b, Array& acc);

}  // namespace bidc
