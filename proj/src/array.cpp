#include "bidc/array.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "bidc/errors.hpp"

namespace bidc {

namespace {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EigenRowMajor>;
using MapM = Eigen::Map<EigenRowMajor>;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

}  // namespace

Array::Array(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw ShapeError("array: " + shape_str() + " does not hold " +
                         std::to_string(data_.size()) + " elements");
    }
}

Array Array::full(std::vector<std::size_t> shape, double value) {
    Array a(std::move(shape));
    a.fill(value);
    return a;
}

Array Array::row_matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("row_matrix: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Array({r, c}, std::move(data));
}

Array Array::vec(std::initializer_list<double> values) {
    return Array({values.size()}, std::vector<double>(values));
}

void Array::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

bool Array::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Array::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

Array matmul_values(const Array& a, const Array& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                         b.shape_str());
    }
    Array out({a.rows(), b.cols()});
    MapM(out.data(), static_cast<Eigen::Index>(out.rows()), static_cast<Eigen::Index>(out.cols()))
        .noalias() =
        MapC(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols())) *
        MapC(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
    return out;
}

Array transpose_values(const Array& a) {
    Array out({a.cols(), a.rows()});
    MapM(out.data(), static_cast<Eigen::Index>(out.rows()), static_cast<Eigen::Index>(out.cols()))
        .noalias() =
        MapC(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()))
            .transpose();
    return out;
}

void matmul_nt_acc(const Array& a, const Array& b, Array& acc) {
    if (a.cols() != b.cols() || acc.rows() != a.rows() || acc.cols() != b.rows()) {
        throw ShapeError("matmul_nt_acc: " + a.shape_str() + " x " + b.shape_str() + "^T -> " +
                         acc.shape_str());
    }
    MapM(acc.data(), static_cast<Eigen::Index>(acc.rows()), static_cast<Eigen::Index>(acc.cols()))
        .noalias() +=
        MapC(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols())) *
        MapC(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()))
            .transpose();
}

void matmul_tn_acc(const Array& a, const Array& b, Array& acc) {
    if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols()) {
        throw ShapeError("matmul_tn_acc: " + a.shape_str() + "^T x " + b.shape_str() + " -> " +
                         acc.shape_str());
    }
    MapM(acc.data(), static_cast<Eigen::Index>(acc.rows()), static_cast<Eigen::Index>(acc.cols()))
        .noalias() +=
        MapC(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()))
            .transpose() *
        MapC(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
}

}  // namespace bidc
