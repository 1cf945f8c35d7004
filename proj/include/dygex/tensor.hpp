#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dygex/errors.hpp"

namespace dygex {

// Dense row-major matrix of doubles. Vectors are n x 1, scalars 1 x 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Tensor(std::size_t rows, std::size_t cols, double fill)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data_[0] = v;
        return t;
    }

    static Tensor column(std::vector<double> values) {
        Tensor t;
        t.rows_ = values.size();
        t.cols_ = 1;
        t.data_ = std::move(values);
        return t;
    }

    static Tensor from_rows(std::size_t rows, std::size_t cols, std::vector<double> values) {
        if (values.size() != rows * cols) throw ShapeError("from_rows: value count does not match shape");
        Tensor t;
        t.rows_ = rows;
        t.cols_ = cols;
        t.data_ = std::move(values);
        return t;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    double item() const {
        if (size() != 1) throw ShapeError("item: tensor " + shape_str() + " is not scalar");
        return data_[0];
    }

    void fill(double v) { data_.assign(data_.size(), v); }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace dygex
