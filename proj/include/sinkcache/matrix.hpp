// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cassert>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sinkcache {

/// Dense row-major matrix. Rows are tokens, columns are (head x head_dim) features.
template <std::floating_point T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw std::invalid_argument("Matrix: data size " + std::to_string(data_.size()) +
                                        " does not match " + std::to_string(rows_) + "x" +
                                        std::to_string(cols_));
        }
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] bool empty() const noexcept { return rows_ == 0; }

    [[nodiscard]] std::span<T> row(std::size_t i) noexcept {
        assert(i < rows_);
        return {data_.data() + i * cols_, cols_};
    }
    [[nodiscard]] std::span<const T> row(std::size_t i) const noexcept {
        assert(i < rows_);
        return {data_.data() + i * cols_, cols_};
    }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<T> flat() noexcept { return data_; }
    [[nodiscard]] std::span<const T> flat() const noexcept { return data_; }

    void append_row(std::span<const T> values) {
        if (rows_ == 0 && cols_ == 0) cols_ = values.size();
        if (values.size() != cols_) throw std::invalid_argument("Matrix::append_row: width mismatch");
        data_.insert(data_.end(), values.begin(), values.end());
        ++rows_;
    }

    void reserve_rows(std::size_t n) { data_.reserve(n * cols_); }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Columns [first_col, first_col + width) of every row, copied.
template <std::floating_point T>
[[nodiscard]] Matrix<T> column_slice(const Matrix<T>& m, std::size_t first_col, std::size_t width) {
    if (first_col + width > m.cols()) throw std::out_of_range("column_slice: past last column");
    Matrix<T> out(m.rows(), width);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r).subspan(first_col, width);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

/// Rows [first, first + count), copied.
template <std::floating_point T>
[[nodiscard]] Matrix<T> row_slice(const Matrix<T>& m, std::size_t first, std::size_t count) {
    if (first + count > m.rows()) throw std::out_of_range("row_slice: past last row");
    Matrix<T> out(count, m.cols());
    for (std::size_t r = 0; r < count; ++r) {
        auto src = m.row(first + r);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

template <std::floating_point T>
[[nodiscard]] double dot(std::span<const T> a, std::span<const T> b) noexcept {
    assert(a.size() == b.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

// Float accumulation; used on hot paths where the caller tolerates single precision.
[[nodiscard]] inline float dot_fast(std::span<const float> a, std::span<const float> b) noexcept {
    assert(a.size() == b.size());
    float acc0 = 0.f, acc1 = 0.f, acc2 = 0.f, acc3 = 0.f;
    std::size_t i = 0;
    const std::size_t n = a.size();
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) acc0 += a[i] * b[i];
    return (acc0 + acc1) + (acc2 + acc3);
}

}  // namespace sinkcache
