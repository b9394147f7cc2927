#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ppaml {

/// Dense row-major matrix of feature values.
template <class T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    T& operator()(std::size_t r, std::size_t c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    const T& operator()(std::size_t r, std::size_t c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    void push_row(std::span<const T> values) {
        if (rows_ == 0 && cols_ == 0) cols_ = values.size();
        assert(values.size() == cols_);
        data_.insert(data_.end(), values.begin(), values.end());
        ++rows_;
    }

    /// Rows [begin, end) as a new matrix.
    Matrix slice_rows(std::size_t begin, std::size_t end) const {
        Matrix out(end - begin, cols_);
        std::copy(data_.begin() + begin * cols_, data_.begin() + end * cols_, out.data_.begin());
        return out;
    }

    Matrix select_rows(std::span<const std::size_t> idx) const {
        Matrix out(idx.size(), cols_);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(data_.begin() + idx[i] * cols_, cols_, out.data_.begin() + i * cols_);
        }
        return out;
    }

    /// Leading `n` columns of every row.
    Matrix leading_cols(std::size_t n) const {
        assert(n <= cols_);
        Matrix out(rows_, n);
        for (std::size_t r = 0; r < rows_; ++r) {
            std::copy_n(data_.begin() + r * cols_, n, out.data_.begin() + r * n);
        }
        return out;
    }

    const std::vector<T>& data() const noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using FeatureMatrix = Matrix<double>;
using QuantMatrix = Matrix<std::int64_t>;

} // namespace ppaml
