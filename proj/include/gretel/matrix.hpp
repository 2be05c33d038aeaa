#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace gretel {

// Dense row-major matrix of doubles. Vectors are n x 1.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return data[static_cast<size_t>(r) * cols + c];
    }
    double at(int r, int c) const {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return data[static_cast<size_t>(r) * cols + c];
    }

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return data.size(); }

    static Matrix column(const std::vector<double>& v) {
        Matrix m(static_cast<int>(v.size()), 1);
        m.data = v;
        return m;
    }
};

}  // namespace gretel
