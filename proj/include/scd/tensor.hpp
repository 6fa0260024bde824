// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "scd/errors.hpp"

namespace scd {

// Dense row-major double tensor. Everything in this project is small enough
// that double precision is affordable, and it keeps the finite-difference
// gradient checks tight.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int> s, double fill) : Tensor(std::move(s)) {
        for (auto& v : data) v = fill;
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ArgumentError("tensor dims must be positive");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // Indexing for the common layouts; no bounds checks in release-path code.
    double& at2(int a, int b) { return data[static_cast<size_t>(a) * shape[1] + b]; }
    const double& at2(int a, int b) const { return data[static_cast<size_t>(a) * shape[1] + b]; }
    double& at3(int a, int b, int c) {
        return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
    }
    const double& at3(int a, int b, int c) const {
        return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
    }
    double& at4(int a, int b, int c, int d) {
        return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    const double& at4(int a, int b, int c, int d) const {
        return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw ArgumentError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
}

// Boolean mask with tensor-like shape bookkeeping.
struct BoolTensor {
    std::vector<int> shape;
    std::vector<uint8_t> data;

    BoolTensor() = default;
    explicit BoolTensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(Tensor::numel_of(shape)), 0);
    }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    bool get(int64_t i) const { return data[static_cast<size_t>(i)] != 0; }
    void set(int64_t i, bool v) { data[static_cast<size_t>(i)] = v ? 1 : 0; }
    uint8_t& at3(int a, int b, int c) {
        return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
    }
    uint8_t at3(int a, int b, int c) const {
        return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
    }
    int64_t count() const {
        int64_t n = 0;
        for (uint8_t v : data) n += v;
        return n;
    }
};

}  // namespace scd
