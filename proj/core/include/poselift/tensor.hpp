#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "poselift/errors.hpp"

namespace poselift {

/// Dense row-major float32 tensor, the carrier for every numeric array in the
/// engine. A non-empty tensor has all dimension sizes >= 1 and
/// product(shape) == data().size(). A default-constructed tensor is the empty
/// sentinel (used e.g. for absent biases).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        int64_t n = 1;
        for (int64_t d : shape_) {
            if (d < 1) throw ShapeError("Tensor: dimension size " + std::to_string(d) + " < 1");
            n *= d;
        }
        data_.assign(static_cast<size_t>(n), 0.0f);
    }

    Tensor(std::initializer_list<int64_t> shape)
        : Tensor(std::vector<int64_t>(shape)) {}

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int64_t> shape, float value) {
        Tensor t(std::move(shape));
        t.fill(value);
        return t;
    }

    static Tensor from_data(std::vector<int64_t> shape, std::vector<float> values) {
        Tensor t;
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 1) throw ShapeError("Tensor: dimension size " + std::to_string(d) + " < 1");
            n *= d;
        }
        if (n != static_cast<int64_t>(values.size()))
            throw ShapeError("Tensor: shape expects " + std::to_string(n) + " values, got " +
                             std::to_string(values.size()));
        t.shape_ = std::move(shape);
        t.data_ = std::move(values);
        return t;
    }

    bool empty() const { return data_.empty(); }
    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const float& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    float& operator()(int64_t i, int64_t j) {
        return data_[static_cast<size_t>(i * shape_[1] + j)];
    }
    const float& operator()(int64_t i, int64_t j) const {
        return data_[static_cast<size_t>(i * shape_[1] + j)];
    }
    float& operator()(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    const float& operator()(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    /// Same data reinterpreted under a new shape with equal element count.
    Tensor reshaped(std::vector<int64_t> new_shape) const {
        Tensor t = *this;
        int64_t n = 1;
        for (int64_t d : new_shape) {
            if (d < 1) throw ShapeError("reshape: dimension size " + std::to_string(d) + " < 1");
            n *= d;
        }
        if (n != size())
            throw ShapeError("reshape: element count mismatch (" + std::to_string(n) + " vs " +
                             std::to_string(size()) + ")");
        t.shape_ = std::move(new_shape);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

inline void require_shape(const Tensor& t, const std::vector<int64_t>& shape, const char* what) {
    if (t.shape() != shape) {
        Tensor probe; // only for formatting
        std::string want = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) want += ",";
            want += std::to_string(shape[i]);
        }
        want += "]";
        throw ShapeError(std::string(what) + ": expected shape " + want + ", got " + t.shape_str());
    }
}

} // namespace poselift
