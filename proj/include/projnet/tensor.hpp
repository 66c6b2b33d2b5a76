#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "projnet/error.hpp"

namespace projnet {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

/// Precision used by factory functions when no dtype is given. 32-bit unless
/// switched to 64-bit verification mode.
DType default_dtype();
void set_default_dtype(DType dtype);

/// Switches the default dtype for the lifetime of the guard.
class ScopedDType {
public:
    explicit ScopedDType(DType dtype);
    ~ScopedDType();
    ScopedDType(const ScopedDType&) = delete;
    ScopedDType& operator=(const ScopedDType&) = delete;

private:
    DType previous_;
};

std::size_t dtype_size(DType dtype);
std::string dtype_name(DType dtype);

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Calls `fn(T{})` with T = float or double matching `dtype`.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
    if (dtype == DType::f32) {
        return fn(float{});
    }
    return fn(double{});
}

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of rank 0..5. Feature maps use the layout
/// (batch, channel, H, W[, D]) with depth innermost.
class Tensor {
public:
    static constexpr std::size_t kMaxRank = 5;

    Tensor() = default;
    explicit Tensor(Shape shape, DType dtype = default_dtype());

    static Tensor zeros(Shape shape, DType dtype = default_dtype());
    static Tensor full(Shape shape, double value, DType dtype = default_dtype());
    static Tensor from(Shape shape, std::span<const double> values, DType dtype = default_dtype());
    static Tensor from(Shape shape, std::initializer_list<double> values, DType dtype = default_dtype());
    static Tensor scalar(double value, DType dtype = default_dtype());

    /// False only for a default-constructed tensor.
    bool defined() const { return defined_; }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;
    DType dtype() const { return dtype_; }

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool value) {
        requires_grad_ = value;
        return *this;
    }

    template <class T>
    std::span<T> data() {
        check_type(dtype_of<T>());
        return std::get<std::vector<T>>(storage_);
    }
    template <class T>
    std::span<const T> data() const {
        check_type(dtype_of<T>());
        return std::get<std::vector<T>>(storage_);
    }

    double at(std::size_t flat_index) const;
    void set(std::size_t flat_index, double value);
    /// Value of a single-element tensor.
    double item() const;

    Tensor reshape(Shape shape) const&;
    Tensor reshape(Shape shape) &&;
    Tensor to(DType dtype) const;
    std::vector<double> to_vector() const;

    /// Elementwise equality of shape, dtype and bits.
    bool identical(const Tensor& other) const;

private:
    void check_type(DType requested) const;

    Shape shape_;
    DType dtype_ = DType::f32;
    bool requires_grad_ = false;
    bool defined_ = false;
    std::variant<std::vector<float>, std::vector<double>> storage_;
};

/// Throws InvalidArgument unless the two tensors share a dtype.
void require_same_dtype(const Tensor& a, const Tensor& b, const char* op);
void require_rank(const Tensor& t, std::size_t rank, const char* op);

}  // namespace projnet
