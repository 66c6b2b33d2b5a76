#include "projnet/tensor.hpp"

#include <algorithm>
#include <cstring>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace projnet {

namespace {
DType g_default_dtype = DType::f32;
}  // namespace

DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dtype) { g_default_dtype = dtype; }

ScopedDType::ScopedDType(DType dtype) : previous_(g_default_dtype) { g_default_dtype = dtype; }
ScopedDType::~ScopedDType() { g_default_dtype = previous_; }

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? 4 : 8; }
std::string dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("({})", fmt::join(shape, ",")); }

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype), defined_(true) {
    if (shape_.size() > kMaxRank) {
        throw InvalidArgument(fmt::format("tensor rank {} exceeds {}", shape_.size(), kMaxRank));
    }
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (shape_[i] == 0) {
            throw InvalidArgument(fmt::format("tensor shape {} has zero extent on axis {}", shape_str(shape_), i));
        }
    }
    const auto n = shape_numel(shape_);
    if (dtype_ == DType::f32) {
        storage_ = std::vector<float>(n, 0.0f);
    } else {
        storage_ = std::vector<double>(n, 0.0);
    }
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t(std::move(shape), dtype);
    dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.data<T>();
        std::fill(d.begin(), d.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dtype) {
    Tensor t(std::move(shape), dtype);
    if (values.size() != t.numel()) {
        throw InvalidArgument(
            fmt::format("{} values given for shape {}", values.size(), shape_str(t.shape())));
    }
    dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        std::transform(values.begin(), values.end(), t.data<T>().begin(),
                       [](double v) { return static_cast<T>(v); });
    });
    return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dtype) {
    return from(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw InvalidArgument(fmt::format("axis {} out of range for shape {}", axis, shape_str(shape_)));
    }
    return shape_[axis];
}

std::size_t Tensor::numel() const { return defined_ ? shape_numel(shape_) : 0; }

double Tensor::at(std::size_t flat_index) const {
    return dispatch(dtype_, [&](auto tag) -> double {
        using T = decltype(tag);
        return static_cast<double>(data<T>()[flat_index]);
    });
}

void Tensor::set(std::size_t flat_index, double value) {
    dispatch(dtype_, [&](auto tag) {
        using T = decltype(tag);
        data<T>()[flat_index] = static_cast<T>(value);
    });
}

double Tensor::item() const {
    if (numel() != 1) {
        throw InvalidArgument(fmt::format("item() on tensor of shape {}", shape_str(shape_)));
    }
    return at(0);
}

Tensor Tensor::reshape(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshape(std::move(shape));
}

Tensor Tensor::reshape(Shape shape) && {
    if (shape_numel(shape) != numel() || shape.size() > kMaxRank) {
        throw InvalidArgument(
            fmt::format("cannot reshape {} to {}", shape_str(shape_), shape_str(shape)));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

Tensor Tensor::to(DType dtype) const {
    if (dtype == dtype_) return *this;
    Tensor out(shape_, dtype);
    dispatch(dtype_, [&](auto src_tag) {
        using S = decltype(src_tag);
        dispatch(dtype, [&](auto dst_tag) {
            using D = decltype(dst_tag);
            auto src = data<S>();
            std::transform(src.begin(), src.end(), out.data<D>().begin(),
                           [](S v) { return static_cast<D>(v); });
        });
    });
    out.requires_grad_ = requires_grad_;
    return out;
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i);
    return out;
}

bool Tensor::identical(const Tensor& other) const {
    if (shape_ != other.shape_ || dtype_ != other.dtype_ || defined_ != other.defined_) return false;
    return dispatch(dtype_, [&](auto tag) {
        using T = decltype(tag);
        auto a = data<T>();
        auto b = other.data<T>();
        return std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
    });
}

void Tensor::check_type(DType requested) const {
    if (!defined_) throw InvalidArgument("access to undefined tensor");
    if (requested != dtype_) {
        throw InvalidArgument(fmt::format("tensor holds {} but {} was requested", dtype_name(dtype_),
                                          dtype_name(requested)));
    }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw InvalidArgument(fmt::format("{}: dtype mismatch ({} vs {})", op, dtype_name(a.dtype()),
                                          dtype_name(b.dtype())));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw InvalidArgument(
            fmt::format("{}: expected rank {} input, got shape {}", op, rank, shape_str(t.shape())));
    }
}

}  // namespace projnet
