#pragma once

#include <cstddef>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace murestitch::nn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const Shape& shape);

// 64-byte aligned storage. Vectorized reductions peel by address, so the
// alignment must not depend on the allocator for results to be reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Storage = std::vector<T, AlignedAllocator<T>>;

// Dense row-major tensor. Images are stored channel-first [C, H, W], token
// sequences as [N, D].
template <typename T>
struct Tensor {
    Shape shape;
    Storage<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, Storage<T> values) : shape(std::move(s)), data(std::move(values)) { check(); }
    Tensor(Shape s, const std::vector<T>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
        check();
    }

    void check() const {
        if (data.size() != shape_numel(shape)) {
            throw std::invalid_argument("tensor data does not match shape " + shape_string(shape));
        }
    }

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMatrix<T>> as_matrix(Tensor<T>& t, int rows, int cols) {
    return Eigen::Map<RowMatrix<T>>(t.ptr(), rows, cols);
}

template <typename T>
Eigen::Map<const RowMatrix<T>> as_matrix(const Tensor<T>& t, int rows, int cols) {
    return Eigen::Map<const RowMatrix<T>>(t.ptr(), rows, cols);
}

}  // namespace murestitch::nn
