#include "snsteg/tensor.hpp"

#include <algorithm>

namespace snsteg {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, std::size_t begin, std::size_t end) {
    const Shape& s = t.shape();
    if (begin > end || end > s.n)
        throw ShapeError("slice_batch: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + s.str());
    Shape out{end - begin, s.c, s.h, s.w};
    auto first = t.storage().begin() + static_cast<std::ptrdiff_t>(begin * s.per_sample());
    auto last = t.storage().begin() + static_cast<std::ptrdiff_t>(end * s.per_sample());
    return Tensor<T>(out, std::vector<T>(first, last));
}

template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.c != sb.c || sa.h != sb.h || sa.w != sb.w)
        throw ShapeError("concat_batch: shape " + sa.str() + " vs " + sb.str());
    std::vector<T> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.storage().begin(), a.storage().end());
    out.insert(out.end(), b.storage().begin(), b.storage().end());
    return Tensor<T>(Shape{sa.n + sb.n, sa.c, sa.h, sa.w}, std::move(out));
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template Tensor<float> slice_batch(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> slice_batch(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> concat_batch(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_batch(const Tensor<double>&, const Tensor<double>&);
template double dot(const Tensor<float>&, const Tensor<float>&);
template double dot(const Tensor<double>&, const Tensor<double>&);

}  // namespace snsteg
