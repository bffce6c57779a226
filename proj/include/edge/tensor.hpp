#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace edge {

using Rng = std::mt19937_64;

// Dense row-major double tensor. Shapes are small vectors; [N, C, H, W] for images
// and latents, [N, D] for embeddings.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, std::vector<double> values);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0);

    std::size_t numel() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }
    // Elements per leading index (row of a matrix, sample of a batch).
    std::size_t stride0() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / static_cast<std::size_t>(shape[0]); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * stride0(), stride0()}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * stride0(), stride0()}; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void fill(double v);

    // Rows [begin, end) of the leading dimension.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

void fill_normal(std::span<double> out, Rng& rng);

// Row-wise L2 normalization of a [N, D] tensor. Zero rows stay zero.
[[nodiscard]] Tensor l2_normalize_rows(const Tensor& m);

}  // namespace edge
