#include "edge/tensor.hpp"

#include <cmath>
#include <sstream>

#include "edge/errors.hpp"
#include "edge/kernels.hpp"

namespace edge {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ConfigError("negative tensor dimension in " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape))
        throw ConfigError("tensor data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
}

Tensor Tensor::randn(std::vector<int> s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    fill_normal(t.data, rng);
    if (stddev != 1.0)
        for (double& v : t.data) v *= stddev;
    return t;
}

void Tensor::fill(double v) {
    for (double& x : data) x = v;
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    std::vector<int> s = shape;
    s[0] = static_cast<int>(end - begin);
    const std::size_t st = stride0();
    return Tensor(std::move(s), std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(begin * st),
                                                    data.begin() + static_cast<std::ptrdiff_t>(end * st)));
}

void fill_normal(std::span<double> out, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& v : out) v = nd(rng);
}

Tensor l2_normalize_rows(const Tensor& m) {
    Tensor out = m;
    const std::size_t rows = m.shape.empty() ? 0 : static_cast<std::size_t>(m.shape[0]);
    for (std::size_t i = 0; i < rows; ++i) {
        auto r = out.row(i);
        const double n = std::sqrt(kernels::dot(r, r));
        if (n > 0.0)
            for (double& v : r) v /= n;
    }
    return out;
}

}  // namespace edge
