#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "edge/autograd.hpp"
#include "edge/kernels.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("edge_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

// Restores the kernel table selected at startup.
struct IsaGuard {
    edge::kernels::Isa saved = edge::kernels::active_isa();
    ~IsaGuard() { edge::kernels::force_isa(saved); }
};

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max(floor, std::max(std::abs(a), std::abs(b)));
}

// Central difference of f with respect to x[i].
inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-5) {
    const double old = x;
    x = old + h;
    const double a = f();
    x = old - h;
    const double b = f();
    x = old;
    return (a - b) / (2.0 * h);
}

}  // namespace testing
