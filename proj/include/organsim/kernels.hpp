#pragma once

// Small numeric kernels used on the hot paths (policy logits, MSE, gradient
// updates). Each kernel has a portable scalar reference and, on x86-64, an
// AVX2/FMA variant. The variant is chosen once at startup from CPUID; set
// ORGANSIM_KERNELS=scalar to force the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace organsim::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum_sq_diff)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table() noexcept;
// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table() noexcept;

const KernelTable& active() noexcept;
std::string_view isa_name(Isa isa) noexcept;

// Overrides the runtime choice (tests use this to pin one variant).
void force(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

inline double sum_sq_diff(std::span<const double> a, std::span<const double> b) {
  return active().sum_sq_diff(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

inline double sum(std::span<const double> a) { return active().sum(a.data(), a.size()); }

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size() < y.size() ? x.size() : y.size());
}

// Mean squared difference; 0 for empty input.
inline double mse(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size() < b.size() ? a.size() : b.size();
  return n == 0 ? 0.0 : sum_sq_diff(a, b) / static_cast<double>(n);
}

}  // namespace organsim::kernels
