#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "eqemu/encoding.hpp"

namespace eqemu {

/// Periodic collocation grid x_j = j * length / n.
class Grid1D {
public:
    explicit Grid1D(std::size_t n = 160, double length = 1.0);

    std::size_t n() const { return n_; }
    double length() const { return length_; }
    double dx() const { return length_ / static_cast<double>(n_); }
    double x(std::size_t j) const { return dx() * static_cast<double>(j); }

    /// Number of non-negative real-FFT modes, n/2 + 1.
    std::size_t num_modes() const { return n_ / 2 + 1; }
    /// k_m = 2 pi m / length for m = 0..n/2.
    std::span<const double> wavenumbers() const { return wavenumbers_; }
    /// Highest mode kept by the 2/3 rule.
    std::size_t dealias_cutoff() const { return n_ / 3; }

    bool operator==(const Grid1D& o) const { return n_ == o.n_ && length_ == o.length_; }

private:
    std::size_t n_;
    double length_;
    std::vector<double> wavenumbers_;
};

/// PDE coefficients per unit time in solver units, same basis order as
/// EquationCoeffs. The steppers consume only this type.
struct PhysicalCoeffs {
    std::array<double, kNumTerms> values{};
    double operator[](Term t) const { return values[static_cast<std::size_t>(t)]; }
    double& operator[](Term t) { return values[static_cast<std::size_t>(t)]; }
    bool has_nonlinear() const { return (*this)[Term::U2] != 0.0 || (*this)[Term::UUx] != 0.0; }
};

/// Maps an encoding onto solver coefficients. Derivative terms are read as
/// per-cell difficulties, a_j = c_j L^j / (dt N^j 2^(j-1)); the convection
/// term as a_3 = c_3 L / (dt N) for unit-amplitude states; the reaction terms
/// as plain rates c / dt.
PhysicalCoeffs to_physical(const EquationCoeffs& c, const Grid1D& grid, double dt);

/// Reads the encoding verbatim as PDE coefficients.
PhysicalCoeffs literal_coeffs(const EquationCoeffs& c);

/// FFTW-backed real transform. inverse(forward(x)) == x (normalized inverse).
class RealFft {
public:
    explicit RealFft(std::size_t n);
    ~RealFft();
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;
    RealFft(RealFft&&) noexcept;
    RealFft& operator=(RealFft&&) noexcept;

    std::size_t size() const;
    void forward(std::span<const double> in, std::span<std::complex<double>> out) const;
    void inverse(std::span<const std::complex<double>> in, std::span<double> out) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Exact Fourier derivative of order 1..4; Nyquist zeroed for odd orders.
std::vector<double> spectral_derivative(std::span<const double> u, int order, const Grid1D& grid);

/// sum_j a_j T_j(u), nonlinear products evaluated in physical space.
std::vector<double> rhs(std::span<const double> u, const PhysicalCoeffs& a, const Grid1D& grid, bool dealias = false);

struct StepperConfig {
    double dt = 1.0;
    std::size_t substeps = 64;
    bool dealias = true;

    static StepperConfig reference() { return {1.0, 64, true}; }
    static StepperConfig coarse() { return {1.0, 1, false}; }
};

/// Second-order exponential time differencing (Cox-Matthews ETDRK2). The
/// linear operator is integrated exactly in Fourier space; u^2 and u u_x go
/// through the ETD correction. Tables are built once per coefficient set.
class EtdStepper {
public:
    EtdStepper(const Grid1D& grid, const PhysicalCoeffs& a, const StepperConfig& config);

    /// Advances one emulator step in place. Throws BlowUpError on non-finite state.
    void step(std::span<double> u) const;
    std::vector<double> advance(std::span<const double> u, std::size_t steps) const;

    const Grid1D& grid() const { return grid_; }
    const StepperConfig& config() const { return config_; }

private:
    void nonlinear(std::span<const std::complex<double>> u_hat, std::span<std::complex<double>> out,
                   std::vector<double>& physical, std::size_t substep) const;

    Grid1D grid_;
    PhysicalCoeffs coeffs_;
    StepperConfig config_;
    RealFft fft_;
    bool nonlinear_ = false;
    std::vector<std::complex<double>> exp_full_;   // exp(L dt)
    std::vector<std::complex<double>> exp_sub_;    // exp(L h)
    std::vector<std::complex<double>> phi1_h_;     // h phi1(L h)
    std::vector<std::complex<double>> phi2_h_;     // h phi2(L h)
    std::vector<std::complex<double>> nl_factor_;  // a1 + (a3/2) i k, masked when dealiasing
};

std::vector<double> step_reference(std::span<const double> u, const PhysicalCoeffs& a, const Grid1D& grid,
                                   const StepperConfig& config = StepperConfig::reference());
std::vector<double> step_coarse(std::span<const double> u, const PhysicalCoeffs& a, const Grid1D& grid);

struct ConvergenceResult {
    double order = 0.0;                // least-squares slope of log(error) vs log(h)
    bool exact = false;                // all errors at round-off level
    std::array<double, 3> errors{};    // substeps 8, 16, 32 against 256
    std::array<double, 2> pairwise{};  // log2(e8/e16), log2(e16/e32)
};

/// Self-convergence study over `steps` emulator steps.
ConvergenceResult convergence_order(std::span<const double> u0, const PhysicalCoeffs& a, const Grid1D& grid,
                                    std::size_t steps = 1);

}  // namespace eqemu
