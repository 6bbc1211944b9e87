#include "eqemu/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>

#include "eqemu/error.hpp"

namespace eqemu {

namespace {

using cplx = std::complex<double>;

// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

cplx phi1(cplx z) {
    if (std::abs(z) < 1.0) {
        cplx term{1.0, 0.0}, sum{0.0, 0.0};
        for (int k = 1; k <= 24; ++k) {
            term /= static_cast<double>(k);  // z^(k-1) / k!
            sum += term;
            term *= z;
        }
        return sum;
    }
    return (std::exp(z) - 1.0) / z;
}

cplx phi2(cplx z) {
    if (std::abs(z) < 1.0) {
        cplx term{0.5, 0.0}, sum{0.0, 0.0};
        for (int k = 0; k <= 24; ++k) {
            sum += term;  // z^k / (k+2)!
            term *= z / static_cast<double>(k + 3);
        }
        return sum;
    }
    return (std::exp(z) - 1.0 - z) / (z * z);
}

void check_finite(std::span<const double> u, std::size_t substep) {
    for (double v : u) {
        if (!std::isfinite(v))
            throw BlowUpError("state became non-finite at substep " + std::to_string(substep), substep);
    }
}

}  // namespace

Grid1D::Grid1D(std::size_t n, double length) : n_(n), length_(length) {
    if (n < 8 || n % 2 != 0) throw invalid_argument("grid size must be even and at least 8, got " + std::to_string(n));
    if (!(length > 0.0) || !std::isfinite(length)) throw invalid_argument("grid length must be positive");
    wavenumbers_.resize(num_modes());
    for (std::size_t m = 0; m < wavenumbers_.size(); ++m)
        wavenumbers_[m] = 2.0 * std::numbers::pi * static_cast<double>(m) / length_;
}

PhysicalCoeffs to_physical(const EquationCoeffs& c, const Grid1D& grid, double dt) {
    if (!(dt > 0.0)) throw invalid_argument("dt must be positive");
    if (!c.all_finite()) throw invalid_argument("equation coefficients must be finite");
    const double h = grid.length() / static_cast<double>(grid.n());
    PhysicalCoeffs a;
    a[Term::U] = c[Term::U] / dt;
    a[Term::U2] = c[Term::U2] / dt;
    a[Term::Ux] = c[Term::Ux] * h / dt;
    a[Term::UUx] = c[Term::UUx] * h / dt;
    a[Term::Uxx] = c[Term::Uxx] * h * h / (2.0 * dt);
    a[Term::Uxxx] = c[Term::Uxxx] * h * h * h / (4.0 * dt);
    a[Term::Uxxxx] = c[Term::Uxxxx] * h * h * h * h / (8.0 * dt);
    return a;
}

PhysicalCoeffs literal_coeffs(const EquationCoeffs& c) {
    if (!c.all_finite()) throw invalid_argument("equation coefficients must be finite");
    PhysicalCoeffs a;
    a.values = c.values;
    return a;
}

// ---------------------------------------------------------------------------

struct RealFft::Impl {
    std::size_t n;
    double* real = nullptr;
    fftw_complex* spec = nullptr;
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;

    explicit Impl(std::size_t size) : n(size) {
        std::lock_guard lock(planner_mutex());
        real = fftw_alloc_real(n);
        spec = fftw_alloc_complex(n / 2 + 1);
        const int ni = static_cast<int>(n);
        fwd = fftw_plan_dft_r2c_1d(ni, real, spec, FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r_1d(ni, spec, real, FFTW_ESTIMATE);
    }
    ~Impl() {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(inv);
        fftw_free(real);
        fftw_free(spec);
    }
};

RealFft::RealFft(std::size_t n) : impl_(std::make_unique<Impl>(n)) {}
RealFft::~RealFft() = default;
RealFft::RealFft(RealFft&&) noexcept = default;
RealFft& RealFft::operator=(RealFft&&) noexcept = default;

std::size_t RealFft::size() const { return impl_->n; }

void RealFft::forward(std::span<const double> in, std::span<cplx> out) const {
    const std::size_t n = impl_->n;
    if (in.size() != n || out.size() != n / 2 + 1) throw invalid_argument("RealFft::forward size mismatch");
    std::copy(in.begin(), in.end(), impl_->real);
    fftw_execute(impl_->fwd);
    std::memcpy(static_cast<void*>(out.data()), impl_->spec, sizeof(cplx) * (n / 2 + 1));
}

void RealFft::inverse(std::span<const cplx> in, std::span<double> out) const {
    const std::size_t n = impl_->n;
    if (out.size() != n || in.size() != n / 2 + 1) throw invalid_argument("RealFft::inverse size mismatch");
    std::memcpy(impl_->spec, in.data(), sizeof(cplx) * (n / 2 + 1));
    fftw_execute(impl_->inv);
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = impl_->real[j] * scale;
}

// ---------------------------------------------------------------------------

std::vector<double> spectral_derivative(std::span<const double> u, int order, const Grid1D& grid) {
    if (u.size() != grid.n())
        throw invalid_argument("spectral_derivative: state has " + std::to_string(u.size()) + " points, grid has " +
                               std::to_string(grid.n()));
    if (order < 1 || order > 4) throw invalid_argument("spectral_derivative: order must be in 1..4");
    const RealFft fft(grid.n());
    std::vector<cplx> spec(grid.num_modes());
    fft.forward(u, spec);
    const auto k = grid.wavenumbers();
    const std::size_t nyquist = grid.n() / 2;
    for (std::size_t m = 0; m < spec.size(); ++m) {
        if (order % 2 == 1 && m == nyquist) {
            spec[m] = 0.0;
            continue;
        }
        spec[m] *= std::pow(cplx(0.0, k[m]), order);
    }
    std::vector<double> out(grid.n());
    fft.inverse(spec, out);
    return out;
}

std::vector<double> rhs(std::span<const double> u, const PhysicalCoeffs& a, const Grid1D& grid, bool dealias) {
    if (u.size() != grid.n()) throw invalid_argument("rhs: state size does not match grid");
    const std::size_t n = grid.n();
    std::vector<double> out(n, 0.0);
    std::vector<double> ux;
    constexpr std::array<Term, 4> terms{Term::Ux, Term::Uxx, Term::Uxxx, Term::Uxxxx};
    for (int order = 1; order <= 4; ++order) {
        const double coeff = a[terms[static_cast<std::size_t>(order - 1)]];
        if (coeff == 0.0 && !(order == 1 && a[Term::UUx] != 0.0)) continue;
        const auto d = spectral_derivative(u, order, grid);
        if (order == 1) ux = d;
        for (std::size_t j = 0; j < n; ++j) out[j] += coeff * d[j];
    }
    std::vector<double> nl(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        nl[j] = a[Term::U2] * u[j] * u[j];
        if (a[Term::UUx] != 0.0) nl[j] += a[Term::UUx] * u[j] * ux[j];
    }
    if (dealias) {
        const RealFft fft(n);
        std::vector<cplx> spec(grid.num_modes());
        fft.forward(nl, spec);
        for (std::size_t m = grid.dealias_cutoff() + 1; m < spec.size(); ++m) spec[m] = 0.0;
        fft.inverse(spec, nl);
    }
    for (std::size_t j = 0; j < n; ++j) {
        out[j] += a[Term::U] * u[j] + nl[j];
        if (!std::isfinite(out[j])) throw BlowUpError("rhs produced a non-finite value", 0);
    }
    return out;
}

// ---------------------------------------------------------------------------

EtdStepper::EtdStepper(const Grid1D& grid, const PhysicalCoeffs& a, const StepperConfig& config)
    : grid_(grid), coeffs_(a), config_(config), fft_(grid.n()), nonlinear_(a.has_nonlinear()) {
    if (config.substeps < 1) throw invalid_argument("stepper needs at least one substep");
    if (!(config.dt > 0.0)) throw invalid_argument("stepper dt must be positive");
    const std::size_t modes = grid.num_modes();
    const std::size_t nyquist = grid.n() / 2;
    const double h = config.dt / static_cast<double>(config.substeps);
    exp_full_.resize(modes);
    exp_sub_.resize(modes);
    phi1_h_.resize(modes);
    phi2_h_.resize(modes);
    nl_factor_.resize(modes);
    for (std::size_t m = 0; m < modes; ++m) {
        const double k = grid.wavenumbers()[m];
        const double k_odd = (m == nyquist) ? 0.0 : k;
        // (ik)^1, (ik)^2 = -k^2, (ik)^3 = -i k^3, (ik)^4 = k^4
        const cplx lin = cplx(a[Term::U], 0.0) + a[Term::Ux] * cplx(0.0, k_odd) + a[Term::Uxx] * cplx(-k * k, 0.0) +
                         a[Term::Uxxx] * cplx(0.0, -k_odd * k_odd * k_odd) +
                         a[Term::Uxxxx] * cplx(k * k * k * k, 0.0);
        exp_full_[m] = std::exp(lin * config.dt);
        const cplx z = lin * h;
        exp_sub_[m] = std::exp(z);
        phi1_h_[m] = h * phi1(z);
        phi2_h_[m] = h * phi2(z);
        // u u_x = (u^2)_x / 2
        nl_factor_[m] = cplx(a[Term::U2], 0.5 * a[Term::UUx] * k_odd);
        if (config.dealias && m > grid.dealias_cutoff()) nl_factor_[m] = 0.0;
    }
}

void EtdStepper::nonlinear(std::span<const cplx> u_hat, std::span<cplx> out, std::vector<double>& physical,
                           std::size_t substep) const {
    fft_.inverse(u_hat, physical);
    check_finite(physical, substep);
    for (double& v : physical) v *= v;
    fft_.forward(physical, out);
    for (std::size_t m = 0; m < out.size(); ++m) out[m] *= nl_factor_[m];
}

void EtdStepper::step(std::span<double> u) const {
    if (u.size() != grid_.n()) throw invalid_argument("stepper: state size does not match grid");
    check_finite(u, 0);
    const std::size_t modes = grid_.num_modes();
    std::vector<cplx> u_hat(modes);
    fft_.forward(u, u_hat);
    if (!nonlinear_) {
        for (std::size_t m = 0; m < modes; ++m) u_hat[m] *= exp_full_[m];
        fft_.inverse(u_hat, u);
        check_finite(u, config_.substeps);
        return;
    }
    std::vector<cplx> n0(modes), n1(modes), a_hat(modes);
    std::vector<double> physical(grid_.n());
    for (std::size_t s = 0; s < config_.substeps; ++s) {
        nonlinear(u_hat, n0, physical, s);
        for (std::size_t m = 0; m < modes; ++m) a_hat[m] = exp_sub_[m] * u_hat[m] + phi1_h_[m] * n0[m];
        nonlinear(a_hat, n1, physical, s);
        for (std::size_t m = 0; m < modes; ++m) u_hat[m] = a_hat[m] + phi2_h_[m] * (n1[m] - n0[m]);
    }
    fft_.inverse(u_hat, u);
    check_finite(u, config_.substeps);
}

std::vector<double> EtdStepper::advance(std::span<const double> u, std::size_t steps) const {
    std::vector<double> state(u.begin(), u.end());
    for (std::size_t i = 0; i < steps; ++i) step(state);
    return state;
}

std::vector<double> step_reference(std::span<const double> u, const PhysicalCoeffs& a, const Grid1D& grid,
                                   const StepperConfig& config) {
    const EtdStepper stepper(grid, a, config);
    std::vector<double> out(u.begin(), u.end());
    stepper.step(out);
    return out;
}

std::vector<double> step_coarse(std::span<const double> u, const PhysicalCoeffs& a, const Grid1D& grid) {
    return step_reference(u, a, grid, StepperConfig::coarse());
}

ConvergenceResult convergence_order(std::span<const double> u0, const PhysicalCoeffs& a, const Grid1D& grid,
                                    std::size_t steps) {
    const auto run = [&](std::size_t substeps) {
        return EtdStepper(grid, a, StepperConfig{1.0, substeps, true}).advance(u0, steps);
    };
    const auto ref = run(256);
    double scale = 0.0;
    for (double v : ref) scale = std::max(scale, std::abs(v));
    ConvergenceResult result;
    const std::array<std::size_t, 3> counts{8, 16, 32};
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto u = run(counts[i]);
        double err = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j) err = std::max(err, std::abs(u[j] - ref[j]));
        result.errors[i] = err;
    }
    const double floor = 1e-13 * std::max(scale, 1.0);
    result.exact = std::all_of(result.errors.begin(), result.errors.end(), [&](double e) { return e <= floor; });
    if (result.exact) {
        result.order = std::numeric_limits<double>::infinity();
        result.pairwise = {result.order, result.order};
        return result;
    }
    result.pairwise[0] = std::log2(result.errors[0] / result.errors[1]);
    result.pairwise[1] = std::log2(result.errors[1] / result.errors[2]);
    // slope of log e against log h with h ~ 1/substeps
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double x = std::log(1.0 / static_cast<double>(counts[i]));
        const double y = std::log(std::max(result.errors[i], 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    result.order = (3 * sxy - sx * sy) / (3 * sxx - sx * sx);
    return result;
}

}  // namespace eqemu
