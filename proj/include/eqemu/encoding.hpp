#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace eqemu {

/// Operator basis shared by every equation encoding, in canonical order.
enum class Term : std::size_t { U = 0, U2, Ux, UUx, Uxx, Uxxx, Uxxxx };
inline constexpr std::size_t kNumTerms = 7;

std::string_view term_name(Term term);

/// Coefficients c of u_t = sum_j c_j T_j(u) over the operator basis.
struct EquationCoeffs {
    std::array<double, kNumTerms> values{};

    double& operator[](Term t) { return values[static_cast<std::size_t>(t)]; }
    double operator[](Term t) const { return values[static_cast<std::size_t>(t)]; }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool all_finite() const;
    bool operator==(const EquationCoeffs&) const = default;
};

enum class Family : std::uint32_t { AdvectionDiffusion = 0, Burgers = 1, KdV = 2, ConservedKS = 3, Fisher = 4 };
inline constexpr std::size_t kNumFamilies = 5;

std::string_view family_name(Family family);
Family family_from_name(std::string_view name);

struct SlotWeight {
    Term term;
    double weight;
};

struct ParameterSpec {
    std::string name;
    double low = 0.0;
    double high = 0.0;
    std::vector<SlotWeight> slots;
};

struct PdeFamily {
    Family id{};
    std::string name;
    std::vector<ParameterSpec> parameters;
    bool held_out = false;

    const ParameterSpec& parameter(std::string_view name) const;
    bool has_parameter(std::string_view name) const;
    /// Whether `value` lies inside the training range of `name`.
    bool in_training_range(std::string_view name, double value) const;
};

using ParamMap = std::map<std::string, double, std::less<>>;

/// Families with their parameter ranges. Defaults reproduce the published
/// training ranges; a plain-text config may override them.
class FamilyRegistry {
public:
    static FamilyRegistry defaults();

    /// Lines of the form `family.parameter = low,high`; `#` starts a comment.
    static FamilyRegistry from_config_text(std::string_view text, FamilyRegistry base = defaults());
    static FamilyRegistry from_config_file(const std::filesystem::path& path, FamilyRegistry base = defaults());

    const PdeFamily& get(Family family) const;
    const PdeFamily& get(std::string_view name) const;
    std::span<const PdeFamily> families() const { return families_; }

private:
    std::vector<PdeFamily> families_;
};

const PdeFamily& default_family(Family family);

EquationCoeffs encode(const PdeFamily& family, const ParamMap& params);

/// The family's right-hand side written term by term as the textbook PDE
/// states it (e.g. Fisher: nu u_xx + r u - r u^2). Independent of the slot
/// tables so it can check `encode`.
std::vector<std::pair<Term, double>> declared_rhs(Family family, const ParamMap& params);

/// Cartesian grid over every parameter range, first parameter outermost.
/// One point per axis yields the range midpoints.
std::vector<ParamMap> parameter_grid(const PdeFamily& family, std::size_t points_per_axis);

std::vector<double> ood_sweep_values(const PdeFamily& family, std::string_view parameter, double low, double high,
                                     std::size_t count);

std::string describe(const PdeFamily& family, const ParamMap& params);

}  // namespace eqemu
