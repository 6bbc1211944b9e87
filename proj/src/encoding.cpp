#include "eqemu/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "eqemu/error.hpp"

namespace eqemu {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

double parse_double(const std::string& text, const std::string& context) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw invalid_argument("cannot parse number '" + text + "' in " + context);
    }
}

std::vector<PdeFamily> make_default_families() {
    using T = Term;
    std::vector<PdeFamily> out;
    out.push_back({Family::AdvectionDiffusion,
                   "advection_diffusion",
                   {{"c", -4.0, 4.0, {{T::Ux, 1.0}}}, {"nu", 2.0, 8.0, {{T::Uxx, 1.0}}}},
                   false});
    // Burgers is never trained on; its range only drives the zero-shot grid.
    // Centred on b = -1.5, nu = 1.5; the coarse stepper stays finite over it.
    out.push_back({Family::Burgers,
                   "burgers",
                   {{"b", -1.75, -1.25, {{T::UUx, 1.0}}}, {"nu", 1.0, 2.0, {{T::Uxx, 1.0}}}},
                   true});
    out.push_back({Family::KdV,
                   "kdv",
                   {{"b", -2.0, -1.0, {{T::UUx, 1.0}}},
                    {"epsilon", -20.0, -7.0, {{T::Uxxx, 1.0}}},
                    {"zeta", -9.0, -3.0, {{T::Uxxxx, 1.0}}}},
                   false});
    out.push_back({Family::ConservedKS,
                   "cks",
                   {{"b", -2.0, -1.0, {{T::UUx, 1.0}}},
                    {"nu", -2.0, -0.5, {{T::Uxx, 1.0}}},
                    {"zeta", -27.0, -12.0, {{T::Uxxxx, 1.0}}}},
                   false});
    out.push_back({Family::Fisher,
                   "fisher",
                   {{"r", 0.01, 0.05, {{T::U, 1.0}, {T::U2, -1.0}}}, {"nu", 0.2, 5.0, {{T::Uxx, 1.0}}}},
                   false});
    return out;
}

}  // namespace

std::string_view term_name(Term term) {
    switch (term) {
    case Term::U: return "u";
    case Term::U2: return "u^2";
    case Term::Ux: return "u_x";
    case Term::UUx: return "u*u_x";
    case Term::Uxx: return "u_xx";
    case Term::Uxxx: return "u_xxx";
    case Term::Uxxxx: return "u_xxxx";
    }
    return "?";
}

bool EquationCoeffs::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::string_view family_name(Family family) {
    switch (family) {
    case Family::AdvectionDiffusion: return "advection_diffusion";
    case Family::Burgers: return "burgers";
    case Family::KdV: return "kdv";
    case Family::ConservedKS: return "cks";
    case Family::Fisher: return "fisher";
    }
    throw invalid_argument("unknown family id " + std::to_string(static_cast<std::uint32_t>(family)));
}

Family family_from_name(std::string_view name) {
    for (std::uint32_t i = 0; i < kNumFamilies; ++i) {
        const auto f = static_cast<Family>(i);
        if (family_name(f) == name) return f;
    }
    if (name == "ad" || name == "advection-diffusion") return Family::AdvectionDiffusion;
    if (name == "ks" || name == "conserved_ks") return Family::ConservedKS;
    throw invalid_argument("unknown PDE family '" + std::string(name) + "'");
}

const ParameterSpec& PdeFamily::parameter(std::string_view pname) const {
    for (const auto& p : parameters)
        if (p.name == pname) return p;
    throw invalid_argument("family '" + name + "' has no parameter '" + std::string(pname) + "'");
}

bool PdeFamily::has_parameter(std::string_view pname) const {
    return std::any_of(parameters.begin(), parameters.end(), [&](const auto& p) { return p.name == pname; });
}

bool PdeFamily::in_training_range(std::string_view pname, double value) const {
    const auto& p = parameter(pname);
    return value >= p.low && value <= p.high;
}

FamilyRegistry FamilyRegistry::defaults() {
    FamilyRegistry r;
    r.families_ = make_default_families();
    return r;
}

FamilyRegistry FamilyRegistry::from_config_text(std::string_view text, FamilyRegistry base) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const std::string where = "range config line " + std::to_string(line_no);
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw invalid_argument(where + ": expected 'family.parameter = low,high'");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        const auto dot = key.find('.');
        if (dot == std::string::npos) throw invalid_argument(where + ": key '" + key + "' lacks a parameter name");
        const Family fam = family_from_name(key.substr(0, dot));
        const std::string pname = key.substr(dot + 1);
        const auto comma = value.find(',');
        if (comma == std::string::npos) throw invalid_argument(where + ": value must be 'low,high'");
        const double low = parse_double(trim(value.substr(0, comma)), where);
        const double high = parse_double(trim(value.substr(comma + 1)), where);
        if (!std::isfinite(low) || !std::isfinite(high) || low > high)
            throw invalid_argument(where + ": empty or non-finite range");
        auto& family = base.families_.at(static_cast<std::size_t>(fam));
        auto it = std::find_if(family.parameters.begin(), family.parameters.end(),
                               [&](const auto& p) { return p.name == pname; });
        if (it == family.parameters.end())
            throw invalid_argument(where + ": family '" + family.name + "' has no parameter '" + pname + "'");
        it->low = low;
        it->high = high;
    }
    return base;
}

FamilyRegistry FamilyRegistry::from_config_file(const std::filesystem::path& path, FamilyRegistry base) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open range config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_config_text(buffer.str(), std::move(base));
}

const PdeFamily& FamilyRegistry::get(Family family) const {
    const auto idx = static_cast<std::size_t>(family);
    if (idx >= families_.size()) throw invalid_argument("unknown family id " + std::to_string(idx));
    return families_[idx];
}

const PdeFamily& FamilyRegistry::get(std::string_view name) const { return get(family_from_name(name)); }

const PdeFamily& default_family(Family family) {
    static const FamilyRegistry registry = FamilyRegistry::defaults();
    return registry.get(family);
}

EquationCoeffs encode(const PdeFamily& family, const ParamMap& params) {
    for (const auto& [name, value] : params) {
        if (!family.has_parameter(name))
            throw invalid_argument("parameter '" + name + "' is not declared by family '" + family.name + "'");
        if (!std::isfinite(value)) throw invalid_argument("parameter '" + name + "' is not finite");
    }
    EquationCoeffs c;
    for (const auto& p : family.parameters) {
        const auto it = params.find(p.name);
        if (it == params.end())
            throw invalid_argument("family '" + family.name + "' requires parameter '" + p.name + "'");
        for (const auto& slot : p.slots) c[slot.term] += slot.weight * it->second;
    }
    return c;
}

std::vector<std::pair<Term, double>> declared_rhs(Family family, const ParamMap& params) {
    const auto get = [&](const char* name) {
        const auto it = params.find(name);
        if (it == params.end()) throw invalid_argument(std::string("missing parameter ") + name);
        return it->second;
    };
    switch (family) {
    case Family::AdvectionDiffusion:  // u_t = c u_x + nu u_xx
        return {{Term::Ux, get("c")}, {Term::Uxx, get("nu")}};
    case Family::Burgers:  // u_t = b u u_x + nu u_xx
        return {{Term::UUx, get("b")}, {Term::Uxx, get("nu")}};
    case Family::KdV:  // u_t = b u u_x + eps u_xxx + zeta u_xxxx
        return {{Term::UUx, get("b")}, {Term::Uxxx, get("epsilon")}, {Term::Uxxxx, get("zeta")}};
    case Family::ConservedKS:  // u_t = b u u_x + nu u_xx + zeta u_xxxx
        return {{Term::UUx, get("b")}, {Term::Uxx, get("nu")}, {Term::Uxxxx, get("zeta")}};
    case Family::Fisher:  // u_t = nu u_xx + r u (1 - u)
        return {{Term::Uxx, get("nu")}, {Term::U, get("r")}, {Term::U2, -get("r")}};
    }
    throw invalid_argument("unknown family");
}

std::vector<ParamMap> parameter_grid(const PdeFamily& family, std::size_t points_per_axis) {
    if (points_per_axis == 0) throw invalid_argument("parameter grid needs at least one point per axis");
    std::vector<std::vector<double>> axes;
    for (const auto& p : family.parameters) {
        if (!(p.low <= p.high)) throw invalid_argument("empty range for " + family.name + "." + p.name);
        std::vector<double> axis(points_per_axis);
        if (points_per_axis == 1) {
            axis[0] = 0.5 * (p.low + p.high);
        } else {
            for (std::size_t i = 0; i < points_per_axis; ++i)
                axis[i] = p.low + (p.high - p.low) * static_cast<double>(i) / static_cast<double>(points_per_axis - 1);
            axis.back() = p.high;
        }
        axes.push_back(std::move(axis));
    }
    std::size_t total = 1;
    for (const auto& a : axes) total *= a.size();
    std::vector<ParamMap> out;
    out.reserve(total);
    std::vector<std::size_t> idx(axes.size(), 0);
    for (std::size_t n = 0; n < total; ++n) {
        ParamMap m;
        for (std::size_t a = 0; a < axes.size(); ++a) m[family.parameters[a].name] = axes[a][idx[a]];
        out.push_back(std::move(m));
        for (std::size_t a = axes.size(); a-- > 0;) {
            if (++idx[a] < axes[a].size()) break;
            idx[a] = 0;
        }
    }
    return out;
}

std::vector<double> ood_sweep_values(const PdeFamily& family, std::string_view parameter, double low, double high,
                                     std::size_t count) {
    (void)family.parameter(parameter);
    if (!std::isfinite(low) || !std::isfinite(high)) throw invalid_argument("sweep bounds must be finite");
    if (!(low < high)) throw invalid_argument("sweep needs low < high");
    if (count < 2) throw invalid_argument("sweep needs at least two values");
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i)
        out[i] = low + (high - low) * static_cast<double>(i) / static_cast<double>(count - 1);
    out.back() = high;
    return out;
}

std::string describe(const PdeFamily& family, const ParamMap& params) {
    std::ostringstream os;
    os << family.name << '(';
    bool first = true;
    for (const auto& p : family.parameters) {
        if (!first) os << ", ";
        first = false;
        os << p.name << '=';
        if (const auto it = params.find(p.name); it != params.end())
            os << it->second;
        else
            os << '?';
    }
    os << ')';
    return os.str();
}

}  // namespace eqemu
