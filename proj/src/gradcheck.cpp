#include "eqemu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace eqemu::ad {

namespace {

using Td = Tensor<double>;

std::vector<double> normal_values(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

double projected_loss(const GradCheckCase& c, const std::vector<Td>& inputs, const std::vector<double>& r) {
    const auto y = c.fn(inputs);
    double acc = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) acc += r[i] * y.data()[i];
    return acc;
}

}  // namespace

double gradient_error(const GradCheckCase& c, std::uint64_t seed, double h) {
    std::mt19937_64 rng(seed);
    std::vector<Td> inputs;
    for (const auto& shape : c.inputs) inputs.push_back(Td::parameter(shape, normal_values(numel(shape), rng)));
    const auto y = c.fn(inputs);
    const auto r = normal_values(y.numel(), rng);
    backward(y, std::span<const double>(r));

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        std::vector<double> analytic(inputs[t].numel(), 0.0);
        if (!inputs[t].grad().empty()) std::copy(inputs[t].grad().begin(), inputs[t].grad().end(), analytic.begin());
        std::vector<double> numeric(analytic.size());
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            // Fresh constant copies so no graph state leaks between evaluations.
            std::vector<Td> probe;
            for (const auto& in : inputs)
                probe.push_back(Td::constant(in.shape(), std::vector<double>(in.data().begin(), in.data().end())));
            const double x0 = probe[t].data()[i];
            probe[t].mutable_data()[i] = x0 + h;
            const double fp = projected_loss(c, probe, r);
            probe[t].mutable_data()[i] = x0 - h;
            const double fm = projected_loss(c, probe, r);
            numeric[i] = (fp - fm) / (2.0 * h);
        }
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
            scale = std::max(scale, std::abs(numeric[i]));
        }
        worst = std::max(worst, diff / std::max(scale, 1e-12));
    }
    return worst;
}

GradCheckResult grad_check(const GradCheckCase& c, std::size_t seeds, double tolerance) {
    GradCheckResult res{c.name, 0.0, seeds, true};
    for (std::size_t s = 0; s < seeds; ++s) {
        const double err = gradient_error(c, 1000 + 7919 * s);
        res.max_error = std::max(res.max_error, std::isfinite(err) ? err : INFINITY);
    }
    res.passed = res.max_error < tolerance;
    return res;
}

std::vector<GradCheckCase> registered_op_cases() {
    using V = std::vector<Td>;
    std::vector<GradCheckCase> cases;
    cases.push_back({"add", {{2, 3, 4}, {2, 3, 4}}, [](const V& x) { return add(x[0], x[1]); }});
    cases.push_back({"sub", {{2, 3, 4}, {2, 3, 4}}, [](const V& x) { return sub(x[0], x[1]); }});
    cases.push_back({"mul", {{2, 3, 4}, {2, 3, 4}}, [](const V& x) { return mul(x[0], x[1]); }});
    cases.push_back({"scale", {{2, 5}}, [](const V& x) { return scale(x[0], 1.7); }});
    cases.push_back({"add_scalar", {{2, 5}}, [](const V& x) { return add_scalar(x[0], -0.3); }});
    cases.push_back({"silu", {{3, 7}}, [](const V& x) { return silu(x[0]); }});
    cases.push_back({"gelu", {{3, 7}}, [](const V& x) { return gelu(x[0]); }});
    cases.push_back({"reshape", {{2, 6}}, [](const V& x) { return reshape(x[0], {3, 4}); }});
    cases.push_back({"broadcast_space", {{2, 3}}, [](const V& x) { return broadcast_space(x[0], 5); }});
    cases.push_back({"concat_channels", {{2, 1, 6}, {2, 3, 6}},
                     [](const V& x) { return concat_channels<double>({x[0], x[1]}); }});
    cases.push_back({"slice_channels", {{2, 4, 6}}, [](const V& x) { return slice_channels(x[0], 1, 2); }});
    cases.push_back({"linear", {{2, 3, 5}, {4, 5}, {4}}, [](const V& x) { return linear(x[0], x[1], x[2]); }});
    cases.push_back({"conv1d", {{2, 4, 16}, {3, 4, 3}, {3}}, [](const V& x) { return conv1d(x[0], x[1], x[2], 1); }});
    cases.push_back({"conv1d_stride2", {{2, 4, 16}, {3, 4, 3}, {3}},
                     [](const V& x) { return conv1d(x[0], x[1], x[2], 2); }});
    cases.push_back({"conv1d_pointwise", {{2, 4, 16}, {3, 4, 1}, {3}},
                     [](const V& x) { return conv1d(x[0], x[1], x[2], 1); }});
    cases.push_back({"conv_transpose1d", {{2, 4, 8}, {4, 3, 3}, {3}},
                     [](const V& x) { return conv_transpose1d(x[0], x[1], x[2], 2); }});
    cases.push_back({"spectral_conv", {{2, 3, 16}, {3, 2, 5, 2}}, [](const V& x) { return spectral_conv(x[0], x[1]); }});
    cases.push_back({"spectral_conv_full_modes", {{2, 2, 16}, {2, 2, 9, 2}},
                     [](const V& x) { return spectral_conv(x[0], x[1]); }});
    cases.push_back({"spectral_conv_per_sample", {{2, 3, 16}, {2, 3, 2, 4, 2}},
                     [](const V& x) { return spectral_conv(x[0], x[1]); }});
    cases.push_back({"lowrank_spectral_weights", {{3, 2, 4, 2}, {2, 2, 3}, {2, 2, 2}, {2, 2, 4, 2}},
                     [](const V& x) { return lowrank_spectral_weights(x[0], x[1], x[2], x[3]); }});
    cases.push_back({"spectral_gate", {{2, 3, 16}, {2, 3, 6}}, [](const V& x) { return spectral_gate(x[0], x[1]); }});
    cases.push_back({"film", {{2, 3, 8}, {2, 3}, {2, 3}}, [](const V& x) { return film(x[0], x[1], x[2]); }});
    cases.push_back({"attention", {{2, 4, 6}, {2, 3, 4}, {2, 3, 4}},
                     [](const V& x) { return attention(x[0], x[1], x[2], 2); }});
    cases.push_back({"pde_rhs", {{2, 16}}, [](const V& x) {
                         const std::vector<std::array<double, 7>> a{{0.3, -0.2, 0.5, -0.7, 0.4, -0.1, -0.05},
                                                                     {-0.1, 0.6, -0.3, 0.2, 0.8, 0.3, -0.02}};
                         return pde_rhs(x[0], a, 16.0);
                     }});
    cases.push_back({"sum", {{3, 4}}, [](const V& x) { return sum(x[0]); }});
    cases.push_back({"mean", {{3, 4}}, [](const V& x) { return mean(x[0]); }});
    cases.push_back({"mae", {{2, 8}, {2, 8}}, [](const V& x) {
                         // Offsets keep every residual far from the kink at zero.
                         std::vector<double> offset(16);
                         for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = (i % 2 ? 8.0 : -8.0);
                         return mae(x[0], add(x[1], Td::constant({2, 8}, offset)));
                     }});
    return cases;
}

std::vector<GradCheckResult> check_all_ops(std::size_t seeds, double tolerance) {
    std::vector<GradCheckResult> out;
    for (const auto& c : registered_op_cases()) out.push_back(grad_check(c, seeds, tolerance));
    return out;
}

}  // namespace eqemu::ad
