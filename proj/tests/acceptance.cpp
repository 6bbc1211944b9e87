// One line per acceptance criterion: [PASS]/[FAIL], the measured values and
// the pinned tolerance. Usage: acceptance <path-to-eqemu-cli> [criterion ...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eqemu/datagen.hpp"
#include "eqemu/error.hpp"
#include "eqemu/evaluation.hpp"
#include "eqemu/gradcheck.hpp"
#include "eqemu/models.hpp"
#include "eqemu/optim.hpp"
#include "eqemu/pipeline.hpp"
#include "eqemu/training.hpp"

using namespace eqemu;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// Pure advection and pure diffusion against closed forms.
Outcome solver_exactness() {
    const auto s = solver_analytic_check();
    const bool ok = s.advection_linf < 1e-6 && s.diffusion_max_error < 1e-8;
    return {ok, "advection Linf " + fmt(s.advection_linf) + " (< 1e-6), diffusion decay error " +
                    fmt(s.diffusion_max_error) + " (< 1e-8)"};
}

// Mean drift over 200 reference steps, 5 ICs per grid tuple, four reaction-free families.
Outcome conservation() {
    const Grid1D grid(160);
    double worst = 0.0;
    std::size_t runs = 0;
    for (auto f : {Family::KdV, Family::ConservedKS, Family::Burgers, Family::AdvectionDiffusion}) {
        const auto& fam = default_family(f);
        for (const auto& p : parameter_grid(fam, 2)) {
            const EtdStepper stepper(grid, to_physical(encode(fam, p), grid, 1.0), StepperConfig::reference());
            for (std::uint64_t ic = 0; ic < 5; ++ic) {
                auto u = make_initial_condition({5, mix_seed(77, static_cast<std::uint64_t>(f), ic), false}, grid);
                const auto mean = [&] {
                    double s = 0.0;
                    for (double v : u) s += v;
                    return s / static_cast<double>(u.size());
                };
                const double m0 = mean();
                for (int t = 0; t < 200; ++t) stepper.step(u);
                worst = std::max(worst, std::abs(mean() - m0));
                ++runs;
            }
        }
    }
    return {worst < 1e-6, std::to_string(runs) + " rollouts, max mean drift " + fmt(worst) + " (< 1e-6)"};
}

// Richardson self-convergence on smooth Burgers states.
Outcome self_convergence() {
    const Grid1D grid(160);
    const auto& fam = default_family(Family::Burgers);
    double worst = 1e9;
    for (const auto& p : parameter_grid(fam, 2))
        for (std::uint64_t seed : {1u, 2u}) {
            const auto u = make_initial_condition({5, seed, false}, grid);
            const auto r = convergence_order(u, to_physical(encode(fam, p), grid, 1.0), grid);
            worst = std::min(worst, r.order);
        }
    return {worst >= 1.9, "min observed order " + fmt(worst) + " over 8 Burgers states (>= 1.9)"};
}

Outcome gradients() {
    std::size_t failed = 0, total = 0;
    double worst = 0.0;
    std::string names;
    for (const auto& r : ad::check_all_ops(3, 1e-4)) {
        ++total;
        worst = std::max(worst, r.max_error);
        if (!r.passed) {
            ++failed;
            names += " " + r.name;
        }
    }
    return {failed == 0, std::to_string(total) + " ops x 3 seeds, worst relative error " + fmt(worst) + " (< 1e-4)" +
                             (failed ? "; failing:" + names : "")};
}

Outcome metric_identities() {
    const Grid1D grid(160);
    const auto x = make_initial_condition({5, 4, false}, grid);
    std::vector<double> x2;
    for (double v : x) x2.push_back(2.0 * v);
    const double same = nrmse(x, x).value_or(-1.0);
    const double doubled = nrmse(x2, x).value_or(-1.0);
    const double eps = 0.0123;
    const double g = gmean_nrmse(std::vector<double>(100, eps)).value;
    // Two samples of very different norm: per-sample nRMSE first, then the mean.
    const std::vector<double> truth{1.0, 0.0, 10.0, 0.0}, pred{1.5, 0.0, 10.0, 0.0};
    const double toy = mean_nrmse(pred, truth, 2).value_or(-1.0);
    const bool ok = same == 0.0 && std::abs(doubled - 1.0) < 1e-12 && std::abs(g - eps) < 1e-12 &&
                    std::abs(toy - 0.25) < 1e-12;
    return {ok, "nrmse(x,x)=" + fmt(same) + ", nrmse(2x,x)=" + fmt(doubled) + ", |gmean-eps|=" + fmt(std::abs(g - eps)) +
                    ", averaging toy " + fmt(toy) + " (expect 0.25)"};
}

EquationCoeffs dense_coeffs() {
    EquationCoeffs c;
    c.values = {0.01, -0.01, 1.0, -1.0, 2.0, -3.0, -5.0};
    return c;
}

Outcome identity_and_liveness() {
    std::string failures;
    double min_response = 1e9;
    for (auto arch : {Architecture::PiFnoUnet, Architecture::LscFno, Architecture::Pino, Architecture::Lc})
        for (std::size_t n : {32u, 160u}) {
            const auto tag = std::string(architecture_name(arch)) + "/" + std::to_string(n);
            auto cfg = ModelConfig::make(arch, ScalePreset::Desk, n);
            cfg.zero_init_final = true;
            EmulatorModel model(cfg, 9);
            const auto g = model.grid();
            std::vector<double> u;
            for (std::uint64_t b = 0; b < 2; ++b)
                for (double v : make_initial_condition({5, 70 + b, false}, g)) u.push_back(static_cast<float>(v));
            const std::vector<EquationCoeffs> c{dense_coeffs(), dense_coeffs()};

            // Identity: residual models return u, LC returns its coarse step.
            const auto y = model.predict(u, c);
            const auto base = arch == Architecture::Lc ? model.coarse(u, c) : u;
            for (std::size_t i = 0; i < y.size(); ++i)
                if (static_cast<float>(y[i]) != static_cast<float>(base[i])) {
                    failures += " identity:" + tag;
                    break;
                }

            // Liveness: one optimizer step, then every encoding slot must move the output.
            std::vector<float> target;
            for (std::size_t i = 0; i < u.size(); ++i)
                target.push_back(static_cast<float>(u[i] + 0.1 * std::sin(2.0 * std::numbers::pi * g.x(i % n))));
            ad::Adam adam(model.parameters());
            const auto x = ad::Tensor<float>::constant({2, n}, std::vector<float>(u.begin(), u.end()));
            ad::backward(ad::mae(model.forward(x, c), ad::Tensor<float>::constant({2, n}, target)));
            adam.step(1e-2);
            const std::vector<double> u1(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(n));
            const auto y1 = model.predict(u1, std::vector<EquationCoeffs>{dense_coeffs()});
            for (std::size_t j = 0; j < kNumTerms; ++j) {
                auto cp = dense_coeffs();
                cp[j] *= 1.1;
                const auto y2 = model.predict(u1, std::vector<EquationCoeffs>{cp});
                double diff = 0.0;
                for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(y2[i] - y1[i]));
                min_response = std::min(min_response, diff);
                if (!(diff > 1e-6)) failures += " live:" + tag + "/slot" + std::to_string(j);
            }
        }
    return {failures.empty(), "4 architectures x n in {32,160}; smallest response to a 10% slot change " +
                                  fmt(min_response) + " (> 1e-6)" + (failures.empty() ? "" : "; failing:" + failures)};
}

Outcome oracle_closure() {
    const Grid1D grid(160);
    const auto oracle = StepperEmulator::reference(grid);
    EvalOptions opt;
    opt.seed = 41;
    double worst = 0.0;
    bool all_finite = true;
    for (std::uint32_t f = 0; f < kNumFamilies; ++f) {
        const auto& fam = default_family(static_cast<Family>(f));
        const auto r = evaluate(oracle, fam, parameter_grid(fam, 1).front(), opt);
        all_finite = all_finite && r.mean.size() == 200;
        for (double v : r.mean) {
            if (!std::isfinite(v)) all_finite = false;
            worst = std::max(worst, v);
        }
    }
    return {all_finite && worst < 1e-5, "5 families x 30 ICs x 200 steps, max nRMSE " + fmt(worst) + " (< 1e-5)"};
}

// Configuration of the committed pilot (tests/pilot/lc_advection_diffusion.txt).
Outcome desk_training_signal() {
    CorpusConfig cc;
    cc.families = {Family::AdvectionDiffusion};
    cc.samples = 20;
    cc.steps = 50;
    const auto corpus = build_training_corpus(cc, 1);
    EmulatorModel model(ModelConfig::make(Architecture::Lc, ScalePreset::Desk, 160), 1);
    auto tc = TrainConfig::make(Architecture::Lc, ScalePreset::Desk);
    tc.steps = 2000;
    tc.val_every = 500;
    const double before = dataset_mae(model, corpus.train);
    train(model, corpus.train, corpus.val, tc);
    const double after = dataset_mae(model, corpus.train);
    const double ratio = after / before;

    EvalOptions eo;
    eo.n_ic = 30;
    eo.steps = 20;
    eo.seed = 9;
    const auto& fam = default_family(Family::AdvectionDiffusion);
    bool beats = true;
    double worst_gap = 0.0;  // max of model / persistence at step 10
    for (const auto& p : parameter_grid(fam, 2)) {
        const auto m = evaluate(ModelEmulator(model), fam, p, eo);
        const auto q = evaluate(PersistenceEmulator(model.grid()), fam, p, eo);
        beats = beats && m.mean[9] < q.mean[9];
        worst_gap = std::max(worst_gap, m.mean[9] / q.mean[9]);
    }
    return {ratio < 0.1 && beats, "MAE " + fmt(before) + " -> " + fmt(after) + " (ratio " + fmt(ratio) +
                                      " < 0.1); worst model/persistence nRMSE at step 10 over 4 AD tuples " +
                                      fmt(worst_gap) + " (< 1)"};
}

Outcome zero_shot_integrity() {
    CorpusConfig cc;
    cc.samples = 20;
    cc.steps = 50;
    const auto corpus = build_training_corpus(cc, 1);
    EmulatorModel model(ModelConfig::make(Architecture::Lc, ScalePreset::Desk, 160), 1);
    auto tc = TrainConfig::make(Architecture::Lc, ScalePreset::Desk);
    tc.steps = 2000;
    tc.val_every = 500;
    train(model, corpus.train, corpus.val, tc);

    // The guard itself must fire on a contaminated manifest.
    auto dirty = corpus.manifest;
    dirty["entries"].push_back({{"family", "burgers"}, {"split", "train"}, {"file", "x.traj"}});
    bool guard = false;
    try {
        evaluate_heldout_burgers(PersistenceEmulator(model.grid()), dirty, {}, EvalOptions{});
    } catch (const Error& e) {
        guard = e.kind() == ErrorKind::Contamination;
    }

    EvalOptions eo;
    eo.n_ic = 30;
    eo.steps = 200;
    eo.seed = 9;
    const auto results = evaluate_heldout_burgers(ModelEmulator(model), corpus.manifest,
                                                  parameter_grid(default_family(Family::Burgers), 2), eo);
    std::size_t min_finite = eo.steps;
    double worst_gap = 0.0;
    bool beats = true;
    for (const auto& r : results) {
        std::size_t finite = 0;
        while (finite < r.model.mean.size() && std::isfinite(r.model.mean[finite])) ++finite;
        min_finite = std::min(min_finite, finite);
        beats = beats && r.model.mean[19] < r.persistence.mean[19];
        worst_gap = std::max(worst_gap, r.model.mean[19] / r.persistence.mean[19]);
    }
    const bool ok = guard && results.size() == 4 && min_finite >= 50 && beats;
    return {ok, std::string("contamination guard ") + (guard ? "fires" : "DID NOT FIRE") + "; 4 Burgers tuples finite for " +
                    std::to_string(min_finite) + " of 200 steps (>= 50); worst model/persistence nRMSE at step 20 " +
                    fmt(worst_gap) + " (< 1)"};
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome reproducibility(const std::string& cli) {
    if (cli.empty() || !fs::exists(cli)) return {false, "CLI binary not found: '" + cli + "'"};
    const auto root = fs::temp_directory_path() / "eqemu_acceptance_repro";
    fs::remove_all(root);
    fs::create_directories(root);
    for (const char* run : {"a", "b"}) {
        const auto dir = root / run;
        const std::string common = " --seed 17 --set corpus.samples=20";
        const std::string cmds[] = {
            cli + " generate" + common + " --out " + (dir / "corpus").string(),
            cli + " train" + common + " --steps 500 --corpus " + (dir / "corpus").string() + " --out " + (dir / "train").string(),
            cli + " eval" + common + " --pde kdv --model " + (dir / "train" / "best.ckpt").string() + " --out " + (dir / "eval").string(),
            cli + " eval" + common + " --pde burgers --rollout-steps 50 --model " + (dir / "train" / "best.ckpt").string() +
                " --out " + (dir / "burgers").string(),
        };
        for (const auto& c : cmds)
            if (std::system((c + " > " + (root / "log.txt").string() + " 2>&1").c_str()) != 0)
                return {false, "command failed: " + c};
    }
    std::size_t compared = 0;
    std::string differing;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (e.path().extension() != ".csv") continue;
        const auto rel = fs::relative(e.path(), root / "a");
        ++compared;
        if (!fs::exists(root / "b" / rel) || read_file(e.path()) != read_file(root / "b" / rel)) differing += " " + rel.string();
    }
    return {compared > 0 && differing.empty(),
            std::to_string(compared) + " CSVs from generate -> train 500 -> eval compared byte for byte" +
                (differing.empty() ? "" : "; differing:" + differing)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    std::set<int> only;
    for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"solver analytic exactness", solver_exactness},
        {"conservation of the mean", conservation},
        {"self-convergence order", self_convergence},
        {"gradient correctness", gradients},
        {"metric identities", metric_identities},
        {"identity at init and conditioning liveness", identity_and_liveness},
        {"oracle closure", oracle_closure},
        {"desk training signal (LC on advection-diffusion)", desk_training_signal},
        {"zero-shot Burgers protocol integrity", zero_shot_integrity},
        {"pipeline reproducibility", [&] { return reproducibility(cli); }},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.contains(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (o.passed ? "[PASS] " : "[FAIL] ") << id << ". " << criteria[i].first << ": " << o.detail << " ["
                  << fmt(secs) << " s]" << std::endl;
        if (!o.passed) ++failed;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
