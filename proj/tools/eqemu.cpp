#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eqemu/error.hpp"
#include "eqemu/pipeline.hpp"

using namespace eqemu;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string preset;
    std::string out;
    std::string arch;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Plain-text run config (key = value lines)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "Master seed");
    cmd->add_option("--preset", c.preset, "Scale preset")->check(CLI::IsMember({"paper", "desk"}));
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_option("--arch", c.arch, "Architecture: m1..m4 or pi_fno_unet, lsc_fno, pino, lc");
    cmd->add_option("--set", c.sets, "Dotted override key=value, applied last (repeatable)");
}

RunRequest request_for(const std::string& command, const Common& c) {
    RunRequest r;
    r.command = command;
    if (!c.config.empty()) r.config_file = c.config;
    r.seed = c.seed;
    if (!c.preset.empty()) r.preset = c.preset;
    if (!c.arch.empty()) r.arch = c.arch;
    if (!c.out.empty()) r.out = c.out;
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw invalid_argument("--set expects key=value, got '" + s + "'");
        r.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return r;
}

void flag(RunRequest& r, const char* key, const std::string& value) {
    if (!value.empty()) r.flags.emplace_back(key, value);
}

// Flag values are strings; quote them so set_config_value keeps them as such.
std::string as_json_string(const std::string& s) { return s.empty() ? s : nlohmann::json(s).dump(); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Equation-conditioned PDE emulators: data generation, training and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    Common gen_c, train_c, eval_c, sweep_c;
    std::string families, split, corpus, resume, model, pde, params, sweep_param, sweep_range;
    std::optional<std::uint64_t> steps, sweep_count, eval_steps;
    std::optional<std::string> fault;

    auto* gen = app.add_subcommand("generate", "Generate a trajectory corpus");
    add_common(gen, gen_c);
    gen->add_option("--families", families, "Comma-separated families");
    gen->add_option("--split", split, "train (with validation) or test");

    auto* tr = app.add_subcommand("train", "Train an emulator on a corpus");
    add_common(tr, train_c);
    tr->add_option("--corpus", corpus, "Corpus directory written by generate");
    tr->add_option("--steps", steps, "Optimizer steps");
    tr->add_option("--resume", resume, "Checkpoint with optimizer state to continue from");

    auto* ev = app.add_subcommand("eval", "Roll out an emulator against fresh test trajectories");
    add_common(ev, eval_c);
    ev->add_option("--model", model, "Checkpoint path, or oracle, coarse, persistence");
    ev->add_option("--pde", pde, "PDE family");
    ev->add_option("--params", params, "Parameter tuples, e.g. \"b=-2,nu=1;b=-4,nu=3\"");
    ev->add_option("--rollout-steps", eval_steps, "Rollout length");

    auto* sw = app.add_subcommand("sweep", "Coefficient sweep of one parameter");
    add_common(sw, sweep_c);
    sw->add_option("--model", model, "Checkpoint path, or oracle, coarse, persistence");
    sw->add_option("--pde", pde, "PDE family");
    sw->add_option("--sweep-param", sweep_param, "Parameter to vary");
    sw->add_option("--sweep-range", sweep_range, "low,high (default: the training range)");
    sw->add_option("--sweep-count", sweep_count, "Number of values");
    sw->add_option("--rollout-steps", eval_steps, "Rollout length");

    auto* sc = app.add_subcommand("selfcheck", "Solver, gradient and metric self-checks");
    sc->add_option("--inject-fault", fault, "Corrupt the backward pass of this op (mutation check)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (sc->parsed()) {
            bool ok = true;
            for (const auto& r : cmd_selfcheck(fault, std::cout)) ok = ok && r.passed;
            if (!ok) {
                std::cerr << "error[" << error_kind_name(ErrorKind::SelfCheck) << "]: selfcheck failed\n";
                return static_cast<int>(ErrorKind::SelfCheck);
            }
            return 0;
        }
        if (gen->parsed()) {
            auto r = request_for("generate", gen_c);
            flag(r, "corpus.families", as_json_string(families));
            flag(r, "corpus.split", as_json_string(split));
            cmd_generate(resolve_run_config(r), std::cout);
        } else if (tr->parsed()) {
            auto r = request_for("train", train_c);
            flag(r, "corpus.dir", as_json_string(corpus));
            if (steps) flag(r, "train.steps", std::to_string(*steps));
            flag(r, "resume", as_json_string(resume));
            cmd_train(resolve_run_config(r), std::cout);
        } else if (ev->parsed()) {
            auto r = request_for("eval", eval_c);
            flag(r, "eval.model", as_json_string(model));
            flag(r, "eval.pde", as_json_string(pde));
            flag(r, "eval.params", as_json_string(params));
            if (eval_steps) flag(r, "eval.steps", std::to_string(*eval_steps));
            cmd_eval(resolve_run_config(r), std::cout);
        } else if (sw->parsed()) {
            auto r = request_for("sweep", sweep_c);
            flag(r, "eval.model", as_json_string(model));
            flag(r, "eval.pde", as_json_string(pde));
            flag(r, "sweep.param", as_json_string(sweep_param));
            flag(r, "sweep.range", as_json_string(sweep_range));
            if (sweep_count) flag(r, "sweep.count", std::to_string(*sweep_count));
            if (eval_steps) flag(r, "eval.steps", std::to_string(*eval_steps));
            cmd_sweep(resolve_run_config(r), std::cout);
        }
    } catch (const Error& e) {
        std::cerr << "error[" << error_kind_name(e.kind()) << "]: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
