#include "eqemu/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

#include <openssl/evp.h>

#include "eqemu/datagen.hpp"
#include "eqemu/error.hpp"
#include "eqemu/evaluation.hpp"
#include "eqemu/gradcheck.hpp"
#include "eqemu/training.hpp"

namespace eqemu {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

bool is_top_level(std::string_view key) {
    return key == "seed" || key == "preset" || key == "arch" || key == "out";
}

double parse_number(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw invalid_argument(what + ": '" + text + "' is not a number");
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string json_string(const json& j, const char* key) {
    const auto& v = j.at(key);
    return v.is_string() ? v.get<std::string>() : v.dump();
}

FamilyRegistry registry_from(const json& config) {
    std::string text;
    for (const auto& [key, value] : config.at("ranges").items()) text += key + " = " + json_string(config.at("ranges"), key.c_str()) + "\n";
    return FamilyRegistry::from_config_text(text);
}

std::vector<std::string> string_list(const json& j) {
    if (j.is_array()) return j.get<std::vector<std::string>>();
    std::vector<std::string> out;
    for (auto& s : split(j.get<std::string>(), ','))
        if (!s.empty()) out.push_back(s);
    return out;
}

/// "a=1,b=2;a=3,b=4" -> two tuples.
std::vector<ParamMap> parse_param_tuples(const PdeFamily& family, const std::string& text) {
    std::vector<ParamMap> out;
    for (const auto& tuple : split(text, ';')) {
        if (tuple.empty()) continue;
        ParamMap p;
        for (const auto& item : split(tuple, ',')) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) throw invalid_argument("parameter '" + item + "' is not name=value");
            const auto name = trim(std::string_view(item).substr(0, eq));
            (void)family.parameter(name);
            p[name] = parse_number(trim(std::string_view(item).substr(eq + 1)), "parameter " + name);
        }
        for (const auto& spec : family.parameters)
            if (!p.contains(spec.name)) throw invalid_argument(family.name + " needs a value for '" + spec.name + "'");
        out.push_back(std::move(p));
    }
    return out;
}

EvalOptions eval_options(const json& config) {
    const auto& e = config.at("eval");
    EvalOptions opt;
    opt.n_ic = e.at("n_ic").get<std::size_t>();
    opt.steps = e.at("steps").get<std::size_t>();
    opt.seed = e.at("seed").is_null() ? config.at("seed").get<std::uint64_t>() : e.at("seed").get<std::uint64_t>();
    opt.max_mode = config.at("corpus").at("max_mode").get<std::size_t>();
    return opt;
}

/// The emulator under evaluation plus whatever keeps it alive.
struct LoadedEmulator {
    std::unique_ptr<EmulatorModel> model;
    std::unique_ptr<Emulator> emulator;
    json training_manifest = json{{"entries", json::array()}};
    std::vector<fs::path> inputs;
};

LoadedEmulator load_emulator(const json& config) {
    LoadedEmulator out;
    const auto spec = config.at("eval").at("model").get<std::string>();
    const Grid1D grid(config.at("corpus").at("n").get<std::size_t>());
    if (spec == "oracle" || spec == "reference") {
        out.emulator = std::make_unique<StepperEmulator>(StepperEmulator::reference(grid));
    } else if (spec == "coarse") {
        out.emulator = std::make_unique<StepperEmulator>(StepperEmulator::coarse(grid));
    } else if (spec == "persistence") {
        out.emulator = std::make_unique<PersistenceEmulator>(grid);
    } else if (spec.empty()) {
        throw invalid_argument("eval needs a model: a checkpoint path, oracle, coarse or persistence");
    } else {
        const fs::path path(spec);
        if (!fs::exists(path)) throw io_error("checkpoint not found: " + path.string());
        const auto ckpt = ad::load_checkpoint(path);
        out.model = model_from_checkpoint(ckpt);
        if (ckpt.config.contains("corpus_manifest")) out.training_manifest = ckpt.config.at("corpus_manifest");
        out.emulator = std::make_unique<ModelEmulator>(*out.model);
        out.inputs.push_back(path);
    }
    return out;
}

std::string report_name(const RolloutReport& r, std::size_t index) {
    return r.emulator + "_" + r.family + "_" + std::to_string(index) + ".csv";
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw io_error("failed writing " + path.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<KeyValue> parse_config_text(std::string_view text) {
    std::vector<KeyValue> out;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(std::string_view(raw).substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw format_error("config line " + std::to_string(line_no) + ": expected key = value");
        auto key = trim(std::string_view(line).substr(0, eq));
        if (key.empty()) throw format_error("config line " + std::to_string(line_no) + ": empty key");
        out.emplace_back(std::move(key), trim(std::string_view(line).substr(eq + 1)));
    }
    return out;
}

json default_run_config(Architecture arch, ScalePreset preset, std::uint64_t seed, const std::string& out) {
    const CorpusConfig corpus;
    const auto model = ModelConfig::make(arch, preset, corpus.grid.n());
    auto train = TrainConfig::make(arch, preset);
    train.seed = seed;
    json families = json::array();
    for (auto f : corpus.families) families.push_back(std::string(family_name(f)));
    return {
        {"seed", seed},
        {"preset", std::string(preset_name(preset))},
        {"arch", std::string(architecture_name(arch))},
        {"out", out},
        {"corpus",
         {{"dir", ""},
          {"families", families},
          {"split", "train"},
          {"points_per_axis", corpus.points_per_axis},
          {"samples", corpus.samples},
          {"steps", corpus.steps},
          {"validation_every", corpus.validation_every},
          {"max_mode", corpus.max_mode},
          {"n", corpus.grid.n()}}},
        {"ranges", json::object()},
        {"model", model.to_json()},
        {"train", train.to_json()},
        {"resume", ""},
        {"eval",
         {{"model", ""}, {"pde", ""}, {"params", ""}, {"grid_points", 1}, {"n_ic", 30}, {"steps", 200}, {"seed", nullptr}}},
        {"sweep", {{"param", ""}, {"range", ""}, {"count", 9}}},
    };
}

void set_config_value(json& config, std::string_view key, std::string_view value) {
    const auto parts = split(key, '.');
    for (const auto& p : parts)
        if (p.empty()) throw invalid_argument("malformed config key '" + std::string(key) + "'");
    if (parts.front() == "ranges") {
        if (parts.size() != 3) throw invalid_argument("range keys look like ranges.family.parameter, got '" + std::string(key) + "'");
        config["ranges"][parts[1] + "." + parts[2]] = std::string(value);
        return;
    }
    json* node = &config;
    for (const auto& p : parts) {
        if (!node->is_object() || !node->contains(p)) throw invalid_argument("unknown config key '" + std::string(key) + "'");
        node = &(*node)[p];
    }
    const json parsed = json::parse(value, nullptr, false);
    *node = parsed.is_discarded() ? json(std::string(value)) : parsed;
}

json resolve_run_config(const RunRequest& request) {
    std::vector<KeyValue> file;
    if (request.config_file) {
        if (!fs::exists(*request.config_file)) throw io_error("config file not found: " + request.config_file->string());
        file = parse_config_text(read_text(*request.config_file));
    }

    std::string seed = "0", preset = "desk", arch = "lc", out = "run";
    const auto take = [&](const std::vector<KeyValue>& kvs) {
        for (const auto& [k, v] : kvs) {
            if (k == "seed") seed = v;
            else if (k == "preset") preset = v;
            else if (k == "arch") arch = v;
            else if (k == "out") out = v;
        }
    };
    take(file);
    if (request.seed) seed = std::to_string(*request.seed);
    if (request.preset) preset = *request.preset;
    if (request.arch) arch = *request.arch;
    if (request.out) out = *request.out;
    take(request.overrides);

    const double seed_value = parse_number(seed, "seed");
    if (seed_value < 0 || seed_value != std::floor(seed_value)) throw invalid_argument("seed must be a non-negative integer");
    auto config = default_run_config(architecture_from_name(arch), preset_from_name(preset),
                                     static_cast<std::uint64_t>(seed_value), out);
    config["command"] = request.command;
    for (const auto* kvs : std::initializer_list<const std::vector<KeyValue>*>{&file, &request.flags, &request.overrides})
        for (const auto& [k, v] : *kvs)
            if (!is_top_level(k)) set_config_value(config, k, v);

    if (!config.at("ranges").empty()) {
        const auto defaults = ModelConfig::make(architecture_from_name(arch), preset_from_name(preset)).coeff_scale;
        if (config.at("model").at("coeff_scale").get<std::array<double, kNumTerms>>() == defaults)
            config["model"]["coeff_scale"] = default_coeff_scale(registry_from(config));
    }
    return config;
}

std::string git_blob_sha1(std::string_view bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw io_error("SHA-1 digest failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return os.str();
}

std::string file_sha1(const fs::path& path) { return git_blob_sha1(read_text(path)); }

void write_run_manifest(const fs::path& out_dir, const json& config, const std::vector<fs::path>& inputs) {
    json in = json::array();
    for (const auto& p : inputs) in.push_back({{"path", p.generic_string()}, {"sha1", file_sha1(p)}});
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(out_dir))
        if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    json outputs = json::array();
    for (const auto& p : files)
        outputs.push_back({{"path", fs::relative(p, out_dir).generic_string()}, {"sha1", file_sha1(p)}});
    write_json({{"tool", "eqemu"},
                {"version", kToolVersion},
                {"command", config.value("command", std::string())},
                {"config", config},
                {"inputs", in},
                {"outputs", outputs}},
               out_dir / "run_manifest.json");
}

void cmd_generate(const json& config, std::ostream& log) {
    const auto& c = config.at("corpus");
    const fs::path out(config.at("out").get<std::string>());
    const auto registry = registry_from(config);
    const Grid1D grid(c.at("n").get<std::size_t>());
    std::vector<Family> families;
    for (const auto& name : string_list(c.at("families"))) families.push_back(registry.get(name).id);
    if (families.empty()) throw invalid_argument("generate: no families selected");
    const auto split_tag = split_from_name(c.at("split").get<std::string>());
    const auto seed = config.at("seed").get<std::uint64_t>();
    fs::create_directories(out);

    if (split_tag == Split::Test) {
        EvalOptions opt;
        opt.n_ic = c.at("samples").get<std::size_t>();
        opt.steps = c.at("steps").get<std::size_t>();
        opt.seed = seed;
        opt.max_mode = c.at("max_mode").get<std::size_t>();
        json entries = json::array();
        for (auto f : families) {
            const auto& fam = registry.get(f);
            const auto grid_points = parameter_grid(fam, c.at("points_per_axis").get<std::size_t>());
            for (std::size_t i = 0; i < grid_points.size(); ++i) {
                const auto set = make_test_set(fam, grid_points[i], grid, opt);
                const auto file = "test_" + fam.name + "_" + std::to_string(i) + ".traj";
                save_set(set, out / file);
                entries.push_back({{"file", file},
                                   {"family", fam.name},
                                   {"params", grid_points[i]},
                                   {"coeffs", to_json(set.coeffs)},
                                   {"split", "test"},
                                   {"seed", set.seed},
                                   {"sample_seeds", set.sample_seeds},
                                   {"samples", set.samples},
                                   {"steps", set.steps()}});
            }
        }
        write_json({{"grid", {{"n", grid.n()}, {"length", grid.length()}}}, {"entries", entries}}, out / "manifest.json");
        log << "wrote " << entries.size() << " test sets to " << out.string() << '\n';
    } else if (split_tag == Split::Train) {
        CorpusConfig cc;
        cc.families = families;
        cc.points_per_axis = c.at("points_per_axis").get<std::size_t>();
        cc.samples = c.at("samples").get<std::size_t>();
        cc.steps = c.at("steps").get<std::size_t>();
        cc.validation_every = c.at("validation_every").get<std::size_t>();
        cc.max_mode = c.at("max_mode").get<std::size_t>();
        cc.grid = grid;
        cc.registry = registry;
        auto corpus = build_training_corpus(cc, seed);
        write_corpus(corpus, out);
        log << "wrote " << corpus.train.size() << " train and " << corpus.val.size() << " val sets to " << out.string()
            << '\n';
    } else {
        throw invalid_argument("generate: split must be train or test (validation comes with train)");
    }
    write_run_manifest(out, config, {});
}

void cmd_train(const json& config, std::ostream& log) {
    const fs::path corpus_dir(config.at("corpus").at("dir").get<std::string>());
    if (corpus_dir.empty()) throw invalid_argument("train needs a corpus directory (--corpus or corpus.dir)");
    if (!fs::is_directory(corpus_dir)) throw io_error("corpus directory not found: " + corpus_dir.string());
    const auto corpus = read_corpus(corpus_dir);
    const fs::path out(config.at("out").get<std::string>());

    auto model_config = ModelConfig::from_json(config.at("model"));
    const auto corpus_n = corpus.manifest.at("grid").at("n").get<std::size_t>();
    if (model_config.n != corpus_n)
        throw invalid_argument("model grid n=" + std::to_string(model_config.n) + " but corpus has n=" + std::to_string(corpus_n));
    EmulatorModel model(model_config, config.at("seed").get<std::uint64_t>());
    auto train_config = TrainConfig::from_json(config.at("train"));

    TrainOptions options;
    options.out_dir = out;
    // Paths stay out of the checkpoint so identical runs in different directories give identical files.
    auto run = config;
    run.erase("out");
    run.erase("resume");
    run["corpus"].erase("dir");
    options.extra_config = {{"corpus_manifest", corpus.manifest}, {"run", run}};
    std::vector<fs::path> inputs{corpus_dir / "manifest.json"};
    for (const auto& e : corpus.entries) inputs.push_back(corpus_dir / e.file);
    const auto resume = config.at("resume").get<std::string>();
    if (!resume.empty()) {
        if (!fs::exists(resume)) throw io_error("checkpoint not found: " + resume);
        options.resume = resume;
        inputs.emplace_back(resume);
    }
    const auto report_every = std::max<std::uint64_t>(1, train_config.steps / 20);
    options.on_step = [&](const CurveRow& r) {
        if ((r.step + 1) % report_every == 0 || r.val_nrmse) {
            log << "step " << r.step + 1 << "/" << train_config.steps << " data " << r.data_loss;
            if (train_config.lambda_max > 0) log << " pde " << r.pde_loss << " lambda " << r.lambda;
            if (r.val_nrmse) log << " val_nrmse " << *r.val_nrmse;
            log << '\n';
        }
    };
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = train(model, corpus.train, corpus.val, train_config, options);
    log << "trained to step " << result.final_step << " in " << std::fixed << std::setprecision(1) << seconds_since(t0)
        << " s" << std::defaultfloat;
    if (result.best_val_nrmse) log << "; best val nRMSE " << *result.best_val_nrmse << " at step " << result.best_step;
    log << '\n';
    write_run_manifest(out, config, inputs);
}

void cmd_eval(const json& config, std::ostream& log) {
    const auto pde = config.at("eval").at("pde").get<std::string>();
    if (pde.empty()) throw invalid_argument("eval needs --pde");
    const auto registry = registry_from(config);
    const auto& fam = registry.get(pde);
    const auto loaded = load_emulator(config);
    const auto opt = eval_options(config);
    const fs::path out(config.at("out").get<std::string>());
    fs::create_directories(out);

    const auto params_text = config.at("eval").at("params").get<std::string>();
    const auto grid_points = config.at("eval").at("grid_points").get<std::size_t>();
    // Burgers defaults to a 2x2 grid so the zero-shot run covers its range corners.
    const auto tuples = !params_text.empty() ? parse_param_tuples(fam, params_text)
                                             : parameter_grid(fam, fam.held_out ? std::max<std::size_t>(grid_points, 2) : grid_points);

    json summary = json::array();
    const auto record = [&](const RolloutReport& r, std::size_t i) {
        emit_report(r, out / report_name(r, i));
        auto s = report_summary(r);
        s["file"] = report_name(r, i);
        summary.push_back(s);
        log << r.emulator << " " << describe(fam, r.params) << ": gmean nRMSE " << r.gmean.value << ", stable for ";
        if (r.stability_horizon) log << *r.stability_horizon - 1 << " steps\n";
        else log << "all " << r.steps << " steps\n";
    };
    std::vector<RolloutReport> main_reports;
    if (fam.held_out) {
        const auto results = evaluate_heldout_burgers(*loaded.emulator, loaded.training_manifest, tuples, opt, registry);
        for (std::size_t i = 0; i < results.size(); ++i) {
            record(results[i].model, i);
            record(results[i].persistence, i);
            record(results[i].coarse, i);
            main_reports.push_back(results[i].model);
        }
    } else {
        for (std::size_t i = 0; i < tuples.size(); ++i) {
            main_reports.push_back(evaluate(*loaded.emulator, fam, tuples[i], opt));
            record(main_reports.back(), i);
        }
    }
    write_json(summary, out / "summary.json");

    if (loaded.emulator->name() == "reference") {
        // The oracle scored against its own trajectories must be exact to round-off.
        constexpr double kClosure = 1e-5;
        for (const auto& r : main_reports)
            for (std::size_t t = 0; t < r.mean.size(); ++t)
                if (!(r.mean[t] < kClosure)) {
                    std::ostringstream msg;
                    msg << "closure check failed for " << describe(fam, r.params) << " at step " << t + 1 << ": nRMSE "
                        << r.mean[t];
                    throw Error(ErrorKind::SelfCheck, msg.str());
                }
        log << "closure check passed (nRMSE < " << kClosure << " at every step)\n";
    }
    write_run_manifest(out, config, loaded.inputs);
}

void cmd_sweep(const json& config, std::ostream& log) {
    const auto pde = config.at("eval").at("pde").get<std::string>();
    if (pde.empty()) throw invalid_argument("sweep needs --pde");
    const auto& s = config.at("sweep");
    const auto param = s.at("param").get<std::string>();
    if (param.empty()) throw invalid_argument("sweep needs --sweep-param");
    const auto registry = registry_from(config);
    const auto& fam = registry.get(pde);
    const auto& spec = fam.parameter(param);
    const auto count = s.at("count").get<std::size_t>();
    if (count == 0) throw invalid_argument("sweep count must be positive");

    double lo = spec.low, hi = spec.high;
    const auto& range = s.at("range");
    if (range.is_array()) {
        if (range.size() != 2) throw invalid_argument("sweep range needs two values");
        lo = range[0].get<double>();
        hi = range[1].get<double>();
    } else if (!range.get<std::string>().empty()) {
        const auto parts = split(range.get<std::string>(), ',');
        if (parts.size() != 2) throw invalid_argument("sweep range must be low,high");
        lo = parse_number(parts[0], "sweep range");
        hi = parse_number(parts[1], "sweep range");
    }
    const std::vector<double> values = count == 1 ? std::vector<double>{lo} : ood_sweep_values(fam, param, lo, hi, count);

    const auto loaded = load_emulator(config);
    const auto opt = eval_options(config);
    const fs::path out(config.at("out").get<std::string>());
    fs::create_directories(out);
    const auto rows = coefficient_sweep(*loaded.emulator, fam, param, values, opt);
    const auto file = "sweep_" + fam.name + "_" + param + ".csv";
    emit_sweep(rows, out / file);
    for (const auto& r : rows)
        log << param << " = " << r.value << (r.in_training_band ? " (in band)" : "") << ": gmean nRMSE " << r.gmean << '\n';
    log << "wrote " << (out / file).string() << '\n';
    write_run_manifest(out, config, loaded.inputs);
}

SolverCheck solver_analytic_check() {
    SolverCheck result;
    const Grid1D grid(160);
    const auto n = grid.n();

    // Band-limited IC, shifted analytically through its own Fourier series.
    const auto u0 = make_initial_condition({5, 11, false}, grid);
    std::vector<double> ca(6), sa(6);
    for (std::size_t m = 1; m <= 5; ++m)
        for (std::size_t j = 0; j < n; ++j) {
            const double phase = 2.0 * std::numbers::pi * static_cast<double>(m * j) / static_cast<double>(n);
            ca[m] += 2.0 * u0[j] * std::cos(phase) / static_cast<double>(n);
            sa[m] += 2.0 * u0[j] * std::sin(phase) / static_cast<double>(n);
        }
    const auto& ad_family = default_family(Family::AdvectionDiffusion);
    const auto a = to_physical(encode(ad_family, {{"c", 2.0}, {"nu", 0.0}}), grid, 1.0);
    const double speed = a[Term::Ux];
    const EtdStepper advect(grid, a, StepperConfig::reference());
    auto u = u0;
    for (std::size_t t = 1; t <= 10; ++t) {
        advect.step(u);
        for (std::size_t j = 0; j < n; ++j) {
            const double x = grid.x(j) + speed * static_cast<double>(t);
            double exact = 0.0;
            for (std::size_t m = 1; m <= 5; ++m) {
                const double k = 2.0 * std::numbers::pi * static_cast<double>(m) / grid.length();
                exact += ca[m] * std::cos(k * x) + sa[m] * std::sin(k * x);
            }
            result.advection_linf = std::max(result.advection_linf, std::abs(u[j] - exact));
        }
    }

    const auto d = to_physical(encode(ad_family, {{"c", 0.0}, {"nu", 4.0}}), grid, 1.0);
    const double nu = d[Term::Uxx];
    const EtdStepper diffuse(grid, d, StepperConfig::reference());
    for (std::size_t m : {1, 3, 7}) {
        const double k = 2.0 * std::numbers::pi * static_cast<double>(m) / grid.length();
        std::vector<double> v(n);
        for (std::size_t j = 0; j < n; ++j) v[j] = std::cos(k * grid.x(j));
        for (std::size_t t = 1; t <= 10; ++t) {
            diffuse.step(v);
            const double decay = std::exp(-nu * k * k * static_cast<double>(t));
            for (std::size_t j = 0; j < n; ++j)
                result.diffusion_max_error = std::max(result.diffusion_max_error, std::abs(v[j] - decay * std::cos(k * grid.x(j))));
        }
    }
    return result;
}

SuiteResult run_solver_suite() {
    SuiteResult r{"solver", true, 0.0, {}};
    const auto t0 = std::chrono::steady_clock::now();
    const auto check = solver_analytic_check();
    if (!(check.advection_linf < 1e-6)) {
        r.passed = false;
        r.failures.push_back("advection L-inf error " + std::to_string(check.advection_linf));
    }
    if (!(check.diffusion_max_error < 1e-8)) {
        r.passed = false;
        r.failures.push_back("diffusion decay error " + std::to_string(check.diffusion_max_error));
    }
    r.seconds = seconds_since(t0);
    return r;
}

SuiteResult run_gradient_suite(std::size_t seeds) {
    SuiteResult r{"gradients", true, 0.0, {}};
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& g : ad::check_all_ops(seeds, 1e-4))
        if (!g.passed) {
            r.passed = false;
            std::ostringstream msg;
            msg << g.name << " (max relative error " << g.max_error << ")";
            r.failures.push_back(msg.str());
        }
    r.seconds = seconds_since(t0);
    return r;
}

SuiteResult run_metric_suite() {
    SuiteResult r{"metrics", true, 0.0, {}};
    const auto t0 = std::chrono::steady_clock::now();
    const auto fail = [&](const std::string& what) {
        r.passed = false;
        r.failures.push_back(what);
    };
    const Grid1D grid(160);
    const auto x = make_initial_condition({5, 3, false}, grid);
    std::vector<double> x2(x.size());
    std::transform(x.begin(), x.end(), x2.begin(), [](double v) { return 2.0 * v; });
    if (nrmse(x, x).value_or(1.0) != 0.0) fail("nrmse(x, x) != 0");
    if (std::abs(nrmse(x2, x).value_or(0.0) - 1.0) > 1e-12) fail("nrmse(2x, x) != 1");
    const double eps = 0.0371;
    const std::vector<double> flat(100, eps);
    if (std::abs(gmean_nrmse(flat).value - eps) > 1e-12) fail("gmean of a constant series");

    // Per-sample normalization first: a small-norm sample counts as much as a large one.
    const std::vector<double> truth{1.0, 0.0, 10.0, 0.0};
    const std::vector<double> pred{1.5, 0.0, 10.0, 0.0};
    const double expected = (0.5 + 0.0) / 2.0;
    if (std::abs(mean_nrmse(pred, truth, 2).value_or(0.0) - expected) > 1e-12) fail("averaging order");
    r.seconds = seconds_since(t0);
    return r;
}

std::vector<SuiteResult> cmd_selfcheck(const std::optional<std::string>& fault_op, std::ostream& log) {
    if (fault_op) {
        const auto cases = ad::registered_op_cases();
        if (std::none_of(cases.begin(), cases.end(), [&](const auto& c) { return c.name.rfind(*fault_op, 0) == 0; })) {
            std::string known;
            for (const auto& c : cases) known += (known.empty() ? "" : ", ") + c.name;
            throw invalid_argument("no differentiable op named '" + *fault_op + "' (known: " + known + ")");
        }
    }
    std::vector<SuiteResult> results;
    results.push_back(run_solver_suite());
    {
        std::optional<ad::ScopedFault> fault;
        if (fault_op) fault.emplace(*fault_op, 1.1);
        results.push_back(run_gradient_suite());
    }
    results.push_back(run_metric_suite());
    for (const auto& r : results) {
        log << std::left << std::setw(10) << r.name << (r.passed ? " PASS " : " FAIL ") << std::fixed
            << std::setprecision(3) << r.seconds << " s" << std::defaultfloat << '\n';
        for (const auto& f : r.failures) log << "  failed: " << f << '\n';
    }
    return results;
}

}  // namespace eqemu
