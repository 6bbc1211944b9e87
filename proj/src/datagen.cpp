#include "eqemu/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "eqemu/binary_io.hpp"
#include "eqemu/error.hpp"
#include "eqemu/parallel.hpp"

namespace eqemu {

namespace {

constexpr char kMagic[8] = {'E', 'Q', 'E', 'M', 'T', 'R', 'A', 'J'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::string_view split_name(Split split) {
    switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    throw invalid_argument("unknown split");
}

Split split_from_name(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw invalid_argument("unknown split '" + std::string(name) + "'");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ (c + 0x85157af5ULL));
    return h;
}

bool uses_unit_interval(Family family) { return family == Family::Fisher; }

std::vector<double> make_initial_condition(const InitialConditionSpec& spec, const Grid1D& grid) {
    if (spec.max_mode < 1) throw invalid_argument("initial condition needs max_mode >= 1");
    if (spec.max_mode > grid.dealias_cutoff())
        throw invalid_argument("max_mode " + std::to_string(spec.max_mode) + " would alias on a grid of " +
                               std::to_string(grid.n()) + " points (need < n/3)");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::complex<double>> spectrum(grid.num_modes(), 0.0);
    for (std::size_t m = 1; m <= spec.max_mode; ++m) {
        const double re = normal(rng);
        const double im = normal(rng);
        spectrum[m] = {re, im};
    }
    std::vector<double> u(grid.n());
    RealFft(grid.n()).inverse(spectrum, u);
    const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
    const double min = *lo, max = *hi;
    if (spec.unit_interval) {
        const double span = max - min;
        for (double& v : u) v = (v - min) / span;
    } else {
        const double peak = std::max(std::abs(min), std::abs(max));
        for (double& v : u) v /= peak;
    }
    return u;
}

TrajectorySet TrajectorySet::select(std::span<const std::size_t> sample_indices, Split new_split) const {
    TrajectorySet out;
    out.family = family;
    out.coeffs = coeffs;
    out.samples = sample_indices.size();
    out.times = times;
    out.points = points;
    out.seed = seed;
    out.split = new_split;
    out.states.reserve(out.samples * times * points);
    for (std::size_t s : sample_indices) {
        if (s >= samples) throw invalid_argument("sample index out of range");
        const auto first = states.begin() + static_cast<std::ptrdiff_t>(s * times * points);
        out.states.insert(out.states.end(), first, first + static_cast<std::ptrdiff_t>(times * points));
        out.sample_seeds.push_back(sample_seeds.at(s));
    }
    return out;
}

TrajectorySet generate_set(const PdeFamily& family, const ParamMap& params, const Grid1D& grid,
                           const GenerationOptions& options, std::uint64_t seed, Split split) {
    if (options.max_attempts < 1) throw invalid_argument("max_attempts must be positive");
    TrajectorySet set;
    set.family = family.id;
    set.coeffs = encode(family, params);
    set.samples = options.samples;
    set.times = options.steps + 1;
    set.points = grid.n();
    set.seed = seed;
    set.split = split;
    set.states.resize(set.samples * set.times * set.points);
    set.sample_seeds.resize(set.samples);

    const EtdStepper stepper(grid, to_physical(set.coeffs, grid, options.stepper.dt), options.stepper);
    std::vector<double> u(grid.n());
    for (std::size_t s = 0; s < set.samples; ++s) {
        bool done = false;
        std::string last_error;
        for (std::size_t attempt = 0; attempt < options.max_attempts && !done; ++attempt) {
            const std::uint64_t sample_seed = mix_seed(seed, s, attempt);
            u = make_initial_condition({options.max_mode, sample_seed, uses_unit_interval(family.id)}, grid);
            for (double& v : u) v = static_cast<double>(static_cast<float>(v));
            try {
                for (std::size_t t = 0; t < set.times; ++t) {
                    if (t > 0) stepper.step(u);
                    auto slot = set.state(s, t);
                    for (std::size_t j = 0; j < u.size(); ++j) {
                        slot[j] = static_cast<float>(u[j]);
                        if (!std::isfinite(slot[j])) throw BlowUpError("state overflowed f32", t);
                    }
                }
                set.sample_seeds[s] = sample_seed;
                done = true;
            } catch (const BlowUpError& e) {
                last_error = e.what();
            }
        }
        if (!done)
            throw Error(ErrorKind::BlowUp, "parameter tuple rejected after " + std::to_string(options.max_attempts) +
                                               " blown-up attempts: " + describe(family, params) + " (" + last_error +
                                               ")");
    }
    return set;
}

void save_set(const TrajectorySet& set, const std::filesystem::path& path) {
    if (set.states.size() != set.samples * set.times * set.points || set.sample_seeds.size() != set.samples)
        throw invalid_argument("trajectory set dimensions are inconsistent");
    binio::Writer w;
    w.put_raw(std::string_view(kMagic, sizeof(kMagic)));
    w.put(kVersion);
    w.put(static_cast<std::uint32_t>(set.family));
    w.put_array(std::span<const double>(set.coeffs.values));
    w.put(static_cast<std::uint64_t>(set.samples));
    w.put(static_cast<std::uint64_t>(set.times));
    w.put(static_cast<std::uint64_t>(set.points));
    w.put(set.seed);
    w.put(static_cast<std::uint32_t>(set.split));
    w.put_array(std::span<const std::uint64_t>(set.sample_seeds));
    w.put_array(std::span<const float>(set.states));
    w.seal();
    w.write_file(path);
}

TrajectorySet load_set(const std::filesystem::path& path, std::optional<std::size_t> expected_points) {
    auto r = binio::Reader::from_file(path);
    if (r.remaining() < sizeof(kMagic) || r.get_raw(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic)))
        throw format_error(path.string() + ": not a trajectory file (bad magic)");
    r = binio::Reader::from_file(path);
    r.verify_checksum();
    (void)r.get_raw(sizeof(kMagic));
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion)
        throw format_error(path.string() + ": unsupported version " + std::to_string(version) + " (expected " +
                           std::to_string(kVersion) + ")");
    TrajectorySet set;
    const auto family = r.get<std::uint32_t>();
    if (family >= kNumFamilies) throw format_error(path.string() + ": unknown family id " + std::to_string(family));
    set.family = static_cast<Family>(family);
    r.get_array(std::span<double>(set.coeffs.values));
    const auto samples = r.get<std::uint64_t>();
    const auto times = r.get<std::uint64_t>();
    const auto points = r.get<std::uint64_t>();
    if (expected_points && points != *expected_points)
        throw format_error(path.string() + ": shape mismatch, expected " + std::to_string(*expected_points) +
                           " grid points, found " + std::to_string(points));
    set.seed = r.get<std::uint64_t>();
    const auto split = r.get<std::uint32_t>();
    if (split > 2) throw format_error(path.string() + ": unknown split tag " + std::to_string(split));
    set.split = static_cast<Split>(split);
    // Guard the size arithmetic before allocating.
    const std::uint64_t payload = r.remaining();
    if (samples > payload / 8 || times == 0 || points == 0 ||
        samples * 8 + samples * times * points * sizeof(float) != payload)
        throw format_error(path.string() + ": header dims (" + std::to_string(samples) + ", " + std::to_string(times) +
                           ", " + std::to_string(points) + ") do not match payload of " + std::to_string(payload) +
                           " bytes");
    set.samples = samples;
    set.times = times;
    set.points = points;
    set.sample_seeds.resize(samples);
    r.get_array(std::span<std::uint64_t>(set.sample_seeds));
    set.states.resize(samples * times * points);
    r.get_array(std::span<float>(set.states));
    r.expect_end();
    return set;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const EquationCoeffs& c) { return nlohmann::json(c.values); }

EquationCoeffs coeffs_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != kNumTerms) throw format_error("coefficient list must have 7 entries");
    EquationCoeffs c;
    for (std::size_t i = 0; i < kNumTerms; ++i) c[i] = j.at(i).get<double>();
    return c;
}

namespace {

nlohmann::json entry_json(const CorpusEntry& e) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : e.params) params[k] = v;
    return {{"file", e.file},
            {"family", family_name(e.family)},
            {"params", params},
            {"coeffs", to_json(e.coeffs)},
            {"split", split_name(e.split)},
            {"seed", e.seed},
            {"sample_seeds", e.sample_seeds},
            {"samples", e.samples},
            {"steps", e.steps}};
}

CorpusEntry entry_from_json(const nlohmann::json& j) {
    CorpusEntry e;
    e.file = j.at("file").get<std::string>();
    e.family = family_from_name(j.at("family").get<std::string>());
    for (const auto& [k, v] : j.at("params").items()) e.params[k] = v.get<double>();
    e.coeffs = coeffs_from_json(j.at("coeffs"));
    e.split = split_from_name(j.at("split").get<std::string>());
    e.seed = j.at("seed").get<std::uint64_t>();
    e.sample_seeds = j.at("sample_seeds").get<std::vector<std::uint64_t>>();
    e.samples = j.at("samples").get<std::size_t>();
    e.steps = j.at("steps").get<std::size_t>();
    return e;
}

void refresh_manifest(Corpus& corpus) {
    auto entries = nlohmann::json::array();
    for (const auto& e : corpus.entries) entries.push_back(entry_json(e));
    corpus.manifest["entries"] = entries;
}

}  // namespace

Corpus build_training_corpus(const CorpusConfig& config, std::uint64_t seed) {
    if (config.validation_every < 2) throw invalid_argument("validation_every must be at least 2");
    struct Job {
        Family family;
        std::size_t tuple_index;
        ParamMap params;
    };
    std::vector<Job> jobs;
    for (Family f : config.families) {
        const auto& fam = config.registry.get(f);
        if (fam.held_out)
            throw Error(ErrorKind::Contamination,
                        "hold-out violation: family '" + fam.name + "' may not appear in a training corpus");
        const auto grid = parameter_grid(fam, config.points_per_axis);
        for (std::size_t i = 0; i < grid.size(); ++i) jobs.push_back({f, i, grid[i]});
    }

    GenerationOptions options;
    options.samples = config.samples;
    options.steps = config.steps;
    options.max_mode = config.max_mode;
    options.stepper = config.stepper;

    std::vector<TrajectorySet> full(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        const auto& job = jobs[i];
        const auto tuple_seed =
            mix_seed(seed, static_cast<std::uint64_t>(job.family), job.tuple_index, static_cast<std::uint64_t>(Split::Train));
        full[i] = generate_set(config.registry.get(job.family), job.params, config.grid, options, tuple_seed, Split::Train);
    });

    Corpus corpus;
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t s = 0; s < config.samples; ++s)
        (s % config.validation_every == config.validation_every - 1 ? val_idx : train_idx).push_back(s);

    std::vector<CorpusEntry> val_entries;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        for (Split split : {Split::Train, Split::Val}) {
            const auto& idx = split == Split::Train ? train_idx : val_idx;
            if (idx.empty()) continue;
            auto set = full[i].select(idx, split);
            CorpusEntry e{"", jobs[i].family, jobs[i].params, set.coeffs, split, set.seed, set.sample_seeds,
                          set.samples, set.steps()};
            if (split == Split::Train) {
                corpus.train.push_back(std::move(set));
                corpus.entries.push_back(std::move(e));
            } else {
                corpus.val.push_back(std::move(set));
                val_entries.push_back(std::move(e));
            }
        }
    }
    for (auto& e : val_entries) corpus.entries.push_back(std::move(e));

    corpus.manifest = {
        {"format", "eqemu-corpus"},
        {"version", 1},
        {"seed", seed},
        {"grid", {{"n", config.grid.n()}, {"length", config.grid.length()}}},
        {"stepper",
         {{"dt", config.stepper.dt}, {"substeps", config.stepper.substeps}, {"dealias", config.stepper.dealias}}},
        {"initial_condition",
         {{"max_mode", config.max_mode},
          {"amplitude_law", "complex_gaussian_unit_variance"},
          {"normalization", "max_abs_1; unit_interval for fisher"}}},
        {"coefficient_convention", "per_cell_difficulty"},
        {"points_per_axis", config.points_per_axis},
        {"validation_every", config.validation_every},
    };
    refresh_manifest(corpus);
    return corpus;
}

void write_corpus(Corpus& corpus, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
    const auto write_group = [&](std::vector<TrajectorySet>& sets, std::size_t entry_offset) {
        for (std::size_t i = 0; i < sets.size(); ++i) {
            auto& e = corpus.entries.at(entry_offset + i);
            std::ostringstream name;
            name << split_name(e.split) << '_' << family_name(e.family) << '_' << i << ".traj";
            e.file = name.str();
            save_set(sets[i], dir / e.file);
        }
    };
    write_group(corpus.train, 0);
    write_group(corpus.val, corpus.train.size());
    refresh_manifest(corpus);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw io_error("cannot write " + (dir / "manifest.json").string());
    out << corpus.manifest.dump(2) << '\n';
}

Corpus read_corpus(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw io_error("corpus manifest not found: " + manifest_path.string());
    Corpus corpus;
    try {
        corpus.manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(manifest_path.string() + ": " + e.what());
    }
    const auto n = corpus.manifest.at("grid").at("n").get<std::size_t>();
    for (const auto& j : corpus.manifest.at("entries")) {
        auto e = entry_from_json(j);
        auto set = load_set(dir / e.file, n);
        if (set.family != e.family || set.coeffs != e.coeffs || set.split != e.split)
            throw format_error(e.file + ": contents disagree with manifest");
        (e.split == Split::Val ? corpus.val : corpus.train).push_back(std::move(set));
        corpus.entries.push_back(std::move(e));
    }
    return corpus;
}

void assert_not_in_training(const nlohmann::json& manifest, Family family) {
    if (!manifest.contains("entries")) throw format_error("manifest has no entries list");
    for (const auto& e : manifest.at("entries")) {
        const auto split = e.at("split").get<std::string>();
        if ((split == "train" || split == "val") && e.at("family").get<std::string>() == family_name(family))
            throw Error(ErrorKind::Contamination, "training manifest contains " + std::string(family_name(family)) +
                                                      " data (" + e.value("file", std::string("?")) + ")");
    }
}

}  // namespace eqemu
