#include "eqemu/optim.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "eqemu/binary_io.hpp"
#include "eqemu/error.hpp"

namespace eqemu::ad {

namespace {

constexpr char kMagic[8] = {'E', 'Q', 'E', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string InitSpec::describe() const {
    std::ostringstream os;
    switch (kind) {
    case Kind::Zeros: os << "zeros"; break;
    case Kind::Constant: os << "constant(" << value << ")"; break;
    case Kind::Normal: os << "normal(0, " << value << ")"; break;
    }
    return os.str();
}

Tensor<float> ParameterStore::add(const std::string& name, Shape shape, InitSpec init) {
    if (index_.count(name)) throw invalid_argument("duplicate parameter name: " + name);
    std::vector<float> values(numel(shape), 0.0f);
    if (init.kind == InitSpec::Kind::Constant) {
        std::fill(values.begin(), values.end(), static_cast<float>(init.value));
    } else if (init.kind == InitSpec::Kind::Normal) {
        std::normal_distribution<double> d(0.0, init.value);
        for (auto& v : values) v = static_cast<float>(d(rng_));
    }
    index_[name] = entries_.size();
    entries_.push_back({name, init, Tensor<float>::parameter(std::move(shape), std::move(values))});
    return entries_.back().tensor;
}

Tensor<float>& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw invalid_argument("unknown parameter: " + name);
    return entries_[it->second].tensor;
}

const Tensor<float>& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw invalid_argument("unknown parameter: " + name);
    return entries_[it->second].tensor;
}

std::size_t ParameterStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

double ParameterStore::grad_norm() const {
    double acc = 0.0;
    for (const auto& e : entries_)
        for (float g : e.tensor.grad()) acc += static_cast<double>(g) * g;
    return std::sqrt(acc);
}

double ParameterStore::clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
        const float s = static_cast<float>(max_norm / norm);
        for (auto& e : entries_)
            for (auto& g : e.tensor.node().grad) g *= s;
    }
    return norm;
}

bool ParameterStore::same_values(const ParameterStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
        if (!std::equal(a.tensor.data().begin(), a.tensor.data().end(), b.tensor.data().begin())) return false;
    }
    return true;
}

Adam::Adam(ParameterStore& store, AdamConfig config) : store_(store), config_(config) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        m_.emplace_back(store.tensor(i).numel(), 0.0f);
        v_.emplace_back(store.tensor(i).numel(), 0.0f);
    }
}

void Adam::step(double lr) {
    if (m_.size() != store_.size()) throw invalid_argument("Adam: parameter store changed after construction");
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store_.size(); ++i) {
        auto& p = store_.tensor(i);
        const auto g = p.grad();
        auto values = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            const double mj = b1 * m[j] + (1.0 - b1) * gj;
            const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + config_.eps);
            values[j] = static_cast<float>(values[j] - update);
        }
    }
    ++store_.step;
}

void Adam::restore(std::uint64_t t, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw format_error("optimizer state does not match parameters");
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
            throw format_error("optimizer state size mismatch for " + store_.name(i));
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

double learning_rate(std::uint64_t step, std::uint64_t total_steps, double peak, double warmup_fraction) {
    if (total_steps == 0) return 0.0;
    const auto warmup = static_cast<std::uint64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
    if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (step >= total_steps) return 0.0;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Checkpoint snapshot(const ParameterStore& store, const nlohmann::json& config, const Adam* adam) {
    Checkpoint c;
    c.config = config;
    c.step = store.step;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& t = store.tensor(i);
        c.tensors.push_back({store.name(i), store.init(i), t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
    }
    if (adam) {
        c.adam_t = adam->t();
        c.adam_m = adam->first_moments();
        c.adam_v = adam->second_moments();
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    binio::Writer w;
    w.put_raw(std::string_view(kMagic, sizeof(kMagic)));
    w.put(kVersion);
    w.put_string(ckpt.config.dump());
    w.put(ckpt.step);
    w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& e : ckpt.tensors) {
        if (e.values.size() != numel(e.shape)) throw invalid_argument("checkpoint tensor " + e.name + " has inconsistent size");
        w.put_string(e.name);
        w.put(static_cast<std::uint32_t>(e.init.kind));
        w.put(e.init.value);
        w.put(static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.put(static_cast<std::uint64_t>(d));
        w.put_array(std::span<const float>(e.values));
    }
    w.put(static_cast<std::uint8_t>(ckpt.adam_t ? 1 : 0));
    if (ckpt.adam_t) {
        w.put(*ckpt.adam_t);
        for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
            w.put_array(std::span<const float>(ckpt.adam_m.at(i)));
            w.put_array(std::span<const float>(ckpt.adam_v.at(i)));
        }
    }
    w.seal();
    w.write_file(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto r = binio::Reader::from_file(path);
    const std::string ctx = path.string();
    if (r.remaining() < sizeof(kMagic) || r.get_raw(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic)))
        throw format_error(ctx + ": not a checkpoint file (bad magic)");
    r = binio::Reader::from_file(path);
    r.verify_checksum();
    (void)r.get_raw(sizeof(kMagic));
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion)
        throw format_error(ctx + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    try {
        c.config = nlohmann::json::parse(r.get_string());
    } catch (const nlohmann::json::exception& e) {
        throw format_error(ctx + ": embedded config is not valid JSON (" + e.what() + ")");
    }
    c.step = r.get<std::uint64_t>();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        Checkpoint::Entry e;
        e.name = r.get_string(4096);
        const auto kind = r.get<std::uint32_t>();
        if (kind > 2) throw format_error(ctx + ": unknown init kind for " + e.name);
        e.init.kind = static_cast<InitSpec::Kind>(kind);
        e.init.value = r.get<double>();
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw format_error(ctx + ": implausible rank for " + e.name);
        std::size_t total = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = r.get<std::uint64_t>();
            if (dim > (1u << 28)) throw format_error(ctx + ": implausible dimension for " + e.name);
            e.shape.push_back(static_cast<std::size_t>(dim));
            total *= static_cast<std::size_t>(dim);
        }
        if (total * sizeof(float) > r.remaining()) throw format_error(ctx + ": truncated payload for " + e.name);
        e.values.resize(total);
        r.get_array(std::span<float>(e.values));
        c.tensors.push_back(std::move(e));
    }
    if (r.get<std::uint8_t>() != 0) {
        c.adam_t = r.get<std::uint64_t>();
        for (const auto& e : c.tensors) {
            std::vector<float> m(e.values.size()), v(e.values.size());
            r.get_array(std::span<float>(m));
            r.get_array(std::span<float>(v));
            c.adam_m.push_back(std::move(m));
            c.adam_v.push_back(std::move(v));
        }
    }
    r.expect_end();
    return c;
}

void restore_parameters(ParameterStore& store, const Checkpoint& ckpt) {
    if (ckpt.tensors.size() != store.size())
        throw format_error("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                           std::to_string(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = ckpt.tensors[i];
        auto& t = store.tensor(i);
        if (e.name != store.name(i) || e.shape != t.shape())
            throw format_error("checkpoint tensor " + e.name + " " + shape_string(e.shape) + " does not match " +
                               store.name(i) + " " + shape_string(t.shape()));
        std::copy(e.values.begin(), e.values.end(), t.mutable_data().begin());
    }
    store.step = ckpt.step;
}

}  // namespace eqemu::ad
