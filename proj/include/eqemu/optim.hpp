#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqemu/autodiff.hpp"

namespace eqemu::ad {

struct InitSpec {
    enum class Kind : std::uint32_t { Zeros = 0, Constant = 1, Normal = 2 };
    Kind kind = Kind::Zeros;
    double value = 0.0;  // constant value or normal standard deviation

    static InitSpec zeros() { return {Kind::Zeros, 0.0}; }
    static InitSpec constant(double v) { return {Kind::Constant, v}; }
    static InitSpec normal(double stddev) { return {Kind::Normal, stddev}; }
    /// Variance-preserving N(0, 1/fan_in).
    static InitSpec fan_in(std::size_t fan) { return normal(1.0 / std::sqrt(static_cast<double>(fan))); }
    std::string describe() const;
    bool operator==(const InitSpec&) const = default;
};

/// Named f32 parameters in insertion order.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

    /// Draws initial values from the store's generator; names must be unique.
    /// Returns a handle sharing the stored node.
    Tensor<float> add(const std::string& name, Shape shape, InitSpec init);

    Tensor<float>& get(const std::string& name);
    const Tensor<float>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return entries_.size(); }
    std::size_t total_elements() const;
    const std::string& name(std::size_t i) const { return entries_[i].name; }
    const InitSpec& init(std::size_t i) const { return entries_[i].init; }
    Tensor<float>& tensor(std::size_t i) { return entries_[i].tensor; }
    const Tensor<float>& tensor(std::size_t i) const { return entries_[i].tensor; }

    void zero_grad();
    /// Sum of squared gradients over every parameter, accumulated in double.
    double grad_norm() const;
    /// Scales gradients so their global norm is at most max_norm; returns the
    /// norm before clipping.
    double clip_grad_norm(double max_norm);

    std::uint64_t step = 0;

    /// Bitwise equality of names, shapes and values.
    bool same_values(const ParameterStore& other) const;

private:
    struct Entry {
        std::string name;
        InitSpec init;
        Tensor<float> tensor;
    };
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
    std::mt19937_64 rng_;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(ParameterStore& store, AdamConfig config = {});

    /// One update at learning rate `lr`; missing gradients count as zero.
    /// Increments store.step.
    void step(double lr);

    std::uint64_t t() const { return t_; }
    const std::vector<std::vector<float>>& first_moments() const { return m_; }
    const std::vector<std::vector<float>>& second_moments() const { return v_; }
    void restore(std::uint64_t t, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v);

private:
    ParameterStore& store_;
    AdamConfig config_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

/// Linear warmup over the first `warmup_fraction` of steps to `peak`, then
/// cosine decay reaching 0 at `total_steps`. `step` is 0-based.
double learning_rate(std::uint64_t step, std::uint64_t total_steps, double peak, double warmup_fraction = 0.05);

/// Checkpoint file: magic "EQEMCKPT", u32 version, config JSON string, u64
/// step, u32 tensor count, per tensor (name, init kind, init value, rank,
/// u64 dims, f32 values), u8 moments flag [u64 adam t, per tensor f32 m and
/// v], u32 CRC32.
struct Checkpoint {
    nlohmann::json config;
    std::uint64_t step = 0;
    struct Entry {
        std::string name;
        InitSpec init;
        Shape shape;
        std::vector<float> values;
    };
    std::vector<Entry> tensors;
    std::optional<std::uint64_t> adam_t;
    std::vector<std::vector<float>> adam_m, adam_v;
};

Checkpoint snapshot(const ParameterStore& store, const nlohmann::json& config, const Adam* adam = nullptr);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies values into a store with identical names and shapes.
void restore_parameters(ParameterStore& store, const Checkpoint& ckpt);

}  // namespace eqemu::ad
