#pragma once

// On-disk artifacts exchanged between CLI stages. Every directory holds
// USTN tensors plus a meta.json; phantoms are regenerated from their meta.

#include "echoset/dataset.hpp"

#include <optional>

namespace echoset::io {

namespace fs = std::filesystem;

nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& j);

/// Homogeneous phantoms carry their speed; composed ones their class.
struct PhantomRecipe {
    std::optional<phantom::ClassKind> class_kind;
    std::optional<double> speed;
    double scatter_strength = 0.012;
    double density_ratio = 1.5;
    std::uint64_t seed = 0;
    phantom::GridSpec grid;

    nlohmann::json to_json() const;
    static PhantomRecipe from_json(const nlohmann::json& j);
    phantom::Phantom build() const;
};

/// <dir>/{c, rho, target, labels, occupancy}.ustn (float32, nz x nx) and meta.json.
void write_phantom_dir(const fs::path& dir, const PhantomRecipe& recipe, const phantom::Phantom& ph);
/// Regenerates the phantom from meta.json and checks it against target.ustn.
phantom::Phantom read_phantom_dir(const fs::path& dir, PhantomRecipe* recipe = nullptr);

struct ChannelSet {
    wavesim::TransducerSpec tx;
    wavesim::SolverConfig solver;
    /// Recipe of the simulated phantom (null when unknown).
    nlohmann::json phantom;
    std::vector<wavesim::ChannelData> shots;
};

/// <dir>/shot_<k>.ustn (float32, n_elements x n_samples) and meta.json.
void write_channel_dir(const fs::path& dir, const ChannelSet& set);
ChannelSet read_channel_dir(const fs::path& dir);

Array2D<float> to_float(const Array2D<double>& a);
Array2D<double> to_double(const Array2D<float>& a);
dataset::Tensor tensor_of(const Array2D<float>& a);
Array2D<float> array_of(const dataset::Tensor& t, const std::string& origin);

} // namespace echoset::io
