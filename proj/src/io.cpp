#include "echoset/io.hpp"

#include "echoset/error.hpp"

#include <fstream>

namespace echoset::io {

using nlohmann::json;

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("missing file: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) { dataset::write_file_atomic(path, j.dump(2) + "\n"); }

Array2D<float> to_float(const Array2D<double>& a) {
    Array2D<float> out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<float>(a[i]);
    return out;
}

Array2D<double> to_double(const Array2D<float>& a) {
    Array2D<double> out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i];
    return out;
}

dataset::Tensor tensor_of(const Array2D<float>& a) {
    dataset::Tensor t;
    t.dims = {a.rows(), a.cols()};
    t.values = a.values();
    return t;
}

Array2D<float> array_of(const dataset::Tensor& t, const std::string& origin) {
    if (t.dtype != dataset::DType::Float32 || t.dims.size() != 2)
        throw FormatError(origin + ": expected a 2D float32 tensor");
    Array2D<float> a(t.dims[0], t.dims[1]);
    a.values() = t.values;
    return a;
}

// ---------------------------------------------------------------- phantoms

json PhantomRecipe::to_json() const {
    json j;
    j["kind"] = speed ? "homogeneous" : "composed";
    j["class"] = class_kind ? json(std::string(phantom::to_string(*class_kind))) : json(nullptr);
    j["speed"] = speed ? json(*speed) : json(nullptr);
    j["scatter_strength"] = scatter_strength;
    j["density_ratio"] = density_ratio;
    j["seed"] = seed;
    j["grid"] = dataset::to_json(grid);
    return j;
}

PhantomRecipe PhantomRecipe::from_json(const json& j) {
    PhantomRecipe r;
    if (!j.at("class").is_null()) {
        r.class_kind = phantom::parse_class_kind(j.at("class").get<std::string>());
        if (!r.class_kind) throw FormatError("unknown phantom class " + j.at("class").dump());
    }
    if (!j.at("speed").is_null()) r.speed = j.at("speed").get<double>();
    if (!r.class_kind && !r.speed) throw FormatError("phantom recipe needs a class or a speed");
    r.scatter_strength = j.at("scatter_strength").get<double>();
    r.density_ratio = j.at("density_ratio").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.grid = dataset::grid_from_json(j.at("grid"));
    return r;
}

phantom::Phantom PhantomRecipe::build() const {
    if (speed) return phantom::homogeneous_phantom(grid, *speed, seed, scatter_strength, density_ratio);
    return phantom::compose_phantom(*class_kind, grid, seed);
}

void write_phantom_dir(const fs::path& dir, const PhantomRecipe& recipe, const phantom::Phantom& ph) {
    fs::create_directories(dir);
    dataset::write_tensor(dir / "c.ustn", tensor_of(to_float(ph.props.c)));
    dataset::write_tensor(dir / "rho.ustn", tensor_of(to_float(ph.props.rho)));
    dataset::write_tensor(dir / "target.ustn", tensor_of(to_float(ph.target)));
    Array2D<float> labels(ph.labels.labels.rows(), ph.labels.labels.cols());
    Array2D<float> occ(labels.rows(), labels.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = ph.labels.labels[i];
        occ[i] = ph.scatterers.occupancy[i];
    }
    dataset::write_tensor(dir / "labels.ustn", tensor_of(labels));
    dataset::write_tensor(dir / "occupancy.ustn", tensor_of(occ));

    json meta;
    meta["format"] = "echoset-phantom";
    meta["recipe"] = recipe.to_json();
    meta["phantom"] = dataset::phantom_to_json(ph);
    meta["shape"] = {ph.grid.nz, ph.grid.nx};
    meta["axes"] = {"z", "x"};
    write_json(dir / "meta.json", meta);
}

phantom::Phantom read_phantom_dir(const fs::path& dir, PhantomRecipe* recipe_out) {
    const json meta = read_json(dir / "meta.json");
    const auto recipe = PhantomRecipe::from_json(meta.at("recipe"));
    auto ph = recipe.build();
    const auto target = array_of(dataset::read_tensor(dir / "target.ustn"), (dir / "target.ustn").string());
    if (to_float(ph.target).values() != target.values())
        throw FormatError((dir / "target.ustn").string() + ": does not match the phantom described by meta.json");
    if (recipe_out) *recipe_out = recipe;
    return ph;
}

// ---------------------------------------------------------------- channels

void write_channel_dir(const fs::path& dir, const ChannelSet& set) {
    fs::create_directories(dir);
    json shots = json::array();
    for (std::size_t k = 0; k < set.shots.size(); ++k) {
        const auto& ch = set.shots[k];
        const std::string file = "shot_" + std::to_string(k) + ".ustn";
        dataset::write_tensor(dir / file, tensor_of(to_float(ch.samples)));
        shots.push_back({{"file", file},
                         {"shape", {ch.n_elements(), ch.n_samples()}},
                         {"fs", ch.fs},
                         {"t0", ch.t0},
                         {"start_time", ch.start_time},
                         {"angle", ch.angle_deg},
                         {"c_ref", ch.c_ref},
                         {"tx_freq", ch.tx_freq},
                         {"tone_burst_cycles", ch.tone_burst_cycles},
                         {"tx_first", ch.tx_first},
                         {"tx_last", ch.tx_last},
                         {"solver_dt", ch.solver_dt},
                         {"phantom_seed", ch.phantom_seed},
                         {"config_hash", ch.config_hash}});
    }
    json meta;
    meta["format"] = "echoset-channels";
    meta["transducer"] = dataset::to_json(set.tx);
    meta["solver"] = dataset::to_json(set.solver);
    meta["phantom"] = set.phantom;
    meta["shots"] = shots;
    write_json(dir / "meta.json", meta);
}

ChannelSet read_channel_dir(const fs::path& dir) {
    const json meta = read_json(dir / "meta.json");
    ChannelSet set;
    try {
        set.tx = dataset::transducer_from_json(meta.at("transducer"));
        set.solver = dataset::solver_from_json(meta.at("solver"));
        set.phantom = meta.value("phantom", json(nullptr));
        for (const auto& s : meta.at("shots")) {
            wavesim::ChannelData ch;
            const fs::path file = dir / s.at("file").get<std::string>();
            ch.samples = to_double(array_of(dataset::read_tensor(file), file.string()));
            ch.fs = s.at("fs").get<double>();
            ch.t0 = s.at("t0").get<double>();
            ch.start_time = s.at("start_time").get<double>();
            ch.angle_deg = s.at("angle").get<double>();
            ch.c_ref = s.at("c_ref").get<double>();
            ch.tx_freq = s.at("tx_freq").get<double>();
            ch.tone_burst_cycles = s.at("tone_burst_cycles").get<int>();
            ch.tx_first = s.at("tx_first").get<int>();
            ch.tx_last = s.at("tx_last").get<int>();
            ch.solver_dt = s.at("solver_dt").get<double>();
            ch.phantom_seed = s.at("phantom_seed").get<std::uint64_t>();
            ch.config_hash = s.at("config_hash").get<std::uint64_t>();
            if (ch.n_elements() != static_cast<std::size_t>(set.tx.n_elements))
                throw FormatError(file.string() + ": row count differs from the transducer element count");
            set.shots.push_back(std::move(ch));
        }
    } catch (const json::exception& e) {
        throw FormatError((dir / "meta.json").string() + ": " + e.what());
    }
    if (set.shots.empty()) throw FormatError((dir / "meta.json").string() + ": no shots");
    return set;
}

} // namespace echoset::io
