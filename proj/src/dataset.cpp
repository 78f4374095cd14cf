#include "echoset/dataset.hpp"

#include "echoset/error.hpp"
#include "echoset/rng.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <unistd.h>

namespace echoset::dataset {

using nlohmann::json;
using phantom::ClassKind;
using phantom::Tissue;

static_assert(std::numeric_limits<float>::is_iec559, "float32 payloads require IEEE-754 floats");

// ---------------------------------------------------------------- tensors

std::size_t dtype_size(DType t) {
    switch (t) {
    case DType::Float32: return 4;
    case DType::Complex64: return 8;
    }
    throw FormatError("unknown dtype");
}

std::uint64_t Tensor::element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::size_t header_size(std::size_t ndim) { return 7 + 8 * ndim; }

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return v;
}

[[noreturn]] void format_fail(const std::string& origin, std::size_t offset, const std::string& what) {
    throw FormatError(origin + ": " + what + " (at byte offset " + std::to_string(offset) + ")");
}

std::atomic<std::uint64_t> g_tmp_counter{0};

fs::path temp_sibling(const fs::path& path) {
    return fs::path(path.string() + ".tmp-" + std::to_string(::getpid()) + "-" +
                    std::to_string(g_tmp_counter.fetch_add(1)));
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

std::vector<std::uint8_t> encode(const Tensor& t) {
    if (t.dims.size() > kMaxDims) throw ParameterError("tensor has too many dimensions");
    const std::uint64_t count = t.element_count();
    const std::uint64_t floats = t.dtype == DType::Complex64 ? 2 * count : count;
    if (t.values.size() != floats)
        throw ParameterError("tensor payload does not match its dimensions");
    std::vector<std::uint8_t> out;
    out.reserve(header_size(t.dims.size()) + 4 * t.values.size());
    for (char c : {'U', 'S', 'T', 'N'}) out.push_back(static_cast<std::uint8_t>(c));
    out.push_back(kUstnVersion);
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_u64(out, d);
    for (float v : t.values) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
    return out;
}

Tensor decode(std::span<const std::uint8_t> bytes, const std::string& origin) {
    const std::size_t n = bytes.size();
    if (n < 4) format_fail(origin, n, "truncated header: expected at least 7 bytes, got " + std::to_string(n));
    if (std::memcmp(bytes.data(), "USTN", 4) != 0) format_fail(origin, 0, "bad magic, expected \"USTN\"");
    if (n < 7) format_fail(origin, n, "truncated header: expected at least 7 bytes, got " + std::to_string(n));
    if (bytes[4] != kUstnVersion)
        format_fail(origin, 4, "unsupported version " + std::to_string(bytes[4]));
    Tensor t;
    if (bytes[5] == 1) t.dtype = DType::Float32;
    else if (bytes[5] == 2) t.dtype = DType::Complex64;
    else format_fail(origin, 5, "unknown dtype code " + std::to_string(bytes[5]));
    const std::size_t ndim = bytes[6];
    if (ndim > kMaxDims)
        format_fail(origin, 6, "ndim " + std::to_string(ndim) + " exceeds " + std::to_string(kMaxDims));
    const std::size_t hdr = header_size(ndim);
    if (n < hdr)
        format_fail(origin, n, "truncated header: expected " + std::to_string(hdr) + " bytes, got " +
                                   std::to_string(n));

    const std::uint64_t esize = dtype_size(t.dtype);
    std::uint64_t payload = esize;
    for (std::size_t k = 0; k < ndim; ++k) {
        const std::uint64_t d = get_u64(bytes.data() + 7 + 8 * k);
        t.dims.push_back(d);
        if (d != 0 && payload > std::numeric_limits<std::uint64_t>::max() / d)
            format_fail(origin, 7 + 8 * k, "dimension overflow: payload size exceeds 2^64 bytes");
        payload *= d;
    }
    if (payload > std::numeric_limits<std::size_t>::max() - hdr)
        format_fail(origin, 7, "dimension overflow: payload does not fit in memory");
    const std::uint64_t expected = hdr + payload;
    if (n < expected)
        format_fail(origin, n, "truncated payload: expected " + std::to_string(expected) +
                                   " bytes, got " + std::to_string(n));
    if (n > expected)
        format_fail(origin, expected, "trailing data: expected " + std::to_string(expected) +
                                          " bytes, got " + std::to_string(n));

    t.values.resize(payload / 4);
    const std::uint8_t* p = bytes.data() + hdr;
    for (std::size_t i = 0; i < t.values.size(); ++i, p += 4) {
        const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                   (static_cast<std::uint32_t>(p[2]) << 16) |
                                   (static_cast<std::uint32_t>(p[3]) << 24);
        t.values[i] = std::bit_cast<float>(bits);
    }
    return t;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_tensor(const fs::path& path, const Tensor& t) {
    const auto bytes = encode(t);
    write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

Tensor read_tensor(const fs::path& path) {
    const std::string raw = slurp(path);
    return decode({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()}, path.string());
}

// ---------------------------------------------------------------- settings

void ProcessSettings::validate() const {
    if (!(target_fs > 2.0 * band_edge)) throw ParameterError("target_fs must exceed twice band_edge");
    if (!(bandwidth_min > 0.0 && bandwidth_min <= bandwidth_max && bandwidth_max < 2.0))
        throw ParameterError("bandwidth range must satisfy 0 < min <= max < 2");
    if (!(bandpass_center > 0.0)) throw ParameterError("band-pass center must be positive");
    tna.validate();
    if (!(c0 >= 1400.0 && c0 <= 1700.0)) throw ParameterError("c0 must lie in [1400, 1700] m/s");
}

json ProcessSettings::to_json() const {
    return {{"target_fs", target_fs},
            {"band_edge", band_edge},
            {"bandpass_center", bandpass_center},
            {"bandwidth_min", bandwidth_min},
            {"bandwidth_max", bandwidth_max},
            {"tna", {{"probability", tna.probability}, {"min_db", tna.min_db}, {"max_db", tna.max_db}}},
            {"c0", c0}};
}

ProcessSettings ProcessSettings::from_json(const json& j) {
    ProcessSettings s;
    s.target_fs = j.at("target_fs").get<double>();
    s.band_edge = j.at("band_edge").get<double>();
    s.bandpass_center = j.at("bandpass_center").get<double>();
    s.bandwidth_min = j.at("bandwidth_min").get<double>();
    s.bandwidth_max = j.at("bandwidth_max").get<double>();
    s.tna.probability = j.at("tna").at("probability").get<double>();
    s.tna.min_db = j.at("tna").at("min_db").get<double>();
    s.tna.max_db = j.at("tna").at("max_db").get<double>();
    s.c0 = j.at("c0").get<double>();
    return s;
}

std::vector<std::string> processing_order() {
    return {"align_t0", "resample", "bandpass", "tna", "analytic_signal", "das_beamform"};
}

void PipelineSettings::validate() const {
    grid.validate();
    transducer.validate();
    solver.validate();
    if (!(tx_freq_min > 0.0 && tx_freq_min <= tx_freq_max))
        throw ParameterError("transmit frequency range is invalid");
    if (!(c_ref > 0.0)) throw ParameterError("c_ref must be positive");
    for (double a : angles)
        if (!(std::abs(a) < 45.0)) throw ParameterError("steering angles must lie in (-45, 45) degrees");
    process.validate();
}

json to_json(const phantom::GridSpec& g) {
    return {{"nx", g.nx}, {"nz", g.nz}, {"dx", g.dx}, {"dz", g.dz}, {"origin", g.origin}};
}

phantom::GridSpec grid_from_json(const json& j) {
    phantom::GridSpec g;
    g.nx = j.at("nx").get<std::size_t>();
    g.nz = j.at("nz").get<std::size_t>();
    g.dx = j.at("dx").get<double>();
    g.dz = j.at("dz").get<double>();
    g.origin = j.at("origin").get<double>();
    return g;
}

json to_json(const wavesim::TransducerSpec& t) {
    return {{"n_elements", t.n_elements},   {"pitch", t.pitch},
            {"kerf", t.kerf},               {"tx_first", t.tx_first},
            {"tx_last", t.tx_last},         {"center_freq", t.center_freq},
            {"tone_burst_cycles", t.tone_burst_cycles}, {"acquisition_fs", t.acquisition_fs}};
}

wavesim::TransducerSpec transducer_from_json(const json& j) {
    wavesim::TransducerSpec t;
    t.n_elements = j.at("n_elements").get<int>();
    t.pitch = j.at("pitch").get<double>();
    t.kerf = j.at("kerf").get<double>();
    t.tx_first = j.at("tx_first").get<int>();
    t.tx_last = j.at("tx_last").get<int>();
    t.center_freq = j.at("center_freq").get<double>();
    t.tone_burst_cycles = j.at("tone_burst_cycles").get<int>();
    t.acquisition_fs = j.at("acquisition_fs").get<double>();
    return t;
}

json to_json(const wavesim::SolverConfig& v) {
    return {{"dt", v.dt},
            {"n_samples", v.n_samples},
            {"refinement", v.refinement},
            {"pml_thickness", v.pml_thickness},
            {"pml_alpha", v.pml_alpha},
            {"cfl", v.cfl},
            {"absorption", v.absorption}};
}

wavesim::SolverConfig solver_from_json(const json& j) {
    wavesim::SolverConfig v;
    v.dt = j.at("dt").get<double>();
    v.n_samples = j.at("n_samples").get<std::size_t>();
    v.refinement = j.at("refinement").get<std::size_t>();
    v.pml_thickness = j.at("pml_thickness").get<std::size_t>();
    v.pml_alpha = j.at("pml_alpha").get<double>();
    v.cfl = j.at("cfl").get<double>();
    v.absorption = j.at("absorption").get<bool>();
    return v;
}

json PipelineSettings::to_json() const {
    json j;
    j["grid"] = dataset::to_json(grid);
    j["transducer"] = dataset::to_json(transducer);
    j["solver"] = dataset::to_json(solver);
    j["angles"] = angles;
    j["c_ref"] = c_ref;
    j["tx_freq_min"] = tx_freq_min;
    j["tx_freq_max"] = tx_freq_max;
    j["process"] = process.to_json();
    return j;
}

PipelineSettings PipelineSettings::from_json(const json& j) {
    PipelineSettings s;
    s.grid = grid_from_json(j.at("grid"));
    s.transducer = transducer_from_json(j.at("transducer"));
    s.solver = solver_from_json(j.at("solver"));
    s.angles = j.at("angles").get<std::array<double, 3>>();
    s.c_ref = j.at("c_ref").get<double>();
    s.tx_freq_min = j.at("tx_freq_min").get<double>();
    s.tx_freq_max = j.at("tx_freq_max").get<double>();
    s.process = ProcessSettings::from_json(j.at("process"));
    return s;
}

ProcessedShot process_channels(const wavesim::ChannelData& ch, const wavesim::TransducerSpec& tx,
                               const ProcessSettings& settings, double bandwidth,
                               std::uint64_t tna_seed, const sigproc::BeamformGrid& grid) {
    ProcessedShot shot;
    shot.t0 = ch.t0;
    shot.solver_dt = ch.solver_dt;
    shot.config_hash = ch.config_hash;
    auto a = sigproc::align_t0(ch, ch.t0);
    a = sigproc::resample(a, settings.target_fs, settings.band_edge);
    a = sigproc::bandpass(a, {settings.bandpass_center, bandwidth});
    a = sigproc::apply_tna(a, settings.tna, sigproc::pulse_rms(ch.tx_freq, ch.tone_burst_cycles),
                           tna_seed, &shot.tna);
    shot.image = sigproc::das_beamform(sigproc::analytic_signal(a), tx, grid);
    return shot;
}

// ---------------------------------------------------------------- samples

void write_sample(const fs::path& dir, const DatasetSample& s) {
    if (!s.target.empty() && (s.target.rows() != s.input.nz || s.target.cols() != s.input.nx))
        throw ParameterError("target and input shapes differ");
    const fs::path tmp = temp_sibling(dir);
    fs::create_directories(tmp);

    Tensor in;
    in.dims = {6, s.input.nz, s.input.nx};
    in.values = s.input.planes;
    write_tensor(tmp / "input.ustn", in);

    Tensor tg;
    tg.dims = {s.target.rows(), s.target.cols()};
    tg.values = s.target.values();
    write_tensor(tmp / "target.ustn", tg);

    write_file_atomic(tmp / "meta.json", s.meta.dump(2) + "\n");

    if (fs::exists(dir)) fs::remove_all(dir);
    fs::rename(tmp, dir);
}

DatasetSample read_sample(const fs::path& dir) {
    DatasetSample s;
    const Tensor in = read_tensor(dir / "input.ustn");
    if (in.dtype != DType::Float32 || in.dims.size() != 3 || in.dims[0] != 6)
        throw FormatError((dir / "input.ustn").string() + ": expected float32 tensor of shape [6, nz, nx]");
    const Tensor tg = read_tensor(dir / "target.ustn");
    if (tg.dtype != DType::Float32 || tg.dims.size() != 2 || tg.dims[0] != in.dims[1] ||
        tg.dims[1] != in.dims[2])
        throw FormatError((dir / "target.ustn").string() + ": expected float32 tensor of shape [nz, nx]");

    s.input.nz = in.dims[1];
    s.input.nx = in.dims[2];
    s.input.planes = in.values;
    s.target = Array2D<float>(tg.dims[0], tg.dims[1]);
    s.target.values() = tg.values;
    try {
        s.meta = json::parse(slurp(dir / "meta.json"));
    } catch (const json::exception& e) {
        throw FormatError((dir / "meta.json").string() + ": " + e.what());
    }
    if (s.meta.contains("angles")) s.input.angles = s.meta.at("angles").get<std::array<double, 3>>();
    return s;
}

std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t index, std::uint32_t attempt) {
    std::uint64_t s = derive_seed(derive_seed(master_seed, "sample"), static_cast<std::uint64_t>(index));
    for (std::uint32_t a = 0; a < attempt; ++a) s = derive_seed(s, "attempt");
    return s;
}

json phantom_to_json(const phantom::Phantom& ph) {
    json j;
    j["seed"] = ph.seed;
    json means = json::object();
    for (const auto& [t, v] : ph.mean_speeds) means[std::string(phantom::to_string(t))] = v;
    j["mean_speeds"] = means;
    const auto& sp = ph.sampled;
    j["density_ratio"] = sp.density_ratio;
    j["grf_threshold_quantile"] = sp.grf_threshold_quantile;
    j["skin_thickness"] = sp.skin_thickness ? json(*sp.skin_thickness) : json(nullptr);
    if (sp.inclusion)
        j["inclusion"] = {{"xc", sp.inclusion->xc}, {"yc", sp.inclusion->yc}, {"r1", sp.inclusion->r1},
                          {"r2", sp.inclusion->r2}, {"theta", sp.inclusion->theta}};
    else
        j["inclusion"] = nullptr;
    j["lesion_contrast_db"] = sp.lesion_contrast_db ? json(*sp.lesion_contrast_db) : json(nullptr);
    json contrast = json::object();
    for (const auto& [t, v] : sp.contrast_db) contrast[std::string(phantom::to_string(t))] = v;
    j["contrast_db"] = contrast;
    j["scatterer_density"] = ph.scatterers.rho_s;
    return j;
}

namespace {

struct SampleDraws {
    std::uint64_t seed = 0;
    std::uint64_t phantom_seed = 0;
    double tx_freq = 0.0;
    double bandwidth = 0.0;
};

SampleDraws draw_sample(const SampleRecipe& r, const PipelineSettings& s) {
    SampleDraws d;
    d.seed = sample_seed(r.master_seed, r.index, r.attempt);
    d.phantom_seed = derive_seed(d.seed, "phantom");
    Rng rng(derive_seed(d.seed, "pipeline"));
    d.tx_freq = rng.uniform(s.tx_freq_min, s.tx_freq_max);
    d.bandwidth = rng.uniform(s.process.bandwidth_min, s.process.bandwidth_max);
    return d;
}

} // namespace

phantom::Phantom regenerate_phantom(const json& meta) {
    const auto settings = PipelineSettings::from_json(meta.at("settings"));
    const auto kind = phantom::parse_class_kind(meta.at("class").get<std::string>());
    if (!kind) throw FormatError("meta.json: unknown class " + meta.at("class").dump());
    return phantom::compose_phantom(*kind, settings.grid, meta.at("phantom").at("seed").get<std::uint64_t>());
}

DatasetSample build_sample(const SampleRecipe& recipe, const PipelineSettings& settings) {
    settings.validate();
    const SampleDraws d = draw_sample(recipe, settings);
    const auto ph = phantom::compose_phantom(recipe.class_kind, settings.grid, d.phantom_seed);
    const auto bgrid = sigproc::BeamformGrid::from_phantom(settings.grid, settings.process.c0);

    std::vector<sigproc::IQImage> images;
    json shots = json::array();
    for (std::size_t k = 0; k < settings.angles.size(); ++k) {
        const auto pw = wavesim::make_plane_wave(settings.transducer, settings.angles[k], d.tx_freq,
                                                 settings.c_ref);
        auto ch = wavesim::simulate_planewave(ph, settings.transducer, pw, settings.solver);
        const auto shot = process_channels(ch, settings.transducer, settings.process, d.bandwidth,
                                           derive_seed(d.seed, "tna/" + std::to_string(k)), bgrid);
        images.push_back(shot.image);
        shots.push_back({{"angle", settings.angles[k]},
                         {"t0", shot.t0},
                         {"solver_dt", shot.solver_dt},
                         {"config_hash", shot.config_hash},
                         {"tna_applied", shot.tna.applied},
                         {"tna_level_db", shot.tna.level_db},
                         {"tna_noise_seed", shot.tna.noise_seed}});
    }

    DatasetSample s;
    s.input = sigproc::stack_model_input(images);
    s.target = Array2D<float>(ph.target.rows(), ph.target.cols());
    for (std::size_t i = 0; i < ph.target.size(); ++i) s.target[i] = static_cast<float>(ph.target[i]);

    json& m = s.meta;
    m["format"] = "echoset-sample";
    m["pipeline_version"] = kPipelineVersion;
    m["id"] = recipe.id;
    m["index"] = recipe.index;
    m["class"] = phantom::to_string(recipe.class_kind);
    m["master_seed"] = recipe.master_seed;
    m["attempt"] = recipe.attempt;
    m["sample_seed"] = d.seed;
    m["tx_freq"] = d.tx_freq;
    m["bandwidth"] = d.bandwidth;
    m["pulse_rms"] = sigproc::pulse_rms(d.tx_freq, settings.transducer.tone_burst_cycles);
    m["angles"] = s.input.angles;
    m["processing_order"] = processing_order();
    m["beamform_grid"] = {{"nx", bgrid.nx}, {"nz", bgrid.nz}, {"x0", bgrid.x0}, {"z0", bgrid.z0},
                          {"dx", bgrid.dx}, {"dz", bgrid.dz}, {"c0", bgrid.c0}};
    m["phantom"] = phantom_to_json(ph);
    m["shots"] = shots;
    m["input"] = {{"file", "input.ustn"},
                  {"dtype", "float32"},
                  {"shape", {6, s.input.nz, s.input.nx}},
                  {"planes", sigproc::plane_labels(s.input.angles)}};
    m["target"] = {{"file", "target.ustn"}, {"dtype", "float32"}, {"shape", {s.target.rows(), s.target.cols()}},
                   {"units", "m/s"}};
    m["settings"] = settings.to_json();
    return s;
}

DatasetSample regenerate_sample(const json& meta) {
    SampleRecipe r;
    r.index = meta.at("index").get<std::size_t>();
    r.id = meta.at("id").get<std::string>();
    const auto kind = phantom::parse_class_kind(meta.at("class").get<std::string>());
    if (!kind) throw FormatError("meta.json: unknown class " + meta.at("class").dump());
    r.class_kind = *kind;
    r.master_seed = meta.at("master_seed").get<std::uint64_t>();
    r.attempt = meta.at("attempt").get<std::uint32_t>();
    return build_sample(r, PipelineSettings::from_json(meta.at("settings")));
}

// ---------------------------------------------------------------- corpus

ClassMix uniform_mix() {
    ClassMix m;
    for (auto k : phantom::kAllClasses) m[k] = 1.0;
    return m;
}

ClassMix parse_mix(const std::string& text) {
    if (text.empty() || text == "uniform") return uniform_mix();
    ClassMix m;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        const std::string name = item.substr(0, colon);
        double w = 1.0;
        if (colon != std::string::npos) {
            try {
                std::size_t used = 0;
                w = std::stod(item.substr(colon + 1), &used);
                if (used != item.size() - colon - 1) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ParameterError("bad weight in class mix entry '" + item + "'");
            }
        }
        const auto kind = phantom::parse_class_kind(name);
        if (!kind) throw ParameterError("unknown class '" + name + "' in class mix");
        if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("class weights must be finite and >= 0");
        m[*kind] += w;
    }
    double total = 0.0;
    for (const auto& [k, w] : m) total += w;
    if (!(total > 0.0)) throw ParameterError("class mix has no positive weight");
    return m;
}

std::vector<ClassKind> assign_classes(std::size_t n, const ClassMix& mix) {
    double total = 0.0;
    for (const auto& [k, w] : mix) total += w;
    if (!(total > 0.0)) throw ParameterError("class mix has no positive weight");

    std::vector<ClassKind> kinds;
    std::vector<std::size_t> counts;
    std::vector<double> remainders;
    std::size_t assigned = 0;
    for (auto k : phantom::kAllClasses) {
        const auto it = mix.find(k);
        if (it == mix.end() || it->second <= 0.0) continue;
        const double quota = static_cast<double>(n) * it->second / total;
        kinds.push_back(k);
        counts.push_back(static_cast<std::size_t>(std::floor(quota)));
        remainders.push_back(quota - std::floor(quota));
        assigned += counts.back();
    }
    std::vector<std::size_t> order(kinds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % order.size()]];

    std::vector<ClassKind> out;
    while (out.size() < n)
        for (std::size_t i = 0; i < kinds.size(); ++i)
            if (counts[i] > 0) {
                out.push_back(kinds[i]);
                --counts[i];
            }
    return out;
}

SplitManifest make_split(const std::vector<std::string>& ids, const std::vector<ClassKind>& classes,
                         double val_fraction, std::uint64_t master_seed) {
    if (ids.size() != classes.size()) throw ParameterError("ids and classes differ in length");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ParameterError("val_fraction must lie in [0, 1)");
    SplitManifest m;
    m.master_seed = master_seed;
    const std::size_t n = ids.size();
    std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    if (n >= 2 && val_fraction > 0.0) n_val = std::max<std::size_t>(n_val, 1);
    n_val = std::min(n_val, n > 0 ? n - 1 : 0);

    Rng rng(derive_seed(master_seed, "split"));
    std::vector<ClassKind> present;
    std::map<ClassKind, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) {
        ++m.class_counts[classes[i]];
        members[classes[i]].push_back(i);
    }
    for (auto k : phantom::kAllClasses)
        if (members.count(k)) present.push_back(k);
    auto shuffle = [&](auto& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    };
    shuffle(present);
    for (auto k : present) shuffle(members[k]);

    std::vector<bool> is_val(n, false);
    std::map<ClassKind, std::size_t> taken;
    for (std::size_t picked = 0; picked < n_val;) {
        for (auto k : present) {
            if (picked == n_val) break;
            auto& pool = members[k];
            if (taken[k] >= pool.size()) continue;
            is_val[pool[taken[k]++]] = true;
            ++m.val_class_counts[k];
            ++picked;
        }
    }
    for (std::size_t i = 0; i < n; ++i) (is_val[i] ? m.val : m.train).push_back(ids[i]);
    return m;
}

void BuildConfig::validate() const {
    if (n_samples < 6) throw ParameterError("build-dataset needs at least 6 samples");
    if (jobs < 1) throw ParameterError("jobs must be at least 1");
    double total = 0.0;
    for (const auto& [k, w] : mix) {
        if (!(w >= 0.0)) throw ParameterError("class weights must be >= 0");
        total += w;
    }
    if (!(total > 0.0)) throw ParameterError("class mix has no positive weight");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ParameterError("val_fraction must lie in [0, 1)");
    pipeline.validate();
}

json manifest_json(const BuildConfig& cfg, const SplitManifest& split, const std::vector<std::string>& ids,
                   const std::vector<ClassKind>& classes) {
    json j;
    j["format"] = "echoset-corpus";
    j["pipeline_version"] = kPipelineVersion;
    j["master_seed"] = cfg.master_seed;
    j["n_samples"] = ids.size();
    json mix = json::object();
    for (const auto& [k, w] : cfg.mix) mix[std::string(phantom::to_string(k))] = w;
    j["mix"] = mix;
    j["val_fraction"] = cfg.val_fraction;
    j["max_retries"] = cfg.max_retries;
    json counts = json::object(), vcounts = json::object();
    for (const auto& [k, c] : split.class_counts) counts[std::string(phantom::to_string(k))] = c;
    for (const auto& [k, c] : split.val_class_counts) vcounts[std::string(phantom::to_string(k))] = c;
    j["class_counts"] = counts;
    j["val_class_counts"] = vcounts;
    json samples = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const bool val = std::find(split.val.begin(), split.val.end(), ids[i]) != split.val.end();
        samples.push_back({{"id", ids[i]}, {"class", phantom::to_string(classes[i])}, {"split", val ? "val" : "train"}});
    }
    j["samples"] = samples;
    j["train"] = split.train;
    j["val"] = split.val;
    j["settings"] = cfg.pipeline.to_json();
    return j;
}

BuildReport build_dataset(const BuildConfig& cfg, const fs::path& out_dir,
                          const std::function<void(const std::string&)>& progress) {
    cfg.validate();
    fs::create_directories(out_dir);
    const auto classes = assign_classes(cfg.n_samples, cfg.mix);
    std::vector<std::string> ids(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "s%06zu", i);
        ids[i] = buf;
    }

    struct Outcome {
        bool ok = false;
        std::vector<std::string> errors;
    };
    std::vector<Outcome> outcomes(cfg.n_samples);
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.n_samples) return;
            for (std::uint32_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
                try {
                    const SampleRecipe r{i, ids[i], classes[i], cfg.master_seed, attempt};
                    write_sample(out_dir / ids[i], build_sample(r, cfg.pipeline));
                    outcomes[i].ok = true;
                    break;
                } catch (const std::exception& e) {
                    outcomes[i].errors.push_back(ids[i] + " attempt " + std::to_string(attempt) +
                                                 " failed: " + e.what());
                }
            }
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(ids[i] + (outcomes[i].ok ? " done" : " FAILED"));
            }
        }
    };
    const std::size_t n_threads = std::min(cfg.jobs, cfg.n_samples);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    BuildReport report;
    std::string failed;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        for (const auto& e : outcomes[i].errors) report.log.push_back(e);
        if (!outcomes[i].ok) failed += (failed.empty() ? "" : ", ") + ids[i];
    }
    if (!failed.empty())
        throw SimulationError("samples failed after " + std::to_string(cfg.max_retries) +
                              " retries: " + failed + "; last error: " + report.log.back());

    report.manifest = make_split(ids, classes, cfg.val_fraction, cfg.master_seed);
    write_file_atomic(out_dir / "manifest.json", manifest_json(cfg, report.manifest, ids, classes).dump(2) + "\n");
    return report;
}

// ---------------------------------------------------------------- stats

json CorpusStats::to_json() const {
    return {{"samples", samples},
            {"class_counts", class_counts},
            {"target_histogram",
             {{"min", hist_min}, {"max", hist_max}, {"step", hist_step}, {"counts", target_histogram},
              {"underflow", underflow}, {"overflow", overflow}}},
            {"target_pixels", target_pixels},
            {"target_min", target_min},
            {"target_max", target_max},
            {"input_mean", input_mean},
            {"input_rms", input_rms},
            {"input_max_abs", input_max_abs},
            {"targets_in_table_range", targets_in_table_range}};
}

CorpusStats corpus_stats(const fs::path& corpus_dir) {
    std::vector<fs::path> dirs;
    const fs::path manifest = corpus_dir / "manifest.json";
    if (fs::exists(manifest)) {
        json m;
        try {
            std::ifstream in(manifest);
            m = json::parse(in);
        } catch (const json::exception& e) {
            throw FormatError(manifest.string() + ": " + e.what());
        }
        for (const auto& s : m.at("samples")) dirs.push_back(corpus_dir / s.at("id").get<std::string>());
    } else {
        for (const auto& entry : fs::directory_iterator(corpus_dir))
            if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
        std::sort(dirs.begin(), dirs.end());
    }
    if (dirs.empty()) throw ParameterError("corpus at " + corpus_dir.string() + " has no samples");

    CorpusStats st;
    const auto bins = static_cast<std::size_t>(std::llround((st.hist_max - st.hist_min) / st.hist_step));
    st.target_histogram.assign(bins, 0);
    st.target_min = std::numeric_limits<double>::infinity();
    st.target_max = -std::numeric_limits<double>::infinity();
    std::vector<double> sum(6, 0.0), sq(6, 0.0), mx(6, 0.0);
    std::uint64_t plane_pixels = 0;
    for (const auto& d : dirs) {
        const auto s = read_sample(d);
        ++st.samples;
        ++st.class_counts[s.meta.value("class", std::string("unknown"))];
        for (float v : s.target.values()) {
            const double x = v;
            ++st.target_pixels;
            st.target_min = std::min(st.target_min, x);
            st.target_max = std::max(st.target_max, x);
            if (x < 1480.0 - 1e-3 || x > 1670.0 + 1e-3) st.targets_in_table_range = false;
            if (x < st.hist_min) ++st.underflow;
            else if (x >= st.hist_max) ++st.overflow;
            else ++st.target_histogram[std::min(bins - 1, static_cast<std::size_t>((x - st.hist_min) / st.hist_step))];
        }
        const std::size_t plane = s.input.nz * s.input.nx;
        for (std::size_t p = 0; p < 6; ++p)
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = s.input.planes[p * plane + i];
                sum[p] += v;
                sq[p] += v * v;
                mx[p] = std::max(mx[p], std::abs(v));
            }
        plane_pixels += plane;
    }
    for (std::size_t p = 0; p < 6; ++p) {
        st.input_mean.push_back(sum[p] / static_cast<double>(plane_pixels));
        st.input_rms.push_back(std::sqrt(sq[p] / static_cast<double>(plane_pixels)));
        st.input_max_abs.push_back(mx[p]);
    }
    return st;
}

} // namespace echoset::dataset
