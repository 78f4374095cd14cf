// echoset command-line entry point.
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

#include "echoset/dataset.hpp"
#include "echoset/error.hpp"
#include "echoset/estimate.hpp"
#include "echoset/io.hpp"
#include "echoset/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace echoset;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

fs::path default_out(const std::string& command) {
    const char* root = std::getenv("ECHOSET_OUT_ROOT");
    return fs::path(root && *root ? root : "echoset_out") / command;
}

/// "256x384" -> nx = 256, nz = 384.
phantom::GridSpec parse_grid(const std::string& text, double spacing) {
    phantom::GridSpec g;
    unsigned long nx = 0, nz = 0;
    char tail = 0;
    if (std::sscanf(text.c_str(), "%lux%lu%c", &nx, &nz, &tail) != 2 || nx == 0 || nz == 0)
        throw ParameterError("--grid expects NXxNZ, e.g. 256x384, got '" + text + "'");
    g.nx = nx;
    g.nz = nz;
    g.dx = g.dz = spacing;
    g.validate();
    return g;
}

estimate::SweepSpec parse_sweep(const std::string& text) {
    estimate::SweepSpec s;
    char tail = 0;
    if (std::sscanf(text.c_str(), "%lf:%lf:%lf%c", &s.c_min, &s.c_max, &s.c_step, &tail) != 3)
        throw ParameterError("--sweep expects MIN:MAX:STEP, e.g. 1400:1700:5, got '" + text + "'");
    return s;
}

void write_run_config(const fs::path& out_dir, const std::string& command, const json& options) {
    io::write_json(out_dir / "run_config.json",
                   {{"command", command}, {"pipeline_version", dataset::kPipelineVersion}, {"options", options}});
}

void write_binary(const fs::path& path, const std::string& header, const std::vector<std::uint8_t>& pixels) {
    std::string bytes = header;
    bytes.append(pixels.begin(), pixels.end());
    dataset::write_file_atomic(path, bytes);
}

// ------------------------------------------------------------------ options

struct GenPhantomOpts {
    std::string class_name;
    std::uint64_t seed = 0;
    std::string grid = "256x384";
    double spacing = phantom::kDefaultSpacing;
    double speed = 0.0; // > 0 selects a homogeneous speckle phantom
    double scatter_strength = 0.012;
    std::string out;
};

struct SimulateOpts {
    std::string phantom;
    std::vector<double> angles = {-8.0, 0.0, 8.0};
    double tx_freq = 5e6;
    double c_ref = 1540.0;
    std::string out;
};

struct ProcessOpts {
    std::string channels;
    double tna_prob = 0.2;
    double tna_min_db = -120.0;
    double tna_max_db = -80.0;
    double bandwidth = 0.7;
    double c0 = 1540.0;
    std::uint64_t seed = 0;
    std::string out;
};

struct BuildOpts {
    std::size_t n = 12;
    std::string mix = "uniform";
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
    std::string grid = "256x384";
    double val_fraction = 0.1;
    std::uint32_t max_retries = 3;
    std::string out;
};

struct EstimateOpts {
    std::string channels;
    std::string corpus;
    std::string predictions;
    std::string sweep = "1400:1700:5";
    double bandwidth = 0.7;
    std::string report;
};

struct RenderOpts {
    std::string sample;
    double dynamic_range_db = 60.0;
    double c_min = 1400.0;
    double c_max = 1750.0;
    std::string out;
};

// ------------------------------------------------------------------ commands

int run_gen_phantom(const GenPhantomOpts& o) {
    io::PhantomRecipe r;
    r.seed = o.seed;
    r.grid = parse_grid(o.grid, o.spacing);
    r.scatter_strength = o.scatter_strength;
    if (o.speed > 0.0) {
        r.speed = o.speed;
        if (!o.class_name.empty()) throw ParameterError("--class and --speed are mutually exclusive");
    } else {
        r.class_kind = phantom::parse_class_kind(o.class_name);
        if (!r.class_kind) {
            std::string names;
            for (auto k : phantom::kAllClasses) names += std::string(names.empty() ? "" : ", ") + std::string(phantom::to_string(k));
            throw ParameterError("unknown --class '" + o.class_name + "' (expected one of: " + names + ")");
        }
    }
    const fs::path out = o.out.empty() ? default_out("phantom") : fs::path(o.out);
    const auto ph = r.build();
    io::write_phantom_dir(out, r, ph);
    write_run_config(out, "gen-phantom",
                     {{"class", o.class_name}, {"seed", o.seed}, {"grid", o.grid}, {"spacing", o.spacing},
                      {"speed", o.speed}, {"scatter-strength", o.scatter_strength}, {"out", out.string()}});
    std::cout << "phantom written to " << out.string() << " (" << ph.grid.nz << " x " << ph.grid.nx << ")\n";
    return 0;
}

int run_simulate(const SimulateOpts& o) {
    io::PhantomRecipe recipe;
    const auto ph = io::read_phantom_dir(o.phantom, &recipe);
    io::ChannelSet set;
    set.phantom = recipe.to_json();
    const fs::path out = o.out.empty() ? default_out("channels") : fs::path(o.out);
    for (double angle : o.angles) {
        const auto pw = wavesim::make_plane_wave(set.tx, angle, o.tx_freq, o.c_ref);
        set.shots.push_back(wavesim::simulate_planewave(ph, set.tx, pw, set.solver));
        std::cerr << "simulated angle " << angle << " deg\n";
    }
    io::write_channel_dir(out, set);
    write_run_config(out, "simulate",
                     {{"phantom", o.phantom}, {"angles", o.angles}, {"tx-freq", o.tx_freq}, {"c-ref", o.c_ref},
                      {"out", out.string()}});
    std::cout << "channel data written to " << out.string() << "\n";
    return 0;
}

int run_process(const ProcessOpts& o) {
    const auto set = io::read_channel_dir(o.channels);
    dataset::ProcessSettings ps;
    ps.tna.probability = o.tna_prob;
    ps.tna.min_db = o.tna_min_db;
    ps.tna.max_db = o.tna_max_db;
    ps.c0 = o.c0;
    ps.validate();
    if (!(o.bandwidth > 0.0 && o.bandwidth < 2.0)) throw ParameterError("--bandwidth must lie in (0, 2)");

    std::optional<io::PhantomRecipe> recipe;
    if (!set.phantom.is_null()) recipe = io::PhantomRecipe::from_json(set.phantom);
    const auto grid = recipe ? sigproc::BeamformGrid::from_phantom(recipe->grid, o.c0)
                             : sigproc::BeamformGrid::aperture_default(set.tx, o.c0);
    grid.validate(set.tx);

    const fs::path out = o.out.empty() ? default_out("images") : fs::path(o.out);
    fs::create_directories(out);
    std::vector<sigproc::IQImage> images;
    json shots = json::array();
    for (std::size_t k = 0; k < set.shots.size(); ++k) {
        const auto shot = dataset::process_channels(set.shots[k], set.tx, ps, o.bandwidth,
                                                    derive_seed(o.seed, "tna/" + std::to_string(k)), grid);
        dataset::Tensor t;
        t.dtype = dataset::DType::Complex64;
        t.dims = {grid.nz, grid.nx};
        for (const auto& v : shot.image.pixels) {
            t.values.push_back(v.real());
            t.values.push_back(v.imag());
        }
        const std::string file = "iq_" + std::to_string(k) + ".ustn";
        dataset::write_tensor(out / file, t);
        shots.push_back({{"file", file},
                         {"angle", shot.image.angle_deg},
                         {"tna_applied", shot.tna.applied},
                         {"tna_level_db", shot.tna.level_db},
                         {"tna_noise_seed", shot.tna.noise_seed}});
        images.push_back(shot.image);
    }
    json meta;
    meta["format"] = "echoset-images";
    meta["processing_order"] = dataset::processing_order();
    meta["process"] = ps.to_json();
    meta["bandwidth"] = o.bandwidth;
    meta["beamform_grid"] = {{"nx", grid.nx}, {"nz", grid.nz}, {"x0", grid.x0}, {"z0", grid.z0},
                             {"dx", grid.dx}, {"dz", grid.dz}, {"c0", grid.c0}};
    meta["shots"] = shots;
    meta["phantom"] = set.phantom;
    if (images.size() == 3) {
        const auto input = sigproc::stack_model_input(images);
        dataset::Tensor t;
        t.dims = {6, input.nz, input.nx};
        t.values = input.planes;
        dataset::write_tensor(out / "input.ustn", t);
        meta["angles"] = input.angles;
        meta["input"] = {{"file", "input.ustn"}, {"planes", sigproc::plane_labels(input.angles)}};
    }
    if (recipe) {
        const auto ph = recipe->build();
        dataset::write_tensor(out / "target.ustn", io::tensor_of(io::to_float(ph.target)));
    }
    io::write_json(out / "meta.json", meta);
    write_run_config(out, "process",
                     {{"channels", o.channels}, {"tna-prob", o.tna_prob}, {"tna-min-db", o.tna_min_db},
                      {"tna-max-db", o.tna_max_db}, {"bandwidth", o.bandwidth}, {"c0", o.c0}, {"seed", o.seed},
                      {"out", out.string()}});
    std::cout << "images written to " << out.string() << "\n";
    return 0;
}

int run_build_dataset(const BuildOpts& o) {
    dataset::BuildConfig cfg;
    cfg.n_samples = o.n;
    cfg.mix = dataset::parse_mix(o.mix);
    cfg.master_seed = o.seed;
    cfg.jobs = o.jobs;
    cfg.val_fraction = o.val_fraction;
    cfg.max_retries = o.max_retries;
    cfg.pipeline.grid = parse_grid(o.grid, phantom::kDefaultSpacing);
    cfg.validate();
    const fs::path out = o.out.empty() ? default_out("corpus") : fs::path(o.out);
    const auto report = dataset::build_dataset(cfg, out, [](const std::string& line) { std::cerr << line << "\n"; });
    for (const auto& line : report.log) std::cerr << "retry: " << line << "\n";
    write_run_config(out, "build-dataset",
                     {{"n", o.n}, {"mix", o.mix}, {"seed", o.seed}, {"jobs", o.jobs}, {"grid", o.grid},
                      {"val-fraction", o.val_fraction}, {"max-retries", o.max_retries}, {"out", out.string()}});
    std::cout << "corpus of " << o.n << " samples written to " << out.string() << " (train "
              << report.manifest.train.size() << ", val " << report.manifest.val.size() << ")\n";
    return 0;
}

int estimate_channels(const EstimateOpts& o) {
    const auto set = io::read_channel_dir(o.channels);
    const auto sweep = parse_sweep(o.sweep);
    sweep.validate(set.tx);
    dataset::ProcessSettings ps;
    std::vector<sigproc::IQChannels> shots;
    for (const auto& ch : set.shots) {
        auto a = sigproc::align_t0(ch, ch.t0);
        a = sigproc::resample(a, ps.target_fs, ps.band_edge);
        a = sigproc::bandpass(a, {ps.bandpass_center, o.bandwidth});
        shots.push_back(sigproc::analytic_signal(a));
    }
    const auto r = estimate::speckle_brightness_sweep(shots, set.tx, sweep);
    if (r.determinate)
        std::printf("c_hat %.2f m/s\n", r.c_hat);
    else
        std::printf("c_hat indeterminate: %s\n", r.reason.c_str());
    if (!o.report.empty()) {
        json j = {{"determinate", r.determinate},
                  {"c_hat", r.determinate ? json(r.c_hat) : json(nullptr)},
                  {"reason", r.reason},
                  {"speeds", r.speeds},
                  {"brightness", r.brightness},
                  {"sweep", o.sweep}};
        io::write_json(o.report, j);
    }
    return 0;
}

int estimate_corpus(const EstimateOpts& o) {
    const fs::path corpus(o.corpus);
    const json manifest = io::read_json(corpus / "manifest.json");
    const auto stats = dataset::corpus_stats(corpus);
    std::vector<estimate::ErrorReport> reports;
    std::vector<SoundSpeedMap> estimates, targets;
    json per_sample = json::array();
    for (const auto& entry : manifest.at("samples")) {
        const std::string id = entry.at("id").get<std::string>();
        const fs::path pred = o.predictions.empty() ? corpus / id / "prediction.ustn"
                                                    : fs::path(o.predictions) / (id + ".ustn");
        if (!fs::exists(pred)) continue;
        const auto s = dataset::read_sample(corpus / id);
        const auto ph = dataset::regenerate_phantom(s.meta);
        const auto est = io::to_double(io::array_of(dataset::read_tensor(pred), pred.string()));
        const auto tgt = io::to_double(s.target);
        if (!est.same_shape(tgt)) throw FormatError(pred.string() + ": shape differs from the target");
        auto rep = estimate::regional_mean_error(est, tgt, ph.labels);
        per_sample.push_back({{"id", id}, {"report", rep.to_json()}});
        reports.push_back(std::move(rep));
        estimates.push_back(est);
        targets.push_back(tgt);
    }
    json j;
    j["corpus"] = corpus.string();
    j["corpus_stats"] = stats.to_json();
    j["evaluated"] = reports.size();
    if (!reports.empty()) {
        j["by_class"] = estimate::to_json(estimate::summarize_by_class(reports));
        j["error_vs_depth"] = estimate::error_vs_depth(estimates, targets).to_json();
        j["samples"] = per_sample;
    }
    std::printf("%zu samples, %zu with predictions\n", stats.samples, reports.size());
    for (const auto& c : estimate::summarize_by_class(reports))
        std::printf("%-16s pixel MAE %.2f +- %.2f m/s, region MAE %.2f +- %.2f m/s (%zu samples)\n",
                    std::string(phantom::to_string(c.class_kind)).c_str(), c.pixel_mae, c.pixel_mae_std,
                    c.region_mae, c.region_mae_std, c.samples);
    if (!o.report.empty()) io::write_json(o.report, j);
    return 0;
}

// ------------------------------------------------------------------ render

/// Piecewise-linear map through dark blue, cyan, yellow and dark red.
std::array<std::uint8_t, 3> colormap(double t) {
    static constexpr double stops[5][3] = {
        {0.05, 0.03, 0.35}, {0.10, 0.45, 0.85}, {0.30, 0.85, 0.75}, {0.98, 0.85, 0.20}, {0.60, 0.05, 0.05}};
    t = std::clamp(t, 0.0, 1.0) * 4.0;
    const int i = std::min(3, static_cast<int>(t));
    const double f = t - i;
    std::array<std::uint8_t, 3> rgb{};
    for (int c = 0; c < 3; ++c)
        rgb[c] = static_cast<std::uint8_t>(std::lround(255.0 * ((1.0 - f) * stops[i][c] + f * stops[i + 1][c])));
    return rgb;
}

void write_bmode(const fs::path& path, const std::vector<double>& envelope, std::size_t nz, std::size_t nx,
                 double dynamic_range_db) {
    const double peak = envelope.empty() ? 0.0 : *std::max_element(envelope.begin(), envelope.end());
    std::vector<std::uint8_t> px(nz * nx, 0);
    if (peak > 0.0)
        for (std::size_t i = 0; i < px.size(); ++i) {
            if (envelope[i] <= 0.0) continue;
            const double db = 20.0 * std::log10(envelope[i] / peak);
            px[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(1.0 + db / dynamic_range_db, 0.0, 1.0)));
        }
    write_binary(path, "P5\n" + std::to_string(nx) + " " + std::to_string(nz) + "\n255\n", px);
}

void write_speed(const fs::path& path, const Array2D<float>& c, double c_min, double c_max) {
    std::vector<std::uint8_t> px;
    px.reserve(3 * c.size());
    for (float v : c) {
        const auto rgb = colormap((v - c_min) / (c_max - c_min));
        px.insert(px.end(), rgb.begin(), rgb.end());
    }
    write_binary(path, "P6\n" + std::to_string(c.cols()) + " " + std::to_string(c.rows()) + "\n255\n", px);
}

int run_render(const RenderOpts& o) {
    if (!(o.dynamic_range_db > 0.0)) throw ParameterError("--dynamic-range-db must be positive");
    if (!(o.c_max > o.c_min)) throw ParameterError("--c-max must exceed --c-min");
    const fs::path sample(o.sample);
    const fs::path out = o.out.empty() ? default_out("render") : fs::path(o.out);
    fs::create_directories(out);
    std::vector<std::string> written;

    // Envelopes from either a stacked 6-plane input or per-shot complex images.
    std::vector<std::pair<std::string, std::vector<double>>> envelopes;
    std::size_t nz = 0, nx = 0;
    if (fs::exists(sample / "input.ustn")) {
        const auto t = dataset::read_tensor(sample / "input.ustn");
        if (t.dtype != dataset::DType::Float32 || t.dims.size() != 3 || t.dims[0] % 2 != 0)
            throw FormatError((sample / "input.ustn").string() + ": expected float32 [2k, nz, nx]");
        nz = t.dims[1];
        nx = t.dims[2];
        const std::size_t plane = nz * nx;
        for (std::size_t a = 0; a < t.dims[0] / 2; ++a) {
            std::vector<double> env(plane);
            for (std::size_t i = 0; i < plane; ++i)
                env[i] = std::hypot(t.values[2 * a * plane + i], t.values[(2 * a + 1) * plane + i]);
            envelopes.emplace_back("bmode_" + std::to_string(a) + ".pgm", std::move(env));
        }
    } else {
        for (std::size_t k = 0; fs::exists(sample / ("iq_" + std::to_string(k) + ".ustn")); ++k) {
            const fs::path file = sample / ("iq_" + std::to_string(k) + ".ustn");
            const auto t = dataset::read_tensor(file);
            if (t.dtype != dataset::DType::Complex64 || t.dims.size() != 2)
                throw FormatError(file.string() + ": expected complex64 [nz, nx]");
            nz = t.dims[0];
            nx = t.dims[1];
            std::vector<double> env(nz * nx);
            for (std::size_t i = 0; i < env.size(); ++i) env[i] = std::hypot(t.values[2 * i], t.values[2 * i + 1]);
            envelopes.emplace_back("bmode_" + std::to_string(k) + ".pgm", std::move(env));
        }
    }
    for (const auto& [name, env] : envelopes) {
        write_bmode(out / name, env, nz, nx, o.dynamic_range_db);
        written.push_back(name);
    }
    for (const char* name : {"target", "prediction"}) {
        const fs::path file = sample / (std::string(name) + ".ustn");
        if (!fs::exists(file)) continue;
        const std::string img = std::string("sound_speed_") + name + ".ppm";
        write_speed(out / img, io::array_of(dataset::read_tensor(file), file.string()), o.c_min, o.c_max);
        written.push_back(img);
    }
    if (written.empty())
        throw ParameterError("nothing to render in " + sample.string() +
                             " (expected input.ustn, iq_<k>.ustn, target.ustn or prediction.ustn)");
    write_run_config(out, "render",
                     {{"sample", o.sample}, {"dynamic-range-db", o.dynamic_range_db}, {"c-min", o.c_min},
                      {"c-max", o.c_max}, {"out", out.string()}});
    for (const auto& w : written) std::cout << (out / w).string() << "\n";
    return 0;
}

// ------------------------------------------------------------------ config files

std::string json_to_arg(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::string s;
        for (const auto& e : v) s += (s.empty() ? "" : ",") + json_to_arg(e);
        return s;
    }
    return v.dump();
}

/// Replaces "--config FILE" by the flags it holds, placed before the explicit
/// ones so the command line wins (options keep their last value).
std::vector<std::string> expand_config(std::vector<std::string> args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string path;
        std::size_t span = 0;
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            span = 2;
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            span = 1;
        } else {
            continue;
        }
        const json cfg = io::read_json(path);
        if (!cfg.is_object()) throw ParameterError(path + ": config must be a JSON object of flag names");
        std::vector<std::string> flags;
        for (const auto& [key, value] : cfg.items()) {
            if (value.is_boolean()) {
                if (value.get<bool>()) flags.push_back("--" + key);
                continue;
            }
            flags.push_back("--" + key + "=" + json_to_arg(value));
        }
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + span));
        // Insert right after the subcommand name (the first argument).
        const auto at = args.begin() + (args.empty() ? 0 : 1);
        args.insert(at, flags.begin(), flags.end());
        return args;
    }
    return args;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"echoset: simulated ultrasound sound-speed dataset toolkit"};
    app.name("echoset");
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::string config_unused;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_unused, "JSON file whose keys mirror the flag names");
    };

    GenPhantomOpts gp;
    auto* c_gp = app.add_subcommand("gen-phantom", "Generate a tissue phantom");
    c_gp->add_option("--class", gp.class_name, "Phantom class (gland, skin, cyst, lesion, cyst_skin, lesion_skin)");
    c_gp->add_option("--seed", gp.seed, "Random seed")->capture_default_str();
    c_gp->add_option("--grid", gp.grid, "Grid size NXxNZ (arrays are stored NZ x NX)")->capture_default_str();
    c_gp->add_option("--spacing", gp.spacing, "Pixel spacing in meters")->capture_default_str();
    c_gp->add_option("--speed", gp.speed, "Homogeneous speckle phantom at this speed (m/s) instead of a class");
    c_gp->add_option("--scatter-strength", gp.scatter_strength, "Scatterer strength of homogeneous phantoms")
        ->capture_default_str();
    c_gp->add_option("--out", gp.out, "Output directory");
    add_config(c_gp);

    SimulateOpts sm;
    auto* c_sm = app.add_subcommand("simulate", "Simulate plane-wave channel data for a phantom");
    c_sm->add_option("--phantom", sm.phantom, "Phantom directory")->required()->check(CLI::ExistingDirectory);
    c_sm->add_option("--angles", sm.angles, "Steering angles in degrees")->delimiter(',')->capture_default_str();
    c_sm->add_option("--tx-freq", sm.tx_freq, "Transmit frequency (Hz)")->capture_default_str();
    c_sm->add_option("--c-ref", sm.c_ref, "Speed used for transmit delays (m/s)")->capture_default_str();
    c_sm->add_option("--out", sm.out, "Output directory");
    add_config(c_sm);

    ProcessOpts pr;
    auto* c_pr = app.add_subcommand("process", "Resample, filter, add noise and beamform channel data");
    c_pr->add_option("--channels", pr.channels, "Channel directory")->required()->check(CLI::ExistingDirectory);
    c_pr->add_option("--tna-prob", pr.tna_prob, "Thermal noise probability")->capture_default_str();
    c_pr->add_option("--tna-min-db", pr.tna_min_db, "Lowest noise level (dB re pulse RMS)")->capture_default_str();
    c_pr->add_option("--tna-max-db", pr.tna_max_db, "Highest noise level (dB re pulse RMS)")->capture_default_str();
    c_pr->add_option("--bandwidth", pr.bandwidth, "Fractional band-pass bandwidth")->capture_default_str();
    c_pr->add_option("--c0", pr.c0, "Beamforming speed (m/s)")->capture_default_str();
    c_pr->add_option("--seed", pr.seed, "Noise seed")->capture_default_str();
    c_pr->add_option("--out", pr.out, "Output directory");
    add_config(c_pr);

    BuildOpts bd;
    auto* c_bd = app.add_subcommand("build-dataset", "Build a training corpus");
    c_bd->add_option("--n", bd.n, "Number of samples")->capture_default_str();
    c_bd->add_option("--mix", bd.mix, "Class weights, e.g. gland:1,cyst:2 (default uniform)")->capture_default_str();
    c_bd->add_option("--seed", bd.seed, "Master seed")->capture_default_str();
    c_bd->add_option("--jobs", bd.jobs, "Parallel sample builds")->capture_default_str();
    c_bd->add_option("--grid", bd.grid, "Phantom grid NXxNZ")->capture_default_str();
    c_bd->add_option("--val-fraction", bd.val_fraction, "Validation fraction")->capture_default_str();
    c_bd->add_option("--max-retries", bd.max_retries, "Retries per failed sample")->capture_default_str();
    c_bd->add_option("--out", bd.out, "Output directory");
    add_config(c_bd);

    EstimateOpts es;
    auto* c_es = app.add_subcommand("estimate", "Speckle-brightness sweep or corpus error report");
    auto* o_ch = c_es->add_option("--channels", es.channels, "Channel directory")->check(CLI::ExistingDirectory);
    auto* o_co = c_es->add_option("--corpus", es.corpus, "Corpus directory")->check(CLI::ExistingDirectory);
    o_ch->excludes(o_co);
    c_es->add_option("--predictions", es.predictions, "Directory of <id>.ustn predictions (default <sample>/prediction.ustn)")
        ->check(CLI::ExistingDirectory);
    c_es->add_option("--sweep", es.sweep, "Candidate speeds MIN:MAX:STEP")->capture_default_str();
    c_es->add_option("--bandwidth", es.bandwidth, "Fractional band-pass bandwidth")->capture_default_str();
    c_es->add_option("--report", es.report, "Write a JSON report to this file");
    add_config(c_es);

    RenderOpts rd;
    auto* c_rd = app.add_subcommand("render", "Render B-modes and sound-speed maps as PGM/PPM images");
    c_rd->add_option("--sample", rd.sample, "Sample or image directory")->required()->check(CLI::ExistingDirectory);
    c_rd->add_option("--dynamic-range-db", rd.dynamic_range_db, "B-mode dynamic range")->capture_default_str();
    c_rd->add_option("--c-min", rd.c_min, "Sound speed at the bottom of the color map")->capture_default_str();
    c_rd->add_option("--c-max", rd.c_max, "Sound speed at the top of the color map")->capture_default_str();
    c_rd->add_option("--out", rd.out, "Output directory");
    add_config(c_rd);

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    }

    try {
        if (c_gp->parsed()) return run_gen_phantom(gp);
        if (c_sm->parsed()) return run_simulate(sm);
        if (c_pr->parsed()) return run_process(pr);
        if (c_bd->parsed()) return run_build_dataset(bd);
        if (c_es->parsed()) {
            if (!es.channels.empty()) return estimate_channels(es);
            if (!es.corpus.empty()) return estimate_corpus(es);
            std::cerr << "error: estimate needs --channels or --corpus\n";
            return kUsageError;
        }
        if (c_rd->parsed()) return run_render(rd);
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeFailure;
    }
    return kUsageError;
}
