#pragma once

#include "echoset/phantom.hpp"
#include "echoset/sigproc.hpp"
#include "echoset/wavesim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace echoset::dataset {

namespace fs = std::filesystem;

inline constexpr char kPipelineVersion[] = "1.0.0";

// ---------------------------------------------------------------------------
// USTN tensor files
//
//   offset 0      "USTN"
//   offset 4      version   u8  (kUstnVersion)
//   offset 5      dtype     u8  (1 = float32, 2 = complex64 as interleaved re/im float32)
//   offset 6      ndim      u8  (0..kMaxDims)
//   offset 7      dims      ndim x u64 little-endian
//   offset 7+8n   payload   row-major little-endian, product(dims) x dtype size bytes
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kUstnVersion = 1;
inline constexpr std::size_t kMaxDims = 8;

enum class DType : std::uint8_t { Float32 = 1, Complex64 = 2 };

std::size_t dtype_size(DType t);

struct Tensor {
    DType dtype = DType::Float32;
    std::vector<std::uint64_t> dims;
    /// Float32: one value per element. Complex64: re, im per element.
    std::vector<float> values;

    std::uint64_t element_count() const;
    bool operator==(const Tensor&) const = default;
};

std::size_t header_size(std::size_t ndim);
std::vector<std::uint8_t> encode(const Tensor& t);
/// Throws FormatError naming the failing check, its byte offset and, for
/// length problems, the expected and actual byte counts.
Tensor decode(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

/// Atomic write (temporary file in the same directory, then rename).
void write_tensor(const fs::path& path, const Tensor& t);
Tensor read_tensor(const fs::path& path);

/// Writes bytes to path through a temporary file and a rename.
void write_file_atomic(const fs::path& path, const std::string& bytes);

// ---------------------------------------------------------------------------
// Pipeline parameters
// ---------------------------------------------------------------------------

struct ProcessSettings {
    double target_fs = 40e6;
    double band_edge = 15e6;
    double bandpass_center = 5e6;
    /// Fractional bandwidth range; each sample draws one value uniformly.
    double bandwidth_min = 0.5;
    double bandwidth_max = 0.9;
    sigproc::TnaSpec tna;
    double c0 = 1540.0;

    void validate() const;
    nlohmann::json to_json() const;
    static ProcessSettings from_json(const nlohmann::json& j);
};

nlohmann::json to_json(const phantom::GridSpec& g);
nlohmann::json to_json(const wavesim::TransducerSpec& t);
nlohmann::json to_json(const wavesim::SolverConfig& s);
phantom::GridSpec grid_from_json(const nlohmann::json& j);
wavesim::TransducerSpec transducer_from_json(const nlohmann::json& j);
wavesim::SolverConfig solver_from_json(const nlohmann::json& j);
/// Seed, per-region mean speeds and sampled parameters of a phantom.
nlohmann::json phantom_to_json(const phantom::Phantom& ph);

/// Fixed processing order, recorded in every meta.json.
std::vector<std::string> processing_order();

struct PipelineSettings {
    phantom::GridSpec grid;
    wavesim::TransducerSpec transducer;
    wavesim::SolverConfig solver;
    std::array<double, 3> angles = {-8.0, 0.0, 8.0};
    double c_ref = 1540.0;
    /// Transmit frequency range; each sample draws one value uniformly.
    double tx_freq_min = 4.5e6;
    double tx_freq_max = 5.5e6;
    ProcessSettings process;

    void validate() const;
    nlohmann::json to_json() const;
    static PipelineSettings from_json(const nlohmann::json& j);
};

/// One processed angle: beamformed image plus what produced it.
struct ProcessedShot {
    sigproc::IQImage image;
    sigproc::TnaDraw tna;
    double t0 = 0.0;
    double solver_dt = 0.0;
    std::uint64_t config_hash = 0;
};

/// align_t0 -> resample -> bandpass -> TNA -> analytic signal -> DAS on grid.
ProcessedShot process_channels(const wavesim::ChannelData& ch, const wavesim::TransducerSpec& tx,
                               const ProcessSettings& settings, double bandwidth,
                               std::uint64_t tna_seed, const sigproc::BeamformGrid& grid);

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

struct DatasetSample {
    sigproc::ModelInput input;
    Array2D<float> target; // nz x nx, m/s
    nlohmann::json meta;
};

/// Writes <dir>/{input.ustn, target.ustn, meta.json}; the directory appears
/// atomically (built under a temporary name, then renamed).
void write_sample(const fs::path& dir, const DatasetSample& s);
DatasetSample read_sample(const fs::path& dir);

/// Seeds and draws of one sample; everything else comes from PipelineSettings.
struct SampleRecipe {
    std::size_t index = 0;
    std::string id;
    phantom::ClassKind class_kind = phantom::ClassKind::Gland;
    std::uint64_t master_seed = 0;
    std::uint32_t attempt = 0;
};

/// Seed of a sample attempt: derive_seed(derive_seed(master, "sample"), index),
/// then derive_seed(., "attempt") per retry.
std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t index, std::uint32_t attempt);

/// Runs phantom -> simulate -> process for one sample.
DatasetSample build_sample(const SampleRecipe& recipe, const PipelineSettings& settings);

/// Rebuilds a sample from its meta.json alone.
DatasetSample regenerate_sample(const nlohmann::json& meta);

/// Regenerates the phantom described by a sample's meta.json.
phantom::Phantom regenerate_phantom(const nlohmann::json& meta);

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

using ClassMix = std::map<phantom::ClassKind, double>;

/// Parses "gland:1,cyst:2" (weights need not be normalized); empty = uniform.
ClassMix parse_mix(const std::string& text);
ClassMix uniform_mix();

/// Largest-remainder apportionment of n over the mix, ties broken by class
/// order; the resulting classes are interleaved round robin.
std::vector<phantom::ClassKind> assign_classes(std::size_t n, const ClassMix& mix);

struct SplitManifest {
    std::uint64_t master_seed = 0;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::map<phantom::ClassKind, std::size_t> class_counts;
    std::map<phantom::ClassKind, std::size_t> val_class_counts;
};

/// Picks round(fraction * n) (at least 1 when n >= 2) validation samples,
/// cycling over classes in a seeded order so per-class counts differ by <= 1.
SplitManifest make_split(const std::vector<std::string>& ids,
                         const std::vector<phantom::ClassKind>& classes, double val_fraction,
                         std::uint64_t master_seed);

struct BuildConfig {
    std::size_t n_samples = 12;
    ClassMix mix = uniform_mix();
    std::uint64_t master_seed = 1;
    std::size_t jobs = 1;
    std::uint32_t max_retries = 3;
    double val_fraction = 0.1;
    PipelineSettings pipeline;

    void validate() const;
};

struct BuildReport {
    SplitManifest manifest;
    std::vector<std::string> log; // one line per failed attempt
};

/// Builds the corpus under out_dir: <id>/{input.ustn, target.ustn, meta.json}
/// plus manifest.json. Output bytes do not depend on jobs.
/// `progress` (optional) is called after each finished sample, from worker threads.
BuildReport build_dataset(const BuildConfig& cfg, const fs::path& out_dir,
                          const std::function<void(const std::string&)>& progress = {});

nlohmann::json manifest_json(const BuildConfig& cfg, const SplitManifest& split,
                             const std::vector<std::string>& ids,
                             const std::vector<phantom::ClassKind>& classes);

struct CorpusStats {
    std::size_t samples = 0;
    std::map<std::string, std::size_t> class_counts;
    /// Target histogram over [hist_min, hist_max) with hist_step-wide bins;
    /// values outside land in underflow/overflow.
    double hist_min = 1400.0, hist_max = 1750.0, hist_step = 5.0;
    std::vector<std::uint64_t> target_histogram;
    std::uint64_t underflow = 0, overflow = 0;
    std::uint64_t target_pixels = 0;
    double target_min = 0.0, target_max = 0.0;
    /// Per input plane: mean, RMS and max |value|.
    std::vector<double> input_mean, input_rms, input_max_abs;
    /// True when every target value lies within [1480, 1670] m/s.
    bool targets_in_table_range = true;

    nlohmann::json to_json() const;
};

CorpusStats corpus_stats(const fs::path& corpus_dir);

} // namespace echoset::dataset
