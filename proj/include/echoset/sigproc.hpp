#pragma once

#include "echoset/array2d.hpp"
#include "echoset/phantom.hpp"
#include "echoset/wavesim.hpp"

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace echoset::sigproc {

using cdouble = std::complex<double>;
using cfloat = std::complex<float>;

/// Gaussian magnitude response centered at center_freq; the -6 dB full width
/// equals fractional_bandwidth * center_freq.
struct BandpassSpec {
    double center_freq = 5e6;
    double fractional_bandwidth = 0.7;

    void validate() const;
    /// Designed magnitude at frequency f (Hz). Zero at DC.
    double gain(double f) const;
};

/// Thermal noise augmentation. Levels are in dB relative to the pulse RMS.
struct TnaSpec {
    double min_db = -120.0;
    double max_db = -80.0;
    double probability = 0.2;

    void validate() const;
};

/// Draws made by one apply_tna call; enough to replay it.
struct TnaDraw {
    bool applied = false;
    double level_db = 0.0;
    std::uint64_t noise_seed = 0;
};

/// Cartesian pixel grid for beamforming; pixel (iz, ix) sits at
/// (x0 + ix * dx, z0 + iz * dz) in the transducer frame.
struct BeamformGrid {
    std::size_t nx = 256;
    std::size_t nz = 256;
    double x0 = 0.0;
    double z0 = 0.0;
    double dx = 0.0;
    double dz = 0.0;
    double c0 = 1540.0;

    double lateral(std::size_t ix) const { return x0 + static_cast<double>(ix) * dx; }
    double depth(std::size_t iz) const { return z0 + static_cast<double>(iz) * dz; }
    /// Throws ParameterError unless the grid lies within the array's field of
    /// view (laterally inside the element span, below the face) and c0 is in
    /// [1400, 1700].
    void validate(const wavesim::TransducerSpec& tx) const;

    /// 256 x 256 pixels spanning the full aperture and 30 mm of depth.
    static BeamformGrid aperture_default(const wavesim::TransducerSpec& tx, double c0 = 1540.0);
    /// Pixel-for-pixel congruent with a phantom grid.
    static BeamformGrid from_phantom(const phantom::GridSpec& grid, double c0 = 1540.0);
};

/// Analytic (complex) channel data with the same time base as ChannelData.
struct IQChannels {
    Array2D<cdouble> samples;
    double fs = 0.0;
    double t0 = 0.0;
    double start_time = 0.0;
    double angle_deg = 0.0;
    double c_ref = 1540.0;
    double tx_freq = 5e6;
    int tone_burst_cycles = 1;
    int tx_first = 32;
    int tx_last = 95;

    std::size_t n_elements() const { return samples.rows(); }
    std::size_t n_samples() const { return samples.cols(); }
};

struct IQImage {
    Array2D<cfloat> pixels; // nz x nx
    double angle_deg = 0.0;
    BeamformGrid grid;
};

/// Band-limited resampling with a Kaiser-windowed sinc. The passband extends
/// to band_edge; target_fs must exceed 2 * band_edge. Output sample k sits at
/// start_time + k / target_fs. Identity when target_fs equals ch.fs.
wavesim::ChannelData resample(const wavesim::ChannelData& ch, double target_fs,
                              double band_edge = 15e6);

/// Zero-phase FFT filtering with spec's response; traces are zero padded so
/// the filter does not wrap around.
wavesim::ChannelData bandpass(const wavesim::ChannelData& ch, const BandpassSpec& spec);

/// With probability spec.probability, adds white Gaussian noise of RMS
/// pulse_rms * 10^(A / 20), A ~ U[min_db, max_db]. The decision and A come
/// from the stream seeded by `seed`.
wavesim::ChannelData apply_tna(const wavesim::ChannelData& ch, const TnaSpec& spec, double pulse_rms,
                               std::uint64_t seed, TnaDraw* draw = nullptr);

/// Unconditional noise at a fixed level (dB re pulse_rms).
wavesim::ChannelData add_noise(const wavesim::ChannelData& ch, double level_db, double pulse_rms,
                               std::uint64_t noise_seed);

/// Discards samples before acquisition time t0; sample 0 of the result is the
/// first sample at or after t0 and start_time records its time.
wavesim::ChannelData align_t0(const wavesim::ChannelData& ch, double t0);

/// Per-trace analytic signal via the FFT (zero padded to at least twice the
/// trace length).
IQChannels analytic_signal(const wavesim::ChannelData& ch);

/// RMS of the transmitted burst over its duration (continuous integral).
double pulse_rms(double tx_freq, int cycles);

/// Plane-wave delay-and-sum with dynamic receive focusing.
/// Transmit arrival at (x, z): (x - x_ref) sin(theta) / c_ref + z cos(theta0) / c0
/// with sin(theta0) = c0 sin(theta) / c_ref and x_ref the first-firing element;
/// receive delay |p - e| / c0; plus half the burst duration so envelope peaks
/// land on scatterers. Linear interpolation of the analytic samples,
/// rectangular apodization, samples outside the record contribute zero.
/// f_number > 0 limits the receive aperture at depth z to |x - x_e| <= z / (2 f_number).
IQImage das_beamform(const IQChannels& iq, const wavesim::TransducerSpec& tx,
                     const BeamformGrid& grid, double f_number = 0.0);

/// Transmit arrival time at (x, z) relative to the first firing.
double plane_wave_arrival(const wavesim::TransducerSpec& tx, double angle_deg, double c_ref,
                          double c0, double x, double z);

/// Model input planes, ordered by ascending steering angle:
/// [re(a0), im(a0), re(a1), im(a1), re(a2), im(a2)], each nz x nx.
struct ModelInput {
    std::size_t nz = 0;
    std::size_t nx = 0;
    std::array<double, 3> angles{};
    std::vector<float> planes; // 6 * nz * nx, plane-major
};

ModelInput stack_model_input(const std::vector<IQImage>& images);
std::vector<IQImage> unstack_model_input(const ModelInput& input, const BeamformGrid& grid);

/// Plane labels in storage order, e.g. "re(-8)", "im(-8)", ...
std::vector<std::string> plane_labels(const std::array<double, 3>& angles);

} // namespace echoset::sigproc
