#pragma once

#include "echoset/array2d.hpp"
#include "echoset/phantom.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace echoset::wavesim {

/// Linear array probe. Element e is centered at (e - (n-1)/2) * pitch.
struct TransducerSpec {
    int n_elements = 128;
    double pitch = 293e-6;
    double kerf = 0.0;
    /// Active transmit elements [tx_first, tx_last] (default: center 64).
    int tx_first = 32;
    int tx_last = 95;
    double center_freq = 5e6;
    int tone_burst_cycles = 1;
    /// Rate at which the solver records channel data.
    double acquisition_fs = 87.6e6;

    double element_width() const { return pitch - kerf; }
    double element_x(int e) const {
        return (static_cast<double>(e) - 0.5 * static_cast<double>(n_elements - 1)) * pitch;
    }
    int tx_count() const { return tx_last - tx_first + 1; }
    void validate() const;
};

/// Per-element firing delays (seconds) of the active aperture, indexed from
/// tx_first. Positive angles fire the leftmost element first; min delay is 0.
std::vector<double> transmit_delays(const TransducerSpec& tx, double angle_deg, double c_ref);

struct PlaneWaveTx {
    double angle_deg = 0.0;
    double c_ref = 1540.0;
    std::vector<double> delays;
    /// End of the pulse of the last firing element, on the acquisition clock
    /// (0 = first element starts firing).
    double t0 = 0.0;
    double tx_freq = 5e6;
};

PlaneWaveTx make_plane_wave(const TransducerSpec& tx, double angle_deg, double tx_freq,
                            double c_ref = 1540.0);

/// Peak-normalized single-frequency burst under a raised-cosine window,
/// sampled at k / fs for k = 0 .. floor(cycles / f * fs).
std::vector<double> tone_burst(double tx_freq, int cycles, double fs);

/// Continuous version of tone_burst, used for source injection.
double tone_burst_value(double t, double tx_freq, int cycles);

struct SolverConfig {
    /// Upper bound on the time step; 0 derives it from cfl. The step actually
    /// used divides the acquisition period exactly.
    double dt = 0.0;
    /// Number of recorded samples; 0 derives it from the grid extent.
    std::size_t n_samples = 0;
    /// Solver nodes per phantom pixel along each axis. The refined nodes
    /// sample the phantom maps bilinearly between pixel centers.
    std::size_t refinement = 2;
    /// PML thickness in solver nodes.
    std::size_t pml_thickness = 20;
    double pml_alpha = 2.0; // Np per grid point at the outer edge
    double cfl = 0.25;
    /// Apply frequency-independent absorption matched to the power law at the
    /// transducer center frequency.
    bool absorption = true;

    void validate() const;
};

/// Stability limit of the 6th-order staggered stencil with leapfrog stepping.
double max_stable_cfl();

/// Staggered first-derivative coefficients (half-width 3) whose discrete
/// dispersion, combined with leapfrog stepping at the given Courant number,
/// best matches the exact relation for wavenumbers k h in (0, kh_max].
std::array<double, 3> dispersion_matched_coefficients(double courant, double kh_max);

struct ChannelData {
    /// n_elements x n_samples; row e is element e.
    Array2D<double> samples;
    double fs = 0.0;
    /// Acquisition-clock time of t0 (end of the last firing pulse).
    double t0 = 0.0;
    /// Acquisition-clock time of sample 0 (t0 after alignment).
    double start_time = 0.0;
    double angle_deg = 0.0;
    double c_ref = 1540.0;
    double tx_freq = 5e6;
    int tone_burst_cycles = 1;
    int tx_first = 32;
    int tx_last = 95;
    /// Resolved solver step (informational).
    double solver_dt = 0.0;
    std::uint64_t phantom_seed = 0;
    std::uint64_t config_hash = 0;

    std::size_t n_elements() const { return samples.rows(); }
    std::size_t n_samples() const { return samples.cols(); }
    double pulse_duration() const { return tone_burst_cycles / tx_freq; }
};

/// Hash of everything that determines a simulation besides the phantom.
std::uint64_t config_hash(const TransducerSpec& tx, const PlaneWaveTx& pw, const SolverConfig& cfg);

/// 2D linear lossy acoustic FDTD forward model of one plane-wave shot.
ChannelData simulate_planewave(const phantom::Phantom& phantom, const TransducerSpec& tx,
                               const PlaneWaveTx& pw, const SolverConfig& cfg = {});

/// Recorded pressure snapshots for diagnostics (PML tests, stability).
struct FieldProbe {
    /// Steps at which the interior pressure magnitude maximum is recorded.
    std::vector<double> max_abs_pressure;
    /// Interior pressure energy sum p^2 per recorded sample.
    std::vector<double> interior_energy;
};

ChannelData simulate_planewave(const phantom::Phantom& phantom, const TransducerSpec& tx,
                               const PlaneWaveTx& pw, const SolverConfig& cfg,
                               FieldProbe* probe);

} // namespace echoset::wavesim
