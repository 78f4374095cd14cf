#pragma once

#include "echoset/phantom.hpp"
#include "echoset/sigproc.hpp"
#include "echoset/wavesim.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace echoset::estimate {

/// Axis-aligned region in the transducer frame (meters).
struct Roi {
    double x_min = -6e-3;
    double x_max = 6e-3;
    double z_min = 9e-3;
    double z_max = 19e-3;
};

struct SweepSpec {
    double c_min = 1400.0;
    double c_max = 1700.0;
    double c_step = 5.0;
    /// ROI at the reference speed; at candidate c its depth bounds are scaled by
    /// c / reference_speed so every candidate integrates the same time window.
    Roi roi;
    double reference_speed = 1540.0;
    std::size_t roi_nx = 48;
    std::size_t roi_nz = 48;
    /// Length of the sliding window used to equalize echo power along each
    /// channel before beamforming; 0 disables equalization.
    double equalize_window = 3e-6;

    void validate(const wavesim::TransducerSpec& tx) const;
    std::vector<double> candidates() const;
};

struct SweepResult {
    bool determinate = false;
    double c_hat = 0.0;
    std::string reason; // empty when determinate
    std::vector<double> speeds;
    std::vector<double> brightness;
};

/// Divides each channel by its local RMS over a centered window of the given
/// length, so echo power no longer decays along the record.
sigproc::IQChannels equalize_power(const sigproc::IQChannels& iq, double window);

/// Mean envelope over the ROI of the coherent sum of the per-angle images
/// beamformed at c0. Channels are used as given.
double speckle_brightness(const std::vector<sigproc::IQChannels>& shots,
                          const wavesim::TransducerSpec& tx, const SweepSpec& sweep, double c0);

/// Equalizes each shot, then takes the argmax of the brightness curve refined
/// by a parabola through the peak and its neighbours. Indeterminate for an
/// all-zero or flat (max/min < 1.01) curve, or a peak on the sweep boundary.
SweepResult speckle_brightness_sweep(const std::vector<sigproc::IQChannels>& shots,
                                     const wavesim::TransducerSpec& tx, const SweepSpec& sweep);

/// Peak analysis alone; exposed for testing.
SweepResult pick_peak(std::vector<double> speeds, std::vector<double> brightness);

struct RegionError {
    phantom::Tissue tissue = phantom::Tissue::GlandBackground;
    std::size_t pixels = 0;
    double mean_estimate = 0.0;
    double mean_target = 0.0;
    double error = 0.0;          // mean_estimate - mean_target
    double relative_error = 0.0; // error / mean_target
    double pixel_mae = 0.0;      // mean |estimate - target| inside the region
};

struct ErrorReport {
    phantom::ClassKind class_kind = phantom::ClassKind::Gland;
    std::vector<RegionError> regions;
    /// Mean |estimate - target| over all pixels.
    double pixel_mae = 0.0;
    /// Standard deviation of the signed per-pixel error.
    double pixel_error_std = 0.0;
    /// Mean |regional error| over non-empty regions.
    double region_mae = 0.0;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

ErrorReport regional_mean_error(const SoundSpeedMap& estimate, const SoundSpeedMap& target,
                                const phantom::TissueLabelMap& labels);

struct ClassSummary {
    phantom::ClassKind class_kind = phantom::ClassKind::Gland;
    std::size_t samples = 0;
    double pixel_mae = 0.0;     // mean of per-sample pixel MAE
    double pixel_mae_std = 0.0; // std of per-sample pixel MAE
    double region_mae = 0.0;
    double region_mae_std = 0.0;
    /// Every regional relative error, for distribution plots.
    std::vector<double> relative_errors;
};

std::vector<ClassSummary> summarize_by_class(const std::vector<ErrorReport>& reports);
nlohmann::json to_json(const std::vector<ClassSummary>& summary);

struct DepthProfile {
    /// bin b covers rows [row_edges[b], row_edges[b + 1]).
    std::vector<std::size_t> row_edges;
    std::vector<double> mean_relative_error;
    std::vector<double> mean_abs_relative_error;

    nlohmann::json to_json() const;
};

/// Relative error (estimate - target) / target averaged per uniform row bin
/// within each sample, then across samples.
DepthProfile error_vs_depth(const std::vector<SoundSpeedMap>& estimates,
                            const std::vector<SoundSpeedMap>& targets, std::size_t n_bins = 16);

/// Pixel rectangle [row0, row1) x [col0, col1).
struct PixelRoi {
    std::size_t row0 = 0, row1 = 0, col0 = 0, col1 = 0;
};

struct TemporalStats {
    std::vector<double> frame_means;
    std::vector<std::size_t> kept; // frames surviving outlier removal
    double mean = 0.0;
    double std = 0.0; // sample standard deviation over kept frames
};

/// ROI mean per frame and their spread. With mad_k set, frames whose ROI mean
/// deviates from the median by more than mad_k * 1.4826 * MAD are dropped.
TemporalStats temporal_consistency(const std::vector<SoundSpeedMap>& frames, const PixelRoi& roi,
                                   std::optional<double> mad_k = std::nullopt);

} // namespace echoset::estimate
