#pragma once

#include "echoset/array2d.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace echoset {

/// Sound speed in m/s on a grid (target or estimate).
using SoundSpeedMap = Array2D<double>;

namespace phantom {

inline constexpr double kDefaultSpacing = 58.594e-6;

/// Pixel grid. Row index iz runs in depth (axial), column ix laterally.
struct GridSpec {
    std::size_t nx = 256;
    std::size_t nz = 384;
    double dx = kDefaultSpacing;
    double dz = kDefaultSpacing;
    /// Lateral offset of the grid center relative to the transducer center.
    double origin = 0.0;

    void validate() const;

    /// Lateral position of column ix in the transducer frame.
    double lateral(std::size_t ix) const {
        return (static_cast<double>(ix) - 0.5 * static_cast<double>(nx - 1)) * dx + origin;
    }
    /// Depth of row iz below the transducer face.
    double depth(std::size_t iz) const { return static_cast<double>(iz) * dz; }
    double width() const { return static_cast<double>(nx - 1) * dx; }
    double height() const { return static_cast<double>(nz - 1) * dz; }

    bool operator==(const GridSpec&) const = default;
};

/// Inclusion ellipse in grid-local coordinates (x = ix*dx, y = iz*dz).
/// r1 and r2 are the denominators of the ellipse inequality and enter
/// un-squared, so they carry units of m^2 (semi-axis = sqrt(r)).
struct EllipseParams {
    double xc = 0.0;
    double yc = 0.0;
    double r1 = 0.0;
    double r2 = 0.0;
    double theta = 0.0;
};

enum class Tissue : std::uint8_t {
    GlandBackground = 0,
    GlandForeground = 1,
    Skin = 2,
    Cyst = 3,
    Lesion = 4,
};
inline constexpr std::array<Tissue, 5> kAllTissues = {
    Tissue::GlandBackground, Tissue::GlandForeground, Tissue::Skin, Tissue::Cyst, Tissue::Lesion};

enum class ClassKind { CystWithSkin, LesionWithSkin, Skin, Gland, Lesion, Cyst };
inline constexpr std::array<ClassKind, 6> kAllClasses = {
    ClassKind::CystWithSkin, ClassKind::LesionWithSkin, ClassKind::Skin,
    ClassKind::Gland,        ClassKind::Lesion,         ClassKind::Cyst};

std::string_view to_string(ClassKind kind);
std::string_view to_string(Tissue tissue);
/// Accepts the names produced by to_string ("cyst_skin", "gland", ...).
std::optional<ClassKind> parse_class_kind(std::string_view name);

bool has_skin(ClassKind kind);
/// Tissue of the elliptical inclusion, if the class has one.
std::optional<Tissue> inclusion_tissue(ClassKind kind);

/// Mean sound speed range [lo, hi] in m/s for a tissue class.
std::array<double, 2> speed_range(Tissue tissue);

struct TissueLabelMap {
    Array2D<std::uint8_t> labels;
    ClassKind class_kind = ClassKind::Gland;

    Tissue at(std::size_t iz, std::size_t ix) const { return static_cast<Tissue>(labels(iz, ix)); }
};

struct ScattererField {
    Array2D<std::uint8_t> occupancy;
    Array2D<double> amplitude;
    double rho_s = 0.0;
    double n_s = 0.0;
};

struct PropertyMaps {
    Array2D<double> c;
    Array2D<double> rho;
    double alpha_coeff = 0.75; // dB / (MHz^y cm)
    double alpha_power = 1.5;
    double b_over_a = 6.0; // stored only; the solver is linear
};

struct GlandField {
    Array2D<double> field;              // in [-0.5, 0.5]
    Array2D<std::uint8_t> foreground;   // 1 where field >= threshold
    double threshold = 0.0;
};

struct GrfParams {
    std::size_t filter_x = 400;
    std::size_t filter_z = 400;
    double sigma = 600.0; // in pixels
};

/// Knobs of the phantom composer. Defaults reproduce the reference dataset.
struct PhantomConfig {
    GrfParams grf;
    double scatterers_per_cell = 4.0;
    double wavelength = 1540.0 / 5e6;
    /// Relative sound-speed perturbation of a unit-amplitude scatterer at the
    /// reference (gland foreground) level.
    double scatter_strength = 0.012;
    /// Relative sound-speed modulation of the gland by its Gaussian random field.
    double grf_strength = 0.004;
    double min_gland_separation = 5.0; // m/s
    std::array<double, 2> grf_quantile_range = {0.3, 0.7};
    std::array<double, 2> skin_thickness_range = {0.7e-3, 3e-3};
    std::array<double, 2> inclusion_semi_axis_range = {1e-3, 7.5e-3};
    std::array<double, 2> density_ratio_range = {1.35, 1.65};
};

/// Everything drawn at random while composing a phantom; enough to audit a
/// sample without regenerating it.
struct SampledParams {
    double density_ratio = 1.5;
    double grf_threshold_quantile = 0.5;
    std::optional<double> skin_thickness;
    std::optional<EllipseParams> inclusion;
    std::optional<double> lesion_contrast_db;
    std::map<Tissue, double> contrast_db;
};

struct Phantom {
    GridSpec grid;
    TissueLabelMap labels;
    PropertyMaps props;
    ScattererField scatterers;
    SoundSpeedMap target;
    std::uint64_t seed = 0;
    /// Sampled per-region mean speeds (m/s).
    std::map<Tissue, double> mean_speeds;
    SampledParams sampled;
};

/// Pixel (ix, iz) is inside when E(ix*dx, iz*dz) <= 1.
Array2D<std::uint8_t> ellipse_mask(const GridSpec& grid, const EllipseParams& e);

/// Value of the ellipse function at a point.
double ellipse_value(double x, double y, const EllipseParams& e);

struct SkinBand {
    std::size_t rows = 0;
    Array2D<std::uint8_t> mask;
};

/// Top ceil(thickness / dz) rows. Throws ParameterError outside [0.7, 3] mm.
SkinBand gen_skin_band(const GridSpec& grid, double thickness_m);

/// Uniform noise of size (nx + filter_x) x (nz + filter_z), convolved with a
/// truncated Gaussian, cropped, rescaled to [-0.5, 0.5] and thresholded at
/// the given quantile.
GlandField gen_grf_gland(const GridSpec& grid, const GrfParams& params,
                         double threshold_quantile, std::uint64_t seed);

/// Discretized scatterer density rho_s = n_s / lambda^2 * dx * dz.
double scatterer_density(const GridSpec& grid, double n_s, double wavelength);

/// Bernoulli(rho_s) occupancy jointly sampled with Uniform[-0.5, 0.5] amplitudes.
ScattererField gen_scatterers(const GridSpec& grid, double n_s, double wavelength,
                              std::uint64_t seed);

/// Replace every labeled region by its arithmetic mean.
SoundSpeedMap region_average_target(const Array2D<std::uint8_t>& labels,
                                    const Array2D<double>& c);

Phantom compose_phantom(ClassKind kind, const GridSpec& grid, std::uint64_t seed,
                        const PhantomConfig& config = {});

/// Homogeneous speckle phantom (used for estimator calibration and tests).
/// All pixels are labeled gland background; scatter_strength as in
/// PhantomConfig; zero strength yields an anechoic medium.
Phantom homogeneous_phantom(const GridSpec& grid, double speed, std::uint64_t seed,
                            double scatter_strength = 0.012,
                            double density_ratio = 1.5);

} // namespace phantom
} // namespace echoset
