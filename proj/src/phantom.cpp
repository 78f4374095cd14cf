#include "echoset/phantom.hpp"

#include "echoset/error.hpp"
#include "echoset/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace echoset::phantom {

void GridSpec::validate() const {
    if (nx < 16 || nz < 16) throw ParameterError("grid must be at least 16x16 pixels");
    if (!(dx > 0.0) || !(dz > 0.0)) throw ParameterError("grid spacing must be positive");
}

std::string_view to_string(ClassKind kind) {
    switch (kind) {
    case ClassKind::CystWithSkin: return "cyst_skin";
    case ClassKind::LesionWithSkin: return "lesion_skin";
    case ClassKind::Skin: return "skin";
    case ClassKind::Gland: return "gland";
    case ClassKind::Lesion: return "lesion";
    case ClassKind::Cyst: return "cyst";
    }
    return "unknown";
}

std::string_view to_string(Tissue tissue) {
    switch (tissue) {
    case Tissue::GlandBackground: return "gland_bg";
    case Tissue::GlandForeground: return "gland_fg";
    case Tissue::Skin: return "skin";
    case Tissue::Cyst: return "cyst";
    case Tissue::Lesion: return "lesion";
    }
    return "unknown";
}

std::optional<ClassKind> parse_class_kind(std::string_view name) {
    for (ClassKind k : kAllClasses)
        if (to_string(k) == name) return k;
    return std::nullopt;
}

bool has_skin(ClassKind kind) {
    return kind == ClassKind::CystWithSkin || kind == ClassKind::LesionWithSkin ||
           kind == ClassKind::Skin;
}

std::optional<Tissue> inclusion_tissue(ClassKind kind) {
    switch (kind) {
    case ClassKind::CystWithSkin:
    case ClassKind::Cyst: return Tissue::Cyst;
    case ClassKind::LesionWithSkin:
    case ClassKind::Lesion: return Tissue::Lesion;
    default: return std::nullopt;
    }
}

std::array<double, 2> speed_range(Tissue tissue) {
    switch (tissue) {
    case Tissue::Cyst: return {1500.0, 1620.0};
    case Tissue::Lesion: return {1488.0, 1512.0};
    case Tissue::Skin: return {1540.0, 1670.0};
    case Tissue::GlandBackground:
    case Tissue::GlandForeground: return {1480.0, 1528.0};
    }
    return {0.0, 0.0};
}

double ellipse_value(double x, double y, const EllipseParams& e) {
    const double ct = std::cos(e.theta);
    const double st = std::sin(e.theta);
    const double u = (x - e.xc) * ct + (y - e.yc) * st;
    const double v = (x - e.xc) * st - (y - e.yc) * ct;
    return u * u / e.r1 + v * v / e.r2;
}

Array2D<std::uint8_t> ellipse_mask(const GridSpec& grid, const EllipseParams& e) {
    Array2D<std::uint8_t> mask(grid.nz, grid.nx, 0);
    for (std::size_t iz = 0; iz < grid.nz; ++iz) {
        const double y = static_cast<double>(iz) * grid.dz;
        for (std::size_t ix = 0; ix < grid.nx; ++ix) {
            const double x = static_cast<double>(ix) * grid.dx;
            mask(iz, ix) = ellipse_value(x, y, e) <= 1.0 ? 1 : 0;
        }
    }
    return mask;
}

SkinBand gen_skin_band(const GridSpec& grid, double thickness_m) {
    if (!(thickness_m >= 0.7e-3 && thickness_m <= 3e-3))
        throw ParameterError("skin thickness " + std::to_string(thickness_m * 1e3) +
                             " mm outside anatomical range [0.7, 3] mm");
    SkinBand band;
    band.rows = std::min<std::size_t>(
        grid.nz, static_cast<std::size_t>(std::ceil(thickness_m / grid.dz)));
    band.mask = Array2D<std::uint8_t>(grid.nz, grid.nx, 0);
    for (std::size_t iz = 0; iz < band.rows; ++iz)
        for (auto& v : band.mask.row(iz)) v = 1;
    return band;
}

namespace {

std::vector<double> gaussian_taps(std::size_t filter_size, double sigma) {
    const auto half = static_cast<long>(filter_size / 2);
    std::vector<double> taps;
    taps.reserve(static_cast<std::size_t>(2 * half + 1));
    // The 1/(2 pi sigma^2) factor of the 2D kernel is irrelevant after the
    // affine rescale; the separable 1D factors are left unnormalized.
    for (long u = -half; u <= half; ++u)
        taps.push_back(std::exp(-static_cast<double>(u * u) / (2.0 * sigma * sigma)));
    return taps;
}

double quantile_of(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(values.size() - 1)));
    return values[std::min(idx, values.size() - 1)];
}

} // namespace

GlandField gen_grf_gland(const GridSpec& grid, const GrfParams& params,
                         double threshold_quantile, std::uint64_t seed) {
    grid.validate();
    if (params.filter_x < 1 || params.filter_z < 1) throw ParameterError("GRF filter size must be >= 1");
    if (!(params.sigma > 0.0)) throw ParameterError("GRF sigma must be positive");
    if (!(threshold_quantile >= 0.0 && threshold_quantile < 1.0))
        throw ParameterError("GRF threshold quantile must lie in [0, 1)");

    const auto taps_x = gaussian_taps(params.filter_x, params.sigma);
    const auto taps_z = gaussian_taps(params.filter_z, params.sigma);
    const std::size_t wx = grid.nx + params.filter_x;
    const std::size_t wz = grid.nz + params.filter_z;
    // A full kernel of 2*half+1 taps over a field of size n + filter leaves n
    // (or n + 1 for odd filter sizes) valid outputs; the grid is cropped from
    // the start of that valid region.
    Rng rng(seed);
    Array2D<double> noise(wz, wx);
    for (auto& v : noise) v = rng.uniform();

    Array2D<double> rows_filtered(wz, grid.nx, 0.0);
    for (std::size_t iz = 0; iz < wz; ++iz) {
        const auto src = noise.row(iz);
        auto dst = rows_filtered.row(iz);
        for (std::size_t ix = 0; ix < grid.nx; ++ix) {
            double acc = 0.0;
            for (std::size_t t = 0; t < taps_x.size(); ++t) acc += taps_x[t] * src[ix + t];
            dst[ix] = acc;
        }
    }
    Array2D<double> field(grid.nz, grid.nx, 0.0);
    for (std::size_t iz = 0; iz < grid.nz; ++iz) {
        auto dst = field.row(iz);
        for (std::size_t t = 0; t < taps_z.size(); ++t) {
            const auto src = rows_filtered.row(iz + t);
            const double w = taps_z[t];
            for (std::size_t ix = 0; ix < grid.nx; ++ix) dst[ix] += w * src[ix];
        }
    }

    double mean = 0.0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(field.size());
    for (double& v : field) v -= mean;
    const auto [mn, mx] = std::minmax_element(field.begin(), field.end());
    const double lo = *mn;
    const double span = *mx - *mn;
    for (double& v : field) v = span > 0.0 ? (v - lo) / span - 0.5 : 0.0;

    GlandField out;
    out.threshold = quantile_of(field.values(), threshold_quantile);
    out.foreground = Array2D<std::uint8_t>(grid.nz, grid.nx, 0);
    for (std::size_t i = 0; i < field.size(); ++i)
        out.foreground[i] = field[i] >= out.threshold ? 1 : 0;
    out.field = std::move(field);
    return out;
}

double scatterer_density(const GridSpec& grid, double n_s, double wavelength) {
    return n_s / (wavelength * wavelength) * grid.dx * grid.dz;
}

ScattererField gen_scatterers(const GridSpec& grid, double n_s, double wavelength,
                              std::uint64_t seed) {
    grid.validate();
    if (n_s < 0.0) throw ParameterError("scatterers per resolution cell must be non-negative");
    if (!(wavelength > 0.0)) throw ParameterError("wavelength must be positive");
    const double rho_s = scatterer_density(grid, n_s, wavelength);
    if (rho_s > 1.0)
        throw ParameterError("scatterer density " + std::to_string(rho_s) + " exceeds 1");

    ScattererField f;
    f.n_s = n_s;
    f.rho_s = rho_s;
    f.occupancy = Array2D<std::uint8_t>(grid.nz, grid.nx, 0);
    f.amplitude = Array2D<double>(grid.nz, grid.nx, 0.0);
    Rng rng(seed);
    for (std::size_t i = 0; i < f.occupancy.size(); ++i) {
        // Both draws are consumed for every pixel so the stream layout does not
        // depend on rho_s.
        const double u = rng.uniform() - 0.5;
        const bool occupied = rng.uniform() < rho_s;
        f.occupancy[i] = occupied ? 1 : 0;
        f.amplitude[i] = occupied ? u : 0.0;
    }
    return f;
}

SoundSpeedMap region_average_target(const Array2D<std::uint8_t>& labels,
                                    const Array2D<double>& c) {
    if (!labels.same_shape(c)) throw ParameterError("label map and speed map shapes differ");
    std::array<double, 256> sum{};
    std::array<std::size_t, 256> count{};
    for (std::size_t i = 0; i < c.size(); ++i) {
        sum[labels[i]] += c[i];
        ++count[labels[i]];
    }
    SoundSpeedMap target(c.rows(), c.cols());
    for (std::size_t i = 0; i < c.size(); ++i)
        target[i] = sum[labels[i]] / static_cast<double>(count[labels[i]]);
    return target;
}

namespace {

double level_factor(double db) { return std::pow(10.0, db / 20.0); }

// Scatter contrast levels in dB. Gland foreground is the reference level;
// gland background sits one gland contrast (12 dB) below it.
constexpr double kGlandContrastDb = 12.0;
constexpr double kSkinContrastDb = 10.0;

EllipseParams sample_inclusion(const GridSpec& grid, double top, const PhantomConfig& cfg,
                               Rng& rng) {
    const double w = grid.width();
    const double h = grid.height();
    const double avail = std::min(w, h - top);
    const double max_axis = std::min(cfg.inclusion_semi_axis_range[1], 0.35 * avail);
    const double min_axis = std::min(cfg.inclusion_semi_axis_range[0], 0.5 * max_axis);
    if (!(max_axis > 0.0)) throw ParameterError("grid too small for an inclusion");
    for (int attempt = 0; attempt < 64; ++attempt) {
        const double a = rng.uniform(min_axis, max_axis);
        const double b = rng.uniform(min_axis, max_axis);
        const double theta = rng.uniform(0.0, std::numbers::pi);
        const double r = std::max(a, b);
        const double x_lo = r, x_hi = w - r;
        const double y_lo = top + r, y_hi = h - r;
        if (x_hi < x_lo || y_hi < y_lo) continue;
        EllipseParams e;
        e.xc = rng.uniform(x_lo, x_hi);
        e.yc = rng.uniform(y_lo, y_hi);
        e.r1 = a * a;
        e.r2 = b * b;
        e.theta = theta;
        return e;
    }
    throw ParameterError("could not place an inclusion inside the grid");
}

} // namespace

Phantom compose_phantom(ClassKind kind, const GridSpec& grid, std::uint64_t seed,
                        const PhantomConfig& cfg) {
    grid.validate();
    Phantom ph;
    ph.grid = grid;
    ph.seed = seed;
    ph.labels.class_kind = kind;
    auto& labels = ph.labels.labels;

    Rng params_rng(derive_seed(seed, "params"));
    auto& sp = ph.sampled;
    sp.grf_threshold_quantile =
        params_rng.uniform(cfg.grf_quantile_range[0], cfg.grf_quantile_range[1]);
    sp.density_ratio = params_rng.uniform(cfg.density_ratio_range[0], cfg.density_ratio_range[1]);

    const GlandField gland =
        gen_grf_gland(grid, cfg.grf, sp.grf_threshold_quantile, derive_seed(seed, "grf"));
    labels = Array2D<std::uint8_t>(grid.nz, grid.nx);
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::uint8_t>(gland.foreground[i] ? Tissue::GlandForeground
                                                                  : Tissue::GlandBackground);

    double top = 0.0;
    if (has_skin(kind)) {
        sp.skin_thickness =
            params_rng.uniform(cfg.skin_thickness_range[0], cfg.skin_thickness_range[1]);
        const SkinBand band = gen_skin_band(grid, *sp.skin_thickness);
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (band.mask[i]) labels[i] = static_cast<std::uint8_t>(Tissue::Skin);
        top = static_cast<double>(band.rows) * grid.dz;
    }

    const auto inclusion = inclusion_tissue(kind);
    if (inclusion) {
        Rng ellipse_rng(derive_seed(seed, "ellipse"));
        for (int attempt = 0;; ++attempt) {
            const EllipseParams e = sample_inclusion(grid, top, cfg, ellipse_rng);
            const auto mask = ellipse_mask(grid, e);
            if (std::count(mask.begin(), mask.end(), 1) == 0) {
                if (attempt > 16) throw ParameterError("degenerate inclusion");
                continue;
            }
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (mask[i]) labels[i] = static_cast<std::uint8_t>(*inclusion);
            sp.inclusion = e;
            break;
        }
    }

    // Per-region scatter contrast.
    sp.contrast_db[Tissue::GlandForeground] = kGlandContrastDb;
    sp.contrast_db[Tissue::GlandBackground] = 0.0;
    if (has_skin(kind)) sp.contrast_db[Tissue::Skin] = kSkinContrastDb;
    if (inclusion == Tissue::Lesion) {
        const double magnitude = params_rng.uniform(10.0, 30.0);
        const double sign = params_rng.bernoulli(0.5) ? 1.0 : -1.0;
        sp.lesion_contrast_db = sign * magnitude;
        sp.contrast_db[Tissue::Lesion] = sign * magnitude;
    }

    // Region mean speeds.
    Rng speed_rng(derive_seed(seed, "speeds"));
    const auto draw = [&](Tissue t) {
        const auto r = speed_range(t);
        return speed_rng.uniform(r[0], r[1]);
    };
    const double fg = draw(Tissue::GlandForeground);
    double bg = draw(Tissue::GlandBackground);
    while (std::abs(fg - bg) < cfg.min_gland_separation) bg = draw(Tissue::GlandBackground);
    ph.mean_speeds[Tissue::GlandForeground] = fg;
    ph.mean_speeds[Tissue::GlandBackground] = bg;
    if (has_skin(kind)) ph.mean_speeds[Tissue::Skin] = draw(Tissue::Skin);
    if (inclusion) ph.mean_speeds[*inclusion] = draw(*inclusion);

    ph.scatterers = gen_scatterers(grid, cfg.scatterers_per_cell, cfg.wavelength,
                                   derive_seed(seed, "scatterers"));
    // Anechoic cysts carry no scatterers at all.
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (static_cast<Tissue>(labels[i]) == Tissue::Cyst) {
            ph.scatterers.occupancy[i] = 0;
            ph.scatterers.amplitude[i] = 0.0;
        }
    }

    std::array<double, 5> factor{};
    for (Tissue t : kAllTissues) {
        const auto it = sp.contrast_db.find(t);
        factor[static_cast<std::size_t>(t)] =
            it == sp.contrast_db.end() ? 0.0 : level_factor(it->second - kGlandContrastDb);
    }

    auto& c = ph.props.c;
    c = Array2D<double>(grid.nz, grid.nx);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto t = static_cast<Tissue>(labels[i]);
        const double mean = ph.mean_speeds.at(t);
        double rel = cfg.scatter_strength * factor[labels[i]] * ph.scatterers.amplitude[i];
        if (t == Tissue::GlandForeground || t == Tissue::GlandBackground)
            rel += cfg.grf_strength * gland.field[i];
        c[i] = mean * (1.0 + rel);
    }

    // Shift each region so its average equals the sampled mean exactly; the
    // training target then carries the sampled values.
    std::array<double, 256> sum{};
    std::array<std::size_t, 256> count{};
    for (std::size_t i = 0; i < c.size(); ++i) {
        sum[labels[i]] += c[i];
        ++count[labels[i]];
    }
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto t = static_cast<Tissue>(labels[i]);
        const double avg = sum[labels[i]] / static_cast<double>(count[labels[i]]);
        c[i] = std::clamp(c[i] + (ph.mean_speeds.at(t) - avg), 1400.0, 1750.0);
    }

    ph.props.rho = Array2D<double>(grid.nz, grid.nx);
    for (std::size_t i = 0; i < c.size(); ++i) ph.props.rho[i] = c[i] / sp.density_ratio;

    // Drop mean entries for regions that ended up empty (e.g. an inclusion
    // covering every foreground pixel).
    for (Tissue t : kAllTissues)
        if (count[static_cast<std::size_t>(t)] == 0) ph.mean_speeds.erase(t);

    ph.target = region_average_target(labels, c);
    return ph;
}

Phantom homogeneous_phantom(const GridSpec& grid, double speed, std::uint64_t seed,
                            double scatter_strength, double density_ratio) {
    grid.validate();
    Phantom ph;
    ph.grid = grid;
    ph.seed = seed;
    ph.labels.class_kind = ClassKind::Gland;
    ph.labels.labels = Array2D<std::uint8_t>(grid.nz, grid.nx,
                                             static_cast<std::uint8_t>(Tissue::GlandBackground));
    const PhantomConfig cfg;
    ph.scatterers = gen_scatterers(grid, cfg.scatterers_per_cell, cfg.wavelength,
                                   derive_seed(seed, "scatterers"));
    ph.sampled.density_ratio = density_ratio;
    ph.sampled.contrast_db[Tissue::GlandBackground] = kGlandContrastDb;
    ph.mean_speeds[Tissue::GlandBackground] = speed;
    auto& c = ph.props.c;
    c = Array2D<double>(grid.nz, grid.nx);
    for (std::size_t i = 0; i < c.size(); ++i)
        c[i] = speed * (1.0 + scatter_strength * ph.scatterers.amplitude[i]);
    ph.props.rho = Array2D<double>(grid.nz, grid.nx);
    for (std::size_t i = 0; i < c.size(); ++i) ph.props.rho[i] = c[i] / density_ratio;
    ph.target = region_average_target(ph.labels.labels, c);
    return ph;
}

} // namespace echoset::phantom
