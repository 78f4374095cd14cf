#include "../support/oracles.hpp"
#include "echoset/error.hpp"
#include "echoset/estimate.hpp"
#include "echoset/rng.hpp"
#include <doctest.h>
#include <cmath>
#include <numbers>

using namespace echoset;
using namespace echoset::estimate;
using phantom::ClassKind;
using phantom::Tissue;
using sigproc::IQChannels;
using wavesim::TransducerSpec;

namespace {

struct Scatterer {
    double x, z, a;
};

std::vector<Scatterer> speckle(std::uint64_t seed, std::size_t n, double x_half, double z_lo,
                               double z_hi) {
    Rng rng(seed);
    std::vector<Scatterer> s;
    for (std::size_t i = 0; i < n; ++i)
        s.push_back({rng.uniform(-x_half, x_half), rng.uniform(z_lo, z_hi), rng.normal()});
    return s;
}

// Analytic echoes of point scatterers in a homogeneous medium of speed c, with
// transmit steering computed for 1540 m/s and a Gaussian-envelope 5 MHz pulse.
IQChannels synth(const TransducerSpec& tx, double angle, double c, const std::vector<Scatterer>& pts,
                 std::size_t n = 1400, double fs = 40e6) {
    IQChannels iq;
    iq.samples = Array2D<std::complex<double>>(static_cast<std::size_t>(tx.n_elements), n);
    iq.fs = fs;
    iq.angle_deg = angle;
    const double sigma = 0.12e-6, f = 5e6, half = 0.5 / f;
    for (const auto& p : pts) {
        const double t_tx = sigproc::plane_wave_arrival(tx, angle, 1540.0, c, p.x, p.z);
        for (int e = 0; e < tx.n_elements; ++e) {
            const double dx = p.x - tx.element_x(e);
            const double tau = t_tx + std::sqrt(dx * dx + p.z * p.z) / c + half;
            const auto i_lo = static_cast<long>(std::floor((tau - 5 * sigma) * fs));
            const auto i_hi = static_cast<long>(std::ceil((tau + 5 * sigma) * fs));
            for (long i = std::max(0L, i_lo); i <= std::min<long>(i_hi, long(n) - 1); ++i) {
                const double t = i / fs - tau;
                iq.samples(static_cast<std::size_t>(e), static_cast<std::size_t>(i)) +=
                    p.a * std::exp(-t * t / (2 * sigma * sigma)) *
                    std::polar(1.0, 2 * std::numbers::pi * f * t);
            }
        }
    }
    return iq;
}

std::vector<IQChannels> shots_for(double c, const std::vector<Scatterer>& pts) {
    TransducerSpec tx;
    return {synth(tx, -8, c, pts), synth(tx, 0, c, pts), synth(tx, 8, c, pts)};
}

SweepSpec fast_sweep(double lo, double hi, double step) {
    SweepSpec s;
    s.c_min = lo;
    s.c_max = hi;
    s.c_step = step;
    s.roi_nx = 24;
    s.roi_nz = 32;
    return s;
}

SoundSpeedMap random_map(std::uint64_t seed, std::size_t nz, std::size_t nx) {
    Rng rng(seed);
    SoundSpeedMap m(nz, nx);
    for (auto& v : m) v = rng.uniform(1400.0, 1750.0);
    return m;
}

phantom::TissueLabelMap random_labels(std::uint64_t seed, std::size_t nz, std::size_t nx,
                                      ClassKind kind) {
    Rng rng(seed);
    phantom::TissueLabelMap l;
    l.class_kind = kind;
    l.labels = Array2D<std::uint8_t>(nz, nx);
    for (auto& v : l.labels) v = static_cast<std::uint8_t>(rng.below(5));
    return l;
}

} // namespace

TEST_CASE("pick_peak") {
    const std::vector<double> c = {1500, 1505, 1510, 1515, 1520};
    auto r = pick_peak(c, {1, 2, 4, 2, 1});
    CHECK(r.determinate);
    CHECK(r.c_hat == doctest::Approx(1510));
    // Parabola through (-1, 2), (0, 4), (1, 3): vertex at +1/6 step.
    r = pick_peak(c, {1, 2, 4, 3, 1});
    CHECK(r.c_hat == doctest::Approx(1510 + 5.0 / 6.0));
    CHECK_FALSE(pick_peak(c, {0, 0, 0, 0, 0}).determinate);
    CHECK_FALSE(pick_peak(c, {1, 1.001, 1.005, 1.002, 1}).determinate);
    r = pick_peak(c, {5, 4, 3, 2, 1});
    CHECK_FALSE(r.determinate);
    CHECK(r.reason.find("boundary") != std::string::npos);
    CHECK_FALSE(pick_peak({1500, 1505}, {1, 2}).determinate);
}

TEST_CASE("sweep specification") {
    TransducerSpec tx;
    SweepSpec s;
    const auto c = s.candidates();
    CHECK(c.size() == 61);
    CHECK(c.front() == 1400.0);
    CHECK(c.back() == 1700.0);
    CHECK_NOTHROW(s.validate(tx));
    auto bad = s;
    bad.c_step = 0;
    CHECK_THROWS_AS(bad.validate(tx), ParameterError);
    bad = s;
    bad.c_min = 1700;
    CHECK_THROWS_AS(bad.validate(tx), ParameterError);
    bad = s;
    bad.roi.x_max = 30e-3;
    CHECK_THROWS_AS(bad.validate(tx), ParameterError);
}

TEST_CASE("power equalization flattens a decaying record") {
    IQChannels iq;
    iq.fs = 40e6;
    iq.samples = Array2D<std::complex<double>>(2, 2000);
    Rng rng(4);
    for (std::size_t e = 0; e < 2; ++e)
        for (std::size_t i = 0; i < 2000; ++i)
            iq.samples(e, i) = std::exp(-double(i) / 300.0) * std::complex<double>(rng.normal(), rng.normal());
    const auto eq = equalize_power(iq, 3e-6);
    auto seg_rms = [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (std::size_t i = a; i < b; ++i) s += std::norm(eq.samples(0, i));
        return std::sqrt(s / double(b - a));
    };
    CHECK(seg_rms(200, 400) == doctest::Approx(1.0).epsilon(0.15));
    CHECK(seg_rms(1600, 1800) == doctest::Approx(1.0).epsilon(0.15));
    CHECK_THROWS_AS(equalize_power(iq, 0.0), ParameterError);
}

TEST_CASE("speckle brightness sweep on synthetic speckle") {
    TransducerSpec tx;
    const auto pts = speckle(21, 1500, 9e-3, 7e-3, 21e-3);
    for (double c : {1480.0, 1560.0}) {
        const auto shots = shots_for(c, pts);
        const auto coarse = speckle_brightness_sweep(shots, tx, fast_sweep(c - 40, c + 40, 5));
        REQUIRE(coarse.determinate);
        CHECK(std::abs(coarse.c_hat - c) <= 10.0);

        // Step refinement: interpolated coarse peak vs a unit-step sweep.
        const auto fine = speckle_brightness_sweep(shots, tx, fast_sweep(c - 15, c + 15, 1));
        REQUIRE(fine.determinate);
        const auto k = std::max_element(fine.brightness.begin(), fine.brightness.end()) -
                       fine.brightness.begin();
        CHECK(std::abs(coarse.c_hat - fine.speeds[static_cast<std::size_t>(k)]) <= 2.5);

        // Brightness is homogeneous in amplitude, so scaling leaves c_hat alone.
        auto scaled = shots;
        for (auto& s : scaled)
            for (auto& v : s.samples) v *= 3.7;
        const auto rs = speckle_brightness_sweep(scaled, tx, fast_sweep(c - 40, c + 40, 5));
        CHECK(rs.c_hat == doctest::Approx(coarse.c_hat).epsilon(1e-9));
    }
}

TEST_CASE("anechoic ROI is indeterminate") {
    TransducerSpec tx;
    const auto shots = shots_for(1540, {});
    const auto r = speckle_brightness_sweep(shots, tx, fast_sweep(1450, 1650, 10));
    CHECK_FALSE(r.determinate);
    CHECK_FALSE(r.reason.empty());
}

TEST_CASE("regional mean error") {
    const std::size_t nz = 40, nx = 30;
    const auto tgt = random_map(1, nz, nx);
    const auto labels = random_labels(2, nz, nx, ClassKind::CystWithSkin);

    auto rep = regional_mean_error(tgt, tgt, labels);
    CHECK(rep.pixel_mae == 0.0);
    CHECK(rep.region_mae == 0.0);
    for (const auto& r : rep.regions) CHECK(r.error == 0.0);

    auto plus = tgt;
    for (auto& v : plus) v += 10.0;
    rep = regional_mean_error(plus, tgt, labels);
    CHECK(rep.pixel_mae == doctest::Approx(10.0));
    CHECK(rep.region_mae == doctest::Approx(10.0));
    CHECK(rep.pixel_error_std == doctest::Approx(0.0).epsilon(1e-9));
    for (const auto& r : rep.regions) CHECK(r.error == doctest::Approx(10.0));

    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto est = random_map(100 + s, nz, nx);
        const auto ref = oracle::region_errors(est, tgt, labels.labels);
        const auto got = regional_mean_error(est, tgt, labels);
        REQUIRE(got.regions.size() == ref.size());
        double pixel_mae = 0;
        for (std::size_t i = 0; i < est.size(); ++i) pixel_mae += std::abs(est[i] - tgt[i]);
        pixel_mae /= double(est.size());
        CHECK(std::abs(got.pixel_mae - pixel_mae) <= 1e-9);
        for (const auto& r : got.regions) {
            const auto& o = ref.at(static_cast<int>(r.tissue));
            CHECK(r.pixels == o.pixels);
            CHECK(std::abs(r.mean_estimate - o.mean_estimate) <= 1e-9);
            CHECK(std::abs(r.mean_target - o.mean_target) <= 1e-9);
            CHECK(std::abs(r.pixel_mae - o.pixel_mae) <= 1e-9);
        }
        // Metric axioms.
        const auto swapped = regional_mean_error(tgt, est, labels);
        CHECK(swapped.pixel_mae == doctest::Approx(got.pixel_mae).epsilon(1e-12));
        CHECK(got.pixel_mae > 0.0);
    }
}

TEST_CASE("empty regions are excluded with a warning") {
    const auto tgt = random_map(3, 10, 10);
    phantom::TissueLabelMap labels;
    labels.class_kind = ClassKind::CystWithSkin;
    labels.labels = Array2D<std::uint8_t>(10, 10, static_cast<std::uint8_t>(Tissue::GlandBackground));
    const auto rep = regional_mean_error(tgt, tgt, labels);
    CHECK(rep.regions.size() == 1);
    CHECK(rep.warnings.size() == 3);
    const auto j = rep.to_json();
    CHECK(j["class"] == "cyst_skin");
    CHECK(j["warnings"].size() == 3);
}

TEST_CASE("summaries by class") {
    std::vector<ErrorReport> reps(4);
    reps[0].class_kind = reps[1].class_kind = ClassKind::Gland;
    reps[2].class_kind = reps[3].class_kind = ClassKind::Cyst;
    const double pm[4] = {2, 4, 10, 10};
    for (int i = 0; i < 4; ++i) {
        reps[i].pixel_mae = pm[i];
        reps[i].region_mae = pm[i] / 2;
        reps[i].regions.push_back({Tissue::GlandBackground, 5, 0, 0, 0, 0.001 * i, 0});
    }
    const auto s = summarize_by_class(reps);
    REQUIRE(s.size() == 2);
    CHECK(s[0].class_kind == ClassKind::Gland);
    CHECK(s[0].pixel_mae == doctest::Approx(3.0));
    CHECK(s[0].pixel_mae_std == doctest::Approx(std::sqrt(2.0)));
    CHECK(s[0].region_mae == doctest::Approx(1.5));
    CHECK(s[1].pixel_mae_std == 0.0);
    CHECK(s[1].relative_errors.size() == 2);
    CHECK(to_json(s).size() == 2);
}

TEST_CASE("error versus depth") {
    const std::size_t nz = 96, nx = 20;
    std::vector<SoundSpeedMap> est, tgt;
    for (std::uint64_t s = 0; s < 3; ++s) {
        tgt.push_back(random_map(10 + s, nz, nx));
        est.push_back(random_map(20 + s, nz, nx));
    }
    const auto prof = error_vs_depth(est, tgt, 7);
    CHECK(prof.row_edges.front() == 0);
    CHECK(prof.row_edges.back() == nz);
    // Oracle: average of per-sample bin means.
    std::vector<double> rel(7, 0.0), abs_rel(7, 0.0);
    for (std::size_t s = 0; s < 3; ++s) {
        const auto d = oracle::depth_errors(est[s], tgt[s], 7);
        for (int b = 0; b < 7; ++b) {
            rel[b] += d.rel[b] / 3;
            abs_rel[b] += d.abs_rel[b] / 3;
        }
    }
    for (int b = 0; b < 7; ++b) {
        CHECK(std::abs(prof.mean_relative_error[b] - rel[b]) <= 1e-9);
        CHECK(std::abs(prof.mean_abs_relative_error[b] - abs_rel[b]) <= 1e-9);
    }

    for (double v : error_vs_depth(tgt, tgt).mean_relative_error) CHECK(v == 0.0);
    auto biased = tgt;
    for (auto& m : biased)
        for (auto& v : m) v *= 1.01;
    for (double v : error_vs_depth(biased, tgt).mean_relative_error) CHECK(v == doctest::Approx(0.01));

    // Linear-in-depth bias: relative error slope recovered from bin centres.
    auto lin = tgt;
    const double slope = 2e-4; // per row
    for (auto& m : lin)
        for (std::size_t iz = 0; iz < nz; ++iz)
            for (std::size_t ix = 0; ix < nx; ++ix) m(iz, ix) *= 1.0 + slope * double(iz);
    const auto lp = error_vs_depth(lin, tgt, 16);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t b = 0; b < 16; ++b) {
        const double x = 0.5 * double(lp.row_edges[b] + lp.row_edges[b + 1] - 1);
        sx += x;
        sy += lp.mean_relative_error[b];
        sxx += x * x;
        sxy += x * lp.mean_relative_error[b];
    }
    const double fit = (16 * sxy - sx * sy) / (16 * sxx - sx * sx);
    CHECK(fit == doctest::Approx(slope).epsilon(0.05));

    CHECK_THROWS_AS(error_vs_depth({}, {}), ParameterError);
    CHECK_THROWS_AS(error_vs_depth(est, tgt, nz + 1), ParameterError);
}

TEST_CASE("temporal consistency") {
    const std::size_t nz = 30, nx = 30;
    PixelRoi roi{5, 25, 5, 25};
    std::vector<SoundSpeedMap> same(5, SoundSpeedMap(nz, nx, 1540.0));
    auto st = temporal_consistency(same, roi);
    CHECK(st.std == 0.0);
    CHECK(st.mean == 1540.0);

    Rng rng(8);
    const double sigma = 20.0;
    std::vector<SoundSpeedMap> noisy;
    for (int f = 0; f < 400; ++f) {
        SoundSpeedMap m(nz, nx, 1540.0);
        for (auto& v : m) v += sigma * rng.normal();
        noisy.push_back(std::move(m));
    }
    st = temporal_consistency(noisy, roi);
    CHECK(st.std == doctest::Approx(sigma / std::sqrt(400.0)).epsilon(0.2));

    auto corrupted = std::vector<SoundSpeedMap>(noisy.begin(), noisy.begin() + 50);
    for (auto& v : corrupted[17]) v += 300.0;
    const auto raw = temporal_consistency(corrupted, roi);
    const auto trimmed = temporal_consistency(corrupted, roi, 3.0);
    CHECK(trimmed.std < raw.std);
    CHECK(std::find(trimmed.kept.begin(), trimmed.kept.end(), 17u) == trimmed.kept.end());
    CHECK_THROWS_AS(temporal_consistency({same[0]}, roi), ParameterError);
}
