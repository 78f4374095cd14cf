#include <doctest.h>

#include "echoset/error.hpp"
#include "echoset/fft.hpp"
#include "echoset/rng.hpp"
#include "echoset/sigproc.hpp"
#include "../support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

using namespace echoset;
using namespace echoset::sigproc;
using wavesim::ChannelData;
using wavesim::TransducerSpec;

namespace {

constexpr double kPi = std::numbers::pi;

ChannelData channels(std::size_t rows, std::size_t n, double fs) {
    ChannelData ch;
    ch.samples = Array2D<double>(rows, n, 0.0);
    ch.fs = fs;
    return ch;
}

ChannelData tone(double f, std::size_t n, double fs, double phase = 0.0) {
    auto ch = channels(1, n, fs);
    for (std::size_t i = 0; i < n; ++i) ch.samples(0, i) = std::cos(2 * kPi * f * i / fs + phase);
    return ch;
}

std::vector<double> row_of(const ChannelData& ch, std::size_t r = 0) {
    const auto s = ch.samples.row(r);
    return {s.begin(), s.end()};
}

// Amplitude of a real sinusoid of frequency f fitted over samples [a, b).
double tone_amplitude(const std::vector<double>& x, double f, double fs, std::size_t a, std::size_t b) {
    std::complex<double> acc = 0;
    for (std::size_t i = a; i < b; ++i) acc += x[i] * std::polar(1.0, -2 * kPi * f * i / fs);
    return 2.0 * std::abs(acc) / static_cast<double>(b - a);
}

// Peak of the Hann-windowed spectrum refined by a dense direct evaluation.
double spectral_peak(const std::vector<double>& x, double fs, double f_lo, double f_hi, double step) {
    const std::size_t n = x.size();
    double best = 0, best_f = 0;
    for (double f = f_lo; f <= f_hi; f += step) {
        std::complex<double> acc = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = 0.5 - 0.5 * std::cos(2 * kPi * i / (n - 1));
            acc += w * x[i] * std::polar(1.0, -2 * kPi * f * i / fs);
        }
        if (std::abs(acc) > best) {
            best = std::abs(acc);
            best_f = f;
        }
    }
    return best_f;
}

double noise_rms(const ChannelData& a, const ChannelData& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const double d = a.samples[i] - b.samples[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.samples.size()));
}

double db(double ratio) { return 20.0 * std::log10(ratio); }

// Gaussian-envelope analytic pulse centered at t = 0.
std::complex<double> pulse(double t, double f, double sigma) {
    return std::exp(-t * t / (2 * sigma * sigma)) * std::polar(1.0, 2 * kPi * f * t);
}

// Synthetic analytic echoes of a point at (xs, zs) in a medium of speed c,
// timed with the same plane-wave model the beamformer assumes.
IQChannels point_echo(const TransducerSpec& tx, double angle, double xs, double zs, double c,
                      double fs, std::size_t n) {
    IQChannels iq;
    iq.samples = Array2D<cdouble>(static_cast<std::size_t>(tx.n_elements), n);
    iq.fs = fs;
    iq.angle_deg = angle;
    iq.c_ref = c;
    iq.tx_first = tx.tx_first;
    iq.tx_last = tx.tx_last;
    const double half = 0.5 / iq.tx_freq;
    const double t_tx = plane_wave_arrival(tx, angle, c, c, xs, zs);
    for (int e = 0; e < tx.n_elements; ++e) {
        const double dx = xs - tx.element_x(e);
        const double tau = t_tx + std::sqrt(dx * dx + zs * zs) / c + half;
        for (std::size_t i = 0; i < n; ++i)
            iq.samples(static_cast<std::size_t>(e), i) = pulse(i / fs - tau, 5e6, 0.12e-6);
    }
    return iq;
}

BeamformGrid local_grid(double x_mid, double z_mid, double c0) {
    BeamformGrid g;
    g.nx = 41;
    g.nz = 121;
    g.dx = 25e-6;
    g.dz = 10e-6;
    g.x0 = x_mid - 20 * g.dx;
    g.z0 = z_mid - 60 * g.dz;
    g.c0 = c0;
    return g;
}

std::pair<std::size_t, std::size_t> argmax(const Array2D<cfloat>& img) {
    std::size_t bz = 0, bx = 0;
    float best = -1;
    for (std::size_t iz = 0; iz < img.rows(); ++iz)
        for (std::size_t ix = 0; ix < img.cols(); ++ix)
            if (std::abs(img(iz, ix)) > best) {
                best = std::abs(img(iz, ix));
                bz = iz;
                bx = ix;
            }
    return {bz, bx};
}

} // namespace

TEST_CASE("bandpass response") {
    BandpassSpec spec;
    spec.fractional_bandwidth = 0.6;
    CHECK(spec.gain(5e6) == doctest::Approx(1.0));
    CHECK(spec.gain(0.0) == 0.0);
    CHECK(db(spec.gain(3.5e6)) == doctest::Approx(-6.0206).epsilon(1e-6));
    CHECK(db(spec.gain(6.5e6)) == doctest::Approx(-6.0206).epsilon(1e-6));

    const double fs = 40e6;
    const std::size_t n = 4000, a = 1000, b = 3000;
    CHECK(tone_amplitude(row_of(bandpass(tone(5e6, n, fs), spec)), 5e6, fs, a, b) ==
          doctest::Approx(1.0).epsilon(0.01));
    for (double f : {3.5e6, 6.5e6}) {
        const double g = tone_amplitude(row_of(bandpass(tone(f, n, fs), spec)), f, fs, a, b);
        CHECK(std::abs(db(g) + 6.0) <= 0.5);
    }
    auto dc = channels(1, n, fs);
    for (double& v : dc.samples) v = 1.0;
    CHECK(db(oracle::rms(row_of(bandpass(dc, spec)))) <= -40.0);
    spec.fractional_bandwidth = 2.0;
    CHECK_THROWS_AS(bandpass(dc, spec), ParameterError);
}

TEST_CASE("bandpass applied twice narrows the -6 dB width by 1/sqrt(2)") {
    const double fs = 40e6;
    const std::size_t n = 2048;
    auto imp = channels(1, n, fs);
    imp.samples(0, n / 2) = 1.0;
    BandpassSpec spec;
    spec.fractional_bandwidth = 0.7;
    auto width = [&](const ChannelData& ch) {
        std::vector<std::complex<double>> buf(n);
        for (std::size_t i = 0; i < n; ++i) buf[i] = ch.samples(0, i);
        const auto spec_out = oracle::naive_dft(buf);
        double peak = 0;
        for (std::size_t k = 0; k < n / 2; ++k) peak = std::max(peak, std::abs(spec_out[k]));
        // -6 dB crossings, linearly interpolated
        std::vector<double> cross;
        for (std::size_t k = 1; k < n / 2; ++k) {
            const double a = std::abs(spec_out[k - 1]) / peak - 0.5;
            const double b = std::abs(spec_out[k]) / peak - 0.5;
            if ((a < 0) != (b < 0)) cross.push_back((k - 1 + a / (a - b)) * fs / n);
        }
        REQUIRE(cross.size() == 2);
        return cross[1] - cross[0];
    };
    const auto once = bandpass(imp, spec);
    const double w1 = width(once);
    const double w2 = width(bandpass(once, spec));
    CHECK(w1 == doctest::Approx(0.7 * 5e6).epsilon(0.02));
    CHECK(w2 / w1 == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.02));
}

TEST_CASE("resample") {
    const double fs = 87.6e6;
    auto src = tone(5e6, 8760, fs);
    src.t0 = 1.234e-6;
    const auto out = resample(src, 40e6);
    CHECK(out.fs == 40e6);
    CHECK(std::abs(static_cast<long>(out.n_samples()) - 4000) <= 1);
    CHECK(out.t0 == src.t0);
    CHECK(std::abs(out.n_samples() / out.fs - src.n_samples() / src.fs) <= 1.0 / out.fs);
    const double f = spectral_peak(row_of(out), 40e6, 4.9e6, 5.1e6, 250.0);
    CHECK(std::abs(f - 5e6) <= 1e-3 * 5e6);

    const auto same = resample(src, fs);
    for (std::size_t i = 0; i < src.samples.size(); ++i)
        CHECK(std::abs(same.samples[i] - src.samples[i]) <= 1e-9);

    CHECK_THROWS_AS(resample(src, 25e6), ParameterError);
}

TEST_CASE("resampler round trip of a band-limited signal") {
    const double fs = 40e6;
    const std::size_t n = 4000;
    auto ch = channels(2, n, fs);
    Rng rng(7);
    for (std::size_t r = 0; r < 2; ++r)
        for (int k = 0; k < 30; ++k) {
            const double f = rng.uniform(0.5e6, 14e6);
            const double ph = rng.uniform(0, 2 * kPi);
            const double a = rng.uniform(0.2, 1.0);
            for (std::size_t i = 0; i < n; ++i) ch.samples(r, i) += a * std::cos(2 * kPi * f * i / fs + ph);
        }
    const auto back = resample(resample(ch, 87.6e6), 40e6);
    REQUIRE(back.n_samples() == n);
    // Edges see truncated kernels; compare the interior.
    double err = 0, ref = 0;
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t i = 200; i < n - 200; ++i) {
            const double d = back.samples(r, i) - ch.samples(r, i);
            err += d * d;
            ref += ch.samples(r, i) * ch.samples(r, i);
        }
    CHECK(10 * std::log10(err / ref) <= -40.0);
}

TEST_CASE("analytic signal") {
    const double fs = 40e6, f = 5e6;
    const std::size_t n = 1024;
    const auto iq = analytic_signal(tone(f, n, fs));
    for (std::size_t i = 100; i < n - 100; ++i) {
        CHECK(std::abs(iq.samples(0, i).imag() - std::sin(2 * kPi * f * i / fs)) <= 0.01);
        CHECK(std::abs(std::abs(iq.samples(0, i)) - 1.0) <= 0.01);
    }
    auto noise = channels(3, 777, fs);
    Rng rng(3);
    for (double& v : noise.samples) v = rng.normal();
    const auto a = analytic_signal(noise);
    double peak = 0;
    for (double v : noise.samples) peak = std::max(peak, std::abs(v));
    for (std::size_t i = 0; i < noise.samples.size(); ++i)
        CHECK(std::abs(a.samples[i].real() - noise.samples[i]) <= 1e-6 * peak);
    CHECK_THROWS_AS(analytic_signal(channels(1, 15, fs)), ParameterError);
}

TEST_CASE("align_t0") {
    const double fs = 40e6;
    auto ch = channels(2, 1000, fs);
    for (std::size_t i = 0; i < ch.samples.size(); ++i) ch.samples[i] = static_cast<double>(i);
    const auto same = align_t0(ch, 0.0);
    CHECK(same.n_samples() == 1000);
    CHECK(same.samples.values() == ch.samples.values());

    const auto cut = align_t0(ch, 2.75e-6);
    CHECK(cut.n_samples() == 1000 - 110);
    CHECK(cut.samples(0, 0) == 110.0);
    CHECK(cut.samples(1, 0) == 1110.0);
    CHECK(cut.start_time == doctest::Approx(2.75e-6));
    // A t0 between samples keeps the first sample at or after it.
    CHECK(align_t0(ch, 2.76e-6).samples(0, 0) == 111.0);
    CHECK_THROWS_AS(align_t0(ch, 1000 / fs), ParameterError);
    CHECK_THROWS_AS(align_t0(ch, -1e-6), ParameterError);
}

TEST_CASE("pulse RMS of the unit-peak burst") {
    const auto b = wavesim::tone_burst(5e6, 1, 20e9);
    CHECK(pulse_rms(5e6, 1) == doctest::Approx(oracle::rms(b)).epsilon(1e-3));
    // Scale free in frequency.
    CHECK(pulse_rms(3e6, 1) == doctest::Approx(pulse_rms(5e6, 1)).epsilon(1e-9));
    CHECK_THROWS_AS(pulse_rms(5e6, 0), ParameterError);
}

TEST_CASE("thermal noise augmentation") {
    const double fs = 40e6, prms = 0.3;
    auto ch = tone(5e6, 8192, fs);
    TnaSpec off;
    off.probability = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        TnaDraw d;
        const auto out = apply_tna(ch, off, prms, s, &d);
        CHECK_FALSE(d.applied);
        CHECK(out.samples.values() == ch.samples.values());
    }
    for (double level : {-120.0, -100.0, -80.0}) {
        TnaSpec forced;
        forced.probability = 1.0;
        forced.min_db = forced.max_db = level;
        TnaDraw d;
        const auto out = apply_tna(ch, forced, prms, 11, &d);
        CHECK(d.applied);
        CHECK(d.level_db == level);
        CHECK(std::abs(db(noise_rms(out, ch) / prms) - level) <= 1.0);
        // Replay from the recorded draw.
        CHECK(add_noise(ch, d.level_db, prms, d.noise_seed).samples.values() == out.samples.values());
    }
    TnaSpec spec;
    int hits = 0;
    const int trials = 10000;
    auto small = channels(1, 16, fs);
    for (int s = 0; s < trials; ++s) {
        TnaDraw d;
        apply_tna(small, spec, prms, derive_seed(99, static_cast<std::uint64_t>(s)), &d);
        if (d.applied) {
            ++hits;
            CHECK(d.level_db >= -120.0);
            CHECK(d.level_db <= -80.0);
        }
    }
    CHECK(std::abs(static_cast<double>(hits) / trials - 0.2) <= 0.012);

    TnaSpec bad;
    bad.min_db = -70;
    CHECK_THROWS_AS(apply_tna(ch, bad, prms, 1), ParameterError);
    CHECK_THROWS_AS(apply_tna(ch, spec, 0.0, 1), ParameterError);
}

TEST_CASE("beamform grid validation") {
    TransducerSpec tx;
    const auto g = BeamformGrid::aperture_default(tx);
    CHECK(g.nx == 256);
    CHECK(g.nz == 256);
    CHECK(g.lateral(g.nx - 1) - g.lateral(0) <= tx.n_elements * tx.pitch);
    CHECK(g.depth(g.nz - 1) <= 30e-3 + 1e-12);
    CHECK_NOTHROW(g.validate(tx));
    auto bad = g;
    bad.c0 = 1399;
    CHECK_THROWS_AS(bad.validate(tx), ParameterError);
    bad = g;
    bad.x0 -= 1e-3;
    CHECK_THROWS_AS(bad.validate(tx), ParameterError);
    bad = g;
    bad.z0 = -1e-4;
    CHECK_THROWS_AS(bad.validate(tx), ParameterError);

    const auto pg = BeamformGrid::from_phantom(phantom::GridSpec{});
    CHECK(pg.nx == 256);
    CHECK(pg.nz == 384);
    CHECK_NOTHROW(pg.validate(tx));
}

TEST_CASE("delay-and-sum localizes a synthetic point target") {
    TransducerSpec tx;
    const double fs = 40e6, c = 1540.0;
    for (double angle : {-8.0, 0.0, 8.0}) {
        for (double xs : {0.0, 3e-3}) {
            const double zs = 10e-3;
            const auto iq = point_echo(tx, angle, xs, zs, c, fs, 1000);
            const auto g = local_grid(xs, zs, c);
            const auto img = das_beamform(iq, tx, g);
            const auto [iz, ix] = argmax(img.pixels);
            const double ex = g.lateral(ix) - xs, ez = g.depth(iz) - zs;
            CHECK(std::hypot(ex, ez) <= 154e-6);
            CHECK(std::abs(ez) <= g.dz);
        }
    }
}

TEST_CASE("delay-and-sum axial shift under a wrong c0 matches a brute-force delay model") {
    TransducerSpec tx;
    const double fs = 40e6, c = 1540.0, c0 = 1490.0, zs = 10e-3;
    const auto iq = point_echo(tx, 0.0, 0.0, zs, c, fs, 1000);
    auto g = local_grid(0.0, zs * c0 / c, c0);
    g.nx = 1;
    g.x0 = 0.0;
    const auto img = das_beamform(iq, tx, g);
    std::size_t best = 0;
    for (std::size_t iz = 0; iz < g.nz; ++iz)
        if (std::abs(img.pixels(iz, 0)) > std::abs(img.pixels(best, 0))) best = iz;

    // Continuous-time coherent sum of the modeled echoes, evaluated on a fine depth grid.
    double model_z = 0, model_best = -1;
    for (double z = zs * 0.94; z <= zs * 1.0; z += 0.5e-6) {
        std::complex<double> acc = 0;
        for (int e = 0; e < tx.n_elements; ++e) {
            const double xe = tx.element_x(e);
            const double t_true = zs / c + std::hypot(xe, zs) / c;
            const double t_assumed = z / c0 + std::hypot(xe, z) / c0;
            acc += pulse(t_assumed - t_true, 5e6, 0.12e-6);
        }
        if (std::abs(acc) > model_best) {
            model_best = std::abs(acc);
            model_z = z;
        }
    }
    const double shift = zs - g.depth(best);
    CHECK(std::abs(g.depth(best) - model_z) <= g.dz);
    CHECK(shift > 0.0);
    CHECK(shift == doctest::Approx(zs * (1 - c0 / c)).epsilon(0.25));
}

TEST_CASE("delay-and-sum is linear and maps zero to zero") {
    TransducerSpec tx;
    const double fs = 40e6;
    auto x = point_echo(tx, 8.0, 1e-3, 8e-3, 1540, fs, 800);
    auto y = point_echo(tx, 8.0, -2e-3, 12e-3, 1540, fs, 800);
    const auto g = local_grid(0.0, 10e-3, 1540);
    const std::complex<double> a(0.7, -0.2), b(-1.3, 0.4);
    auto mix = x;
    for (std::size_t i = 0; i < mix.samples.size(); ++i) mix.samples[i] = a * x.samples[i] + b * y.samples[i];
    const auto ix = das_beamform(x, tx, g), iy = das_beamform(y, tx, g), im = das_beamform(mix, tx, g);
    double err = 0, ref = 0;
    for (std::size_t i = 0; i < im.pixels.size(); ++i) {
        const std::complex<double> expect = a * std::complex<double>(ix.pixels[i]) +
                                            b * std::complex<double>(iy.pixels[i]);
        err = std::max(err, std::abs(std::complex<double>(im.pixels[i]) - expect));
        ref = std::max(ref, std::abs(expect));
    }
    CHECK(err <= 1e-6 * ref);

    auto zero = x;
    for (auto& v : zero.samples) v = 0.0;
    for (const auto& p : das_beamform(zero, tx, g).pixels) CHECK(p == cfloat(0.0f, 0.0f));
}

TEST_CASE("beamformed phase varies smoothly along depth within the -6 dB envelope") {
    TransducerSpec tx;
    const auto iq = point_echo(tx, 0.0, 0.0, 10e-3, 1540, 40e6, 1000);
    auto g = local_grid(0.0, 10e-3, 1540);
    g.nx = 1;
    g.x0 = 0.0;
    g.dz = 2e-6;
    g.nz = 601;
    g.z0 = 10e-3 - 300 * g.dz;
    const auto img = das_beamform(iq, tx, g);
    float peak = 0;
    for (const auto& p : img.pixels) peak = std::max(peak, std::abs(p));
    int checked = 0;
    for (std::size_t iz = 1; iz < g.nz; ++iz) {
        const auto p0 = img.pixels(iz - 1, 0), p1 = img.pixels(iz, 0);
        if (std::abs(p0) < 0.5f * peak || std::abs(p1) < 0.5f * peak) continue;
        // Expected step: 2 dz round trip at 5 MHz, about 0.08 rad.
        const double step = std::arg(std::complex<double>(p1) * std::conj(std::complex<double>(p0)));
        CHECK(std::abs(step) < 0.5);
        ++checked;
    }
    CHECK(checked > 20);
}

TEST_CASE("model input stacking") {
    BeamformGrid g;
    g.nx = 5;
    g.nz = 4;
    g.dx = g.dz = 1e-4;
    std::vector<IQImage> ims(3);
    Rng rng(5);
    const double angles[3] = {8.0, -8.0, 0.0};
    for (int a = 0; a < 3; ++a) {
        ims[a].angle_deg = angles[a];
        ims[a].grid = g;
        ims[a].pixels = Array2D<cfloat>(4, 5);
        for (auto& p : ims[a].pixels)
            p = cfloat(static_cast<float>(rng.normal()), static_cast<float>(rng.normal()));
    }
    const auto in = stack_model_input(ims);
    CHECK(in.angles == std::array<double, 3>{-8.0, 0.0, 8.0});
    CHECK(plane_labels(in.angles) ==
          std::vector<std::string>{"re(-8)", "im(-8)", "re(0)", "im(0)", "re(8)", "im(8)"});
    // Plane 0 holds re of the -8 degree image.
    CHECK(in.planes[0] == ims[1].pixels[0].real());
    CHECK(in.planes[20 + 3] == ims[1].pixels[3].imag());
    const auto back = unstack_model_input(in, g);
    for (int a = 0; a < 3; ++a) {
        const auto& orig = ims[a == 0 ? 1 : a == 1 ? 2 : 0];
        CHECK(back[a].angle_deg == orig.angle_deg);
        CHECK(back[a].pixels.values() == orig.pixels.values());
    }

    std::vector<IQImage> same(3, ims[0]);
    same[1].angle_deg = 0;
    same[2].angle_deg = -8;
    const auto s = stack_model_input(same);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(s.planes[i] == s.planes[40 + i]);
        CHECK(s.planes[20 + i] == s.planes[60 + i]);
        CHECK(s.planes[i] == s.planes[80 + i]);
    }

    auto odd = ims;
    odd[2].pixels = Array2D<cfloat>(4, 6);
    CHECK_THROWS_AS(stack_model_input(odd), ParameterError);
    ims.pop_back();
    CHECK_THROWS_AS(stack_model_input(ims), ParameterError);
    auto g2 = g;
    g2.nx = 6;
    CHECK_THROWS_AS(unstack_model_input(in, g2), ParameterError);
}
