#include "echoset/sigproc.hpp"

#include "echoset/error.hpp"
#include "echoset/fft.hpp"
#include "echoset/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace echoset::sigproc {

using wavesim::ChannelData;
using wavesim::TransducerSpec;

namespace {

constexpr double kPi = std::numbers::pi;

ChannelData with_samples(const ChannelData& meta, Array2D<double> samples, double fs) {
    ChannelData out = meta;
    out.samples = std::move(samples);
    out.fs = fs;
    return out;
}

double kaiser(double u, double beta) {
    // u in [-1, 1]
    if (std::abs(u) >= 1.0) return 0.0;
    return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - u * u)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    return std::sin(kPi * x) / (kPi * x);
}

} // namespace

void BandpassSpec::validate() const {
    if (!(center_freq > 0.0)) throw ParameterError("bandpass center frequency must be positive");
    if (!(fractional_bandwidth > 0.0 && fractional_bandwidth < 2.0))
        throw ParameterError("fractional bandwidth must lie in (0, 2)");
}

double BandpassSpec::gain(double f) const {
    if (f == 0.0) return 0.0;
    const double half = 0.5 * fractional_bandwidth * center_freq;
    const double s2 = half * half / (2.0 * std::log(2.0));
    const double d = std::abs(f) - center_freq;
    return std::exp(-d * d / (2.0 * s2));
}

void TnaSpec::validate() const {
    if (!(min_db <= max_db)) throw ParameterError("TNA min_db must not exceed max_db");
    if (!(probability >= 0.0 && probability <= 1.0))
        throw ParameterError("TNA probability must lie in [0, 1]");
}

void BeamformGrid::validate(const TransducerSpec& tx) const {
    if (nx < 1 || nz < 1) throw ParameterError("beamform grid must have at least one pixel");
    if (!(dx > 0.0) || !(dz > 0.0)) throw ParameterError("beamform grid spacing must be positive");
    if (!(c0 >= 1400.0 && c0 <= 1700.0)) throw ParameterError("c0 must lie in [1400, 1700] m/s");
    const double lo = tx.element_x(0) - 0.5 * tx.pitch;
    const double hi = tx.element_x(tx.n_elements - 1) + 0.5 * tx.pitch;
    const double tol = 1e-9;
    if (lateral(0) < lo - tol || lateral(nx - 1) > hi + tol)
        throw ParameterError("beamform grid extends laterally beyond the array");
    if (z0 < -tol) throw ParameterError("beamform grid starts above the transducer face");
}

BeamformGrid BeamformGrid::aperture_default(const TransducerSpec& tx, double c0) {
    BeamformGrid g;
    const double aperture = tx.n_elements * tx.pitch;
    g.nx = 256;
    g.nz = 256;
    g.dx = aperture / 256.0;
    g.dz = 30e-3 / 256.0;
    g.x0 = -0.5 * aperture + 0.5 * g.dx;
    g.z0 = 0.5 * g.dz;
    g.c0 = c0;
    return g;
}

BeamformGrid BeamformGrid::from_phantom(const phantom::GridSpec& grid, double c0) {
    BeamformGrid g;
    g.nx = grid.nx;
    g.nz = grid.nz;
    g.dx = grid.dx;
    g.dz = grid.dz;
    g.x0 = grid.lateral(0);
    g.z0 = 0.0;
    g.c0 = c0;
    return g;
}

ChannelData resample(const ChannelData& ch, double target_fs, double band_edge) {
    if (!(ch.fs > 0.0) || !(target_fs > 0.0)) throw ParameterError("sampling rates must be positive");
    if (!(band_edge > 0.0)) throw ParameterError("band edge must be positive");
    const double nyq = 0.5 * std::min(ch.fs, target_fs);
    if (!(nyq > band_edge))
        throw ParameterError("target rate " + std::to_string(target_fs) +
                             " Hz does not exceed twice the band edge");
    if (target_fs == ch.fs) return ch;

    const std::size_t n_in = ch.n_samples();
    const auto n_out = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_in) * target_fs / ch.fs));

    // Kaiser design for 60 dB stopband, transition band_edge .. nyq.
    constexpr double kAtten = 60.0;
    const double beta = 0.1102 * (kAtten - 8.7);
    const double cutoff = 0.5 * (band_edge + nyq);
    const double transition = nyq - band_edge;
    const double half_span = (kAtten - 7.95) / (2.285 * 2.0 * kPi * transition) * 0.5;

    Array2D<double> out(ch.n_elements(), n_out);
    std::vector<double> w;
    for (std::size_t k = 0; k < n_out; ++k) {
        const double pos = static_cast<double>(k) / target_fs * ch.fs; // input sample units
        const auto first = static_cast<long long>(std::ceil(pos - half_span * ch.fs));
        const auto last = static_cast<long long>(std::floor(pos + half_span * ch.fs));
        w.assign(static_cast<std::size_t>(last - first + 1), 0.0);
        double wsum = 0.0;
        for (long long n = first; n <= last; ++n) {
            const double dt = (pos - static_cast<double>(n)) / ch.fs;
            const double v = sinc(2.0 * cutoff * dt) * kaiser(dt / half_span, beta);
            w[static_cast<std::size_t>(n - first)] = v;
            wsum += v;
        }
        // unit DC gain; taps outside the record are still counted
        for (double& v : w) v /= wsum;
        const long long lo = std::max<long long>(first, 0);
        const long long hi = std::min<long long>(last, static_cast<long long>(n_in) - 1);
        for (std::size_t e = 0; e < ch.n_elements(); ++e) {
            const auto row = ch.samples.row(e);
            double acc = 0.0;
            for (long long n = lo; n <= hi; ++n)
                acc += w[static_cast<std::size_t>(n - first)] * row[static_cast<std::size_t>(n)];
            out(e, k) = acc;
        }
    }
    return with_samples(ch, std::move(out), target_fs);
}

ChannelData bandpass(const ChannelData& ch, const BandpassSpec& spec) {
    spec.validate();
    const std::size_t n = ch.n_samples();
    if (n == 0) return ch;
    const std::size_t len = fast_fft_length(2 * n);
    std::vector<double> h(len);
    for (std::size_t k = 0; k < len; ++k) h[k] = spec.gain(bin_frequency(k, len, ch.fs));

    Array2D<double> out(ch.n_elements(), n);
    std::vector<cdouble> buf(len);
    for (std::size_t e = 0; e < ch.n_elements(); ++e) {
        const auto row = ch.samples.row(e);
        std::fill(buf.begin(), buf.end(), cdouble{});
        for (std::size_t i = 0; i < n; ++i) buf[i] = row[i];
        fft_inplace(buf, false);
        for (std::size_t k = 0; k < len; ++k) buf[k] *= h[k];
        fft_inplace(buf, true);
        for (std::size_t i = 0; i < n; ++i) out(e, i) = buf[i].real();
    }
    return with_samples(ch, std::move(out), ch.fs);
}

ChannelData add_noise(const ChannelData& ch, double level_db, double pulse_rms_value,
                      std::uint64_t noise_seed) {
    if (!(pulse_rms_value > 0.0)) throw ParameterError("pulse RMS must be positive");
    const double sigma = pulse_rms_value * std::pow(10.0, level_db / 20.0);
    ChannelData out = ch;
    Rng rng(noise_seed);
    for (double& v : out.samples) v += sigma * rng.normal();
    return out;
}

ChannelData apply_tna(const ChannelData& ch, const TnaSpec& spec, double pulse_rms_value,
                      std::uint64_t seed, TnaDraw* draw) {
    spec.validate();
    if (!(pulse_rms_value > 0.0)) throw ParameterError("pulse RMS must be positive");
    // All three draws happen unconditionally so the stream layout is fixed.
    Rng rng(seed);
    TnaDraw d;
    d.applied = rng.bernoulli(spec.probability);
    d.level_db = rng.uniform(spec.min_db, spec.max_db);
    d.noise_seed = rng.next_u64();
    if (!d.applied) d.level_db = 0.0;
    if (draw) *draw = d;
    if (!d.applied) return ch;
    return add_noise(ch, d.level_db, pulse_rms_value, d.noise_seed);
}

ChannelData align_t0(const ChannelData& ch, double t0) {
    const double rel = (t0 - ch.start_time) * ch.fs;
    if (rel < -1e-6) throw ParameterError("t0 precedes the start of the recording");
    const auto skip = static_cast<std::size_t>(std::max(0.0, std::ceil(rel - 1e-9)));
    if (skip >= ch.n_samples())
        throw ParameterError("t0 lies beyond the end of the recording");
    if (skip == 0) return ch;
    const std::size_t n = ch.n_samples() - skip;
    Array2D<double> out(ch.n_elements(), n);
    for (std::size_t e = 0; e < ch.n_elements(); ++e) {
        const auto row = ch.samples.row(e);
        std::copy(row.begin() + static_cast<std::ptrdiff_t>(skip), row.end(), out.row(e).begin());
    }
    ChannelData r = with_samples(ch, std::move(out), ch.fs);
    r.start_time = ch.start_time + static_cast<double>(skip) / ch.fs;
    return r;
}

IQChannels analytic_signal(const ChannelData& ch) {
    const std::size_t n = ch.n_samples();
    if (n < 16) throw ParameterError("analytic signal needs at least 16 samples");
    const std::size_t len = fast_fft_length(2 * n);
    IQChannels iq;
    iq.samples = Array2D<cdouble>(ch.n_elements(), n);
    iq.fs = ch.fs;
    iq.t0 = ch.t0;
    iq.start_time = ch.start_time;
    iq.angle_deg = ch.angle_deg;
    iq.c_ref = ch.c_ref;
    iq.tx_freq = ch.tx_freq;
    iq.tone_burst_cycles = ch.tone_burst_cycles;
    iq.tx_first = ch.tx_first;
    iq.tx_last = ch.tx_last;

    std::vector<cdouble> buf(len);
    for (std::size_t e = 0; e < ch.n_elements(); ++e) {
        const auto row = ch.samples.row(e);
        std::fill(buf.begin(), buf.end(), cdouble{});
        for (std::size_t i = 0; i < n; ++i) buf[i] = row[i];
        fft_inplace(buf, false);
        // len is even: keep DC and Nyquist, double positive, drop negative bins
        for (std::size_t k = 1; k < len / 2; ++k) buf[k] *= 2.0;
        for (std::size_t k = len / 2 + 1; k < len; ++k) buf[k] = 0.0;
        fft_inplace(buf, true);
        for (std::size_t i = 0; i < n; ++i) iq.samples(e, i) = buf[i];
    }
    return iq;
}

double pulse_rms(double tx_freq, int cycles) {
    if (!(tx_freq > 0.0) || cycles < 1) throw ParameterError("invalid tone burst parameters");
    const double dur = cycles / tx_freq;
    constexpr int kPoints = 20000;
    double acc = 0.0;
    for (int i = 0; i < kPoints; ++i) {
        const double v = wavesim::tone_burst_value((i + 0.5) / kPoints * dur, tx_freq, cycles);
        acc += v * v;
    }
    return std::sqrt(acc / kPoints);
}

double plane_wave_arrival(const TransducerSpec& tx, double angle_deg, double c_ref, double c0,
                          double x, double z) {
    const double s = std::sin(angle_deg * kPi / 180.0);
    const double x_ref = s >= 0.0 ? tx.element_x(tx.tx_first) : tx.element_x(tx.tx_last);
    const double s0 = std::clamp(c0 * s / c_ref, -1.0, 1.0);
    const double cos0 = std::sqrt(1.0 - s0 * s0);
    return (x - x_ref) * s / c_ref + z * cos0 / c0;
}

IQImage das_beamform(const IQChannels& iq, const TransducerSpec& tx, const BeamformGrid& grid,
                     double f_number) {
    grid.validate(tx);
    if (f_number < 0.0) throw ParameterError("f-number must be non-negative");
    if (iq.n_elements() != static_cast<std::size_t>(tx.n_elements))
        throw ParameterError("channel count does not match the transducer");
    if (!(iq.fs > 0.0)) throw ParameterError("channel sampling rate must be positive");

    TransducerSpec txa = tx;
    txa.tx_first = iq.tx_first;
    txa.tx_last = iq.tx_last;

    IQImage img;
    img.angle_deg = iq.angle_deg;
    img.grid = grid;
    img.pixels = Array2D<cfloat>(grid.nz, grid.nx);

    const std::size_t ne = iq.n_elements();
    const std::size_t ns = iq.n_samples();
    const double offset = 0.5 * iq.tone_burst_cycles / iq.tx_freq - iq.start_time;
    const double inv_c0 = 1.0 / grid.c0;
    std::vector<double> ex(ne);
    for (std::size_t e = 0; e < ne; ++e) ex[e] = tx.element_x(static_cast<int>(e));

    for (std::size_t iz = 0; iz < grid.nz; ++iz) {
        const double z = grid.depth(iz);
        const double half_aperture =
            f_number > 0.0 ? z / (2.0 * f_number) : std::numeric_limits<double>::infinity();
        for (std::size_t ix = 0; ix < grid.nx; ++ix) {
            const double x = grid.lateral(ix);
            const double t_tx =
                plane_wave_arrival(txa, iq.angle_deg, iq.c_ref, grid.c0, x, z) + offset;
            cdouble acc{};
            for (std::size_t e = 0; e < ne; ++e) {
                const double dxe = x - ex[e];
                if (std::abs(dxe) > half_aperture) continue;
                const double t = t_tx + std::sqrt(dxe * dxe + z * z) * inv_c0;
                const double s = t * iq.fs;
                if (!(s >= 0.0)) continue;
                const auto i0 = static_cast<std::size_t>(s);
                if (i0 + 1 >= ns) {
                    if (i0 + 1 == ns && s == static_cast<double>(i0)) acc += iq.samples(e, i0);
                    continue;
                }
                const double f = s - static_cast<double>(i0);
                acc += (1.0 - f) * iq.samples(e, i0) + f * iq.samples(e, i0 + 1);
            }
            img.pixels(iz, ix) = cfloat(static_cast<float>(acc.real()), static_cast<float>(acc.imag()));
        }
    }
    return img;
}

ModelInput stack_model_input(const std::vector<IQImage>& images) {
    if (images.size() != 3) throw ParameterError("model input needs exactly three images");
    std::vector<const IQImage*> order;
    for (const auto& im : images) order.push_back(&im);
    std::stable_sort(order.begin(), order.end(),
                     [](const IQImage* a, const IQImage* b) { return a->angle_deg < b->angle_deg; });
    const std::size_t nz = order[0]->pixels.rows();
    const std::size_t nx = order[0]->pixels.cols();
    for (const auto* im : order)
        if (im->pixels.rows() != nz || im->pixels.cols() != nx)
            throw ParameterError("model input images are not congruent");

    ModelInput in;
    in.nz = nz;
    in.nx = nx;
    in.planes.resize(6 * nz * nx);
    const std::size_t plane = nz * nx;
    for (std::size_t a = 0; a < 3; ++a) {
        in.angles[a] = order[a]->angle_deg;
        float* re = in.planes.data() + (2 * a) * plane;
        float* im = in.planes.data() + (2 * a + 1) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            re[i] = order[a]->pixels[i].real();
            im[i] = order[a]->pixels[i].imag();
        }
    }
    return in;
}

std::vector<IQImage> unstack_model_input(const ModelInput& input, const BeamformGrid& grid) {
    const std::size_t plane = input.nz * input.nx;
    if (input.planes.size() != 6 * plane) throw ParameterError("model input has the wrong size");
    if (grid.nz != input.nz || grid.nx != input.nx)
        throw ParameterError("beamform grid does not match the model input");
    std::vector<IQImage> out(3);
    for (std::size_t a = 0; a < 3; ++a) {
        out[a].angle_deg = input.angles[a];
        out[a].grid = grid;
        out[a].pixels = Array2D<cfloat>(input.nz, input.nx);
        const float* re = input.planes.data() + (2 * a) * plane;
        const float* im = input.planes.data() + (2 * a + 1) * plane;
        for (std::size_t i = 0; i < plane; ++i) out[a].pixels[i] = cfloat(re[i], im[i]);
    }
    return out;
}

std::vector<std::string> plane_labels(const std::array<double, 3>& angles) {
    std::vector<std::string> labels;
    for (double a : angles) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", a);
        labels.push_back(std::string("re(") + buf + ")");
        labels.push_back(std::string("im(") + buf + ")");
    }
    return labels;
}

} // namespace echoset::sigproc
