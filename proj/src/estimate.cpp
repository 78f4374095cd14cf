#include "echoset/estimate.hpp"

#include "echoset/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace echoset::estimate {

using phantom::Tissue;

void SweepSpec::validate(const wavesim::TransducerSpec& tx) const {
    if (!(c_min < c_max)) throw ParameterError("sweep c_min must be below c_max");
    if (!(c_step > 0.0)) throw ParameterError("sweep step must be positive");
    if (!(c_min >= 1400.0 && c_max <= 1700.0))
        throw ParameterError("sweep range must lie within [1400, 1700] m/s");
    if (!(roi.x_min < roi.x_max) || !(roi.z_min < roi.z_max) || roi.z_min < 0.0)
        throw ParameterError("ROI bounds are inconsistent");
    if (roi_nx < 2 || roi_nz < 2) throw ParameterError("ROI needs at least 2x2 pixels");
    if (!(reference_speed > 0.0)) throw ParameterError("reference speed must be positive");
    if (equalize_window < 0.0) throw ParameterError("equalization window must be non-negative");
    const double lo = tx.element_x(0);
    const double hi = tx.element_x(tx.n_elements - 1);
    if (roi.x_min < lo || roi.x_max > hi) throw ParameterError("ROI lies outside the array");
}

std::vector<double> SweepSpec::candidates() const {
    std::vector<double> c;
    const auto n = static_cast<std::size_t>(std::floor((c_max - c_min) / c_step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) c.push_back(c_min + static_cast<double>(i) * c_step);
    return c;
}

sigproc::IQChannels equalize_power(const sigproc::IQChannels& iq, double window) {
    if (!(window > 0.0)) throw ParameterError("equalization window must be positive");
    sigproc::IQChannels out = iq;
    const std::size_t n = iq.n_samples();
    const auto half = static_cast<std::size_t>(0.5 * window * iq.fs);
    std::vector<double> cum(n + 1);
    for (std::size_t e = 0; e < iq.n_elements(); ++e) {
        cum[0] = 0.0;
        for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + std::norm(iq.samples(e, i));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t lo = i > half ? i - half : 0;
            const std::size_t hi = std::min(n, i + half + 1);
            const double power = (cum[hi] - cum[lo]) / static_cast<double>(hi - lo);
            out.samples(e, i) = power > 0.0 ? iq.samples(e, i) / std::sqrt(power) : 0.0;
        }
    }
    return out;
}

double speckle_brightness(const std::vector<sigproc::IQChannels>& shots,
                          const wavesim::TransducerSpec& tx, const SweepSpec& sweep, double c0) {
    if (shots.empty()) throw ParameterError("speckle brightness needs at least one shot");
    const double scale = c0 / sweep.reference_speed;
    sigproc::BeamformGrid g;
    g.nx = sweep.roi_nx;
    g.nz = sweep.roi_nz;
    g.x0 = sweep.roi.x_min;
    g.dx = (sweep.roi.x_max - sweep.roi.x_min) / static_cast<double>(g.nx - 1);
    g.z0 = sweep.roi.z_min * scale;
    g.dz = (sweep.roi.z_max - sweep.roi.z_min) * scale / static_cast<double>(g.nz - 1);
    g.c0 = c0;
    Array2D<std::complex<double>> sum(g.nz, g.nx);
    for (const auto& iq : shots) {
        const auto img = sigproc::das_beamform(iq, tx, g);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += std::complex<double>(img.pixels[i]);
    }
    double acc = 0.0;
    for (const auto& v : sum) acc += std::abs(v);
    return acc / static_cast<double>(sum.size());
}

SweepResult pick_peak(std::vector<double> speeds, std::vector<double> brightness) {
    SweepResult r;
    r.speeds = std::move(speeds);
    r.brightness = std::move(brightness);
    const auto& b = r.brightness;
    if (b.size() < 3 || b.size() != r.speeds.size()) {
        r.reason = "sweep needs at least three candidates";
        return r;
    }
    const auto [mn, mx] = std::minmax_element(b.begin(), b.end());
    if (!(*mx > 0.0)) {
        r.reason = "no signal in ROI";
        return r;
    }
    if (*mx < 1.01 * *mn) {
        r.reason = "flat brightness curve";
        return r;
    }
    const auto k = static_cast<std::size_t>(mx - b.begin());
    if (k == 0 || k + 1 == b.size()) {
        r.reason = "brightness peak on sweep boundary";
        r.c_hat = r.speeds[k];
        return r;
    }
    const double step = r.speeds[k + 1] - r.speeds[k];
    const double denom = b[k - 1] - 2.0 * b[k] + b[k + 1];
    double shift = 0.0;
    if (denom < 0.0) shift = std::clamp(0.5 * (b[k - 1] - b[k + 1]) / denom, -0.5, 0.5);
    r.c_hat = r.speeds[k] + shift * step;
    r.determinate = true;
    return r;
}

SweepResult speckle_brightness_sweep(const std::vector<sigproc::IQChannels>& shots,
                                     const wavesim::TransducerSpec& tx, const SweepSpec& sweep) {
    sweep.validate(tx);
    std::vector<sigproc::IQChannels> eq;
    for (const auto& iq : shots)
        eq.push_back(sweep.equalize_window > 0.0 ? equalize_power(iq, sweep.equalize_window) : iq);
    auto speeds = sweep.candidates();
    std::vector<double> bright(speeds.size());
    for (std::size_t i = 0; i < speeds.size(); ++i)
        bright[i] = speckle_brightness(eq, tx, sweep, speeds[i]);
    return pick_peak(std::move(speeds), std::move(bright));
}

namespace {

std::vector<Tissue> expected_regions(phantom::ClassKind kind) {
    std::vector<Tissue> t = {Tissue::GlandBackground, Tissue::GlandForeground};
    if (phantom::has_skin(kind)) t.push_back(Tissue::Skin);
    if (auto inc = phantom::inclusion_tissue(kind)) t.push_back(*inc);
    return t;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace

ErrorReport regional_mean_error(const SoundSpeedMap& estimate, const SoundSpeedMap& target,
                                const phantom::TissueLabelMap& labels) {
    if (!estimate.same_shape(target) || !estimate.same_shape(labels.labels))
        throw ParameterError("estimate, target and labels must be congruent");
    if (estimate.empty()) throw ParameterError("empty maps");

    ErrorReport rep;
    rep.class_kind = labels.class_kind;

    struct Acc {
        std::size_t n = 0;
        double est = 0.0, tgt = 0.0, err = 0.0, abs = 0.0;
    };
    std::map<Tissue, Acc> acc;
    double abs_sum = 0.0, err_sum = 0.0;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
        const double e = estimate[i] - target[i];
        auto& a = acc[static_cast<Tissue>(labels.labels[i])];
        ++a.n;
        a.est += estimate[i];
        a.tgt += target[i];
        a.err += e;
        a.abs += std::abs(e);
        abs_sum += std::abs(e);
        err_sum += e;
    }
    const auto n = static_cast<double>(estimate.size());
    rep.pixel_mae = abs_sum / n;
    const double mean_err = err_sum / n;
    double var = 0.0;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
        const double d = estimate[i] - target[i] - mean_err;
        var += d * d;
    }
    rep.pixel_error_std = estimate.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;

    auto regions = expected_regions(labels.class_kind);
    for (const auto& [t, a] : acc)
        if (std::find(regions.begin(), regions.end(), t) == regions.end()) regions.push_back(t);
    std::sort(regions.begin(), regions.end());

    double region_abs = 0.0;
    for (Tissue t : regions) {
        const auto it = acc.find(t);
        if (it == acc.end() || it->second.n == 0) {
            rep.warnings.push_back("region " + std::string(phantom::to_string(t)) +
                                   " is empty and was excluded");
            continue;
        }
        const Acc& a = it->second;
        RegionError r;
        r.tissue = t;
        r.pixels = a.n;
        r.mean_estimate = a.est / static_cast<double>(a.n);
        r.mean_target = a.tgt / static_cast<double>(a.n);
        // Summed per pixel: differencing the two means cancels catastrophically when they agree.
        r.error = a.err / static_cast<double>(a.n);
        r.relative_error = r.error / r.mean_target;
        r.pixel_mae = a.abs / static_cast<double>(a.n);
        region_abs += std::abs(r.error);
        rep.regions.push_back(r);
    }
    if (!rep.regions.empty()) rep.region_mae = region_abs / static_cast<double>(rep.regions.size());
    return rep;
}

nlohmann::json ErrorReport::to_json() const {
    nlohmann::json j;
    j["class"] = phantom::to_string(class_kind);
    j["pixel_mae"] = pixel_mae;
    j["pixel_error_std"] = pixel_error_std;
    j["region_mae"] = region_mae;
    j["regions"] = nlohmann::json::array();
    for (const auto& r : regions) {
        j["regions"].push_back({{"tissue", phantom::to_string(r.tissue)},
                                {"pixels", r.pixels},
                                {"mean_estimate", r.mean_estimate},
                                {"mean_target", r.mean_target},
                                {"error", r.error},
                                {"relative_error", r.relative_error},
                                {"pixel_mae", r.pixel_mae}});
    }
    j["warnings"] = warnings;
    return j;
}

std::vector<ClassSummary> summarize_by_class(const std::vector<ErrorReport>& reports) {
    std::vector<ClassSummary> out;
    for (auto kind : phantom::kAllClasses) {
        std::vector<double> pm, rm;
        ClassSummary s;
        s.class_kind = kind;
        for (const auto& r : reports) {
            if (r.class_kind != kind) continue;
            pm.push_back(r.pixel_mae);
            rm.push_back(r.region_mae);
            for (const auto& reg : r.regions) s.relative_errors.push_back(reg.relative_error);
        }
        if (pm.empty()) continue;
        s.samples = pm.size();
        s.pixel_mae = mean_of(pm);
        s.pixel_mae_std = sample_std(pm);
        s.region_mae = mean_of(rm);
        s.region_mae_std = sample_std(rm);
        out.push_back(std::move(s));
    }
    return out;
}

nlohmann::json to_json(const std::vector<ClassSummary>& summary) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : summary)
        j.push_back({{"class", phantom::to_string(s.class_kind)},
                     {"samples", s.samples},
                     {"pixel_mae", s.pixel_mae},
                     {"pixel_mae_std", s.pixel_mae_std},
                     {"region_mae", s.region_mae},
                     {"region_mae_std", s.region_mae_std},
                     {"relative_errors", s.relative_errors}});
    return j;
}

DepthProfile error_vs_depth(const std::vector<SoundSpeedMap>& estimates,
                            const std::vector<SoundSpeedMap>& targets, std::size_t n_bins) {
    if (estimates.empty()) throw ParameterError("error_vs_depth needs at least one sample");
    if (estimates.size() != targets.size()) throw ParameterError("estimate/target count mismatch");
    if (n_bins == 0) throw ParameterError("n_bins must be positive");
    const std::size_t nz = estimates[0].rows();
    if (n_bins > nz) throw ParameterError("more depth bins than rows");

    DepthProfile prof;
    for (std::size_t b = 0; b <= n_bins; ++b) prof.row_edges.push_back(b * nz / n_bins);
    prof.mean_relative_error.assign(n_bins, 0.0);
    prof.mean_abs_relative_error.assign(n_bins, 0.0);

    for (std::size_t s = 0; s < estimates.size(); ++s) {
        const auto& est = estimates[s];
        const auto& tgt = targets[s];
        if (!est.same_shape(tgt) || est.rows() != nz)
            throw ParameterError("depth profile maps must share one shape");
        for (std::size_t b = 0; b < n_bins; ++b) {
            double sum = 0.0, abs_sum = 0.0;
            std::size_t count = 0;
            for (std::size_t iz = prof.row_edges[b]; iz < prof.row_edges[b + 1]; ++iz)
                for (std::size_t ix = 0; ix < est.cols(); ++ix) {
                    const double rel = (est(iz, ix) - tgt(iz, ix)) / tgt(iz, ix);
                    sum += rel;
                    abs_sum += std::abs(rel);
                    ++count;
                }
            prof.mean_relative_error[b] += sum / static_cast<double>(count);
            prof.mean_abs_relative_error[b] += abs_sum / static_cast<double>(count);
        }
    }
    const auto n = static_cast<double>(estimates.size());
    for (std::size_t b = 0; b < n_bins; ++b) {
        prof.mean_relative_error[b] /= n;
        prof.mean_abs_relative_error[b] /= n;
    }
    return prof;
}

nlohmann::json DepthProfile::to_json() const {
    return {{"row_edges", row_edges},
            {"mean_relative_error", mean_relative_error},
            {"mean_abs_relative_error", mean_abs_relative_error}};
}

TemporalStats temporal_consistency(const std::vector<SoundSpeedMap>& frames, const PixelRoi& roi,
                                   std::optional<double> mad_k) {
    if (frames.size() < 2) throw ParameterError("temporal consistency needs at least two frames");
    if (roi.row0 >= roi.row1 || roi.col0 >= roi.col1) throw ParameterError("empty ROI");
    TemporalStats st;
    for (const auto& f : frames) {
        if (roi.row1 > f.rows() || roi.col1 > f.cols()) throw ParameterError("ROI exceeds frame");
        double s = 0.0;
        for (std::size_t r = roi.row0; r < roi.row1; ++r)
            for (std::size_t c = roi.col0; c < roi.col1; ++c) s += f(r, c);
        st.frame_means.push_back(s / static_cast<double>((roi.row1 - roi.row0) * (roi.col1 - roi.col0)));
    }

    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size() / 2;
        return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    std::vector<double> kept;
    if (mad_k) {
        const double med = median(st.frame_means);
        std::vector<double> dev;
        for (double m : st.frame_means) dev.push_back(std::abs(m - med));
        const double limit = *mad_k * 1.4826 * median(dev);
        for (std::size_t i = 0; i < st.frame_means.size(); ++i)
            if (std::abs(st.frame_means[i] - med) <= limit) {
                st.kept.push_back(i);
                kept.push_back(st.frame_means[i]);
            }
    } else {
        for (std::size_t i = 0; i < st.frame_means.size(); ++i) st.kept.push_back(i);
        kept = st.frame_means;
    }
    st.mean = mean_of(kept);
    st.std = sample_std(kept);
    return st;
}

} // namespace echoset::estimate
