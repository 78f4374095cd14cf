#include "echoset/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

namespace echoset {
namespace {

struct AlignedBuffer {
    explicit AlignedBuffer(std::size_t n)
        : ptr(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))) {}
    ~AlignedBuffer() { fftw_free(ptr); }
    AlignedBuffer(const AlignedBuffer&) = delete;
    AlignedBuffer& operator=(const AlignedBuffer&) = delete;
    fftw_complex* ptr;
};

class PlanCache {
public:
    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

    fftw_plan get(std::size_t n, bool inverse) {
        std::lock_guard lock(mutex_);
        const auto key = std::make_pair(n, inverse);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        AlignedBuffer in(n), out(n);
        // FFTW_ESTIMATE never measures, so the chosen plan (and therefore the
        // exact floating-point result) depends only on n and alignment.
        fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), in.ptr, out.ptr,
                                          inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                          FFTW_ESTIMATE);
        plans_.emplace(key, plan);
        return plan;
    }

private:
    std::mutex mutex_;
    std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;
};

PlanCache& cache() {
    static PlanCache instance;
    return instance;
}

} // namespace

void fft_inplace(std::vector<cdouble>& data, bool inverse) {
    const std::size_t n = data.size();
    if (n == 0) return;
    fftw_plan plan = cache().get(n, inverse);
    AlignedBuffer in(n), out(n);
    std::copy(data.begin(), data.end(), reinterpret_cast<cdouble*>(in.ptr));
    fftw_execute_dft(plan, in.ptr, out.ptr);
    const auto* result = reinterpret_cast<const cdouble*>(out.ptr);
    const double scale = inverse ? 1.0 / static_cast<double>(n) : 1.0;
    for (std::size_t i = 0; i < n; ++i) data[i] = result[i] * scale;
}

std::size_t fast_fft_length(std::size_t n) {
    if (n <= 1) return 1;
    for (std::size_t m = n;; ++m) {
        std::size_t r = m;
        for (std::size_t p : {2u, 3u, 5u})
            while (r % p == 0) r /= p;
        if (r == 1) return m;
    }
}

double bin_frequency(std::size_t k, std::size_t n, double fs) {
    const auto kk = static_cast<double>(k);
    const auto nn = static_cast<double>(n);
    return (k <= n / 2 ? kk : kk - nn) * fs / nn;
}

} // namespace echoset
