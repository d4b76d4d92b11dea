#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <vector>

#include <fftw3.h>

#include "mpsink/error.hpp"

namespace mpsink::detail {

struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
};

struct FftwPlanDeleter {
    void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};

using FftwPlan = std::unique_ptr<fftw_plan_s, FftwPlanDeleter>;

/**
 * Circular convolution with a fixed real filter on a d-dimensional box, via
 * FFTW real transforms. Plans are made with FFTW_ESTIMATE so results do not
 * depend on run-time measurements.
 */
class CircularConvolver {
public:
    CircularConvolver(std::vector<int> shape, const std::vector<double>& filter)
        : shape_(std::move(shape)) {
        real_size_ = 1;
        for (int s : shape_) real_size_ *= static_cast<std::size_t>(s);
        require(filter.size() == real_size_, ErrorCode::ShapeMismatch, "fft filter size mismatch");
        complex_size_ = real_size_ / static_cast<std::size_t>(shape_.back()) *
                        (static_cast<std::size_t>(shape_.back()) / 2 + 1);
        real_.reset(static_cast<double*>(fftw_malloc(sizeof(double) * real_size_)));
        spec_.reset(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * complex_size_)));
        require(real_ && spec_, ErrorCode::Overflow, "fftw_malloc failed");
        const int rank = static_cast<int>(shape_.size());
        forward_.reset(fftw_plan_dft_r2c(rank, shape_.data(), real_.get(), spec_.get(), FFTW_ESTIMATE));
        inverse_.reset(fftw_plan_dft_c2r(rank, shape_.data(), spec_.get(), real_.get(), FFTW_ESTIMATE));

        std::copy(filter.begin(), filter.end(), real_.get());
        fftw_execute(forward_.get());
        filter_spec_.resize(complex_size_);
        const double scale = 1.0 / static_cast<double>(real_size_);
        for (std::size_t i = 0; i < complex_size_; ++i) {
            filter_spec_[i] = std::complex<double>(spec_.get()[i][0], spec_.get()[i][1]) * scale;
        }
    }

    CircularConvolver(const CircularConvolver&) = delete;
    CircularConvolver& operator=(const CircularConvolver&) = delete;

    std::size_t size() const { return real_size_; }

    /// `signal` is overwritten by filter (*) signal.
    void convolve(std::vector<double>& signal) const {
        require(signal.size() == real_size_, ErrorCode::ShapeMismatch, "fft signal size mismatch");
        std::copy(signal.begin(), signal.end(), real_.get());
        fftw_execute(forward_.get());
        for (std::size_t i = 0; i < complex_size_; ++i) {
            const std::complex<double> v =
                std::complex<double>(spec_.get()[i][0], spec_.get()[i][1]) * filter_spec_[i];
            spec_.get()[i][0] = v.real();
            spec_.get()[i][1] = v.imag();
        }
        fftw_execute(inverse_.get());
        std::copy(real_.get(), real_.get() + real_size_, signal.begin());
    }

private:
    std::vector<int> shape_;
    std::size_t real_size_ = 0;
    std::size_t complex_size_ = 0;
    std::unique_ptr<double, FftwFree> real_;
    std::unique_ptr<fftw_complex, FftwFree> spec_;
    FftwPlan forward_;
    FftwPlan inverse_;
    std::vector<std::complex<double>> filter_spec_;
};

} // namespace mpsink::detail
