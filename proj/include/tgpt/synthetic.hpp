#pragma once

#include "tgpt/timeseries.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace tgpt::synthetic {

/// Parameter ranges of the trend + seasonality + noise family (uniform draws).
struct FamilyParams {
    double level_min = 50.0, level_max = 150.0;
    double slope_min = -0.3, slope_max = 0.6;
    double amplitude_min = 4.0, amplitude_max = 15.0;
    double second_harmonic = 0.0;  ///< relative amplitude of the 2nd seasonal harmonic
    double noise_min = 0.5, noise_max = 2.0;
    std::size_t season_length = 12;
};

/// Target family used for transfer checks: sharper seasonal profile, steeper trends, more noise.
inline FamilyParams shifted_family() {
    FamilyParams p;
    p.slope_min = 0.2;
    p.slope_max = 1.2;
    p.amplitude_min = 10.0;
    p.amplitude_max = 25.0;
    p.second_harmonic = 0.6;
    p.noise_min = 1.0;
    p.noise_max = 3.0;
    return p;
}

/// Draws one series from the family.
inline std::vector<double> draw_series(const FamilyParams& p, std::size_t length, std::mt19937_64& rng) {
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const double level = uniform(p.level_min, p.level_max);
    const double slope = uniform(p.slope_min, p.slope_max);
    const double amplitude = uniform(p.amplitude_min, p.amplitude_max);
    const double phase = uniform(0.0, 2.0 * std::numbers::pi);
    const double sigma = uniform(p.noise_min, p.noise_max);
    std::normal_distribution<double> noise(0.0, sigma);
    const double w = 2.0 * std::numbers::pi / static_cast<double>(p.season_length);
    std::vector<double> y(length);
    for (std::size_t t = 0; t < length; ++t) {
        const double tt = static_cast<double>(t);
        const double season = std::sin(w * tt + phase) + p.second_harmonic * std::sin(2.0 * w * tt + 2.0 * phase);
        y[t] = level + slope * tt + amplitude * season + noise(rng);
    }
    return y;
}

/// @p n_series monthly series named "<prefix><k>" starting January 2000.
inline Dataset family_dataset(const FamilyParams& p, std::size_t n_series, std::size_t length, std::uint64_t seed,
                              const std::string& prefix = "s", DatasetRole role = DatasetRole::Source) {
    std::mt19937_64 rng(seed);
    std::vector<TimeSeries> series;
    series.reserve(n_series);
    const auto freq = Frequency::monthly();
    const auto start = *parse_timestamp("2000-01", freq.kind());
    for (std::size_t k = 0; k < n_series; ++k) series.emplace_back(prefix + std::to_string(k), start, freq, draw_series(p, length, rng));
    return Dataset(freq, std::move(series), role);
}

/// Constants, linear trends and sinusoids in equal thirds (noise free).
inline Dataset overfit_corpus(std::size_t n_series, std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    std::vector<TimeSeries> series;
    const auto freq = Frequency::monthly();
    for (std::size_t k = 0; k < n_series; ++k) {
        std::vector<double> y(length);
        const double level = uniform(-50.0, 50.0);
        switch (k % 3) {
            case 0:
                for (double& v : y) v = level;
                break;
            case 1: {
                const double slope = uniform(-2.0, 2.0);
                for (std::size_t t = 0; t < length; ++t) y[t] = level + slope * static_cast<double>(t);
                break;
            }
            default: {
                const double amplitude = uniform(1.0, 10.0);
                const double phase = uniform(0.0, 2.0 * std::numbers::pi);
                for (std::size_t t = 0; t < length; ++t)
                    y[t] = level + amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 12.0 + phase);
            }
        }
        series.emplace_back("c" + std::to_string(k), 0, freq, std::move(y));
    }
    return Dataset(freq, std::move(series));
}

/// Series of i.i.d. Gaussian noise around a known constant mean.
inline Dataset gaussian_noise_dataset(std::size_t n_series, std::size_t length, double mean, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(mean, sigma);
    std::vector<TimeSeries> series;
    const auto freq = Frequency::monthly();
    for (std::size_t k = 0; k < n_series; ++k) {
        std::vector<double> y(length);
        for (double& v : y) v = noise(rng);
        series.emplace_back("n" + std::to_string(k), 0, freq, std::move(y));
    }
    return Dataset(freq, std::move(series));
}

}  // namespace tgpt::synthetic
