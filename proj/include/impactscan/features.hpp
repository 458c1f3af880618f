#pragma once

#include <array>
#include <string_view>

#include "impactscan/raster.hpp"
#include "impactscan/simd/kernels.hpp"

namespace impactscan {

// Bump whenever a feature definition changes; models record the version they were fit with.
inline constexpr int kFeatureSetVersion = 1;
inline constexpr std::size_t kFeatureCount = 5;
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "mean_intensity", "intensity_std", "disc_annulus_contrast", "p5_contrast", "gradient_energy"};

using FeatureVector = std::array<double, kFeatureCount>;

// mean_intensity        mean pixel value
// intensity_std         population standard deviation
// disc_annulus_contrast |mean(center disc) - mean(annulus)|, disc radius size/5,
//                       annulus out to radius size/2
// p5_contrast           mean minus the 5th percentile (1024-bin histogram, linear within a bin)
// gradient_energy       mean squared forward difference, both axes
FeatureVector window_features(const WindowView& w, const simd::KernelTable& kernels = simd::active_kernels());

}  // namespace impactscan
