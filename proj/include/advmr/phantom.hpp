#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advmr/mri.hpp"
#include "advmr/tensor.hpp"

namespace advmr {

struct AnnotationBox {
    int x = 0, y = 0, width = 0, height = 0; // pixel units, y down
    std::string label;
};

// One synthetic slice: anatomy image, simulated coil profiles, pathology-like
// annotation boxes, and an air mask (image exactly 0 there).
struct Phantom {
    Tensor image;           // real [H,W], >= 0
    SensitivityMaps maps;   // [N,H,W]
    std::vector<AnnotationBox> annotations;
    Tensor background_mask; // real 0/1 [H,W]
    std::uint64_t seed = 0;

    int h() const { return image.dim(0); }
    int w() const { return image.dim(1); }
};

// Ellipse-based anatomy with smooth shading plus thin high-contrast bands
// inside the annotation boxes. Deterministic per (size, coils, seed).
// Generation rejects draws whose boxes survive aggressive undersampling too
// well (the target region must be genuinely under-determined) and retries
// with a derived seed.
Phantom generate_phantom(int h, int w, int num_coils, std::uint64_t seed);

} // namespace advmr
