#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advmr/mri.hpp"
#include "advmr/tape.hpp"
#include "advmr/tensor.hpp"

namespace advmr {

enum class ModelKind { zero_filled, unet, varnet };

const char* kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& name);

struct UNetConfig {
    int top_channels = 8;
    int depth = 3; // number of pooling stages
    int crop = 0;  // center-crop the output to crop x crop; 0 keeps full size
};

struct VarNetConfig {
    int cascades = 4;
    int unet_top_channels = 6;
    int unet_depth = 2;
    double dc_weight_init = 1.0;
    int crop = 0;
};

// A reconstruction operator: either the parameter-free zero-filled baseline,
// an image-space de-aliasing UNet applied to it, or an unrolled cascade
// alternating data consistency with a learned k-space refinement.
// Parameters are named real tensors in a fixed registration order.
struct ReconOperator {
    ModelKind kind = ModelKind::zero_filled;
    UNetConfig ucfg;
    VarNetConfig vcfg;
    std::vector<std::string> param_names;
    std::vector<Tensor> params;

    int find_param(const std::string& name) const; // -1 when absent
    std::int64_t num_scalars() const;
};

ReconOperator make_zero_filled(int crop = 0);
ReconOperator make_unet(const UNetConfig& cfg, std::uint64_t seed);
ReconOperator make_varnet(const VarNetConfig& cfg, std::uint64_t seed);

// Parameters registered on a tape, in ReconOperator order.
struct ModelVars {
    std::vector<Var> params;
};

ModelVars register_params(Tape& t, const ReconOperator& m, bool requires_grad);

// End-to-end differentiable forward map from masked k-space [N,H,W] to the
// real output image. mask is required by the cascade model (data
// consistency), maps by the cascade model's coil reduce/expand steps; the
// other kinds ignore what they don't use.
Var model_forward(Tape& t, const ReconOperator& m, const ModelVars& vars, Var k_masked,
                  const SamplingMask* mask, const SensitivityMaps* maps);

// Convenience evaluation on a throwaway tape.
Tensor reconstruct(const ReconOperator& m, const MultiCoilKSpace& k_masked, const SamplingMask* mask,
                   const SensitivityMaps* maps);

// Single-file checkpoint: magic + version + JSON header (kind, config,
// tensor names/shapes, precision) + raw little-endian payload + CRC32.
// Roundtrips bitwise.
void save_checkpoint(const std::string& path, const ReconOperator& m);
ReconOperator load_checkpoint(const std::string& path);

} // namespace advmr
