#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sfcn/ops.hpp"
#include "sfcn/tape.hpp"
#include "sfcn/tensor.hpp"

namespace sfcn {

// "sibling" is the two-branch detector/classifier; "fcn5cls" is the ablation
// variant with a single (K+1)-way head and no detection branch.
enum class Arch { sibling, fcn5cls };

std::string arch_name(Arch arch);
Arch arch_from_name(const std::string& name);

struct ModelConfig {
    int image_height = 64;
    int image_width = 64;
    int base_channels = 32;
    int blocks_per_module = 9;
    int num_categories = 4;  // K
    Arch arch = Arch::sibling;

    static ModelConfig full_preset();
    static ModelConfig desk_preset();
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Named learnable tensors plus batch-norm running statistics. Names are
// hierarchical (trunk.conv.weight, m2.b0.bn1.scale, det.up1.weight, ...);
// running statistics end in .running_mean / .running_var.
struct Parameters {
    ModelConfig config;
    std::map<std::string, Tensor> items;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return items.count(name) != 0; }

    static bool is_running_stat(const std::string& name);
    // the decayed set: convolution / deconvolution kernels, not biases or BN
    static bool is_bias_like(const std::string& name);
    static bool is_decayed(const std::string& name);

    std::vector<std::string> learnable_names() const;
    std::int64_t learnable_count() const;
};

struct ForwardOutputs {
    Tensor det_probs;       // [2,H,W]: channel 0 = background, 1 = objectness
    Tensor cls_cond_probs;  // [K+1,H,W]: channel 0 = background
};

struct ForwardOptions {
    bool train = false;
    // Name prefixes whose layers are frozen this stage. Frozen BN layers run
    // in eval mode so their running statistics stay bitwise unchanged.
    const std::vector<std::string>* frozen_prefixes = nullptr;
};

bool name_is_frozen(const std::string& name, const std::vector<std::string>* prefixes);

Parameters build(const ModelConfig& config, std::uint64_t seed);

ForwardOutputs forward(Tape& tape, Parameters& params, const Tensor& image,
                       const ForwardOptions& opts = {});

// One residual block: conv3x3 -> BN -> ReLU -> conv3x3 -> BN added onto the
// skip path (identity, or strided 1x1 projection when downsampling), then a
// final ReLU.
Tensor residual_block(Tape& tape, Parameters& params, const std::string& prefix,
                      const Tensor& x, bool downsample, const ForwardOptions& opts = {});

// Detection multi-scale fusion: upsample the module-3 head x2, project the
// module-2 features to 2 channels, and add. Output is [2, H/2, W/2].
Tensor fuse_detection(Tape& tape, const Parameters& params, const Tensor& m3_head,
                      const Tensor& m2_features);

// Every learnable convolution / deconvolution counted once; the documented
// depth accounting (docs/architecture.md) reconstructs the paper-scale
// network from this. 8 * blocks_per_module + 9 for the sibling variant.
int conv_layer_count(const ModelConfig& config);

// Closed-form learnable-parameter count from the architecture table; must
// equal Parameters::learnable_count() exactly.
std::int64_t closed_form_param_count(const ModelConfig& config);

}  // namespace sfcn
