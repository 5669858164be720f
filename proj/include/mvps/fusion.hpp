#pragma once
// Latent-space condition fusion: attention-weighted condition features with
// a skip term, zero-convolution multiscale extraction, and feature
// denormalization blocks feeding the copied denoiser encoders.

#include <string>
#include <vector>

#include "mvps/nn/module.hpp"

namespace mvps::fuse {

// Stacked stride-2 convolutions lifting an image to latent condition
// features at 1/4 spatial resolution. A zero image maps to zero features at
// initialization (all biases start at zero).
class ConditionEncoder {
public:
    ConditionEncoder(nn::ParamStore& ps, const std::string& name, int latent_channels = 128);

    // B x 3 x H x W -> B x latent_channels x H/4 x W/4.
    nn::Tensor operator()(const nn::Tensor& image) const;

private:
    nn::Conv2d c1_, c2_;
};

// H = (1 + M) * F with M in [0,1] broadcast over channels, so an
// all-zero mask passes features through untouched. Throws SchemaError when
// M strays outside [0,1] by more than 1e-6 or shapes disagree.
nn::Tensor hadamard_fuse(const nn::Tensor& features, const nn::Tensor& mask);

// Condition features matched to the four injection sites of a copied
// encoder. Spatial size halves from one level to the next.
struct InjectionBundle {
    std::vector<nn::Tensor> levels;  // 4 tensors, level k at latent_res / 2^k
};

// Channel-concatenates fused condition features (shape-checked).
nn::Tensor concat_conditions(const std::vector<nn::Tensor>& fused);

// Per level: a zero-initialized 1x1 convolution (so the whole bundle is zero
// before training) followed by stride-2 refinement convolutions down to the
// site's resolution.
class MultiscaleExtractor {
public:
    MultiscaleExtractor(nn::ParamStore& ps, const std::string& name, int in_channels,
                        const std::vector<int>& site_channels);

    InjectionBundle operator()(const nn::Tensor& conditions) const;

    const std::vector<int>& site_channels() const { return site_channels_; }

private:
    std::vector<int> site_channels_;
    std::vector<nn::Conv2d> zero_;
    std::vector<std::vector<nn::Conv2d>> down_;
};

// Feature denormalization: out = norm(z) * (1 + conv_g(c)) + conv_b(c) with
// parameter-free per-channel spatial normalization. conv_g / conv_b carry
// random weights and zero bias, so a zero condition leaves out = norm(z)
// exactly while its gradient path stays alive.
class FdnBlock {
public:
    FdnBlock(nn::ParamStore& ps, const std::string& name, int cond_channels,
             int feature_channels);

    nn::Tensor operator()(const nn::Tensor& z, const nn::Tensor& cond) const;

private:
    nn::Conv2d gamma_, beta_;
};

}  // namespace mvps::fuse
