#include "mvps/fusion.hpp"

#include "mvps/errors.hpp"
#include "mvps/nn/ops.hpp"

namespace mvps::fuse {

using nn::Tensor;

ConditionEncoder::ConditionEncoder(nn::ParamStore& ps, const std::string& name,
                                   int latent_channels)
    : c1_(ps, name + ".c1", 3, latent_channels / 2, 3, 2),
      c2_(ps, name + ".c2", latent_channels / 2, latent_channels, 3, 2) {}

Tensor ConditionEncoder::operator()(const Tensor& image) const {
    if (image.ndim() != 4 || image.shape()[1] != 3)
        throw SchemaError("condition encoder expects B x 3 x H x W input");
    if (image.shape()[2] % 4 != 0 || image.shape()[3] % 4 != 0)
        throw SchemaError("condition encoder input height and width must be divisible by 4");
    return c2_(nn::silu(c1_(image)));
}

Tensor hadamard_fuse(const Tensor& features, const Tensor& mask) {
    if (features.ndim() != 4 || mask.ndim() != 4 || mask.shape()[1] != 1 ||
        mask.shape()[0] != features.shape()[0] || mask.shape()[2] != features.shape()[2] ||
        mask.shape()[3] != features.shape()[3])
        throw SchemaError("hadamard_fuse: mask must be B x 1 x H x W matching the features");
    for (float v : mask.values())
        if (v < -1e-6f || v > 1.0f + 1e-6f)
            throw SchemaError("hadamard_fuse: mask value outside [0,1]");
    const Tensor gain = nn::broadcast_to(nn::add_scalar(mask, 1.0f), features.shape());
    return nn::mul(gain, features);
}

Tensor concat_conditions(const std::vector<Tensor>& fused) {
    if (fused.empty()) throw SchemaError("concat_conditions: no condition features");
    for (const Tensor& t : fused)
        if (t.ndim() != 4 || t.shape()[0] != fused[0].shape()[0] ||
            t.shape()[2] != fused[0].shape()[2] || t.shape()[3] != fused[0].shape()[3])
            throw SchemaError("concat_conditions: condition features disagree in shape");
    return fused.size() == 1 ? fused[0] : nn::concat(fused, 1);
}

MultiscaleExtractor::MultiscaleExtractor(nn::ParamStore& ps, const std::string& name,
                                         int in_channels,
                                         const std::vector<int>& site_channels)
    : site_channels_(site_channels) {
    for (size_t k = 0; k < site_channels_.size(); ++k) {
        const std::string lvl = name + ".l" + std::to_string(k);
        zero_.emplace_back(ps, lvl + ".zero", in_channels, site_channels_[k], 1, 1, 0,
                           nn::Init::Zeros);
        std::vector<nn::Conv2d> downs;
        for (size_t d = 0; d < k; ++d)
            downs.emplace_back(ps, lvl + ".down" + std::to_string(d), site_channels_[k],
                               site_channels_[k], 3, 2);
        down_.push_back(std::move(downs));
    }
}

InjectionBundle MultiscaleExtractor::operator()(const Tensor& conditions) const {
    if (conditions.ndim() != 4)
        throw SchemaError("multiscale extractor expects B x C x H x W conditions");
    InjectionBundle bundle;
    for (size_t k = 0; k < zero_.size(); ++k) {
        Tensor x = zero_[k](conditions);
        for (const nn::Conv2d& d : down_[k]) x = d(nn::silu(x));
        bundle.levels.push_back(x);
    }
    return bundle;
}

FdnBlock::FdnBlock(nn::ParamStore& ps, const std::string& name, int cond_channels,
                   int feature_channels)
    : gamma_(ps, name + ".gamma", cond_channels, feature_channels, 3, 1),
      beta_(ps, name + ".beta", cond_channels, feature_channels, 3, 1) {}

Tensor FdnBlock::operator()(const Tensor& z, const Tensor& cond) const {
    if (z.ndim() != 4 || cond.ndim() != 4 || z.shape()[0] != cond.shape()[0] ||
        z.shape()[2] != cond.shape()[2] || z.shape()[3] != cond.shape()[3])
        throw SchemaError("fdn: noise features and condition features are not aligned");
    const Tensor g = gamma_(cond);
    const Tensor b = beta_(cond);
    if (g.shape() != z.shape())
        throw SchemaError("fdn: projected condition channels do not match the features");
    return nn::add(nn::mul(nn::spatial_norm(z), nn::add_scalar(g, 1.0f)), b);
}

}  // namespace mvps::fuse
