#pragma once
// Geospatial attention: per-source local attention maps over panorama
// features, attention-weighted channel descriptors, and a global attention
// map over the overhead view.

#include <string>
#include <utility>
#include <vector>

#include "mvps/geo.hpp"
#include "mvps/image.hpp"
#include "mvps/nn/module.hpp"

namespace mvps::attn {

struct GeoAttentionConfig {
    int encoder_base = 16;      // width of the trunk's first stage
    int encoder_channels = 32;  // C after the learnable projection
    int attention_hidden = 16;  // channels of each parallel attention conv
    double distance_scale = 100.0;
    int global_grid = 32;      // side of the learned weight grid
    int global_map_size = 256;  // side of the upsampled output map
    int max_sources = 20;       // N, most panoramas considered at once
};

// Probability distribution over feature-grid positions, kept alongside a
// bilinearly upsampled copy at the resolution the fusion stage works at.
struct LocalAttentionMap {
    nn::Tensor weights;    // B x 1 x H_f x W_f, sums to 1 per sample
    nn::Tensor upsampled;  // B x 1 x fusion_h x fusion_w
};

struct GlobalAttentionMap {
    nn::Tensor weights;  // B x 1 x S x S, entries strictly in (0,1)
};

struct AttentionDescriptor {
    nn::Tensor values;  // B x C, one Frobenius inner product per channel
};

// Relative placement of a source panorama as seen from the target.
struct RelGeometry {
    double distance_m = 0.0;
    double bearing_deg = 0.0;  // compass bearing target -> source
};

// Coincident locations get bearing 0.
RelGeometry make_rel_geometry(const geo::GeoLocation& target, const geo::GeoLocation& source);

// Four-stage CNN trunk (stride product 8) with a learnable 1x1 projection.
// Shared between panorama and overhead inputs; overhead features are resized
// to the panorama grid downstream.
class FeatureEncoder {
public:
    FeatureEncoder(nn::ParamStore& ps, const std::string& name, const GeoAttentionConfig& cfg);

    // B x 3 x H x W (H, W divisible by 8) -> B x C x H/8 x W/8.
    nn::Tensor encode(const nn::Tensor& image) const;
    // Channel (max, mean) reduction of encode: B x 2 x H/8 x W/8.
    nn::Tensor encode_pooled(const nn::Tensor& image) const;

private:
    nn::Conv2d s1_, s2_, s3_, s4_, proj_;
};

// Fixed channel order: pano max, pano mean, sat max, sat mean, distance,
// orientation east, north, up. All inputs at the same B x * x H_f x W_f.
nn::Tensor build_attention_input(const nn::Tensor& pano_pooled, const nn::Tensor& sat_pooled,
                                 const nn::Tensor& distance, const nn::Tensor& orientation);

// Geometric conditioning maps as tensors on the feature grid:
// (distance 1x1xHxW, orientation 1x3xHxW with east/north/up channels).
std::pair<nn::Tensor, nn::Tensor> geo_feature_tensors(const geo::GeoFeatureMaps& maps);

// Two parallel convolutions (3x3 and 5x5) over the 8-channel input, channel
// concat, 1x1 mix to one logit per position, softmax over all positions.
// All-zero parameters give the uniform map.
class LocalAttention {
public:
    LocalAttention(nn::ParamStore& ps, const std::string& name, const GeoAttentionConfig& cfg);

    LocalAttentionMap operator()(const nn::Tensor& input8, int fusion_h, int fusion_w) const;

private:
    nn::Conv2d conv3_, conv5_, mix_;
};

// value_c = sum_{h,w} F[h,w,c] * A[h,w]; a convex combination per channel.
AttentionDescriptor attention_descriptor(const nn::Tensor& features,
                                         const LocalAttentionMap& attention);

// Masked mean over augmented descriptors (descriptor ++ scaled distance,
// bearing sine/cosine), learned affine to a global_grid^2 map, bilinear
// upsample to global_map_size, batch norm, sigmoid.
class GlobalAttention {
public:
    GlobalAttention(nn::ParamStore& ps, const std::string& name, const GeoAttentionConfig& cfg);

    // descriptors[i]: B x C; mask[i] true marks a padded slot to ignore.
    // Throws SchemaError when every slot is masked or sizes disagree.
    GlobalAttentionMap operator()(const std::vector<nn::Tensor>& descriptors,
                                  const std::vector<RelGeometry>& geometry,
                                  const std::vector<bool>& mask, bool training) const;

private:
    GeoAttentionConfig cfg_;
    nn::Linear affine_;
    nn::BatchNorm2d bn_;
};

// Min-max normalized single-channel heatmap for PNG export. Constant maps
// come out mid-gray.
img::Image attention_heatmap(const nn::Tensor& map);

}  // namespace mvps::attn
