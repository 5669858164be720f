#include "mvps/geoattn.hpp"

#include <algorithm>
#include <cmath>

#include "mvps/errors.hpp"
#include "mvps/nn/ops.hpp"

namespace mvps::attn {

using nn::Tensor;

RelGeometry make_rel_geometry(const geo::GeoLocation& target, const geo::GeoLocation& source) {
    RelGeometry out;
    out.distance_m = geo::haversine_distance(target, source);
    out.bearing_deg = out.distance_m > 0.0 ? geo::compass_bearing(target, source) : 0.0;
    return out;
}

FeatureEncoder::FeatureEncoder(nn::ParamStore& ps, const std::string& name,
                               const GeoAttentionConfig& cfg)
    : s1_(ps, name + ".s1", 3, cfg.encoder_base, 3, 1),
      s2_(ps, name + ".s2", cfg.encoder_base, 2 * cfg.encoder_base, 3, 2),
      s3_(ps, name + ".s3", 2 * cfg.encoder_base, 4 * cfg.encoder_base, 3, 2),
      s4_(ps, name + ".s4", 4 * cfg.encoder_base, 4 * cfg.encoder_base, 3, 2),
      proj_(ps, name + ".proj", 4 * cfg.encoder_base, cfg.encoder_channels, 1, 1, 0) {}

Tensor FeatureEncoder::encode(const Tensor& image) const {
    if (image.ndim() != 4 || image.shape()[1] != 3)
        throw SchemaError("encoder expects B x 3 x H x W input");
    if (image.shape()[2] % 8 != 0 || image.shape()[3] % 8 != 0)
        throw SchemaError("encoder input height and width must be divisible by 8");
    Tensor h = nn::silu(s1_(image));
    h = nn::silu(s2_(h));
    h = nn::silu(s3_(h));
    h = nn::silu(s4_(h));
    return proj_(h);
}

Tensor FeatureEncoder::encode_pooled(const Tensor& image) const {
    const Tensor f = encode(image);
    return nn::concat({nn::max_axis(f, 1, true), nn::mean_axes(f, {1}, true)}, 1);
}

Tensor build_attention_input(const Tensor& pano_pooled, const Tensor& sat_pooled,
                             const Tensor& distance, const Tensor& orientation) {
    const auto check = [&](const Tensor& t, int channels, const char* what) {
        if (t.ndim() != 4 || t.shape()[1] != channels || t.shape()[0] != pano_pooled.shape()[0] ||
            t.shape()[2] != pano_pooled.shape()[2] || t.shape()[3] != pano_pooled.shape()[3])
            throw SchemaError(std::string("build_attention_input: ") + what +
                              " has the wrong shape");
    };
    check(pano_pooled, 2, "pano_pooled");
    check(sat_pooled, 2, "sat_pooled");
    check(distance, 1, "distance");
    check(orientation, 3, "orientation");
    return nn::concat({pano_pooled, sat_pooled, distance, orientation}, 1);
}

std::pair<Tensor, Tensor> geo_feature_tensors(const geo::GeoFeatureMaps& maps) {
    const int h = maps.height, w = maps.width;
    std::vector<float> dist(maps.distance.begin(), maps.distance.end());
    std::vector<float> orient(static_cast<size_t>(3) * h * w);
    for (int i = 0; i < h * w; ++i)
        for (int c = 0; c < 3; ++c)
            orient[static_cast<size_t>(c) * h * w + i] =
                static_cast<float>(maps.orientation[i][c]);
    return {Tensor::from_data({1, 1, h, w}, dist), Tensor::from_data({1, 3, h, w}, orient)};
}

LocalAttention::LocalAttention(nn::ParamStore& ps, const std::string& name,
                               const GeoAttentionConfig& cfg)
    : conv3_(ps, name + ".conv3", 8, cfg.attention_hidden, 3, 1),
      conv5_(ps, name + ".conv5", 8, cfg.attention_hidden, 5, 1),
      mix_(ps, name + ".mix", 2 * cfg.attention_hidden, 1, 1, 1, 0) {}

LocalAttentionMap LocalAttention::operator()(const Tensor& input8, int fusion_h,
                                             int fusion_w) const {
    if (input8.ndim() != 4 || input8.shape()[1] != 8)
        throw SchemaError("local attention expects a B x 8 x H_f x W_f input");
    const int b = input8.shape()[0], h = input8.shape()[2], w = input8.shape()[3];

    const Tensor logits = mix_(nn::concat({conv3_(input8), conv5_(input8)}, 1));
    const Tensor flat = nn::softmax(nn::reshape(logits, {b, h * w}), 1);

    LocalAttentionMap out;
    out.weights = nn::reshape(flat, {b, 1, h, w});
    out.upsampled = nn::bilinear_resize(out.weights, fusion_h, fusion_w);
    return out;
}

AttentionDescriptor attention_descriptor(const Tensor& features,
                                         const LocalAttentionMap& attention) {
    const Tensor& a = attention.weights;
    if (features.ndim() != 4 || a.ndim() != 4 || features.shape()[0] != a.shape()[0] ||
        features.shape()[2] != a.shape()[2] || features.shape()[3] != a.shape()[3])
        throw SchemaError("attention_descriptor: feature and attention grids disagree");
    return {nn::sum_axes(nn::mul(features, nn::broadcast_to(a, features.shape())), {2, 3},
                         false)};
}

GlobalAttention::GlobalAttention(nn::ParamStore& ps, const std::string& name,
                                 const GeoAttentionConfig& cfg)
    : cfg_(cfg),
      affine_(ps, name + ".affine", cfg.encoder_channels + 3,
              cfg.global_grid * cfg.global_grid),
      bn_(ps, name + ".bn", 1) {}

GlobalAttentionMap GlobalAttention::operator()(const std::vector<Tensor>& descriptors,
                                               const std::vector<RelGeometry>& geometry,
                                               const std::vector<bool>& mask,
                                               bool training) const {
    const size_t n = descriptors.size();
    if (n == 0 || geometry.size() != n || mask.size() != n)
        throw SchemaError("global attention: descriptor/geometry/mask lists disagree");
    if (n > static_cast<size_t>(cfg_.max_sources))
        throw SchemaError("global attention: more sources than the configured maximum");
    const size_t kept = static_cast<size_t>(
        std::count(mask.begin(), mask.end(), false));
    if (kept == 0) throw SchemaError("global attention: every descriptor is masked");

    const int b = descriptors[0].shape()[0];
    const int c = cfg_.encoder_channels;

    // augment each descriptor with its relative geometry, stack to B x n x (C+3)
    std::vector<Tensor> rows;
    rows.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        if (descriptors[i].ndim() != 2 || descriptors[i].shape()[0] != b ||
            descriptors[i].shape()[1] != c)
            throw SchemaError("global attention: descriptor " + std::to_string(i) +
                              " has the wrong shape");
        const float d = static_cast<float>(geometry[i].distance_m / cfg_.distance_scale);
        const double br = geo::deg_to_rad(geometry[i].bearing_deg);
        std::vector<float> g;
        for (int bi = 0; bi < b; ++bi) {
            g.push_back(d);
            g.push_back(static_cast<float>(std::sin(br)));
            g.push_back(static_cast<float>(std::cos(br)));
        }
        const Tensor aug =
            nn::concat({descriptors[i], Tensor::from_data({b, 3}, g)}, 1);
        rows.push_back(nn::reshape(aug, {b, 1, c + 3}));
    }
    const Tensor stacked = nn::concat(rows, 1);  // B x n x (C+3)

    // masked mean: constant per-slot weights 1/kept or 0
    std::vector<float> wv;
    wv.reserve(b * n);
    for (int bi = 0; bi < b; ++bi)
        for (size_t i = 0; i < n; ++i)
            wv.push_back(mask[i] ? 0.0f : 1.0f / static_cast<float>(kept));
    const Tensor weights = nn::broadcast_to(
        Tensor::from_data({b, static_cast<int>(n), 1}, wv), stacked.shape());
    const Tensor pooled = nn::sum_axes(nn::mul(stacked, weights), {1}, false);  // B x (C+3)

    const int s = cfg_.global_grid;
    const Tensor grid = nn::reshape(affine_(pooled), {b, 1, s, s});
    const Tensor up = nn::bilinear_resize(grid, cfg_.global_map_size, cfg_.global_map_size);
    return {nn::sigmoid(bn_(up, training))};
}

img::Image attention_heatmap(const Tensor& map) {
    if (map.ndim() != 4 || map.shape()[0] < 1 || map.shape()[1] != 1)
        throw SchemaError("attention_heatmap expects a B x 1 x H x W map");
    const int h = map.shape()[2], w = map.shape()[3];
    const std::vector<float>& v = map.values();
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.begin() + h * w);
    const float lo = *lo_it, hi = *hi_it;
    img::Image out(h, w, 1);
    for (int i = 0; i < h * w; ++i) {
        const float t = hi > lo ? (v[i] - lo) / (hi - lo) : 0.5f;
        out.data[i] = static_cast<uint8_t>(std::lround(255.0f * t));
    }
    return out;
}

}  // namespace mvps::attn
