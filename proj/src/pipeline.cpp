#include "mvps/pipeline.hpp"

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mvps/nn/ops.hpp"
#include "mvps/synthworld.hpp"

namespace mvps::pipe {

namespace {

// Class-id map -> [-1,1] gray replicated to the three channels the condition
// encoder expects. An absent map reads as all sky.
nn::Tensor seg_to_tensor(const img::Image& seg, int h, int w) {
    std::vector<float> v(static_cast<size_t>(3) * h * w, -1.0f);
    if (seg.height == h && seg.width == w && seg.channels >= 1) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float g =
                    seg.at(y, x, 0) / static_cast<float>(synth::kBuilding) * 2.0f - 1.0f;
                for (int c = 0; c < 3; ++c)
                    v[(static_cast<size_t>(c) * h + y) * w + x] = g;
            }
    }
    return nn::Tensor::from_data({1, 3, h, w}, std::move(v));
}

std::vector<fuse::MultiscaleExtractor> make_extractors(nn::ParamStore& ps,
                                                       const PipelineSettings& s) {
    std::vector<fuse::MultiscaleExtractor> v;
    v.reserve(diff::kBranchNames.size());
    for (const char* branch : diff::kBranchNames)
        v.emplace_back(ps, std::string("fuse.extract.") + branch,
                       static_cast<int>(diff::kBranchNames.size()) * s.fusion_channels,
                       s.denoiser.site_channels());
    return v;
}

}  // namespace

PipelineSettings PipelineSettings::from(const data::Config& cfg) {
    PipelineSettings s;
    s.image_height = cfg.get<int>("data.image_height");
    s.k_conditions = cfg.get<int>("data.k_conditions");
    s.attention_n = cfg.get<int>("data.attention_n");
    s.filter = img::parse_resize_filter(cfg.get<std::string>("data.resize_filter"));
    s.codec = cfg.get<std::string>("model.latent_codec");
    s.fusion_channels = cfg.get<int>("model.fusion_channels");
    s.timesteps = cfg.get<int>("train.timesteps");
    s.beta_start = cfg.get<float>("train.beta_start");
    s.beta_end = cfg.get<float>("train.beta_end");

    if (s.k_conditions != 2)
        throw SchemaError(
            "data.k_conditions must be 2 to match the four condition branches");
    // /4 codec, then a stride-8 trunk inside the denoiser
    if (s.image_height <= 0 || s.image_height % 32 != 0)
        throw SchemaError("data.image_height must be a positive multiple of 32");

    s.attention.distance_scale = cfg.get<double>("model.distance_scale");
    s.attention.global_map_size = cfg.get<int>("model.global_map_size");
    s.attention.max_sources = s.attention_n;

    const auto mult = cfg.get<std::vector<int>>("model.channel_multipliers");
    if (mult.size() != s.denoiser.multipliers.size())
        throw SchemaError("model.channel_multipliers must list four stages");
    std::copy(mult.begin(), mult.end(), s.denoiser.multipliers.begin());
    s.denoiser.base_channels = cfg.get<int>("model.base_channels");
    s.denoiser.norm_groups = cfg.get<int>("model.norm_groups");
    s.denoiser.time_dim = cfg.get<int>("model.time_dim");
    s.denoiser.text_vocab = cfg.get<int>("model.text_vocab");
    s.denoiser.text_dim = cfg.get<int>("model.text_dim");
    s.denoiser.latent_channels = diff::make_codec(s.codec)->channels();
    s.denoiser.latent_h = s.image_height / 4;
    s.denoiser.latent_w = s.image_height;  // panoramas are H x 4H

    s.dropout.p_keep_all = cfg.get<double>("train.p_keep_all");
    s.dropout.p_drop_all = cfg.get<double>("train.p_drop_all");
    s.dropout.p_each = cfg.get<double>("train.p_each");
    s.dropout.p_text_empty = cfg.get<double>("train.p_text_empty");
    return s;
}

Model::Model(uint64_t seed, PipelineSettings settings)
    : cfg(std::move(settings)),
      ps(seed),
      schedule(diff::NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)),
      codec(diff::make_codec(cfg.codec)),
      enc_pano(ps, "attn.enc_pano", cfg.attention),
      enc_sat(ps, "attn.enc_sat", cfg.attention),
      local(ps, "attn.local", cfg.attention),
      global(ps, "attn.global", cfg.attention),
      cond_seg(ps, "fuse.seg", cfg.fusion_channels),
      cond_sat(ps, "fuse.sat", cfg.fusion_channels),
      cond_pano(ps, "fuse.pano", cfg.fusion_channels),
      extract(make_extractors(ps, cfg)),
      net(ps, cfg.denoiser) {
    // also enforced by PipelineSettings::from; guards hand-built settings
    if (cfg.k_conditions != 2)
        throw SchemaError("the model wires exactly two panorama branches");
}

ConditionTensors build_conditions(const Model& m, const data::SampleRecord& record,
                                  const data::ConditionSet& cs, bool training) {
    const int h = m.cfg.image_height;
    const int w = 4 * h;
    const int fh = h / 4;  // condition-encoder grid, equal to the latent grid
    const int fw = w / 4;
    const int gh = h / 8;  // attention-trunk grid
    const int gw = w / 8;

    if (static_cast<int>(cs.panos.size()) != m.cfg.k_conditions ||
        cs.drop_mask.size() != cs.panos.size())
        throw SchemaError("condition set does not carry K panorama slots");
    if (cs.satellite_tiled.height != h || cs.satellite_tiled.width != w)
        throw SchemaError("condition set was built at a different image height");

    ConditionTensors out;
    out.prompt = cs.prompt;

    // Score every nearby panorama against the overhead view: a local map per
    // source, and attention-weighted descriptors for the global map.
    const nn::Tensor sat_t = data::image_to_tensor(cs.satellite_tiled);
    const nn::Tensor sat_pooled = m.enc_sat.encode_pooled(sat_t);
    out.sources = data::select_attention_set(record, m.cfg.attention_n, h, m.cfg.filter);

    std::vector<nn::Tensor> descriptors;
    std::vector<attn::RelGeometry> geometry;
    for (const auto& src : out.sources) {
        const nn::Tensor pano_t = data::image_to_tensor(src.image);
        const auto [dist, orient] =
            attn::geo_feature_tensors(geo::geo_feature_maps(src.loc, record.target, gh, gw));
        const nn::Tensor in8 = attn::build_attention_input(m.enc_pano.encode_pooled(pano_t),
                                                           sat_pooled, dist, orient);
        out.locals.push_back(m.local(in8, fh, fw));
        descriptors.push_back(
            attn::attention_descriptor(m.enc_pano.encode(pano_t), out.locals.back()).values);
        geometry.push_back(attn::make_rel_geometry(record.target, src.loc));
    }
    if (!out.sources.empty())
        out.global = m.global(descriptors, geometry,
                              std::vector<bool>(out.sources.size(), false), training);

    // Branch features on the fusion grid. The overhead branch is modulated by
    // the global map (resized to one tile, repeated across the four copies);
    // each panorama branch by its own local map. A record with no panoramas
    // leaves the overhead unmodulated.
    std::vector<nn::Tensor> fused;
    fused.push_back(m.cond_seg(seg_to_tensor(cs.seg, h, w)));
    nn::Tensor f_sat = m.cond_sat(sat_t);
    if (!out.sources.empty()) {
        const nn::Tensor tile = nn::bilinear_resize(out.global.weights, fh, fh);
        f_sat = fuse::hadamard_fuse(f_sat, nn::concat({tile, tile, tile, tile}, 3));
    }
    fused.push_back(f_sat);
    for (int i = 0; i < m.cfg.k_conditions; ++i) {
        nn::Tensor fi = m.cond_pano(data::image_to_tensor(cs.panos[i]));
        if (i < static_cast<int>(out.locals.size()))
            fi = fuse::hadamard_fuse(fi, out.locals[i].upsampled);
        fused.push_back(fi);
    }
    const nn::Tensor c_l = fuse::concat_conditions(fused);

    const bool dropped[4] = {cs.seg_dropped, cs.sat_dropped, cs.drop_mask[0],
                             cs.drop_mask[1]};
    for (size_t b = 0; b < out.bundles.size(); ++b)
        if (!dropped[b]) out.bundles[b] = m.extract[b](c_l);  // empty bundle = dropped
    return out;
}

nn::Tensor target_latent(const Model& m, const data::SampleRecord& record) {
    img::Image pano = img::read_png(record.resolve(record.target_pano_path));
    const int h = m.cfg.image_height;
    if (pano.height != h || pano.width != 4 * h)
        pano = img::resize(pano, h, 4 * h, m.cfg.filter);
    return m.codec->encode(data::image_to_tensor(pano));
}

float train_step(Model& m, nn::AdamW& opt, const data::SampleRecord& record, Rng& rng) {
    data::ConditionSet cs =
        data::select_conditions(record, m.cfg.k_conditions, m.cfg.image_height, m.cfg.filter);
    cs = diff::apply_modality_dropout(cs, m.cfg.dropout, rng);
    const ConditionTensors ct = build_conditions(m, record, cs, /*training=*/true);
    return diff::training_step(m.net, opt, m.schedule, target_latent(m, record), ct.prompt,
                               ct.bundles, rng, record.id);
}

SampleResult sample_panorama(const Model& m, const data::SampleRecord& record,
                             const SampleOptions& opts) {
    const data::ConditionSet cs =
        data::select_conditions(record, m.cfg.k_conditions, m.cfg.image_height, m.cfg.filter);

    SampleResult out;
    out.conditions = build_conditions(m, record, cs, /*training=*/false);

    Rng rng = Rng::substream(opts.seed, "sample.init");
    const auto& d = m.cfg.denoiser;
    const nn::Tensor x_init = nn::randn({1, d.latent_channels, d.latent_h, d.latent_w}, rng);
    const nn::Tensor z = diff::ddim_trajectory(
        diff::cfg_eps(m.net, out.conditions.bundles, out.conditions.prompt, opts.cfg_scale),
        m.schedule, x_init, opts.steps);
    out.image = data::tensor_to_image(m.codec->decode(z));
    return out;
}

nn::AdamWConfig optimizer_config(const data::Config& cfg) {
    nn::AdamWConfig oc;
    oc.lr = cfg.get<float>("train.lr");
    oc.beta1 = cfg.get<float>("train.beta1");
    oc.beta2 = cfg.get<float>("train.beta2");
    oc.eps = cfg.get<float>("train.eps");
    oc.weight_decay = cfg.get<float>("train.weight_decay");
    return oc;
}

void save_run(const std::string& path, const Model& m, const data::Config& cfg,
              const nn::AdamW* opt, const Rng* rng, int64_t step) {
    data::save_checkpoint(
        data::snapshot_state(m.ps, opt, rng, cfg.dump(0), static_cast<uint64_t>(step)), path);
}

RestoredModel open_checkpoint(const std::string& path) {
    RestoredModel r;
    r.data = data::load_checkpoint(path);
    r.config.merge(nlohmann::json::parse(r.data.config_json));
    r.model = std::make_unique<Model>(r.config.get<uint64_t>("seed"),
                                      PipelineSettings::from(r.config));
    data::restore_state(r.data, r.model->ps, nullptr, nullptr);
    return r;
}

}  // namespace mvps::pipe
