#pragma once
// End-to-end assembly: geospatial attention over nearby panoramas, condition
// fusion, and the controlled denoiser, built from one config tree over one
// parameter store so the whole model checkpoints (and reloads) as a unit.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mvps/checkpoint.hpp"
#include "mvps/config.hpp"
#include "mvps/dataio.hpp"
#include "mvps/diffcore.hpp"
#include "mvps/fusion.hpp"
#include "mvps/geoattn.hpp"
#include "mvps/image.hpp"
#include "mvps/nn/module.hpp"
#include "mvps/rng.hpp"

namespace mvps::pipe {

// The config tree flattened into the handful of values the model is built
// from. `from` validates what the wiring requires (four condition branches,
// a panorama height the stride-8 trunks and the codec can both divide).
struct PipelineSettings {
    int image_height = 32;  // panoramas and the tiled overhead are H x 4H
    int k_conditions = 2;
    int attention_n = 20;
    img::ResizeFilter filter = img::ResizeFilter::Bilinear;
    std::string codec = "s2d48";
    int fusion_channels = 128;
    int timesteps = 1000;
    float beta_start = 1e-4f;
    float beta_end = 0.02f;
    attn::GeoAttentionConfig attention;
    diff::DenoiserConfig denoiser;  // latent dims derived from image_height
    diff::DropoutPolicy dropout;

    static PipelineSettings from(const data::Config& cfg);
};

// Every learnable lives in `ps`; construction is deterministic in
// (seed, settings). The two attention trunks score context, the condition
// encoders and extractors shape it into per-branch injection bundles, and
// the denoiser consumes them.
struct Model {
    Model(uint64_t seed, PipelineSettings settings);

    PipelineSettings cfg;
    nn::ParamStore ps;
    diff::NoiseSchedule schedule;
    std::unique_ptr<diff::LatentCodec> codec;

    attn::FeatureEncoder enc_pano;  // attention trunk, panorama side
    attn::FeatureEncoder enc_sat;   // attention trunk, overhead side
    attn::LocalAttention local;
    attn::GlobalAttention global;

    fuse::ConditionEncoder cond_seg;
    fuse::ConditionEncoder cond_sat;
    fuse::ConditionEncoder cond_pano;  // shared by both panorama slots
    std::vector<fuse::MultiscaleExtractor> extract;  // kBranchNames order
    diff::Denoiser net;
};

// Conditioning for one sample, plus the attention maps that produced it.
// `sources` is the full attention set (ascending distance); `locals` aligns
// with it. The global map is left empty when the record has no panoramas.
struct ConditionTensors {
    diff::BranchBundles bundles;
    std::string prompt;
    std::vector<data::AttentionSource> sources;
    std::vector<attn::LocalAttentionMap> locals;
    attn::GlobalAttentionMap global;
};

// Runs attention and fusion for one record. `conditions` is authoritative
// for dropout: zeroed images feed the condition encoders and set flags, and
// a dropped branch contributes an empty (all-zero) injection bundle.
ConditionTensors build_conditions(const Model& m, const data::SampleRecord& record,
                                  const data::ConditionSet& conditions, bool training);

// Encodes the record's ground-truth panorama into the codec latent.
nn::Tensor target_latent(const Model& m, const data::SampleRecord& record);

// One optimization step on one record: modality dropout, condition build,
// then a noise-prediction step on the target latent.
float train_step(Model& m, nn::AdamW& opt, const data::SampleRecord& record, Rng& rng);

struct SampleOptions {
    int steps = 50;
    float cfg_scale = 7.5f;
    uint64_t seed = 0;
};

struct SampleResult {
    img::Image image;  // H x 4H x 3
    ConditionTensors conditions;
};

// Deterministic DDIM synthesis of the target panorama from the record's
// conditions. The initial latent comes from a substream of `opts.seed`.
SampleResult sample_panorama(const Model& m, const data::SampleRecord& record,
                             const SampleOptions& opts);

// Optimizer settings from the config tree.
nn::AdamWConfig optimizer_config(const data::Config& cfg);

// Full training state with the config tree embedded, so a checkpoint is
// sufficient to rebuild the model it came from.
void save_run(const std::string& path, const Model& m, const data::Config& cfg,
              const nn::AdamW* opt, const Rng* rng, int64_t step);

// Rebuilds the saved model shell (config -> settings -> Model) and hands
// back the raw checkpoint; restore optimizer/rng state with
// data::restore_state once those objects exist.
struct RestoredModel {
    data::Config config;
    std::unique_ptr<Model> model;
    data::CheckpointData data;
};
RestoredModel open_checkpoint(const std::string& path);

}  // namespace mvps::pipe
