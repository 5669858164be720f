#pragma once
// Latent diffusion: noise schedule, the 25-block denoising UNet, per-condition
// control branches with zero-convolution residuals, modality dropout, DDIM
// sampling with classifier-free guidance, and the pluggable latent codec.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvps/dataio.hpp"
#include "mvps/errors.hpp"
#include "mvps/fusion.hpp"
#include "mvps/nn/module.hpp"
#include "mvps/nn/ops.hpp"
#include "mvps/rng.hpp"

namespace mvps {

// A training step whose loss went non-finite; the message names the batch.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mvps

namespace mvps::diff {

// Linear-variance forward process. alpha_bar(t) is the cumulative signal
// fraction after t noising steps, so alpha_bar(0) = 1 (identity) and the
// sequence decreases strictly. Denoiser timesteps live in [0, T).
struct NoiseSchedule {
    int T = 1000;
    std::vector<float> betas;        // size T
    std::vector<double> alpha_bars;  // size T+1, alpha_bars[0] = 1

    static NoiseSchedule linear(int T, float beta_start = 1e-4f, float beta_end = 0.02f);
    double alpha_bar(int t) const;  // t in [0, T]

    // x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
    nn::Tensor q_sample(const nn::Tensor& x0, int t, const nn::Tensor& eps) const;
};

// Whitespace tokenizer over an fnv1a64-hashed vocabulary; id 0 is the
// reserved null token and the empty prompt maps to exactly [0].
std::vector<int> tokenize(const std::string& prompt, int vocab);

// Sinusoidal position features for an integer timestep, shape 1 x dim.
nn::Tensor timestep_features(int t, int dim);

struct DenoiserConfig {
    int latent_channels = 48;
    int latent_h = 8;
    int latent_w = 32;
    int base_channels = 64;
    std::array<int, 4> multipliers{1, 2, 3, 4};
    int norm_groups = 32;
    int time_dim = 256;
    int text_vocab = 4096;
    int text_dim = 128;

    std::array<int, 4> channels() const;       // base * multipliers
    std::vector<int> site_channels() const;    // injection widths {c1, c1, c2, c3}
};

// Condition branches, in channel-concat order.
inline constexpr std::array<const char*, 4> kBranchNames{"seg", "sat", "pano_1", "pano_2"};
inline constexpr int kNumBranches = 4;

class ResBlock {
public:
    ResBlock(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch,
             int time_dim, int norm_groups);
    nn::Tensor operator()(const nn::Tensor& x, const nn::Tensor& t_emb) const;

private:
    nn::GroupNormLayer gn1_, gn2_;
    nn::Conv2d conv1_, conv2_;
    nn::Linear time_proj_;
    std::optional<nn::Conv2d> skip_;  // 1x1 when in_ch != out_ch
};

// Sinusoidal features -> two-layer MLP, shared by every block.
class TimeEmbed {
public:
    TimeEmbed(nn::ParamStore& ps, const std::string& name, int time_dim);
    nn::Tensor operator()(int t) const;  // 1 x time_dim

private:
    nn::Linear l1_, l2_;
    int dim_;
};

// Hashed-token embedding table, mean-pooled and projected to the time width.
class TextEmbed {
public:
    TextEmbed(nn::ParamStore& ps, const std::string& name, int vocab, int dim, int time_dim);
    nn::Tensor operator()(const std::string& prompt) const;  // 1 x time_dim

private:
    nn::Tensor table_;
    nn::Linear proj_;
    int vocab_;
};

// One injection bundle per branch; empty levels mean "branch contributes
// nothing" and are treated as zero features.
using BranchBundles = std::array<fuse::InjectionBundle, kNumBranches>;

class Denoiser {
public:
    Denoiser(nn::ParamStore& ps, const DenoiserConfig& cfg);

    // Combined timestep + prompt conditioning vector, 1 x time_dim.
    nn::Tensor cond_embedding(int t, const std::string& prompt) const;

    // Plain UNet prediction. ablate_skip in [1,12] zeroes that skip input to
    // the decoder (sensitivity probes); -1 leaves all skips intact.
    nn::Tensor base_forward(const nn::Tensor& x_t, int t, const nn::Tensor& cond_emb,
                            int ablate_skip = -1) const;

    // Adds the four control branches: each runs a copied encoder + middle on
    // x_t with its condition bundle injected at the first block of every
    // resolution, and contributes zero-convolved residuals to the skips and
    // the middle output.
    nn::Tensor controlled_forward(const nn::Tensor& x_t, int t, const nn::Tensor& cond_emb,
                                  const BranchBundles& bundles, int ablate_skip = -1) const;

    const DenoiserConfig& config() const { return cfg_; }

private:
    struct Stack;  // encoder + middle shared between base and branches
    struct Branch;

    struct Taps {
        std::vector<nn::Tensor> f;  // f_1..f_12
        nn::Tensor m;
    };
    Taps run_stack(const Stack& s, const nn::Tensor& x, const nn::Tensor& t_emb,
                   const Branch* branch, const fuse::InjectionBundle* bundle) const;
    nn::Tensor decode(const Taps& taps, const nn::Tensor& t_emb, int ablate_skip) const;

    DenoiserConfig cfg_;
    std::shared_ptr<Stack> base_;
    std::array<std::shared_ptr<Branch>, kNumBranches> branches_;
    std::vector<std::shared_ptr<ResBlock>> dec_;
    std::vector<std::shared_ptr<nn::Conv2d>> ups_;
    std::shared_ptr<nn::GroupNormLayer> out_norm_;
    std::shared_ptr<nn::Conv2d> out_conv_;
    std::shared_ptr<TimeEmbed> time_;
    std::shared_ptr<TextEmbed> text_;
};

struct DropoutPolicy {
    double p_keep_all = 0.3;
    double p_drop_all = 0.1;
    double p_each = 0.5;
    double p_text_empty = 0.5;
};

enum class DropoutRegime { KeepAll, DropAll, Independent };

// Zeroes dropped condition images, marks their flags, and independently
// blanks the prompt. Draw order is fixed: regime, per-condition (seg, sat,
// panos in order) when in the independent regime, then text. `regime`, when
// given, reports which arm the first draw selected.
data::ConditionSet apply_modality_dropout(const data::ConditionSet& conditions,
                                          const DropoutPolicy& policy, Rng& rng,
                                          DropoutRegime* regime = nullptr);

// Fixed, invertible-enough image <-> latent maps (no learned parameters).
class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual std::string name() const = 0;
    virtual int channels() const = 0;
    // B x 3 x H x W in [-1,1] -> B x channels() x H/4 x W/4 and back.
    virtual nn::Tensor encode(const nn::Tensor& image) const = 0;
    virtual nn::Tensor decode(const nn::Tensor& latent) const = 0;
};

// Registered codecs: "s2d48" (pixel-shuffle, lossless), "hybrid12"
// (2x area + pixel-shuffle), "area3" (plain 4x area). Unknown name throws.
std::unique_ptr<LatentCodec> make_codec(const std::string& name);

// One forward-process prediction x_t -> eps at integer timestep t.
using EpsFn = std::function<nn::Tensor(const nn::Tensor&, int)>;

// Deterministic DDIM (eta = 0) over `steps` uniformly strided timesteps,
// starting from `x_init` treated as x at the largest timestep. Throws on
// steps < 1 or steps > T.
nn::Tensor ddim_trajectory(const EpsFn& eps, const NoiseSchedule& sched,
                           const nn::Tensor& x_init, int steps);

// The timestep ladder used by ddim_trajectory, ascending.
std::vector<int> ddim_timesteps(int T, int steps);

// Classifier-free-guided prediction: uncond + scale * (cond - uncond). The
// unconditional branch swaps in the null prompt but keeps image conditions.
// scale == 1 evaluates only the conditional branch.
EpsFn cfg_eps(const Denoiser& net, const BranchBundles& bundles, const std::string& prompt,
              float cfg_scale);

// One AdamW step of the noise-prediction MSE on a single latent. Samples
// t ~ U[1, T) and eps ~ N(0, I) from `rng`, runs the controlled model, and
// throws TrainingError naming `batch_id` if the loss is not finite.
float training_step(Denoiser& net, nn::AdamW& opt, const NoiseSchedule& sched,
                    const nn::Tensor& x0_latent, const std::string& prompt,
                    const BranchBundles& bundles, Rng& rng, const std::string& batch_id);

}  // namespace mvps::diff
