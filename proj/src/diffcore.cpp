#include "mvps/diffcore.hpp"

#include <cmath>
#include <sstream>

namespace mvps::diff {

using nn::Tensor;

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::linear(int T, float beta_start, float beta_end) {
    if (T < 2) throw SchemaError("noise schedule needs at least 2 steps");
    if (!(beta_start > 0.0f) || !(beta_end < 1.0f) || !(beta_start <= beta_end))
        throw SchemaError("noise schedule betas must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    for (int i = 0; i < T; ++i)
        s.betas[static_cast<size_t>(i)] =
            beta_start + (beta_end - beta_start) * static_cast<float>(i) /
                             static_cast<float>(T - 1);
    s.alpha_bars.resize(static_cast<size_t>(T) + 1);
    s.alpha_bars[0] = 1.0;
    for (int i = 0; i < T; ++i)
        s.alpha_bars[static_cast<size_t>(i) + 1] =
            s.alpha_bars[static_cast<size_t>(i)] *
            (1.0 - static_cast<double>(s.betas[static_cast<size_t>(i)]));
    return s;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T) throw SchemaError("timestep out of range for the schedule");
    return alpha_bars[static_cast<size_t>(t)];
}

Tensor NoiseSchedule::q_sample(const Tensor& x0, int t, const Tensor& eps) const {
    if (eps.shape() != x0.shape()) throw SchemaError("q_sample: noise shape mismatch");
    const double ab = alpha_bar(t);
    return nn::add(nn::mul_scalar(x0, static_cast<float>(std::sqrt(ab))),
                   nn::mul_scalar(eps, static_cast<float>(std::sqrt(1.0 - ab))));
}

// ------------------------------------------------------------- text tokens

std::vector<int> tokenize(const std::string& prompt, int vocab) {
    if (vocab < 2) throw SchemaError("text vocabulary must hold the null token plus one");
    std::vector<int> ids;
    std::istringstream words(prompt);
    std::string w;
    while (words >> w)
        ids.push_back(static_cast<int>(fnv1a64(w) % static_cast<uint64_t>(vocab - 1)) + 1);
    if (ids.empty()) ids.push_back(0);  // null token
    return ids;
}

// --------------------------------------------------------------- embedders

Tensor timestep_features(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw SchemaError("timestep feature width must be even");
    const int half = dim / 2;
    std::vector<float> v(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double w = std::pow(10000.0, -static_cast<double>(i) / half);
        v[static_cast<size_t>(i)] = static_cast<float>(std::sin(t * w));
        v[static_cast<size_t>(half + i)] = static_cast<float>(std::cos(t * w));
    }
    return Tensor::from_data({1, dim}, std::move(v));
}

TimeEmbed::TimeEmbed(nn::ParamStore& ps, const std::string& name, int time_dim)
    : l1_(ps, name + ".l1", time_dim, time_dim),
      l2_(ps, name + ".l2", time_dim, time_dim),
      dim_(time_dim) {}

Tensor TimeEmbed::operator()(int t) const {
    return l2_(nn::silu(l1_(timestep_features(t, dim_))));
}

TextEmbed::TextEmbed(nn::ParamStore& ps, const std::string& name, int vocab, int dim,
                     int time_dim)
    : table_(ps.param(name + ".table", {vocab, dim}, nn::Init::Normal02)),
      proj_(ps, name + ".proj", dim, time_dim),
      vocab_(vocab) {}

Tensor TextEmbed::operator()(const std::string& prompt) const {
    const Tensor rows = nn::embedding(table_, tokenize(prompt, vocab_));
    return proj_(nn::mean_axes(rows, {0}, true));
}

// ---------------------------------------------------------------- resblock

ResBlock::ResBlock(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch,
                   int time_dim, int norm_groups)
    : gn1_(ps, name + ".gn1", in_ch, norm_groups),
      gn2_(ps, name + ".gn2", out_ch, norm_groups),
      conv1_(ps, name + ".conv1", in_ch, out_ch, 3),
      conv2_(ps, name + ".conv2", out_ch, out_ch, 3),
      time_proj_(ps, name + ".time", time_dim, out_ch) {
    if (in_ch != out_ch) skip_.emplace(ps, name + ".skip", in_ch, out_ch, 1, 1, 0);
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& t_emb) const {
    Tensor h = conv1_(nn::silu(gn1_(x)));
    const Tensor tp = time_proj_(nn::silu(t_emb));  // 1 x out_ch
    const Tensor tpb = nn::broadcast_to(nn::reshape(tp, {1, tp.dim(1), 1, 1}), h.shape());
    h = conv2_(nn::silu(gn2_(nn::add(h, tpb))));
    return nn::add(h, skip_ ? (*skip_)(x) : x);
}

// ------------------------------------------------------------------- config

std::array<int, 4> DenoiserConfig::channels() const {
    std::array<int, 4> c{};
    for (int i = 0; i < 4; ++i) c[static_cast<size_t>(i)] = base_channels * multipliers[static_cast<size_t>(i)];
    return c;
}

std::vector<int> DenoiserConfig::site_channels() const {
    const auto c = channels();
    return {c[0], c[0], c[1], c[2]};
}

// ---------------------------------------------------------------- denoiser

// Encoder + middle; identical layout for the base model and every control
// branch so weights can be copied name-for-name.
struct Denoiser::Stack {
    nn::Conv2d conv_in, d4, d7, d10;
    ResBlock r2, r3, r5, r6, r8, r9, r11, r12, mid;

    Stack(nn::ParamStore& ps, const std::string& p, const DenoiserConfig& cfg)
        : conv_in(ps, p + ".enc1", cfg.latent_channels, cfg.channels()[0], 3),
          d4(ps, p + ".enc4", cfg.channels()[0], cfg.channels()[0], 3, 2),
          d7(ps, p + ".enc7", cfg.channels()[1], cfg.channels()[1], 3, 2),
          d10(ps, p + ".enc10", cfg.channels()[2], cfg.channels()[2], 3, 2),
          r2(ps, p + ".enc2", cfg.channels()[0], cfg.channels()[0], cfg.time_dim, cfg.norm_groups),
          r3(ps, p + ".enc3", cfg.channels()[0], cfg.channels()[0], cfg.time_dim, cfg.norm_groups),
          r5(ps, p + ".enc5", cfg.channels()[0], cfg.channels()[1], cfg.time_dim, cfg.norm_groups),
          r6(ps, p + ".enc6", cfg.channels()[1], cfg.channels()[1], cfg.time_dim, cfg.norm_groups),
          r8(ps, p + ".enc8", cfg.channels()[1], cfg.channels()[2], cfg.time_dim, cfg.norm_groups),
          r9(ps, p + ".enc9", cfg.channels()[2], cfg.channels()[2], cfg.time_dim, cfg.norm_groups),
          r11(ps, p + ".enc11", cfg.channels()[2], cfg.channels()[3], cfg.time_dim, cfg.norm_groups),
          r12(ps, p + ".enc12", cfg.channels()[3], cfg.channels()[3], cfg.time_dim, cfg.norm_groups),
          mid(ps, p + ".mid", cfg.channels()[3], cfg.channels()[3], cfg.time_dim, cfg.norm_groups) {}
};

struct Denoiser::Branch {
    Stack stack;
    std::vector<fuse::FdnBlock> fdn;     // one per resolution
    std::vector<nn::Conv2d> zero_skip;   // one per encoder tap
    nn::Conv2d zero_mid;

    Branch(nn::ParamStore& ps, const std::string& p, const DenoiserConfig& cfg)
        : stack(ps, p + ".body", cfg),
          zero_mid(ps, p + ".zero_mid", cfg.channels()[3], cfg.channels()[3], 1, 1, 0,
                   nn::Init::Zeros) {
        const auto sites = cfg.site_channels();
        for (int k = 0; k < 4; ++k)
            fdn.emplace_back(ps, p + ".fdn" + std::to_string(k), sites[static_cast<size_t>(k)],
                             sites[static_cast<size_t>(k)]);
        const auto c = cfg.channels();
        const std::array<int, 12> tap_ch{c[0], c[0], c[0], c[0], c[1], c[1],
                                         c[1], c[2], c[2], c[2], c[3], c[3]};
        for (int j = 0; j < 12; ++j)
            zero_skip.emplace_back(ps, p + ".zero" + std::to_string(j + 1),
                                   tap_ch[static_cast<size_t>(j)], tap_ch[static_cast<size_t>(j)],
                                   1, 1, 0, nn::Init::Zeros);
    }
};

Denoiser::Denoiser(nn::ParamStore& ps, const DenoiserConfig& cfg) : cfg_(cfg) {
    if (cfg.latent_h % 8 != 0 || cfg.latent_w % 8 != 0)
        throw SchemaError("latent sizes must be divisible by 8 (three resolution halvings)");
    if (cfg.latent_channels < 1 || cfg.base_channels < 1 || cfg.time_dim < 2 ||
        cfg.text_vocab < 2 || cfg.text_dim < 1)
        throw SchemaError("denoiser config values must be positive");
    const auto c = cfg.channels();
    base_ = std::make_shared<Stack>(ps, "unet.body", cfg);

    // decoder block i consumes concat(previous, f_{13-i})
    const std::array<std::array<int, 2>, 12> io{{{c[3] + c[3], c[3]},
                                                 {c[3] + c[3], c[3]},
                                                 {c[3] + c[2], c[3]},
                                                 {c[3] + c[2], c[2]},
                                                 {c[2] + c[2], c[2]},
                                                 {c[2] + c[1], c[2]},
                                                 {c[2] + c[1], c[1]},
                                                 {c[1] + c[1], c[1]},
                                                 {c[1] + c[0], c[1]},
                                                 {c[1] + c[0], c[0]},
                                                 {c[0] + c[0], c[0]},
                                                 {c[0] + c[0], c[0]}}};
    for (int i = 0; i < 12; ++i)
        dec_.push_back(std::make_shared<ResBlock>(ps, "unet.dec" + std::to_string(i + 1),
                                                  io[static_cast<size_t>(i)][0],
                                                  io[static_cast<size_t>(i)][1], cfg.time_dim,
                                                  cfg.norm_groups));
    ups_.push_back(std::make_shared<nn::Conv2d>(ps, "unet.up1", c[3], c[3], 3));
    ups_.push_back(std::make_shared<nn::Conv2d>(ps, "unet.up2", c[2], c[2], 3));
    ups_.push_back(std::make_shared<nn::Conv2d>(ps, "unet.up3", c[1], c[1], 3));
    out_norm_ = std::make_shared<nn::GroupNormLayer>(ps, "unet.out_norm", c[0], cfg.norm_groups);
    out_conv_ = std::make_shared<nn::Conv2d>(ps, "unet.out", c[0], cfg.latent_channels, 3);
    time_ = std::make_shared<TimeEmbed>(ps, "unet.time", cfg.time_dim);
    text_ = std::make_shared<TextEmbed>(ps, "unet.text", cfg.text_vocab, cfg.text_dim,
                                        cfg.time_dim);

    // snapshot base names before the branches add theirs
    const std::vector<std::string> names = ps.param_names();
    for (int k = 0; k < kNumBranches; ++k)
        branches_[static_cast<size_t>(k)] = std::make_shared<Branch>(
            ps, std::string("ctrl.") + kBranchNames[static_cast<size_t>(k)], cfg);

    // the control branches start as exact copies of the base encoder + middle
    const std::string body = "unet.body.";
    for (const std::string& n : names) {
        if (n.rfind(body, 0) != 0) continue;
        const std::string suffix = n.substr(body.size());
        for (int k = 0; k < kNumBranches; ++k)
            ps.set_param_values(std::string("ctrl.") + kBranchNames[static_cast<size_t>(k)] +
                                    ".body." + suffix,
                                ps.get_param(n).values());
    }
}

Tensor Denoiser::cond_embedding(int t, const std::string& prompt) const {
    if (t < 0) throw SchemaError("negative timestep");
    return nn::add((*time_)(t), (*text_)(prompt));
}

Denoiser::Taps Denoiser::run_stack(const Stack& s, const Tensor& x, const Tensor& t_emb,
                                   const Branch* branch,
                                   const fuse::InjectionBundle* bundle) const {
    const auto sites = cfg_.site_channels();
    auto inject = [&](Tensor z, int level) -> Tensor {
        if (branch == nullptr) return z;
        Tensor cond;
        if (bundle != nullptr && !bundle->levels.empty()) {
            cond = bundle->levels[static_cast<size_t>(level)];
        } else {  // dropped branch: zero features
            cond = Tensor::zeros({z.dim(0), sites[static_cast<size_t>(level)], z.dim(2), z.dim(3)});
        }
        return branch->fdn[static_cast<size_t>(level)](z, cond);
    };

    Taps t;
    Tensor h = inject(s.conv_in(x), 0);
    t.f.push_back(h);                       // f1
    h = s.r2(h, t_emb);  t.f.push_back(h);  // f2
    h = s.r3(h, t_emb);  t.f.push_back(h);  // f3
    h = inject(s.d4(h), 1);
    t.f.push_back(h);                       // f4
    h = s.r5(h, t_emb);  t.f.push_back(h);  // f5
    h = s.r6(h, t_emb);  t.f.push_back(h);  // f6
    h = inject(s.d7(h), 2);
    t.f.push_back(h);                       // f7
    h = s.r8(h, t_emb);  t.f.push_back(h);  // f8
    h = s.r9(h, t_emb);  t.f.push_back(h);  // f9
    h = inject(s.d10(h), 3);
    t.f.push_back(h);                       // f10
    h = s.r11(h, t_emb); t.f.push_back(h);  // f11
    h = s.r12(h, t_emb); t.f.push_back(h);  // f12
    t.m = s.mid(h, t_emb);
    return t;
}

Tensor Denoiser::decode(const Taps& taps, const Tensor& t_emb, int ablate_skip) const {
    auto skip = [&](int j) -> Tensor {  // f_j, 1-based
        const Tensor& f = taps.f[static_cast<size_t>(j - 1)];
        if (j == ablate_skip) return Tensor::zeros(f.shape());
        return f;
    };

    Tensor g = (*dec_[0])(nn::concat({taps.m, skip(12)}, 1), t_emb);
    g = (*dec_[1])(nn::concat({g, skip(11)}, 1), t_emb);
    g = (*dec_[2])(nn::concat({g, skip(10)}, 1), t_emb);
    g = (*ups_[0])(nn::nearest_upsample2x(g));
    g = (*dec_[3])(nn::concat({g, skip(9)}, 1), t_emb);
    g = (*dec_[4])(nn::concat({g, skip(8)}, 1), t_emb);
    g = (*dec_[5])(nn::concat({g, skip(7)}, 1), t_emb);
    g = (*ups_[1])(nn::nearest_upsample2x(g));
    g = (*dec_[6])(nn::concat({g, skip(6)}, 1), t_emb);
    g = (*dec_[7])(nn::concat({g, skip(5)}, 1), t_emb);
    g = (*dec_[8])(nn::concat({g, skip(4)}, 1), t_emb);
    g = (*ups_[2])(nn::nearest_upsample2x(g));
    g = (*dec_[9])(nn::concat({g, skip(3)}, 1), t_emb);
    g = (*dec_[10])(nn::concat({g, skip(2)}, 1), t_emb);
    g = (*dec_[11])(nn::concat({g, skip(1)}, 1), t_emb);
    return (*out_conv_)(nn::silu((*out_norm_)(g)));
}

static void check_latent(const Tensor& x, const DenoiserConfig& cfg) {
    if (x.ndim() != 4 || x.dim(1) != cfg.latent_channels || x.dim(2) != cfg.latent_h ||
        x.dim(3) != cfg.latent_w)
        throw SchemaError("denoiser input must be B x C_l x " + std::to_string(cfg.latent_h) +
                          " x " + std::to_string(cfg.latent_w));
}

Tensor Denoiser::base_forward(const Tensor& x_t, int t, const Tensor& cond_emb,
                              int ablate_skip) const {
    check_latent(x_t, cfg_);
    if (t < 0) throw SchemaError("negative timestep");
    const Taps taps = run_stack(*base_, x_t, cond_emb, nullptr, nullptr);
    return decode(taps, cond_emb, ablate_skip);
}

Tensor Denoiser::controlled_forward(const Tensor& x_t, int t, const Tensor& cond_emb,
                                    const BranchBundles& bundles, int ablate_skip) const {
    check_latent(x_t, cfg_);
    if (t < 0) throw SchemaError("negative timestep");
    const auto sites = cfg_.site_channels();
    for (int k = 0; k < kNumBranches; ++k) {
        const auto& b = bundles[static_cast<size_t>(k)];
        if (b.levels.empty()) continue;  // dropped: zero features
        if (static_cast<int>(b.levels.size()) != 4)
            throw SchemaError("injection bundle needs one level per resolution");
        for (int l = 0; l < 4; ++l)
            if (b.levels[static_cast<size_t>(l)].dim(1) != sites[static_cast<size_t>(l)])
                throw SchemaError("injection bundle channels do not match the branch sites");
    }

    Taps taps = run_stack(*base_, x_t, cond_emb, nullptr, nullptr);
    for (int k = 0; k < kNumBranches; ++k) {
        const Branch& br = *branches_[static_cast<size_t>(k)];
        const Taps side = run_stack(br.stack, x_t, cond_emb, &br,
                                    &bundles[static_cast<size_t>(k)]);
        for (int j = 0; j < 12; ++j)
            taps.f[static_cast<size_t>(j)] =
                nn::add(taps.f[static_cast<size_t>(j)],
                        br.zero_skip[static_cast<size_t>(j)](side.f[static_cast<size_t>(j)]));
        taps.m = nn::add(taps.m, br.zero_mid(side.m));
    }
    return decode(taps, cond_emb, ablate_skip);
}

// ----------------------------------------------------------------- dropout

data::ConditionSet apply_modality_dropout(const data::ConditionSet& conditions,
                                          const DropoutPolicy& policy, Rng& rng,
                                          DropoutRegime* regime) {
    if (policy.p_keep_all < 0 || policy.p_drop_all < 0 ||
        policy.p_keep_all + policy.p_drop_all > 1.0 || policy.p_each < 0 ||
        policy.p_each > 1.0 || policy.p_text_empty < 0 || policy.p_text_empty > 1.0)
        throw SchemaError("invalid dropout policy");

    data::ConditionSet out = conditions;
    auto zero_image = [](img::Image& im) { std::fill(im.data.begin(), im.data.end(), 0); };

    const double u = rng.uniform();
    if (u < policy.p_keep_all) {
        if (regime) *regime = DropoutRegime::KeepAll;
    } else if (u < policy.p_keep_all + policy.p_drop_all) {
        if (regime) *regime = DropoutRegime::DropAll;
        zero_image(out.seg);
        out.seg_dropped = true;
        zero_image(out.satellite_tiled);
        out.sat_dropped = true;
        for (size_t i = 0; i < out.panos.size(); ++i) {
            zero_image(out.panos[i]);
            out.drop_mask[i] = true;
        }
    } else {
        if (regime) *regime = DropoutRegime::Independent;
        if (rng.uniform() < policy.p_each) {
            zero_image(out.seg);
            out.seg_dropped = true;
        }
        if (rng.uniform() < policy.p_each) {
            zero_image(out.satellite_tiled);
            out.sat_dropped = true;
        }
        for (size_t i = 0; i < out.panos.size(); ++i)
            if (rng.uniform() < policy.p_each) {
                zero_image(out.panos[i]);
                out.drop_mask[i] = true;
            }
    }
    if (rng.uniform() < policy.p_text_empty) out.prompt.clear();
    return out;
}

// ------------------------------------------------------------------ codecs

namespace {

void check_codec_image(const Tensor& image) {
    if (image.ndim() != 4 || image.dim(1) != 3)
        throw SchemaError("latent codec expects B x 3 x H x W images");
    if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0)
        throw SchemaError("latent codec needs spatial sizes divisible by 4");
}

struct PixelShuffleCodec final : LatentCodec {
    std::string name() const override { return "s2d48"; }
    int channels() const override { return 48; }
    Tensor encode(const Tensor& image) const override {
        check_codec_image(image);
        return nn::space_to_depth2(nn::space_to_depth2(image));
    }
    Tensor decode(const Tensor& latent) const override {
        if (latent.ndim() != 4 || latent.dim(1) != 48)
            throw SchemaError("s2d48 latents carry 48 channels");
        return nn::depth_to_space2(nn::depth_to_space2(latent));
    }
};

struct HybridCodec final : LatentCodec {
    std::string name() const override { return "hybrid12"; }
    int channels() const override { return 12; }
    Tensor encode(const Tensor& image) const override {
        check_codec_image(image);
        return nn::space_to_depth2(nn::avg_pool2x2(image));
    }
    Tensor decode(const Tensor& latent) const override {
        if (latent.ndim() != 4 || latent.dim(1) != 12)
            throw SchemaError("hybrid12 latents carry 12 channels");
        const Tensor half = nn::depth_to_space2(latent);
        return nn::bilinear_resize(half, half.dim(2) * 2, half.dim(3) * 2);
    }
};

struct AreaCodec final : LatentCodec {
    std::string name() const override { return "area3"; }
    int channels() const override { return 3; }
    Tensor encode(const Tensor& image) const override {
        check_codec_image(image);
        return nn::avg_pool2x2(nn::avg_pool2x2(image));
    }
    Tensor decode(const Tensor& latent) const override {
        if (latent.ndim() != 4 || latent.dim(1) != 3)
            throw SchemaError("area3 latents carry 3 channels");
        return nn::bilinear_resize(latent, latent.dim(2) * 4, latent.dim(3) * 4);
    }
};

}  // namespace

std::unique_ptr<LatentCodec> make_codec(const std::string& name) {
    if (name == "s2d48") return std::make_unique<PixelShuffleCodec>();
    if (name == "hybrid12") return std::make_unique<HybridCodec>();
    if (name == "area3") return std::make_unique<AreaCodec>();
    throw SchemaError("unknown latent codec '" + name + "'");
}

// -------------------------------------------------------------------- DDIM

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1) throw SchemaError("sampling needs at least 1 step");
    if (steps > T) throw SchemaError("sampling steps cannot exceed the schedule length");
    std::vector<int> seq(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k)
        seq[static_cast<size_t>(k)] = static_cast<int>(
            (static_cast<int64_t>(k) + 1) * T / steps - 1);
    return seq;
}

Tensor ddim_trajectory(const EpsFn& eps, const NoiseSchedule& sched, const Tensor& x_init,
                       int steps) {
    const std::vector<int> seq = ddim_timesteps(sched.T, steps);
    nn::NoGradGuard ng;
    Tensor x = x_init;
    for (int k = static_cast<int>(seq.size()) - 1; k >= 0; --k) {
        const int t = seq[static_cast<size_t>(k)];
        const double ab = sched.alpha_bar(t);
        const double ab_prev = (k > 0) ? sched.alpha_bar(seq[static_cast<size_t>(k) - 1]) : 1.0;
        const Tensor e = eps(x, t);
        if (e.shape() != x.shape()) throw SchemaError("noise prediction shape mismatch");
        // x0 estimate, then deterministic (eta = 0) jump to the previous step
        const Tensor x0 = nn::mul_scalar(
            nn::sub(x, nn::mul_scalar(e, static_cast<float>(std::sqrt(1.0 - ab)))),
            static_cast<float>(1.0 / std::sqrt(ab)));
        x = nn::add(nn::mul_scalar(x0, static_cast<float>(std::sqrt(ab_prev))),
                    nn::mul_scalar(e, static_cast<float>(std::sqrt(1.0 - ab_prev))));
    }
    return x;
}

EpsFn cfg_eps(const Denoiser& net, const BranchBundles& bundles, const std::string& prompt,
              float cfg_scale) {
    return [&net, bundles, prompt, cfg_scale](const Tensor& x, int t) -> Tensor {
        const Tensor e_c = net.controlled_forward(x, t, net.cond_embedding(t, prompt), bundles);
        if (cfg_scale == 1.0f) return e_c;
        const Tensor e_u = net.controlled_forward(x, t, net.cond_embedding(t, ""), bundles);
        return nn::add(e_u, nn::mul_scalar(nn::sub(e_c, e_u), cfg_scale));
    };
}

// ---------------------------------------------------------------- training

float training_step(Denoiser& net, nn::AdamW& opt, const NoiseSchedule& sched,
                    const Tensor& x0_latent, const std::string& prompt,
                    const BranchBundles& bundles, Rng& rng, const std::string& batch_id) {
    const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(sched.T - 1)));
    Tensor eps = nn::randn(x0_latent.shape(), rng);
    const Tensor x_t = sched.q_sample(x0_latent, t, eps);
    const Tensor pred =
        net.controlled_forward(x_t, t, net.cond_embedding(t, prompt), bundles);
    Tensor loss = nn::mse_loss(pred, eps);
    const float value = loss.item();
    if (!std::isfinite(value))
        throw TrainingError("training step on batch '" + batch_id + "' produced non-finite loss");
    opt.zero_grad();
    loss.backward();
    opt.step();
    return value;
}

}  // namespace mvps::diff
