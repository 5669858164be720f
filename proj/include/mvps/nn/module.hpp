#pragma once
// Named parameter store, standard layers, and the AdamW optimizer.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvps/nn/ops.hpp"
#include "mvps/rng.hpp"

namespace mvps::nn {

enum class Init { Zeros, Ones, He, Normal02 };

// Each parameter is created on first request and initialized from an RNG
// substream keyed by its name, so construction order never changes the
// draw a given parameter sees.
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : seed_(seed) {}

    Tensor param(const std::string& name, const Shape& shape, Init init);
    Tensor buffer(const std::string& name, const Shape& shape, float fill);

    bool has_param(const std::string& name) const { return params_.count(name) != 0; }
    Tensor get_param(const std::string& name) const;
    Tensor get_buffer(const std::string& name) const;

    std::vector<std::string> param_names() const;
    std::vector<std::string> buffer_names() const;
    int64_t param_count() const;

    // Replaces the stored values (used by checkpoint restore).
    void set_param_values(const std::string& name, const std::vector<float>& v);
    void set_buffer_values(const std::string& name, const std::vector<float>& v);

    void zero_grad();
    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_ = 0;
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> buffers_;
};

class Conv2d {
public:
    // pad < 0 means "same" padding for odd kernels (kernel / 2).
    Conv2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int kernel,
           int stride = 1, int pad = -1, Init init = Init::He);
    Tensor operator()(const Tensor& x) const;
    const Tensor& weight() const { return w_; }
    const Tensor& bias() const { return b_; }

private:
    Tensor w_, b_;
    int stride_, pad_;
};

class Linear {
public:
    Linear(ParamStore& ps, const std::string& name, int in_features, int out_features,
           Init init = Init::He);
    Tensor operator()(const Tensor& x) const;
    const Tensor& weight() const { return w_; }
    const Tensor& bias() const { return b_; }

private:
    Tensor w_, b_;
};

class GroupNormLayer {
public:
    // groups is reduced to the largest divisor of channels not exceeding it.
    GroupNormLayer(ParamStore& ps, const std::string& name, int channels, int groups = 32);
    Tensor operator()(const Tensor& x) const;
    int groups() const { return groups_; }

private:
    Tensor gamma_, beta_;
    int groups_;
};

class BatchNorm2d {
public:
    BatchNorm2d(ParamStore& ps, const std::string& name, int channels, float momentum = 0.1f);
    // Training mode computes batch statistics and folds them into the
    // running buffers; eval mode normalizes with the stored buffers.
    Tensor operator()(const Tensor& x, bool training) const;

private:
    Tensor gamma_, beta_, run_mean_, run_var_;
    float momentum_;
};

struct AdamWConfig {
    float lr = 2e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

class AdamW {
public:
    struct Slot {
        std::vector<float> m, v;
    };

    explicit AdamW(ParamStore& ps, AdamWConfig cfg = {});
    void step();
    void zero_grad() { ps_->zero_grad(); }

    float lr() const { return cfg_.lr; }
    void set_lr(float lr) { cfg_.lr = lr; }
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    std::map<std::string, Slot>& state() { return state_; }
    const std::map<std::string, Slot>& state() const { return state_; }

private:
    ParamStore* ps_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, Slot> state_;
};

}  // namespace mvps::nn
