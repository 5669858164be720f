#include "mvps/nn/module.hpp"

#include <cmath>

#include "mvps/errors.hpp"

namespace mvps::nn {

namespace {

int64_t fan_in_of(const Shape& shape) {
    if (shape.size() == 4) return static_cast<int64_t>(shape[1]) * shape[2] * shape[3];
    if (shape.size() == 2) return shape[0];
    return shape[0];
}

std::vector<float> draw_init(uint64_t seed, const std::string& name, const Shape& shape, Init init) {
    const size_t n = static_cast<size_t>(shape_numel(shape));
    std::vector<float> v(n, 0.0f);
    switch (init) {
        case Init::Zeros:
            break;
        case Init::Ones:
            std::fill(v.begin(), v.end(), 1.0f);
            break;
        case Init::He: {
            Rng rng = Rng::substream(seed, name);
            const float std = std::sqrt(2.0f / static_cast<float>(fan_in_of(shape)));
            for (float& x : v) x = static_cast<float>(rng.normal()) * std;
            break;
        }
        case Init::Normal02: {
            Rng rng = Rng::substream(seed, name);
            for (float& x : v) x = static_cast<float>(rng.normal()) * 0.02f;
            break;
        }
    }
    return v;
}

}  // namespace

Tensor ParamStore::param(const std::string& name, const Shape& shape, Init init) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        if (it->second.shape() != shape)
            throw SchemaError("parameter '" + name + "' requested with shape " + shape_str(shape) +
                              " but stored as " + shape_str(it->second.shape()));
        return it->second;
    }
    Tensor t = Tensor::from_data(shape, draw_init(seed_, name, shape, init));
    t.set_requires_grad(true);
    params_.emplace(name, t);
    return t;
}

Tensor ParamStore::buffer(const std::string& name, const Shape& shape, float fill) {
    auto it = buffers_.find(name);
    if (it != buffers_.end()) {
        if (it->second.shape() != shape)
            throw SchemaError("buffer '" + name + "' requested with shape " + shape_str(shape) +
                              " but stored as " + shape_str(it->second.shape()));
        return it->second;
    }
    Tensor t = Tensor::full(shape, fill);
    buffers_.emplace(name, t);
    return t;
}

Tensor ParamStore::get_param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw SchemaError("unknown parameter '" + name + "'");
    return it->second;
}

Tensor ParamStore::get_buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw SchemaError("unknown buffer '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::param_names() const {
    std::vector<std::string> names;
    names.reserve(params_.size());
    for (const auto& [k, v] : params_) names.push_back(k);
    return names;
}

std::vector<std::string> ParamStore::buffer_names() const {
    std::vector<std::string> names;
    names.reserve(buffers_.size());
    for (const auto& [k, v] : buffers_) names.push_back(k);
    return names;
}

int64_t ParamStore::param_count() const {
    int64_t n = 0;
    for (const auto& [k, v] : params_) n += v.numel();
    return n;
}

void ParamStore::set_param_values(const std::string& name, const std::vector<float>& v) {
    auto it = params_.find(name);
    if (it == params_.end()) throw SchemaError("unknown parameter '" + name + "'");
    if (v.size() != it->second.node()->val.size())
        throw SchemaError("size mismatch restoring parameter '" + name + "'");
    it->second.node()->val = v;
}

void ParamStore::set_buffer_values(const std::string& name, const std::vector<float>& v) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw SchemaError("unknown buffer '" + name + "'");
    if (v.size() != it->second.node()->val.size())
        throw SchemaError("size mismatch restoring buffer '" + name + "'");
    it->second.node()->val = v;
}

void ParamStore::zero_grad() {
    for (auto& [k, v] : params_) v.zero_grad();
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int kernel,
               int stride, int pad, Init init)
    : w_(ps.param(name + ".weight", {out_ch, in_ch, kernel, kernel}, init)),
      b_(ps.param(name + ".bias", {out_ch}, Init::Zeros)),
      stride_(stride),
      pad_(pad < 0 ? kernel / 2 : pad) {}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, w_, b_, stride_, pad_); }

Linear::Linear(ParamStore& ps, const std::string& name, int in_features, int out_features, Init init)
    : w_(ps.param(name + ".weight", {in_features, out_features}, init)),
      b_(ps.param(name + ".bias", {out_features}, Init::Zeros)) {}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, w_, b_); }

GroupNormLayer::GroupNormLayer(ParamStore& ps, const std::string& name, int channels, int groups)
    : gamma_(ps.param(name + ".gamma", {channels}, Init::Ones)),
      beta_(ps.param(name + ".beta", {channels}, Init::Zeros)) {
    groups_ = std::min(groups, channels);
    while (channels % groups_) --groups_;
}

Tensor GroupNormLayer::operator()(const Tensor& x) const {
    return group_norm(x, groups_, gamma_, beta_);
}

BatchNorm2d::BatchNorm2d(ParamStore& ps, const std::string& name, int channels, float momentum)
    : gamma_(ps.param(name + ".gamma", {channels}, Init::Ones)),
      beta_(ps.param(name + ".beta", {channels}, Init::Zeros)),
      run_mean_(ps.buffer(name + ".running_mean", {channels}, 0.0f)),
      run_var_(ps.buffer(name + ".running_var", {channels}, 1.0f)),
      momentum_(momentum) {}

Tensor BatchNorm2d::operator()(const Tensor& x, bool training) const {
    if (!training) return batch_norm_eval(x, gamma_, beta_, run_mean_, run_var_, 1e-5f);
    std::vector<float> mu, var;
    Tensor y = batch_norm_train(x, gamma_, beta_, 1e-5f, &mu, &var);
    auto& rm = run_mean_.node()->val;
    auto& rv = run_var_.node()->val;
    for (size_t c = 0; c < rm.size(); ++c) {
        rm[c] = (1.0f - momentum_) * rm[c] + momentum_ * mu[c];
        rv[c] = (1.0f - momentum_) * rv[c] + momentum_ * var[c];
    }
    return y;
}

AdamW::AdamW(ParamStore& ps, AdamWConfig cfg) : ps_(&ps), cfg_(cfg) {}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const std::string& name : ps_->param_names()) {
        Tensor p = ps_->get_param(name);
        auto& val = p.node()->val;
        const auto& grad = p.node()->grad;
        if (grad.empty()) continue;  // parameter never touched by the loss
        Slot& s = state_[name];
        if (s.m.empty()) {
            s.m.assign(val.size(), 0.0f);
            s.v.assign(val.size(), 0.0f);
        }
        for (size_t i = 0; i < val.size(); ++i) {
            val[i] -= cfg_.lr * cfg_.weight_decay * val[i];
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0f - cfg_.beta1) * grad[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0f - cfg_.beta2) * grad[i] * grad[i];
            const float mhat = static_cast<float>(s.m[i] / bc1);
            const float vhat = static_cast<float>(s.v[i] / bc2);
            val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace mvps::nn
