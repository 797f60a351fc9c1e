#pragma once

#include <cmath>
#include <vector>

#include "srdd/common.hpp"
#include "srdd/tensor.hpp"

namespace srdd {

struct AdamWConfig {
    float lr = 1e-4f;
    // (0.95, 0.05) is also accepted by the config surface but breaks
    // second-moment tracking; see README.
    float beta1 = 0.9f;
    float beta2 = 0.95f;
    float eps = 1e-8f;
    float weight_decay = 0.05f;
    float clip_norm = 1.0f;  // <= 0 disables clipping
};

// Decoupled-weight-decay Adam over a fixed parameter list. Moment buffers
// are index-aligned with the parameters handed to the constructor.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (const Tensor& p : params_) {
            m_.push_back(std::vector<float>(p.data().size(), 0.0f));
            v_.push_back(std::vector<float>(p.data().size(), 0.0f));
        }
    }

    const AdamWConfig& config() const { return cfg_; }
    AdamWConfig& config() { return cfg_; }
    std::int64_t step_count() const { return step_; }
    size_t num_params() const { return params_.size(); }

    // Global-norm gradient clip over every parameter; returns the pre-clip norm.
    float clip_gradients() {
        double sq = 0.0;
        for (Tensor& p : params_) {
            if (!p.has_grad()) throw ContractError("clip_gradients: missing gradient");
            for (float g : p.grad()) sq += static_cast<double>(g) * g;
        }
        const float norm = static_cast<float>(std::sqrt(sq));
        if (cfg_.clip_norm > 0.0f && norm > cfg_.clip_norm) {
            const float s = cfg_.clip_norm / norm;
            for (Tensor& p : params_)
                for (float& g : p.grad_mut()) g *= s;
        }
        return norm;
    }

    void step() {
        for (const Tensor& p : params_)
            if (!p.has_grad()) throw ContractError("AdamW::step: missing gradient");
        step_ += 1;
        const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
        const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto data = params_[i].data();
            auto grad = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < data.size(); ++j) {
                const float g = grad[j];
                m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g;
                v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g * g;
                const float mhat = m[j] / bc1;
                const float vhat = v[j] / bc2;
                data[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                      cfg_.weight_decay * data[j]);
            }
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    // Serialization hooks for checkpoints.
    std::span<const float> first_moment(size_t i) const { return m_[i]; }
    std::span<const float> second_moment(size_t i) const { return v_[i]; }
    std::span<float> first_moment_mut(size_t i) { return m_[i]; }
    std::span<float> second_moment_mut(size_t i) { return v_[i]; }
    void set_step_count(std::int64_t s) {
        if (s < 0) throw RangeError("set_step_count: negative step count");
        step_ = s;
    }

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t step_ = 0;
};

}  // namespace srdd
