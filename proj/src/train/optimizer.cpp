#include "cmc/train/optimizer.hpp"

#include <cmath>

#include "cmc/core/error.hpp"

namespace cmc {

void Adam::step(ParameterStore& params, double lr) {
    auto& items = params.items();
    if (m_.empty()) {
        for (const auto& p : items) {
            m_.push_back(Matrix::Zero(p.var->value.rows(), p.var->value.cols()));
            v_.push_back(Matrix::Zero(p.var->value.rows(), p.var->value.cols()));
        }
    }
    if (m_.size() != items.size()) throw InvalidArgument("optimizer state does not match the parameter store");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& var = *items[i].var;
        if (var.grad.size() == 0) continue;
        Matrix g = var.grad;
        if (!cfg_.decoupled_weight_decay && cfg_.weight_decay != 0) g += cfg_.weight_decay * var.value;
        m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * g.cwiseProduct(g);
        if (cfg_.decoupled_weight_decay && cfg_.weight_decay != 0) var.value -= lr * cfg_.weight_decay * var.value;
        var.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
}

void Adam::save(Checkpoint& ckpt, const ParameterStore& params) const {
    ckpt.metadata["optimizer"] = {{"kind", "adam"}, {"step", t_}};
    if (m_.empty()) return;
    const auto& items = params.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto tensor = [&](const Matrix& m) {
            return Tensor{items[i].shape, std::vector<Real>(m.data(), m.data() + m.size())};
        };
        ckpt.put("optimizer.m." + items[i].name, tensor(m_[i]));
        ckpt.put("optimizer.v." + items[i].name, tensor(v_[i]));
    }
}

void Adam::load(const Checkpoint& ckpt, const ParameterStore& params) {
    t_ = ckpt.metadata.contains("optimizer") ? ckpt.metadata["optimizer"].value("step", std::int64_t(0)) : 0;
    m_.clear();
    v_.clear();
    if (t_ == 0) return;
    for (const auto& p : params.items()) {
        const Tensor* m = ckpt.find("optimizer.m." + p.name);
        const Tensor* v = ckpt.find("optimizer.v." + p.name);
        if (!m || !v) throw CheckpointError("optimizer state missing for " + p.name);
        const Index r = p.var->value.rows(), c = p.var->value.cols();
        if (m->numel() != r * c || v->numel() != r * c) throw CheckpointError("optimizer state shape mismatch for " + p.name);
        m_.push_back(Eigen::Map<const Matrix>(m->data.data(), r, c));
        v_.push_back(Eigen::Map<const Matrix>(v->data.data(), r, c));
    }
}

}  // namespace cmc
