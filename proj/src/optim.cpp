#include "xg/optim.hpp"

#include <cmath>
#include <memory>

#include "xg/autograd.hpp"
#include "xg/ops.hpp"

namespace xg::nn {

void Optimizer::zero_grad() {
  for (auto& p : params_) p.node->grad.clear();
}

Sgd::Sgd(std::vector<Tensor> params, double momentum)
    : Optimizer(std::move(params)), momentum_(momentum) {
  for (const auto& p : params_) vel_.emplace_back(p.numel(), 0.0);
}

void Sgd::step(double lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.node->grad.empty()) continue;
    auto& w = p.mutable_data();
    auto& v = vel_[i];
    const auto& g = p.node->grad;
    for (size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : Optimizer(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.node->grad.empty()) continue;
    auto& w = p.mutable_data();
    const auto& g = p.node->grad;
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

TrainLog train_clean(Model& model, const data::Dataset& train, const TrainConfig& cfg,
                     uint64_t seed) {
  if (train.size() == 0) throw DataError("train_clean: empty dataset");
  train.validate();
  if (train.class_count != model.arch.num_classes)
    throw ConfigError("train_clean: dataset classes " + std::to_string(train.class_count) +
                      " vs model classes " + std::to_string(model.arch.num_classes));

  auto params = model.trainable_params();
  std::unique_ptr<Optimizer> opt;
  if (cfg.optimizer == OptKind::SGD)
    opt = std::make_unique<Sgd>(params, cfg.momentum);
  else
    opt = std::make_unique<Adam>(params);

  TrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.cosine && cfg.epochs > 1
                          ? cfg.lr * 0.5 * (1.0 + std::cos(M_PI * epoch / cfg.epochs))
                          : cfg.lr;
    double loss_sum = 0.0;
    size_t correct = 0, total = 0;
    for (auto& batch : data::batches(train, cfg.batch_size, split_seed(seed, "epoch" + std::to_string(epoch)), true)) {
      opt->zero_grad();
      Tensor logits = model.forward(batch.x, Mode::Train);
      Tensor loss = softmax_xent(logits, batch.y);
      if (!std::isfinite(loss.item()))
        throw NumericError("train_clean: loss diverged at epoch " + std::to_string(epoch));
      backward(loss);
      opt->step(lr);
      loss_sum += loss.item() * static_cast<double>(batch.y.size());
      auto preds = argmax_rows(logits);
      for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == batch.y[i]) ++correct;
      total += batch.y.size();
    }
    log.rows.push_back({epoch, loss_sum / static_cast<double>(total),
                        static_cast<double>(correct) / static_cast<double>(total)});
  }
  return log;
}

double evaluate_accuracy(Model& model, const data::Dataset& d, int batch_size) {
  if (d.size() == 0) throw DataError("evaluate_accuracy: empty dataset");
  size_t correct = 0;
  for (auto& batch : data::batches(d, batch_size, 0, false)) {
    Tensor logits = model.forward(batch.x, Mode::Eval);
    auto preds = argmax_rows(logits);
    for (size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == batch.y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

}  // namespace xg::nn
