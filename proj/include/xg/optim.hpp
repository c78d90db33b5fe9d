#pragma once

#include <string>
#include <vector>

#include "xg/data.hpp"
#include "xg/nn.hpp"

namespace xg::nn {

enum class OptKind { SGD, Adam };

struct TrainConfig {
  OptKind optimizer = OptKind::SGD;
  double lr = 0.05;
  double momentum = 0.9;
  bool cosine = true;  // per-epoch cosine decay of lr
  int epochs = 15;
  int batch_size = 64;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(double lr) = 0;
  void zero_grad();

 protected:
  explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
  std::vector<Tensor> params_;
};

class Sgd : public Optimizer {
 public:
  Sgd(std::vector<Tensor> params, double momentum);
  void step(double lr) override;

 private:
  double momentum_;
  std::vector<std::vector<double>> vel_;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(double lr) override;

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRow {
  int epoch;
  double loss;
  double accuracy;
};

struct TrainLog {
  std::vector<EpochRow> rows;
};

// SGD-with-momentum or Adam on softmax cross-entropy; BN runs in Train mode,
// the model comes back in Eval behavior with finalized running statistics.
// Aborts with NumericError on a non-finite loss.
TrainLog train_clean(Model& model, const data::Dataset& train, const TrainConfig& cfg,
                     uint64_t seed);

double evaluate_accuracy(Model& model, const data::Dataset& d, int batch_size = 64);

}  // namespace xg::nn
