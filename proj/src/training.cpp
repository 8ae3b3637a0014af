#include "oat/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "oat/rng.hpp"

namespace oat {

namespace {

enum : std::uint64_t {
  kStreamInit = 0x90,
  kStreamShuffle = 0x91,
};

int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

Tensor image_as_tensor(const Image& img) {
  Tensor t(1, img.ny, img.nx);
  t.v.assign(img.data.begin(), img.data.end());
  return t;
}

struct TensorDataset {
  std::vector<Tensor> train_in, train_tgt;
  std::vector<Tensor> val_in, val_tgt;
};

TensorDataset to_tensors(const DatasetSplit& split) {
  TensorDataset d;
  d.train_in.reserve(split.train.size());
  d.train_tgt.reserve(split.train.size());
  for (const auto& s : split.train) {
    d.train_in.push_back(sample_input(s));
    d.train_tgt.push_back(sample_target(s));
  }
  d.val_in.reserve(split.validation.size());
  d.val_tgt.reserve(split.validation.size());
  for (const auto& s : split.validation) {
    d.val_in.push_back(sample_input(s));
    d.val_tgt.push_back(sample_target(s));
  }
  return d;
}

// mean per-example squared-norm loss over a whole set, evaluated in chunks
double set_loss(const ParameterSet& params, const NetworkConfig& cfg,
                const std::vector<Tensor>& inputs, const std::vector<Tensor>& targets,
                int threads) {
  if (inputs.empty()) return 0.0;
  constexpr std::size_t kChunk = 8;
  double total = 0.0;
  for (std::size_t at = 0; at < inputs.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, inputs.size() - at);
    const std::vector<Tensor> in(inputs.begin() + static_cast<std::ptrdiff_t>(at),
                                 inputs.begin() + static_cast<std::ptrdiff_t>(at + n));
    const std::vector<Tensor> tgt(targets.begin() + static_cast<std::ptrdiff_t>(at),
                                  targets.begin() + static_cast<std::ptrdiff_t>(at + n));
    const auto pred = predict(params, cfg, in, threads);
    total += mse_loss(pred, tgt).value * static_cast<double>(n);
  }
  return total / static_cast<double>(inputs.size());
}

struct StepLoss {
  double loss = 0.0;
  GradientSet grad;
};

StepLoss gradient_step(const ParameterSet& params, const NetworkConfig& cfg,
                       const std::vector<Tensor>& in, const std::vector<Tensor>& tgt,
                       int threads) {
  auto fwd = forward(params, cfg, in, true, threads);
  auto loss = mse_loss(fwd.outputs, tgt);
  if (!std::isfinite(loss.value)) throw std::runtime_error("training diverged: non-finite loss");
  StepLoss out;
  out.loss = loss.value;
  out.grad = backward(fwd.tape, loss.grad, threads);
  return out;
}

}  // namespace

Tensor sample_input(const Sample& s) { return image_as_tensor(s.lbp); }
Tensor sample_target(const Sample& s) { return image_as_tensor(s.phantom.image); }

GradientSet andmask_aggregate(const std::vector<GradientSet>& env_grads, double tau,
                              double* survival_fraction) {
  if (env_grads.empty()) throw std::invalid_argument("andmask_aggregate: no gradients");
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("andmask_aggregate: tau in [0,1]");
  const std::size_t n = env_grads.front().values.size();
  for (const auto& g : env_grads)
    if (g.values.size() != n)
      throw std::invalid_argument("andmask_aggregate: gradient length mismatch");

  const auto d = static_cast<double>(env_grads.size());
  const double threshold = tau * d;
  GradientSet out;
  out.values.assign(n, 0.0);
  std::size_t kept = 0;
  for (std::size_t j = 0; j < n; ++j) {
    int sign_sum = 0;
    double mean = 0.0;
    for (const auto& g : env_grads) {
      sign_sum += sign_of(g.values[j]);
      mean += g.values[j];
    }
    if (threshold <= static_cast<double>(std::abs(sign_sum))) {
      out.values[j] = mean / d;
      ++kept;
    }
  }
  if (survival_fraction != nullptr)
    *survival_fraction = n == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(n);
  return out;
}

AdamState make_adam_state(std::size_t n_params, double lr) {
  AdamState state;
  state.m.assign(n_params, 0.0);
  state.v.assign(n_params, 0.0);
  state.lr = lr;
  return state;
}

void adam_step(ParameterSet& params, const GradientSet& grad, AdamState& state) {
  const std::size_t n = params.values.size();
  if (grad.values.size() != n || state.m.size() != n || state.v.size() != n)
    throw std::invalid_argument("adam_step: length mismatch");
  for (double g : grad.values)
    if (!std::isfinite(g))
      throw std::runtime_error("training diverged: non-finite gradient");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.values[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params.values[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

DatasetSplit pool_datasets(const std::vector<DatasetSplit>& env_datasets) {
  DatasetSplit pooled;
  for (const auto& d : env_datasets) {
    pooled.train.insert(pooled.train.end(), d.train.begin(), d.train.end());
    pooled.validation.insert(pooled.validation.end(), d.validation.begin(), d.validation.end());
  }
  return pooled;
}

namespace {

// shared loop for both regimes; d == 1 with pooled data is the benchmark
TrainResult train_loop(const TrainConfig& config, const NetworkConfig& net_config,
                       const std::vector<TensorDataset>& envs, std::uint64_t seed,
                       bool masked) {
  if (config.epochs < 1 || config.batch_per_env < 1 || config.pooled_batch < 1)
    throw std::invalid_argument("TrainConfig: counts must be positive");
  if (config.learning_rate <= 0.0)
    throw std::invalid_argument("TrainConfig: learning rate must be positive");
  const int d = static_cast<int>(envs.size());
  const int batch = masked ? config.batch_per_env : config.pooled_batch;
  int steps_per_epoch = 0;
  for (int e = 0; e < d; ++e) {
    if (envs[static_cast<std::size_t>(e)].train_in.empty())
      throw std::invalid_argument("train: empty training dataset");
    const int steps = static_cast<int>(envs[static_cast<std::size_t>(e)].train_in.size()) / batch;
    steps_per_epoch = e == 0 ? steps : std::min(steps_per_epoch, steps);
  }
  if (steps_per_epoch < 1)
    throw std::invalid_argument("train: batch size exceeds the training set");

  ParameterSet params = init_network(net_config, derive_seed(seed, kStreamInit));
  AdamState adam = make_adam_state(params.values.size(), config.learning_rate);

  TrainResult result;
  ParameterSet best_params = params;
  int epochs_without_improvement = 0;

  std::vector<std::vector<std::size_t>> order(static_cast<std::size_t>(d));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // fresh without-replacement order per environment per epoch
    for (int e = 0; e < d; ++e) {
      auto& idx = order[static_cast<std::size_t>(e)];
      idx.resize(envs[static_cast<std::size_t>(e)].train_in.size());
      std::iota(idx.begin(), idx.end(), 0);
      Rng rng(derive_seed(seed, kStreamShuffle,
                          static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(d) +
                              static_cast<std::uint64_t>(e)));
      for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(
                                  0, static_cast<int>(i) - 1))]);
    }

    std::vector<double> env_loss(static_cast<std::size_t>(d), 0.0);
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<GradientSet> grads;
      grads.reserve(static_cast<std::size_t>(d));
      for (int e = 0; e < d; ++e) {
        const auto& ds = envs[static_cast<std::size_t>(e)];
        const auto& idx = order[static_cast<std::size_t>(e)];
        std::vector<Tensor> in, tgt;
        in.reserve(static_cast<std::size_t>(batch));
        tgt.reserve(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
          const std::size_t k = idx[static_cast<std::size_t>(step * batch + b)];
          in.push_back(ds.train_in[k]);
          tgt.push_back(ds.train_tgt[k]);
        }
        StepLoss sl = gradient_step(params, net_config, in, tgt, config.threads);
        env_loss[static_cast<std::size_t>(e)] += sl.loss;
        grads.push_back(std::move(sl.grad));
      }

      if (masked) {
        double survival = 0.0;
        const GradientSet agg = andmask_aggregate(grads, config.tau, &survival);
        result.history.mask_survival.push_back(survival);
        adam_step(params, agg, adam);
      } else {
        adam_step(params, grads.front(), adam);
      }
    }

    EpochRecord record;
    for (int e = 0; e < d; ++e)
      record.env_train_loss.push_back(env_loss[static_cast<std::size_t>(e)] /
                                      static_cast<double>(steps_per_epoch));
    double val = 0.0;
    int val_envs = 0;
    for (const auto& ds : envs) {
      if (ds.val_in.empty()) continue;
      val += set_loss(params, net_config, ds.val_in, ds.val_tgt, config.threads);
      ++val_envs;
    }
    record.validation_loss = val_envs > 0 ? val / val_envs : 0.0;
    result.history.epochs.push_back(record);

    if (record.validation_loss < result.history.best_validation_loss) {
      result.history.best_validation_loss = record.validation_loss;
      result.history.best_epoch = epoch;
      best_params = params;
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= config.patience) {
        result.history.early_stopped = true;
        break;
      }
    }
  }

  result.params = std::move(best_params);
  return result;
}

}  // namespace

TrainResult train_andmask(const TrainConfig& config, const NetworkConfig& net_config,
                          const std::vector<DatasetSplit>& env_datasets, std::uint64_t seed) {
  if (env_datasets.empty()) throw std::invalid_argument("train_andmask: no environments");
  std::vector<TensorDataset> envs;
  envs.reserve(env_datasets.size());
  for (const auto& d : env_datasets) envs.push_back(to_tensors(d));
  return train_loop(config, net_config, envs, seed, true);
}

TrainResult train_benchmark(const TrainConfig& config, const NetworkConfig& net_config,
                            const DatasetSplit& pooled_dataset, std::uint64_t seed) {
  std::vector<TensorDataset> envs;
  envs.push_back(to_tensors(pooled_dataset));
  return train_loop(config, net_config, envs, seed, false);
}

}  // namespace oat
