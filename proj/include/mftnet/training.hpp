#pragma once

// Loss, AdamW, plateau scheduling, the best-checkpoint training loop and the
// cross-session evaluation protocol.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mftnet/data.hpp"
#include "mftnet/model.hpp"

namespace mftnet {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 5;
  double min_lr = 1e-4;
  std::uint64_t seed = 42;
  double val_fraction = 0.2;
  // Keep the best-validation-accuracy weights at the end. When false the
  // final weights are kept and a validation set is optional.
  bool restore_best = true;

  void validate() const;
};

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over the batch of -log(max(p[label], 1e-12)). probs: [B, N].
template <typename Real>
Var<Real> cross_entropy(Var<Real> probs, std::span<const std::uint8_t> labels);

// Fraction of rows whose first maximal entry is the label (exact 0.5/0.5 ties
// resolve to class 0).
template <typename Real>
double accuracy(const Tensor<Real>& probs, std::span<const std::uint8_t> labels);

template <typename Real>
std::size_t argmax_row(const Tensor<Real>& probs, std::size_t row);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Real>
struct AdamWState {
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  std::size_t step = 0;
  AdamWHyper hyper;
};

// One AdamW step over `params` (trainable, in a fixed order):
//   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
//   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// Parameters absent from `grads` take a zero gradient. Max-norm projection is
// the caller's job (Model::apply_constraints).
template <typename Real>
void adamw_step(std::span<Parameter<Real>* const> params, const GradientMap<Real>& grads, AdamWState<Real>& state,
                double lr, double weight_decay);

// Reduce-on-plateau: a strict decrease of the monitored loss resets the
// counter; after `patience` non-improving epochs lr <- max(lr * factor,
// min_lr) and the counter resets.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr);
  double step(double val_loss);
  double lr() const { return lr_; }
  std::size_t wait() const { return wait_; }
  double best() const { return best_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t wait_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;        // rate used during this epoch
  double next_lr = 0.0;   // rate after the scheduler update
};

template <typename Real>
struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 when no checkpoint was taken
  double best_val_acc = -1.0;
  std::vector<Tensor<Real>> best_weights;
};

struct TrainHooks {
  // Replaces the measured validation loss fed to the scheduler.
  std::function<double(std::size_t epoch, double measured)> val_loss_override;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
};

// Infer-mode loss and accuracy over a whole set, in batches.
template <typename Real>
Evaluation evaluate(Model<Real>& model, const TrialSet& set, std::size_t batch_size = 64);

// Trains in place. Batches are reshuffled every epoch from cfg.seed; the last
// partial batch is kept. With restore_best the model ends holding the
// earliest epoch with the highest validation accuracy.
template <typename Real>
TrainHistory<Real> train(Model<Real>& model, const TrialSet& train_set, const TrialSet& val_set,
                         const TrainConfig& cfg, const TrainHooks& hooks = {});

struct SessionResult {
  std::uint32_t subject;
  std::uint32_t session;
  double accuracy;
  std::size_t n_trials;
};

struct ProtocolResult {
  std::vector<SessionResult> rows;
  std::map<std::uint32_t, double> subject_means;
  std::map<std::uint32_t, double> session_means;  // across subjects
  double grand_mean = 0.0;
  double grand_std = 0.0;  // population standard deviation of subject means
  std::vector<std::string> warnings;
};

// Per subject: split session 1, train a fresh model, test on sessions 2..5.
// Subjects run on up to `threads` workers; results are assembled in subject
// order so the output does not depend on scheduling.
template <typename Real>
ProtocolResult run_protocol(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& cfg,
                            std::size_t threads = 1, std::ostream* log = nullptr);

// "subject,session,accuracy,n_trials"
std::string protocol_csv(const ProtocolResult& r);
// "58.9 ± 10.5"
std::string format_mean_std(double mean_fraction, double std_fraction);

// Worker cap from MFTNET_THREADS (default 1).
std::size_t env_threads();

}  // namespace mftnet
