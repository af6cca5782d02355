#pragma once

// Gradient x Input attributions, channel ranking, class-averaged maps and
// electrode-deletion tests.

#include <cstddef>
#include <string>
#include <vector>

#include "mftnet/data.hpp"
#include "mftnet/grad_check.hpp"
#include "mftnet/model.hpp"
#include "mftnet/training.hpp"

namespace mftnet {

template <typename Real>
struct AttributionMap {
  Tensor<Real> values;  // [C, T]
  std::size_t trial_id = 0;
  std::size_t target = 0;
  std::size_t predicted = 0;
  double confidence = 0.0;  // softmax probability of the predicted class
};

// x * d f(x) / dx for a scalar-valued f. Throws NonFiniteError if the
// gradient is not finite.
template <typename Real>
Tensor<Real> gradient_times_input(const InputFn<Real>& f, const Tensor<Real>& x);

// Attribution of the pre-softmax logit `target` for one trial [C, T]. The
// model runs in infer mode, so repeated calls are bit-identical.
template <typename Real>
AttributionMap<Real> gradient_x_input(Model<Real>& model, const Tensor<Real>& trial, std::size_t target,
                                      std::size_t trial_id = 0);

struct ChannelScores {
  std::vector<double> scores;        // mean |attribution| per channel
  std::vector<std::size_t> ranking;  // descending score, ties to the lower index
};

template <typename Real>
ChannelScores channel_scores(const std::vector<AttributionMap<Real>>& maps);

// Ranking of arbitrary scores with the same tie rule.
std::vector<std::size_t> rank_channels(const std::vector<double>& scores);

template <typename Real>
struct ClassMap {
  std::size_t class_id = 0;
  std::size_t n_trials = 0;             // correctly classified trials used
  Tensor<double> mean;                  // [C, T]
  ChannelScores scores;
  std::vector<AttributionMap<Real>> maps;
};

// Averages the target-logit attributions of the correctly classified trials
// of `class_id`. Throws if there are none.
template <typename Real>
ClassMap<Real> class_average_map(Model<Real>& model, const TrialSet& trials, std::size_t class_id);

enum class DeletionMode { most_important, least_important };
std::string deletion_mode_name(DeletionMode m);

struct DeletionCurve {
  std::vector<double> fractions;
  std::vector<double> mean_confidence;
  std::vector<double> std_confidence;  // population std across trials
  std::vector<std::size_t> deleted;    // channels zeroed at each fraction
  std::vector<std::size_t> flips;      // trials whose prediction changed
  DeletionMode mode = DeletionMode::most_important;
  std::size_t class_id = 0;
  std::size_t n_trials = 0;
};

// Number of channels deleted at fraction f: ceil(f * C).
std::size_t deletion_count(double fraction, std::size_t channels);

// Confidence is the softmax probability of the true class over the trials of
// `class_id` that the undeleted model classifies correctly. Fractions must
// be ascending, start at 0 and not exceed 1.
template <typename Real>
DeletionCurve deletion_test(Model<Real>& model, const TrialSet& trials, const ChannelScores& scores,
                            const std::vector<double>& fractions, DeletionMode mode, std::size_t class_id);

// Trapezoid area under mean confidence versus fraction.
double curve_auc(const DeletionCurve& c);

// Continues training for `epochs` with checkpointing off; the final weights
// are kept.
template <typename Real>
TrainHistory<Real> finetune_for_interpretation(Model<Real>& model, const TrialSet& trials, std::size_t epochs,
                                                TrainConfig cfg);

// Montage: JSON array of labels in storage order, or an object mapping
// "index" -> label.
std::vector<std::string> load_montage(const std::string& path, std::size_t channels);
std::vector<std::string> default_channel_names(std::size_t channels);

// CSV exports.
std::string channel_scores_csv(const ChannelScores& s, const std::vector<std::string>& names);
std::string attribution_map_csv(const Tensor<double>& map, const std::vector<std::string>& names);
std::string deletion_curves_csv(const std::vector<DeletionCurve>& curves);

}  // namespace mftnet
