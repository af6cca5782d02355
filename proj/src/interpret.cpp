#include "mftnet/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mftnet {

template <typename Real>
Tensor<Real> gradient_times_input(const InputFn<Real>& f, const Tensor<Real>& x) {
  Graph<Real> g(true);
  Var<Real> xv = g.input(x, "input");
  Var<Real> out = f(g, xv);
  g.backward(out);
  const Tensor<Real>& grad = g.grad(xv);
  Tensor<Real> result(x.shape(), Real(0));
  if (grad.is_null()) return result;
  if (!grad.all_finite()) throw NonFiniteError("gradient x input: non-finite input gradient");
  for (std::size_t i = 0; i < x.numel(); ++i) result[i] = x[i] * grad[i];
  return result;
}

template <typename Real>
AttributionMap<Real> gradient_x_input(Model<Real>& model, const Tensor<Real>& trial, std::size_t target,
                                      std::size_t trial_id) {
  const ModelConfig& cfg = model.config();
  if (trial.shape() != Shape{cfg.electrodes, cfg.samples}) {
    throw ShapeError("gradient x input: trial " + shape_str(trial.shape()) + " does not match the model");
  }
  if (target >= cfg.classes) throw std::invalid_argument("gradient x input: target class out of range");
  AttributionMap<Real> map;
  map.trial_id = trial_id;
  map.target = target;
  Tensor<Real> probs;
  auto f = [&](Graph<Real>& g, Var<Real> x) {
    auto r = model.forward(g, ops::reshape(x, {1, cfg.electrodes, cfg.samples}), ForwardContext{});
    probs = r.probs.value();
    return ops::slice(r.logits, 1, target, 1);
  };
  map.values = gradient_times_input<Real>(f, trial);
  map.predicted = argmax_row(probs, 0);
  map.confidence = double(probs[map.predicted]);
  return map;
}

std::vector<std::size_t> rank_channels(const std::vector<double>& scores) {
  std::vector<std::size_t> r(scores.size());
  std::iota(r.begin(), r.end(), 0);
  std::stable_sort(r.begin(), r.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return r;
}

template <typename Real>
ChannelScores channel_scores(const std::vector<AttributionMap<Real>>& maps) {
  if (maps.empty()) throw std::invalid_argument("channel scores: no attribution maps");
  const Shape shape = maps.front().values.shape();
  if (shape.size() != 2) throw ShapeError("channel scores: maps must be [C, T]");
  const std::size_t C = shape[0], T = shape[1];
  ChannelScores s;
  s.scores.assign(C, 0.0);
  for (const auto& m : maps) {
    if (m.values.shape() != shape) throw ShapeError("channel scores: maps differ in shape");
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t) acc += std::abs(double(m.values[c * T + t]));
      s.scores[c] += acc;
    }
  }
  for (double& v : s.scores) v /= double(maps.size() * T);
  s.ranking = rank_channels(s.scores);
  return s;
}

namespace {

template <typename Real>
Tensor<Real> trial_tensor(const TrialSet& set, std::size_t i) {
  return Tensor<Real>({set.channels, set.samples},
                      std::vector<Real>(set.trial(i), set.trial(i) + set.channels * set.samples));
}

// Probabilities [n, N] for all trials of `set`, in batches.
template <typename Real>
Tensor<Real> predict_all(Model<Real>& model, const TrialSet& set) {
  const std::size_t N = model.config().classes;
  Tensor<Real> out({std::max<std::size_t>(set.n, 1), N});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.n; start += 64) {
    const std::size_t end = std::min(set.n, start + 64);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<Real> p = model.predict(gather<Real>(set, idx));
    std::copy(p.data(), p.data() + p.numel(), out.data() + start * N);
  }
  return out;
}

}  // namespace

template <typename Real>
ClassMap<Real> class_average_map(Model<Real>& model, const TrialSet& trials, std::size_t class_id) {
  const Tensor<Real> probs = predict_all(model, trials);
  ClassMap<Real> cm;
  cm.class_id = class_id;
  std::size_t of_class = 0;
  for (std::size_t i = 0; i < trials.n; ++i) {
    if (trials.labels[i] != class_id) continue;
    ++of_class;
    if (argmax_row(probs, i) != class_id) continue;
    cm.maps.push_back(gradient_x_input(model, trial_tensor<Real>(trials, i), class_id, i));
  }
  if (cm.maps.empty()) {
    throw std::runtime_error("class map: none of the " + std::to_string(of_class) + " trials of class " +
                             std::to_string(class_id) + " (of " + std::to_string(trials.n) +
                             " total) is classified correctly");
  }
  cm.n_trials = cm.maps.size();
  cm.mean = Tensor<double>({trials.channels, trials.samples}, 0.0);
  for (const auto& m : cm.maps)
    for (std::size_t k = 0; k < cm.mean.numel(); ++k) cm.mean[k] += double(m.values[k]);
  for (double& v : cm.mean.values()) v /= double(cm.n_trials);
  cm.scores = channel_scores(cm.maps);
  return cm;
}

std::string deletion_mode_name(DeletionMode m) {
  return m == DeletionMode::most_important ? "most" : "least";
}

std::size_t deletion_count(double fraction, std::size_t channels) {
  // The small slack keeps exact products such as 0.6 * 5 from rounding up.
  return std::min(channels, static_cast<std::size_t>(std::ceil(fraction * double(channels) - 1e-9)));
}

template <typename Real>
DeletionCurve deletion_test(Model<Real>& model, const TrialSet& trials, const ChannelScores& scores,
                            const std::vector<double>& fractions, DeletionMode mode, std::size_t class_id) {
  if (fractions.empty() || fractions.front() != 0.0) throw std::invalid_argument("deletion test: fractions must start at 0");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0)) {
      throw std::invalid_argument("deletion test: fraction " + std::to_string(fractions[i]) + " outside [0, 1]");
    }
    if (i > 0 && fractions[i] < fractions[i - 1]) throw std::invalid_argument("deletion test: fractions must ascend");
  }
  const std::size_t C = trials.channels, T = trials.samples;
  if (scores.ranking.size() != C) throw std::invalid_argument("deletion test: ranking does not cover every channel");

  const Tensor<Real> base = predict_all(model, trials);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < trials.n; ++i) {
    if (trials.labels[i] == class_id && argmax_row(base, i) == class_id) keep.push_back(i);
  }
  if (keep.empty()) {
    throw std::runtime_error("deletion test: no correctly classified trials of class " + std::to_string(class_id));
  }
  const TrialSet selected = subset(trials, keep);

  DeletionCurve curve;
  curve.mode = mode;
  curve.class_id = class_id;
  curve.n_trials = keep.size();
  for (double f : fractions) {
    const std::size_t k = deletion_count(f, C);
    TrialSet masked = selected;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t c = mode == DeletionMode::most_important ? scores.ranking[j] : scores.ranking[C - 1 - j];
      for (std::size_t i = 0; i < masked.n; ++i) std::fill_n(masked.trial(i) + c * T, T, 0.0f);
    }
    const Tensor<Real> p = predict_all(model, masked);
    const std::size_t N = p.dim(1);
    double sum = 0.0, sq = 0.0;
    std::size_t flips = 0;
    for (std::size_t i = 0; i < masked.n; ++i) {
      const double conf = double(p[i * N + class_id]);
      sum += conf;
      sq += conf * conf;
      flips += argmax_row(p, i) != class_id;
    }
    const double mean = sum / double(masked.n);
    curve.fractions.push_back(f);
    curve.mean_confidence.push_back(mean);
    curve.std_confidence.push_back(std::sqrt(std::max(0.0, sq / double(masked.n) - mean * mean)));
    curve.deleted.push_back(k);
    curve.flips.push_back(flips);
  }
  return curve;
}

double curve_auc(const DeletionCurve& c) {
  double area = 0.0;
  for (std::size_t i = 1; i < c.fractions.size(); ++i) {
    area += 0.5 * (c.mean_confidence[i] + c.mean_confidence[i - 1]) * (c.fractions[i] - c.fractions[i - 1]);
  }
  return area;
}

template <typename Real>
TrainHistory<Real> finetune_for_interpretation(Model<Real>& model, const TrialSet& trials, std::size_t epochs,
                                                TrainConfig cfg) {
  cfg.epochs = epochs;
  cfg.restore_best = false;
  if (epochs == 0) return {};
  TrialSet none = trials;
  none.n = 0;
  none.labels.clear();
  none.data.clear();
  return train(model, trials, none, cfg);
}

std::vector<std::string> default_channel_names(std::size_t channels) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < channels; ++c) names.push_back("ch" + std::to_string(c));
  return names;
}

std::vector<std::string> load_montage(const std::string& path, std::size_t channels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open montage '" + path + "'");
  const auto j = nlohmann::json::parse(in);
  std::vector<std::string> names;
  if (j.is_array()) {
    names = j.get<std::vector<std::string>>();
  } else if (j.is_object()) {
    names.assign(channels, "");
    for (const auto& [key, value] : j.items()) {
      const std::size_t idx = std::stoul(key);
      if (idx >= channels) throw std::invalid_argument("montage: index " + key + " out of range");
      names[idx] = value.get<std::string>();
    }
  } else {
    throw std::invalid_argument("montage: expected a JSON array or object");
  }
  if (names.size() != channels) {
    throw std::invalid_argument("montage lists " + std::to_string(names.size()) + " channels, data has " +
                                std::to_string(channels));
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (names[c].empty()) throw std::invalid_argument("montage: no label for channel " + std::to_string(c));
  }
  return names;
}

std::string channel_scores_csv(const ChannelScores& s, const std::vector<std::string>& names) {
  if (names.size() != s.scores.size()) throw std::invalid_argument("channel scores csv: name count mismatch");
  std::ostringstream os;
  os << std::setprecision(10) << "channel,score\n";
  for (std::size_t c = 0; c < s.scores.size(); ++c) os << names[c] << ',' << s.scores[c] << '\n';
  return os.str();
}

std::string attribution_map_csv(const Tensor<double>& map, const std::vector<std::string>& names) {
  if (map.rank() != 2 || names.size() != map.dim(0)) throw std::invalid_argument("map csv: shape/name mismatch");
  const std::size_t C = map.dim(0), T = map.dim(1);
  std::ostringstream os;
  os << std::setprecision(10) << "channel";
  for (std::size_t t = 0; t < T; ++t) os << ",t" << t;
  os << '\n';
  for (std::size_t c = 0; c < C; ++c) {
    os << names[c];
    for (std::size_t t = 0; t < T; ++t) os << ',' << map[c * T + t];
    os << '\n';
  }
  return os.str();
}

std::string deletion_curves_csv(const std::vector<DeletionCurve>& curves) {
  std::ostringstream os;
  os << std::setprecision(10) << "fraction,mean_confidence,std,mode,class\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.fractions.size(); ++i) {
      os << c.fractions[i] << ',' << c.mean_confidence[i] << ',' << c.std_confidence[i] << ','
         << deletion_mode_name(c.mode) << ',' << c.class_id << '\n';
    }
  return os.str();
}

#define MFTNET_INSTANTIATE_INTERPRET(R)                                                                         \
  template Tensor<R> gradient_times_input(const InputFn<R>&, const Tensor<R>&);                                \
  template AttributionMap<R> gradient_x_input(Model<R>&, const Tensor<R>&, std::size_t, std::size_t);         \
  template ChannelScores channel_scores(const std::vector<AttributionMap<R>>&);                                \
  template ClassMap<R> class_average_map(Model<R>&, const TrialSet&, std::size_t);                             \
  template DeletionCurve deletion_test(Model<R>&, const TrialSet&, const ChannelScores&,                       \
                                       const std::vector<double>&, DeletionMode, std::size_t);                 \
  template TrainHistory<R> finetune_for_interpretation(Model<R>&, const TrialSet&, std::size_t, TrainConfig);

MFTNET_INSTANTIATE_INTERPRET(float)
MFTNET_INSTANTIATE_INTERPRET(double)

}  // namespace mftnet
