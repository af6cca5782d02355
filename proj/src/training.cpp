#include "mftnet/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace mftnet {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(min_lr > 0.0)) fail("min_lr must be positive");
  if (!(lr >= min_lr)) fail("lr must be >= min_lr");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) fail("plateau_factor must lie in (0, 1)");
  if (plateau_patience < 1) fail("plateau_patience must be >= 1");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in (0, 1)");
}

template <typename Real>
Var<Real> cross_entropy(Var<Real> probs, std::span<const std::uint8_t> labels) {
  const Shape& s = probs.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("cross-entropy: probabilities " + shape_str(s) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = s[0], N = s[1];
  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  double total = 0.0;
  const Real* P = probs.value().data();
  for (std::size_t b = 0; b < B; ++b) {
    if (y[b] >= N) throw std::invalid_argument("cross-entropy: label " + std::to_string(y[b]) + " is not a class id");
    total -= std::log(std::max(double(P[b * N + y[b]]), kProbabilityFloor));
  }
  Tensor<Real> out = Tensor<Real>::scalar(Real(total / double(B)));
  const std::size_t ip = probs.id();
  return probs.graph().record(OpKind::cross_entropy, std::move(out), {ip},
                              [ip, B, N, y = std::move(y)](Graph<Real>& g, std::size_t self) {
                                const Real go = g.grad(self)[0];
                                const Real* P = g.value(ip).data();
                                Real* GP = g.grad_buffer(ip).data();
                                for (std::size_t b = 0; b < B; ++b) {
                                  const Real p = P[b * N + y[b]];
                                  if (double(p) > kProbabilityFloor) GP[b * N + y[b]] -= go / (Real(B) * p);
                                }
                              });
}

template <typename Real>
std::size_t argmax_row(const Tensor<Real>& probs, std::size_t row) {
  const std::size_t N = probs.dim(1);
  const Real* p = probs.data() + row * N;
  return static_cast<std::size_t>(std::max_element(p, p + N) - p);
}

template <typename Real>
double accuracy(const Tensor<Real>& probs, std::span<const std::uint8_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) throw ShapeError("accuracy: shape mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) hits += argmax_row(probs, b) == labels[b];
  return double(hits) / double(labels.size());
}

template <typename Real>
void adamw_step(std::span<Parameter<Real>* const> params, const GradientMap<Real>& grads, AdamWState<Real>& state,
                double lr, double weight_decay) {
  if (!(lr > 0.0)) throw std::invalid_argument("adamw: lr must be positive");
  if (state.m.empty()) {
    for (const Parameter<Real>* p : params) {
      state.m.emplace_back(p->value.shape(), Real(0));
      state.v.emplace_back(p->value.shape(), Real(0));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw: state does not match parameter list");
  state.step += 1;
  const AdamWHyper& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<Real>& p = *params[i];
    Tensor<Real>& m = state.m[i];
    Tensor<Real>& v = state.v[i];
    if (m.shape() != p.value.shape()) throw ShapeError("adamw: moment shape mismatch for " + p.name);
    auto it = grads.find(p.name);
    const Tensor<Real>* g = it == grads.end() ? nullptr : &it->second;
    if (g && debug_checks() && !g->all_finite()) throw NonFiniteError("adamw: non-finite gradient for " + p.name);
    for (std::size_t k = 0; k < p.value.numel(); ++k) {
      const double gk = g ? double((*g)[k]) : 0.0;
      const double mk = h.beta1 * double(m[k]) + (1.0 - h.beta1) * gk;
      const double vk = h.beta2 * double(v[k]) + (1.0 - h.beta2) * gk * gk;
      m[k] = Real(mk);
      v[k] = Real(vk);
      const double update = (mk / bc1) / (std::sqrt(vk / bc2) + h.eps);
      const double theta = double(p.value[k]);
      p.value[k] = Real(theta - lr * (update + weight_decay * theta));
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr)
    : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr) {}

double PlateauScheduler::step(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    wait_ = 0;
  } else if (++wait_ >= patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    wait_ = 0;
  }
  return lr_;
}

template <typename Real>
Evaluation evaluate(Model<Real>& model, const TrialSet& set, std::size_t batch_size) {
  Evaluation e;
  e.n = set.n;
  if (set.n == 0) return e;
  double loss = 0.0;
  std::size_t hits = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.n; start += batch_size) {
    const std::size_t end = std::min(set.n, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Graph<Real> g(false);
    auto r = model.forward(g, g.constant(gather<Real>(set, idx)), ForwardContext{});
    std::span<const std::uint8_t> y(set.labels.data() + start, end - start);
    loss += double(cross_entropy(r.probs, y).value()[0]) * double(end - start);
    for (std::size_t b = 0; b < y.size(); ++b) hits += argmax_row(r.probs.value(), b) == y[b];
  }
  e.loss = loss / double(set.n);
  e.accuracy = double(hits) / double(set.n);
  return e;
}

template <typename Real>
TrainHistory<Real> train(Model<Real>& model, const TrialSet& train_set, const TrialSet& val_set,
                         const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.n == 0) throw std::invalid_argument("train: empty training set");
  if (cfg.restore_best && val_set.n == 0) throw std::invalid_argument("train: empty validation set");
  const ModelConfig& mc = model.config();
  for (const TrialSet* s : {&train_set, &val_set}) {
    if (s->n > 0 && (s->channels != mc.electrodes || s->samples != mc.samples)) {
      throw std::invalid_argument("train: trials are " + std::to_string(s->channels) + "x" +
                                  std::to_string(s->samples) + ", model expects " + std::to_string(mc.electrodes) +
                                  "x" + std::to_string(mc.samples));
    }
  }

  TrainHistory<Real> history;
  std::mt19937_64 order_rng(cfg.seed);
  layers::Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  PlateauScheduler scheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
  AdamWState<Real> adam;
  auto params = model.trainable_parameters();
  std::vector<std::size_t> order(train_set.n);
  std::iota(order.begin(), order.end(), 0);
  ForwardContext ctx{layers::Mode::train, true, &dropout_rng, false};

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = scheduler.lr();
    double loss_sum = 0.0;
    std::size_t hits = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::uint8_t> y;
      for (std::size_t i : idx) y.push_back(train_set.labels[i]);

      Graph<Real> g(true);
      auto r = model.forward(g, g.constant(gather<Real>(train_set, idx)), ctx);
      Var<Real> loss = cross_entropy(r.probs, std::span<const std::uint8_t>(y));
      loss_sum += double(loss.value()[0]) * double(y.size());
      for (std::size_t b = 0; b < y.size(); ++b) hits += argmax_row(r.probs.value(), b) == y[b];
      seen += y.size();
      GradientMap<Real> grads = g.backward(loss);
      adamw_step<Real>(params, grads, adam, scheduler.lr(), cfg.weight_decay);
      model.apply_constraints();
    }
    rec.train_loss = loss_sum / double(seen);
    rec.train_acc = double(hits) / double(seen);

    if (val_set.n > 0) {
      const Evaluation ev = evaluate(model, val_set);
      rec.val_loss = ev.loss;
      rec.val_acc = ev.accuracy;
    }
    const double monitored = hooks.val_loss_override ? hooks.val_loss_override(epoch, rec.val_loss) : rec.val_loss;
    rec.next_lr = scheduler.step(monitored);

    if (cfg.restore_best && rec.val_acc > history.best_val_acc) {
      history.best_val_acc = rec.val_acc;
      history.best_epoch = epoch;
      history.best_weights = model.snapshot();
    }
    history.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  if (cfg.restore_best && history.best_epoch > 0) model.restore(history.best_weights);
  return history;
}

// ---------------------------------------------------------------------------
// Protocol

std::size_t env_threads() {
  const char* v = std::getenv("MFTNET_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<std::size_t>(n);
}

namespace {

struct SubjectOutcome {
  std::vector<SessionResult> rows;
  std::vector<std::string> warnings;
  std::string error;
};

template <typename Real>
SubjectOutcome run_subject(std::uint32_t subject, const std::map<std::uint32_t, TrialSet>& sessions,
                           const ModelConfig& model_cfg, const TrainConfig& cfg) {
  SubjectOutcome out;
  for (const auto& [id, set] : sessions) {
    if (set.n == 0) {
      throw std::invalid_argument("subject " + std::to_string(subject) + " session " + std::to_string(id) +
                                  " has zero trials");
    }
  }
  auto first = sessions.find(1);
  if (first == sessions.end()) {
    out.warnings.push_back("subject " + std::to_string(subject) + ": session 1 missing, subject skipped");
    return out;
  }
  const Split split = split_train_val(first->second, SplitSpec{cfg.val_fraction, cfg.seed}, model_cfg.classes);
  Model<Real> model = build_model<Real>(model_cfg, cfg.seed);
  train(model, split.train, split.val, cfg);
  for (std::uint32_t s = 2; s <= 5; ++s) {
    auto it = sessions.find(s);
    if (it == sessions.end()) {
      out.warnings.push_back("subject " + std::to_string(subject) + ": session " + std::to_string(s) +
                             " missing, skipped");
      continue;
    }
    const Evaluation ev = evaluate(model, it->second);
    out.rows.push_back({subject, s, ev.accuracy, ev.n});
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

}  // namespace

template <typename Real>
ProtocolResult run_protocol(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& cfg,
                            std::size_t threads, std::ostream* log) {
  cfg.validate();
  model_cfg.validate();
  std::vector<std::uint32_t> subjects;
  for (const auto& [s, _] : corpus) subjects.push_back(s);
  std::vector<SubjectOutcome> outcomes(subjects.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < subjects.size();) {
      try {
        outcomes[i] = run_subject<Real>(subjects[i], corpus.at(subjects[i]), model_cfg, cfg);
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << "subject " << subjects[i] << " done\n";
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(threads, subjects.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ProtocolResult result;
  std::map<std::uint32_t, std::vector<double>> by_session;
  std::vector<double> means;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    SubjectOutcome& o = outcomes[i];
    if (!o.error.empty()) throw std::runtime_error("subject " + std::to_string(subjects[i]) + ": " + o.error);
    result.warnings.insert(result.warnings.end(), o.warnings.begin(), o.warnings.end());
    if (o.rows.empty()) continue;
    std::vector<double> acc;
    for (const SessionResult& r : o.rows) {
      result.rows.push_back(r);
      acc.push_back(r.accuracy);
      by_session[r.session].push_back(r.accuracy);
    }
    result.subject_means[subjects[i]] = mean_of(acc);
    means.push_back(result.subject_means[subjects[i]]);
  }
  for (const auto& [s, v] : by_session) result.session_means[s] = mean_of(v);
  result.grand_mean = mean_of(means);
  double var = 0.0;
  for (double m : means) var += (m - result.grand_mean) * (m - result.grand_mean);
  result.grand_std = means.empty() ? 0.0 : std::sqrt(var / double(means.size()));
  if (log) {
    for (const auto& w : result.warnings) *log << "warning: " << w << "\n";
  }
  return result;
}

std::string protocol_csv(const ProtocolResult& r) {
  std::ostringstream os;
  os << "subject,session,accuracy,n_trials\n";
  os << std::setprecision(17);
  for (const auto& row : r.rows) os << row.subject << ',' << row.session << ',' << row.accuracy << ',' << row.n_trials << '\n';
  return os.str();
}

std::string format_mean_std(double mean_fraction, double std_fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << mean_fraction * 100.0 << " ± " << std_fraction * 100.0;
  return os.str();
}

#define MFTNET_INSTANTIATE_TRAINING(R)                                                                        \
  template Var<R> cross_entropy(Var<R>, std::span<const std::uint8_t>);                                      \
  template double accuracy(const Tensor<R>&, std::span<const std::uint8_t>);                                 \
  template std::size_t argmax_row(const Tensor<R>&, std::size_t);                                            \
  template void adamw_step(std::span<Parameter<R>* const>, const GradientMap<R>&, AdamWState<R>&, double,     \
                           double);                                                                           \
  template Evaluation evaluate(Model<R>&, const TrialSet&, std::size_t);                                      \
  template TrainHistory<R> train(Model<R>&, const TrialSet&, const TrialSet&, const TrainConfig&,             \
                                 const TrainHooks&);                                                          \
  template ProtocolResult run_protocol<R>(const Corpus&, const ModelConfig&, const TrainConfig&, std::size_t, \
                                          std::ostream*);

MFTNET_INSTANTIATE_TRAINING(float)
MFTNET_INSTANTIATE_TRAINING(double)

}  // namespace mftnet
