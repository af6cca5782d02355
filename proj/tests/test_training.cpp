#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "mftnet/training.hpp"
#include "test_util.hpp"

using namespace mftnet;

namespace {

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  return c;
}

ModelConfig small_model() {
  ModelConfig m = gradcheck_config();
  m.electrodes = 8;
  m.samples = 32;
  m.attention_heads = 2;
  return m;
}

}  // namespace

TEST_CASE("accuracy and argmax tie rule") {
  Tensor<double> p({3, 2}, {0.5, 0.5, 0.2, 0.8, 0.9, 0.1});
  const std::vector<std::uint8_t> y{0, 1, 1};
  CHECK(argmax_row(p, 0) == 0);
  CHECK(accuracy(p, std::span<const std::uint8_t>(y)) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("AdamW matches a hand-computed two-step trajectory") {
  Parameter<double> p{"p", Tensor<double>({2}, {1.0, -2.0})};
  std::vector<Parameter<double>*> ps{&p};
  AdamWState<double> st;
  const double lr = 0.1, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::vector<std::vector<double>> gs{{0.5, -1.0}, {0.25, 3.0}};
  std::vector<double> theta{1.0, -2.0}, m(2, 0.0), v(2, 0.0);
  for (std::size_t t = 1; t <= 2; ++t) {
    GradientMap<double> g;
    g["p"] = Tensor<double>({2}, gs[t - 1]);
    adamw_step<double>(ps, g, st, lr, wd);
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * gs[t - 1][i];
      v[i] = b2 * v[i] + (1 - b2) * gs[t - 1][i] * gs[t - 1][i];
      const double mh = m[i] / (1 - std::pow(b1, double(t))), vh = v[i] / (1 - std::pow(b2, double(t)));
      theta[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * theta[i]);
      CHECK(p.value[i] == doctest::Approx(theta[i]).epsilon(1e-14));
    }
  }
  CHECK(st.step == 2);
  // A first step moves every coordinate by about lr against its gradient sign.
  Parameter<double> q{"q", Tensor<double>({1}, 0.0)};
  std::vector<Parameter<double>*> qs{&q};
  AdamWState<double> s2;
  GradientMap<double> g;
  g["q"] = Tensor<double>({1}, 1e-3);
  adamw_step<double>(qs, g, s2, 0.01, 0.0);
  CHECK(q.value[0] == doctest::Approx(-0.01).epsilon(1e-4));
  // Missing gradients decay only through weight decay.
  Parameter<double> r{"r", Tensor<double>({1}, 2.0)};
  std::vector<Parameter<double>*> rs{&r};
  AdamWState<double> s3;
  adamw_step<double>(rs, GradientMap<double>{}, s3, 0.1, 0.5);
  CHECK(r.value[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  CHECK_THROWS(adamw_step<double>(rs, GradientMap<double>{}, s3, 0.0, 0.5));
}

TEST_CASE("plateau scheduler") {
  PlateauScheduler s(1e-3, 0.5, 5, 1e-4);
  CHECK(s.step(1.0) == 1e-3);  // first value is an improvement
  for (int e = 2; e <= 5; ++e) CHECK(s.step(1.0) == 1e-3);
  CHECK(s.step(1.0) == doctest::Approx(5e-4));  // fifth non-improving epoch
  CHECK(s.wait() == 0);
  CHECK(s.step(0.9) == doctest::Approx(5e-4));
  CHECK(s.wait() == 0);
  for (int e = 0; e < 100; ++e) s.step(2.0);
  CHECK(s.lr() == 1e-4);
  // Equal is not better.
  PlateauScheduler t(1.0, 0.1, 1, 0.0);
  t.step(1.0);
  CHECK(t.step(1.0) == doctest::Approx(0.1));
  PlateauScheduler u(1.0, 0.1, 1, 0.0);
  u.step(1.0);
  CHECK(u.step(0.999) == 1.0);
}

TEST_CASE("training loop records, schedules and restores the best epoch") {
  const ModelConfig mc = small_model();
  const TrialSet train_set = synth_generate(8, 8, 32, 1, 5.0);
  const TrialSet val_set = synth_generate(4, 8, 32, 2, 5.0);
  Model<double> m = build_model<double>(mc, 3);
  TrainConfig tc = quick(8);
  TrainHooks hooks;
  hooks.val_loss_override = [](std::size_t, double) { return 1.0; };
  std::size_t calls = 0;
  hooks.on_epoch = [&](const EpochRecord&) { ++calls; };
  const auto h = train(m, train_set, val_set, tc, hooks);
  CHECK(calls == 8);
  REQUIRE(h.epochs.size() == 8);
  CHECK(h.epochs[5].lr == 1e-3);
  CHECK(h.epochs[5].next_lr == doctest::Approx(5e-4));
  CHECK(h.epochs[6].lr == doctest::Approx(5e-4));
  for (const auto& r : h.epochs) CHECK(r.lr >= 1e-4);
  REQUIRE(h.best_epoch >= 1);
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& r : h.epochs)
    if (r.val_acc > best) best = r.val_acc, best_epoch = r.epoch;
  CHECK(h.best_epoch == best_epoch);
  CHECK(evaluate(m, val_set).accuracy == h.best_val_acc);
}

TEST_CASE("training is deterministic for a seed") {
  const ModelConfig mc = small_model();
  const TrialSet train_set = synth_generate(6, 8, 32, 4, 3.0);
  const TrialSet val_set = synth_generate(3, 8, 32, 5, 3.0);
  auto run = [&](std::uint64_t seed) {
    Model<double> m = build_model<double>(mc, 6);
    TrainConfig tc = quick(3);
    tc.seed = seed;
    train(m, train_set, val_set, tc);
    return m.snapshot();
  };
  const auto a = run(1), b = run(1), c = run(2);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) same = same && identical(a[i], b[i]), differs = differs || !identical(a[i], c[i]);
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("training rejects bad inputs") {
  const ModelConfig mc = small_model();
  Model<float> m = build_model<float>(mc, 1);
  const TrialSet good = synth_generate(2, 8, 32, 1, 1.0);
  const TrialSet wrong = synth_generate(2, 8, 40, 1, 1.0);
  TrialSet empty = good;
  empty.n = 0;
  empty.labels.clear();
  empty.data.clear();
  CHECK_THROWS(train(m, wrong, good, quick(1)));
  CHECK_THROWS(train(m, empty, good, quick(1)));
  CHECK_THROWS(train(m, good, empty, quick(1)));
  TrainConfig no_restore = quick(1);
  no_restore.restore_best = false;
  CHECK_NOTHROW(train(m, good, empty, no_restore));
  TrainConfig bad = quick(1);
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("protocol aggregation") {
  const ModelConfig mc = small_model();
  Corpus corpus;
  for (std::uint32_t s = 1; s <= 3; ++s)
    for (std::uint32_t k = 1; k <= 3; ++k) {
      TrialSet t = synth_generate(5, 8, 32, 10 * s + k, 2.0);
      t.subject = s;
      t.session = k;
      corpus[s][k] = t;
    }
  TrainConfig tc = quick(2);
  const ProtocolResult r1 = run_protocol<float>(corpus, mc, tc, 1);
  const ProtocolResult r3 = run_protocol<float>(corpus, mc, tc, 3);
  CHECK(protocol_csv(r1) == protocol_csv(r3));
  REQUIRE(r1.rows.size() == 6);
  CHECK(r1.rows[0].subject == 1);
  CHECK(r1.rows[0].session == 2);
  double grand = 0, sq = 0;
  for (const auto& [s, mean] : r1.subject_means) {
    double acc = 0;
    for (const auto& row : r1.rows)
      if (row.subject == s) acc += row.accuracy / 2.0;
    CHECK(mean == doctest::Approx(acc));
    grand += mean / 3.0;
  }
  for (const auto& [s, mean] : r1.subject_means) sq += (mean - grand) * (mean - grand) / 3.0;
  CHECK(r1.grand_mean == doctest::Approx(grand));
  CHECK(r1.grand_std == doctest::Approx(std::sqrt(sq)));
  CHECK(r1.session_means.size() == 2);
  CHECK(protocol_csv(r1).rfind("subject,session,accuracy,n_trials\n", 0) == 0);
}

TEST_CASE("mean and std formatting") {
  CHECK(format_mean_std(0.589, 0.105) == "58.9 ± 10.5");
  CHECK(format_mean_std(0.5, 0.0) == "50.0 ± 0.0");
}
