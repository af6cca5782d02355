#include "mftnet/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "detail/binary_io.hpp"
#include "json.hpp"
#include "mftnet/checkpoint.hpp"
#include "mftnet/crc32.hpp"
#include "mftnet/data.hpp"
#include "mftnet/interpret.hpp"
#include "mftnet/kernels.hpp"
#include "mftnet/verify.hpp"

namespace mftnet {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

json train_to_json(const TrainConfig& t) {
  json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["weight_decay"] = t.weight_decay;
  j["plateau_factor"] = t.plateau_factor;
  j["plateau_patience"] = t.plateau_patience;
  j["min_lr"] = t.min_lr;
  j["val_fraction"] = t.val_fraction;
  j["seed"] = t.seed;
  return j;
}

void train_from_json(const nlohmann::json& j, TrainConfig& t) {
  for (const auto& [k, v] : j.items()) {
    if (k == "epochs") t.epochs = v.get<std::size_t>();
    else if (k == "batch_size") t.batch_size = v.get<std::size_t>();
    else if (k == "lr") t.lr = v.get<double>();
    else if (k == "weight_decay") t.weight_decay = v.get<double>();
    else if (k == "plateau_factor") t.plateau_factor = v.get<double>();
    else if (k == "plateau_patience") t.plateau_patience = v.get<std::size_t>();
    else if (k == "min_lr") t.min_lr = v.get<double>();
    else if (k == "val_fraction") t.val_fraction = v.get<double>();
    else if (k == "seed") t.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("run config: unknown train key '" + k + "'");
  }
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["model"] = json::parse(model_config_to_json(c.model));
  j["train"] = train_to_json(c.train);
  j["seed"] = c.train.seed;
  j["precision"] = c.precision;
  j["data"] = c.data_dir;
  j["out"] = c.out_dir;
  j["checkpoint"] = c.checkpoint;
  j["montage"] = c.montage;
  j["subject"] = c.subject ? json(*c.subject) : json(nullptr);
  j["session"] = c.session ? json(*c.session) : json(nullptr);
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("run config: expected a JSON object");
  RunConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "model") c.model = model_config_from_json(v.dump());
    else if (k == "train") train_from_json(v, c.train);
    else if (k == "seed") c.train.seed = v.get<std::uint64_t>();
    else if (k == "precision") c.precision = v.get<int>();
    else if (k == "data") c.data_dir = v.get<std::string>();
    else if (k == "out") c.out_dir = v.get<std::string>();
    else if (k == "checkpoint") c.checkpoint = v.get<std::string>();
    else if (k == "montage") c.montage = v.get<std::string>();
    else if (k == "subject") { if (!v.is_null()) c.subject = v.get<std::uint32_t>(); }
    else if (k == "session") { if (!v.is_null()) c.session = v.get<std::uint32_t>(); }
    else throw std::invalid_argument("run config: unknown key '" + k + "'");
  }
  return c;
}

namespace {

// Raw command-line values; unset optionals leave the config untouched.
struct Flags {
  std::string config;
  std::optional<std::string> data, out, variant, checkpoint, montage, kernels, gelu;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> subject, session;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  std::optional<int> precision;
  // Command specific.
  std::size_t subjects = 2, sessions = 5, trials_per_class = 20, channels = 32, samples = 1000;
  double snr = 1.0;
  std::size_t latency_trials = 1000, warmup = 20;
  std::size_t finetune_epochs = 50;
  std::vector<double> fractions{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  double tolerance = 1e-4;
  double epsilon = 1e-5;
};

struct Context {
  std::string command;
  std::vector<std::string> argv;
  RunConfig run;
  std::ostream& out;
  std::ostream& err;
  json outputs = json::array();
  json inputs = json::array();
};

void write_text(Context& ctx, const std::string& name, const std::string& text) {
  fs::create_directories(ctx.run.out_dir);
  const fs::path p = fs::path(ctx.run.out_dir) / name;
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + p.string() + "'");
  ctx.outputs.push_back(name);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

void note_input(Context& ctx, const std::string& path) {
  const auto bytes = detail::read_file(path);
  ctx.inputs.push_back({{"path", path}, {"bytes", bytes.size()}, {"crc32", hex32(crc32(bytes))}});
}

void write_manifest(Context& ctx) {
  json m;
  m["tool"] = "mftnet";
  m["version"] = kVersion;
  m["command"] = ctx.command;
  m["argv"] = ctx.argv;
  m["seed"] = ctx.run.train.seed;
  m["precision"] = ctx.run.precision;
  m["kernels"] = std::string(kernels::backend_name(kernels::active_backend()));
  m["gelu"] = layers::gelu_mode() == layers::GeluMode::erf ? "erf" : "tanh";
  m["threads"] = env_threads();
  m["config"] = json::parse(run_config_to_json(ctx.run));
  m["inputs"] = ctx.inputs;
  m["outputs"] = ctx.outputs;
  fs::create_directories(ctx.run.out_dir);
  std::ofstream f(fs::path(ctx.run.out_dir) / "manifest.json", std::ios::trunc);
  f << m.dump(2) << "\n";
}

Corpus load_data(Context& ctx) {
  if (ctx.run.data_dir.empty()) throw std::invalid_argument("--data is required for '" + ctx.command + "'");
  Corpus corpus = load_corpus(ctx.run.data_dir, ctx.run.model.classes);
  if (corpus.empty()) throw std::runtime_error("no .etf files under '" + ctx.run.data_dir + "'");
  for (const auto& e : fs::recursive_directory_iterator(ctx.run.data_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".etf") note_input(ctx, e.path().string());
  }
  std::sort(ctx.inputs.begin(), ctx.inputs.end(),
            [](const json& a, const json& b) { return a["path"].get<std::string>() < b["path"].get<std::string>(); });
  // The trial shape comes from the data.
  const TrialSet& first = corpus.begin()->second.begin()->second;
  ctx.run.model.electrodes = first.channels;
  ctx.run.model.samples = first.samples;
  return corpus;
}

const std::map<std::uint32_t, TrialSet>& pick_subject(Context& ctx, const Corpus& corpus) {
  if (!ctx.run.subject) ctx.run.subject = corpus.begin()->first;
  auto it = corpus.find(*ctx.run.subject);
  if (it == corpus.end()) throw std::invalid_argument("subject " + std::to_string(*ctx.run.subject) + " not in data");
  return it->second;
}

const TrialSet& pick_session(const std::map<std::uint32_t, TrialSet>& sessions, std::uint32_t id) {
  auto it = sessions.find(id);
  if (it == sessions.end()) throw std::invalid_argument("session " + std::to_string(id) + " not in data");
  return it->second;
}

std::string history_csv(const std::vector<EpochRecord>& h) {
  std::ostringstream os;
  os << std::setprecision(10) << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  for (const auto& r : h) {
    os << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.val_loss << ',' << r.val_acc << ',' << r.lr
       << '\n';
  }
  return os.str();
}

json summary_json(const ProtocolResult& r, const RunConfig& run) {
  json j;
  j["grand_mean"] = r.grand_mean;
  j["grand_std"] = r.grand_std;
  j["formatted"] = format_mean_std(r.grand_mean, r.grand_std);
  json subj = json::object();
  for (const auto& [s, m] : r.subject_means) subj[std::to_string(s)] = m;
  j["subject_means"] = subj;
  json sess = json::object();
  for (const auto& [s, m] : r.session_means) sess[std::to_string(s)] = m;
  j["session_means"] = sess;
  j["warnings"] = r.warnings;
  j["seed"] = run.train.seed;
  j["config"] = json::parse(run_config_to_json(run));
  return j;
}

// --- commands --------------------------------------------------------------

template <typename Real>
int cmd_params(Context& ctx) {
  Model<Real> model = build_model<Real>(ctx.run.model, ctx.run.train.seed);
  const ParameterCount pc = count_parameters(model);
  const std::size_t analytic = analytic_parameter_count(ctx.run.model);
  std::ostringstream csv;
  csv << "name,shape,count,trainable\n";
  ctx.out << "variant " << variant_name(model.variant()) << "\n";
  for (const auto& e : pc.breakdown) {
    std::string shape = shape_str(e.shape);
    std::replace(shape.begin(), shape.end(), ',', 'x');
    ctx.out << "  " << std::left << std::setw(40) << e.name << std::setw(16) << shape << std::right << std::setw(8)
            << e.count << (e.trainable ? "" : "  (non-trainable)") << "\n";
    csv << e.name << ',' << shape << ',' << e.count << ',' << (e.trainable ? 1 : 0) << '\n';
  }
  ctx.out << "trainable parameters: " << pc.trainable << "\n";
  ctx.out << "non-trainable parameters: " << pc.non_trainable << "\n";
  ctx.out << "analytic trainable count: " << analytic << "\n";
  write_text(ctx, "params.csv", csv.str());
  return 0;
}

template <typename Real>
int cmd_synth(Context& ctx, const Flags& f) {
  fs::create_directories(ctx.run.out_dir);
  for (std::size_t s = 1; s <= f.subjects; ++s)
    for (std::size_t k = 1; k <= f.sessions; ++k) {
      TrialSet set = synth_generate(f.trials_per_class, f.channels, f.samples, ctx.run.train.seed + 1000 * s + k, f.snr);
      set.subject = static_cast<std::uint32_t>(s);
      set.session = static_cast<std::uint32_t>(k);
      set.tool_version = std::string("mftnet ") + kVersion;
      std::ostringstream name;
      name << "sub-" << std::setw(2) << std::setfill('0') << s << "_ses-" << k << ".etf";
      save_trials((fs::path(ctx.run.out_dir) / name.str()).string(), set);
      ctx.outputs.push_back(name.str());
    }
  ctx.out << "wrote " << f.subjects * f.sessions << " synthetic sessions to " << ctx.run.out_dir << "\n";
  return 0;
}

template <typename Real>
Model<Real> train_subject(Context& ctx, const std::map<std::uint32_t, TrialSet>& sessions, TrainHistory<Real>* hist) {
  const TrialSet& s1 = pick_session(sessions, ctx.run.session.value_or(1));
  const Split split = split_train_val(s1, SplitSpec{ctx.run.train.val_fraction, ctx.run.train.seed}, ctx.run.model.classes);
  Model<Real> model = build_model<Real>(ctx.run.model, ctx.run.train.seed);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    ctx.err << "epoch " << r.epoch << " loss " << r.train_loss << " acc " << r.train_acc << " val_loss " << r.val_loss
            << " val_acc " << r.val_acc << " lr " << r.lr << "\n";
  };
  TrainHistory<Real> h = train(model, split.train, split.val, ctx.run.train, hooks);
  if (hist) *hist = std::move(h);
  return model;
}

template <typename Real>
int cmd_train(Context& ctx) {
  const Corpus corpus = load_data(ctx);
  const auto& sessions = pick_subject(ctx, corpus);
  TrainHistory<Real> hist;
  Model<Real> model = train_subject<Real>(ctx, sessions, &hist);
  write_text(ctx, "history.csv", history_csv(hist.epochs));
  fs::create_directories(ctx.run.out_dir);
  save_checkpoint((fs::path(ctx.run.out_dir) / "model.mftw").string(), model);
  ctx.outputs.push_back("model.mftw");
  ProtocolResult r;
  const std::uint32_t train_session = ctx.run.session.value_or(1);
  for (const auto& [id, set] : sessions) {
    if (id == train_session) continue;
    const Evaluation ev = evaluate(model, set);
    r.rows.push_back({*ctx.run.subject, id, ev.accuracy, ev.n});
    ctx.out << "session " << id << " accuracy " << std::fixed << std::setprecision(4) << ev.accuracy << "\n";
  }
  ctx.out << "best epoch " << hist.best_epoch << " val accuracy " << hist.best_val_acc << "\n";
  write_text(ctx, "results.csv", protocol_csv(r));
  return 0;
}

template <typename Real>
int cmd_protocol(Context& ctx) {
  const Corpus corpus = load_data(ctx);
  const ProtocolResult r = run_protocol<Real>(corpus, ctx.run.model, ctx.run.train, env_threads(), &ctx.err);
  write_text(ctx, "results.csv", protocol_csv(r));
  write_text(ctx, "summary.json", summary_json(r, ctx.run).dump(2) + "\n");
  ctx.out << "subject-dependent cross-session accuracy (%): " << format_mean_std(r.grand_mean, r.grand_std) << "\n";
  for (const auto& [s, m] : r.session_means) {
    ctx.out << "  session " << s << ": " << std::fixed << std::setprecision(1) << m * 100.0 << "\n";
  }
  return 0;
}

template <typename Real>
int cmd_ablate(Context& ctx) {
  const Corpus corpus = load_data(ctx);
  std::ostringstream csv;
  csv << std::setprecision(10) << "variant,multiscale,transformer,params,accuracy,std\n";
  ctx.out << std::left << std::setw(18) << "variant" << std::setw(13) << "multi-scale" << std::setw(13)
          << "transformer" << std::setw(9) << "params" << "accuracy (%)\n";
  for (Variant v : {Variant::full, Variant::no_transformer, Variant::no_multiscale, Variant::eegnet_baseline}) {
    ModelConfig mc = ctx.run.model;
    mc.variant = v;
    const std::size_t params = count_parameters(build_model<Real>(mc, ctx.run.train.seed)).trainable;
    const ProtocolResult r = run_protocol<Real>(corpus, mc, ctx.run.train, env_threads(), &ctx.err);
    const char* ms = has_multiscale(v) ? "✓" : "";
    const char* tr = has_transformer(v) ? "✓" : "";
    csv << variant_name(v) << ',' << (has_multiscale(v) ? 1 : 0) << ',' << (has_transformer(v) ? 1 : 0) << ',' << params
        << ',' << r.grand_mean << ',' << r.grand_std << '\n';
    ctx.out << std::left << std::setw(18) << variant_name(v) << std::setw(13 + (*ms ? 2 : 0)) << ms
            << std::setw(13 + (*tr ? 2 : 0)) << tr << std::setw(9) << params
            << format_mean_std(r.grand_mean, r.grand_std) << "\n";
  }
  write_text(ctx, "ablation.csv", csv.str());
  return 0;
}

template <typename Real>
Model<Real> obtain_model(Context& ctx, const std::map<std::uint32_t, TrialSet>& sessions) {
  if (!ctx.run.checkpoint.empty()) {
    note_input(ctx, ctx.run.checkpoint);
    Model<Real> m = load_checkpoint<Real>(ctx.run.checkpoint);
    ctx.run.model = m.config();
    return m;
  }
  return train_subject<Real>(ctx, sessions, nullptr);
}

template <typename Real>
std::vector<ClassMap<Real>> attribution_pass(Context& ctx, Model<Real>& model, const Flags& f,
                                             const std::map<std::uint32_t, TrialSet>& sessions,
                                             const TrialSet& target) {
  const TrialSet& s1 = pick_session(sessions, 1);
  finetune_for_interpretation(model, s1, f.finetune_epochs, ctx.run.train);
  std::vector<ClassMap<Real>> maps;
  for (std::size_t c = 0; c < ctx.run.model.classes; ++c) maps.push_back(class_average_map(model, target, c));
  return maps;
}

std::vector<std::string> channel_names(Context& ctx, std::size_t channels) {
  if (ctx.run.montage.empty()) return default_channel_names(channels);
  note_input(ctx, ctx.run.montage);
  return load_montage(ctx.run.montage, channels);
}

template <typename Real>
int cmd_interpret(Context& ctx, const Flags& f) {
  const Corpus corpus = load_data(ctx);
  const auto& sessions = pick_subject(ctx, corpus);
  Model<Real> model = obtain_model<Real>(ctx, sessions);
  const TrialSet& target = pick_session(sessions, ctx.run.session.value_or(1));
  const auto names = channel_names(ctx, target.channels);
  const auto maps = attribution_pass(ctx, model, f, sessions, target);
  json summary = json::array();
  for (const auto& cm : maps) {
    const std::string tag = "class" + std::to_string(cm.class_id);
    write_text(ctx, "scores_" + tag + ".csv", channel_scores_csv(cm.scores, names));
    write_text(ctx, "map_" + tag + ".csv", attribution_map_csv(cm.mean, names));
    std::vector<std::string> ranked;
    for (std::size_t c : cm.scores.ranking) ranked.push_back(names[c]);
    summary.push_back({{"class", cm.class_id}, {"trials", cm.n_trials}, {"ranking", ranked}});
    ctx.out << tag << ": " << cm.n_trials << " correctly classified trials; top channels";
    for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i) ctx.out << ' ' << ranked[i];
    ctx.out << "\n";
  }
  write_text(ctx, "attribution.json", summary.dump(2) + "\n");
  return 0;
}

template <typename Real>
int cmd_deletion(Context& ctx, const Flags& f) {
  const Corpus corpus = load_data(ctx);
  const auto& sessions = pick_subject(ctx, corpus);
  Model<Real> model = obtain_model<Real>(ctx, sessions);
  const TrialSet& target = pick_session(sessions, ctx.run.session.value_or(1));
  const auto maps = attribution_pass(ctx, model, f, sessions, target);
  std::vector<DeletionCurve> curves;
  for (const auto& cm : maps) {
    for (DeletionMode mode : {DeletionMode::most_important, DeletionMode::least_important}) {
      curves.push_back(deletion_test(model, target, cm.scores, f.fractions, mode, cm.class_id));
      const DeletionCurve& c = curves.back();
      ctx.out << "class " << c.class_id << " " << deletion_mode_name(mode) << "-important: AUC " << std::fixed
              << std::setprecision(4) << curve_auc(c) << " (" << c.n_trials << " trials, confidence";
      for (double m : c.mean_confidence) ctx.out << ' ' << m;
      ctx.out << ")\n";
    }
  }
  write_text(ctx, "deletion.csv", deletion_curves_csv(curves));
  return 0;
}

template <typename Real>
int cmd_gradcheck(Context& ctx, const Flags& f) {
  if (ctx.run.precision == 32) {
    ctx.err << "warning: finite-difference tolerances are not attainable at 32-bit; use --precision 64\n";
  }
  const ModelConfig cfg = gradcheck_config(ctx.run.model.variant);
  bool ok = true;
  json report = json::array();
  for (bool train_bn : {false, true}) {
    const ModelGradCheckReport r = model_grad_check<Real>(cfg, train_bn, ctx.run.train.seed, f.epsilon);
    const bool pass = r.max_relative_error <= f.tolerance;
    ok = ok && pass;
    ctx.out << "gradcheck " << variant_name(cfg.variant) << " C=" << cfg.electrodes << " T=" << cfg.samples << " ["
            << r.mode << "]: max relative error " << std::scientific << std::setprecision(3) << r.max_relative_error
            << " at " << r.worst << " over " << r.checked_entries << " entries: " << (pass ? "PASS" : "FAIL") << "\n"
            << std::defaultfloat;
    json params = json::array();
    for (const auto& p : r.parameters) {
      if (p.structurally_zero) ctx.out << "  " << p.name << ": gradient identically zero (not scored)\n";
      params.push_back({{"name", p.name},
                        {"max_relative_error", p.max_relative_error},
                        {"structurally_zero", p.structurally_zero}});
    }
    report.push_back({{"mode", r.mode},
                      {"max_relative_error", r.max_relative_error},
                      {"worst", r.worst},
                      {"tolerance", f.tolerance},
                      {"pass", pass},
                      {"parameters", params}});
  }
  write_text(ctx, "gradcheck.json", report.dump(2) + "\n");
  return ok ? 0 : 1;
}

template <typename Real>
int cmd_latency(Context& ctx, const Flags& f) {
  Model<Real> model = ctx.run.checkpoint.empty() ? build_model<Real>(ctx.run.model, ctx.run.train.seed)
                                                 : load_checkpoint<Real>(ctx.run.checkpoint);
  const ModelConfig& mc = model.config();
  std::mt19937_64 rng(ctx.run.train.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<Real> x({1, mc.electrodes, mc.samples});
  for (auto& v : x.values()) v = Real(normal(rng));
  for (std::size_t i = 0; i < f.warmup; ++i) model.predict(x);
  std::vector<double> ms;
  for (std::size_t i = 0; i < f.latency_trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.predict(x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / double(ms.size());
  const double median = sorted[sorted.size() / 2];
  ctx.out << "latency (batch 1, " << ms.size() << " trials after " << f.warmup << " warm-up, "
          << kernels::backend_name(kernels::active_backend()) << " kernels): mean " << std::fixed
          << std::setprecision(3) << mean << " ms, median " << median << " ms\n";
  json j{{"trials", ms.size()}, {"warmup", f.warmup}, {"mean_ms", mean}, {"median_ms", median},
         {"min_ms", sorted.front()}, {"max_ms", sorted.back()}};
  write_text(ctx, "latency.json", j.dump(2) + "\n");
  return 0;
}

template <typename Real>
int dispatch_command(Context& ctx, const Flags& f) {
  const std::string& c = ctx.command;
  if (c == "params") return cmd_params<Real>(ctx);
  if (c == "synth") return cmd_synth<Real>(ctx, f);
  if (c == "train") return cmd_train<Real>(ctx);
  if (c == "protocol") return cmd_protocol<Real>(ctx);
  if (c == "ablate") return cmd_ablate<Real>(ctx);
  if (c == "interpret") return cmd_interpret<Real>(ctx, f);
  if (c == "deletion-test") return cmd_deletion<Real>(ctx, f);
  if (c == "gradcheck") return cmd_gradcheck<Real>(ctx, f);
  if (c == "latency") return cmd_latency<Real>(ctx, f);
  throw std::logic_error("unhandled command " + c);
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON run configuration");
  app->add_option("--data", f.data, "directory of .etf trial files");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--seed", f.seed, "random seed (default 42)");
  app->add_option("--variant", f.variant, "full | no-transformer | no-multiscale | eegnet-baseline");
  app->add_option("--subject", f.subject, "subject id");
  app->add_option("--session", f.session, "session id");
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--batch-size", f.batch_size, "mini-batch size");
  app->add_option("--lr", f.lr, "initial learning rate");
  app->add_option("--precision", f.precision, "32 or 64")->check(CLI::IsMember({32, 64}));
  app->add_option("--checkpoint", f.checkpoint, "weight checkpoint (.mftw)");
  app->add_option("--montage", f.montage, "JSON montage of channel labels");
  app->add_option("--kernels", f.kernels, "scalar | avx2");
  app->add_option("--gelu", f.gelu, "erf | tanh")->check(CLI::IsMember({"erf", "tanh"}));
}

RunConfig resolve(const Flags& f) {
  RunConfig run;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw std::runtime_error("cannot open config '" + f.config + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    run = run_config_from_json(ss.str());
  }
  if (f.data) run.data_dir = *f.data;
  if (f.out) run.out_dir = *f.out;
  if (f.seed) run.train.seed = *f.seed;
  if (f.variant) run.model.variant = parse_variant(*f.variant);
  if (f.subject) run.subject = *f.subject;
  if (f.session) run.session = *f.session;
  if (f.epochs) run.train.epochs = *f.epochs;
  if (f.batch_size) run.train.batch_size = *f.batch_size;
  if (f.lr) run.train.lr = *f.lr;
  if (f.precision) run.precision = *f.precision;
  if (f.checkpoint) run.checkpoint = *f.checkpoint;
  if (f.montage) run.montage = *f.montage;
  if (run.precision != 32 && run.precision != 64) throw std::invalid_argument("precision must be 32 or 64");
  return run;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"EEG-MFTNet: multi-scale convolution + Transformer motor-imagery decoder"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Flags f;
  std::vector<CLI::App*> subs;
  auto sub = [&](const char* name, const char* desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    add_common(s, f);
    subs.push_back(s);
    return s;
  };
  sub("train", "train one subject on session 1 and test on the others");
  sub("protocol", "cross-session protocol over every subject");
  sub("ablate", "protocol for all four ablation variants");
  CLI::App* interp = sub("interpret", "Gradient x Input attributions and class maps");
  interp->add_option("--finetune-epochs", f.finetune_epochs, "fine-tune epochs before attribution");
  CLI::App* del = sub("deletion-test", "electrode deletion curves");
  del->add_option("--finetune-epochs", f.finetune_epochs, "fine-tune epochs before attribution");
  del->add_option("--fractions", f.fractions, "ascending deletion fractions starting at 0")->delimiter(',');
  sub("params", "trainable parameter breakdown");
  CLI::App* gc = sub("gradcheck", "finite-difference check of the full loss at C=4, T=32");
  gc->add_option("--tolerance", f.tolerance, "max relative error");
  gc->add_option("--epsilon", f.epsilon, "central-difference step");
  CLI::App* syn = sub("synth", "write a synthetic planted-channel corpus");
  syn->add_option("--subjects", f.subjects);
  syn->add_option("--sessions", f.sessions);
  syn->add_option("--trials-per-class", f.trials_per_class);
  syn->add_option("--channels", f.channels);
  syn->add_option("--samples", f.samples);
  syn->add_option("--snr", f.snr);
  CLI::App* lat = sub("latency", "per-trial inference timing (informational)");
  lat->add_option("--trials", f.latency_trials);
  lat->add_option("--warmup", f.warmup);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* active = nullptr;
    for (const CLI::App* s : subs)
      if (s->parsed()) active = s;
    err << (active ? active->help() : app.help());
    return 2;
  }

  CLI::App* chosen = nullptr;
  for (CLI::App* s : subs)
    if (s->parsed()) chosen = s;
  try {
    if (f.kernels) kernels::set_backend(kernels::parse_backend(*f.kernels));
    if (f.gelu) layers::set_gelu_mode(*f.gelu == "erf" ? layers::GeluMode::erf : layers::GeluMode::tanh);
    Context ctx{chosen->get_name(), std::vector<std::string>(argv, argv + argc), resolve(f), out, err};
    if (ctx.command == "gradcheck" && !f.precision && f.config.empty()) ctx.run.precision = 64;
    const int code = ctx.run.precision == 64 ? dispatch_command<double>(ctx, f) : dispatch_command<float>(ctx, f);
    write_manifest(ctx);
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mftnet
