#include "mftnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "detail/binary_io.hpp"
#include "json.hpp"
#include "mftnet/crc32.hpp"

namespace mftnet {

namespace {
constexpr char kMagic[4] = {'E', 'E', 'G', 'T'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 4 + 4 + 4 + 4;
}  // namespace

std::size_t TrialSet::count(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void TrialSet::validate(std::size_t num_classes) const {
  if (channels == 0 || samples == 0) throw std::invalid_argument("trial set: channels and samples must be positive");
  if (labels.size() != n) throw std::invalid_argument("trial set: label count differs from trial count");
  if (data.size() != n * channels * samples) throw std::invalid_argument("trial set: sample buffer size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= num_classes) {
      throw std::invalid_argument("trial set: label " + std::to_string(labels[i]) + " of trial " + std::to_string(i) +
                                  " is not below " + std::to_string(num_classes));
    }
  }
  for (float v : data) {
    if (!std::isfinite(v)) throw std::invalid_argument("trial set: non-finite sample");
  }
}

std::vector<std::byte> encode_trials(const TrialSet& set) {
  set.validate(256);
  detail::ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kEtfVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.n));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.samples));
  w.put<float>(set.sample_rate);
  w.put<std::uint32_t>(set.subject);
  w.put<std::uint32_t>(set.session);
  w.put_bytes(set.labels.data(), set.labels.size());
  w.put_bytes(set.data.data(), set.data.size() * sizeof(float));
  w.put<std::uint32_t>(crc32(w.bytes()));
  return std::move(w.bytes());
}

TrialSet decode_trials(std::span<const std::byte> bytes, std::size_t num_classes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw EtfMagicError("not an ETF file (bad magic)");
  if (bytes.size() < kHeaderBytes + 4) throw EtfShapeError("truncated ETF header");
  detail::ByteReader r(bytes.data(), bytes.size());
  r.take(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kEtfVersion) throw EtfVersionError("unsupported ETF version " + std::to_string(version));
  TrialSet s;
  s.n = r.get<std::uint32_t>();
  s.channels = r.get<std::uint32_t>();
  s.samples = r.get<std::uint32_t>();
  s.sample_rate = r.get<float>();
  s.subject = r.get<std::uint32_t>();
  s.session = r.get<std::uint32_t>();
  if (s.channels == 0 || s.samples == 0) throw EtfShapeError("ETF header declares an empty trial shape");
  // 128-bit product so hostile u32 extents cannot wrap around.
  const unsigned __int128 values = static_cast<unsigned __int128>(s.n) * s.channels * s.samples;
  const unsigned __int128 expected = kHeaderBytes + s.n + values * 4 + 4;
  if (expected != bytes.size()) {
    throw EtfShapeError("ETF header declares n=" + std::to_string(s.n) + ", C=" + std::to_string(s.channels) +
                        ", T=" + std::to_string(s.samples) + " but the file holds " + std::to_string(bytes.size()) +
                        " bytes");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc32(bytes.first(body)) != stored) throw EtfChecksumError("ETF checksum mismatch");
  if (!(s.sample_rate > 0.0f) || !std::isfinite(s.sample_rate)) throw EtfValueError("ETF sample rate must be positive");

  const std::byte* lab = r.take(s.n);
  s.labels.resize(s.n);
  std::memcpy(s.labels.data(), lab, s.n);
  s.data.resize(static_cast<std::size_t>(values));
  std::memcpy(s.data.data(), r.take(s.data.size() * 4), s.data.size() * 4);
  try {
    s.validate(num_classes);
  } catch (const std::invalid_argument& e) {
    throw EtfValueError(e.what());
  }
  return s;
}

std::string sidecar_path(const std::string& etf_path) {
  return std::filesystem::path(etf_path).replace_extension(".json").string();
}

void save_trials(const std::string& path, const TrialSet& set) {
  detail::write_file(path, encode_trials(set));
  if (set.source.empty() && set.tool_version.empty() && !set.plant) return;
  nlohmann::ordered_json j;
  j["source"] = set.source;
  j["tool_version"] = set.tool_version;
  if (set.plant) {
    j["plant"] = {{"left", set.plant->left},
                  {"right", set.plant->right},
                  {"frequency_hz", set.plant->frequency_hz},
                  {"snr", std::isfinite(set.plant->snr) ? nlohmann::json(set.plant->snr) : nlohmann::json("inf")}};
  }
  std::ofstream out(sidecar_path(path));
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed writing sidecar for '" + path + "'");
}

TrialSet load_trials(const std::string& path, std::size_t num_classes) {
  const auto bytes = detail::read_file(path);
  TrialSet s = decode_trials(bytes, num_classes);
  const std::string side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    const auto j = nlohmann::json::parse(in);
    s.source = j.value("source", "");
    s.tool_version = j.value("tool_version", "");
    if (j.contains("plant")) {
      const auto& p = j["plant"];
      PlantInfo info;
      info.left = p.at("left").get<std::vector<std::size_t>>();
      info.right = p.at("right").get<std::vector<std::size_t>>();
      info.frequency_hz = p.value("frequency_hz", 11.0);
      info.snr = p.at("snr").is_string() ? std::numeric_limits<double>::infinity() : p.at("snr").get<double>();
      s.plant = info;
    }
  }
  return s;
}

TrialSet subset(const TrialSet& set, std::span<const std::size_t> indices) {
  TrialSet out = set;
  out.n = indices.size();
  out.labels.clear();
  out.data.clear();
  out.data.reserve(indices.size() * set.channels * set.samples);
  const std::size_t stride = set.channels * set.samples;
  for (std::size_t i : indices) {
    if (i >= set.n) throw std::out_of_range("subset: trial index " + std::to_string(i) + " out of range");
    out.labels.push_back(set.labels[i]);
    out.data.insert(out.data.end(), set.trial(i), set.trial(i) + stride);
  }
  return out;
}

Split split_train_val(const TrialSet& set, const SplitSpec& spec, std::size_t num_classes) {
  if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0)) {
    throw std::invalid_argument("split: val fraction must lie in (0, 1)");
  }
  std::mt19937_64 rng(spec.seed);
  Split split;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < set.n; ++i)
      if (set.labels[i] == c) idx.push_back(i);
    if (idx.size() < 2) {
      throw std::invalid_argument("split: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                  " trials; at least 2 are required");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_val = static_cast<std::size_t>(std::lround(spec.val_fraction * double(idx.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    split.val_indices.insert(split.val_indices.end(), idx.begin(), idx.begin() + n_val);
    split.train_indices.insert(split.train_indices.end(), idx.begin() + n_val, idx.end());
  }
  std::sort(split.train_indices.begin(), split.train_indices.end());
  std::sort(split.val_indices.begin(), split.val_indices.end());
  split.train = subset(set, split.train_indices);
  split.val = subset(set, split.val_indices);
  return split;
}

PlantInfo plant_layout(std::size_t channels) {
  const std::size_t m = std::max<std::size_t>(1, channels / 8);
  if (channels < 2 * m) {
    throw std::invalid_argument("synth: " + std::to_string(channels) + " channels cannot hold two disjoint plant sets of " +
                                std::to_string(m));
  }
  auto start = [&](std::size_t centre) {
    const std::size_t s = centre >= m / 2 ? centre - m / 2 : 0;
    return std::min(s, channels - m);
  };
  PlantInfo p;
  const std::size_t l0 = start(channels / 4);
  std::size_t r0 = start(3 * channels / 4);
  if (r0 < l0 + m) r0 = l0 + m;
  for (std::size_t i = 0; i < m; ++i) {
    p.left.push_back(l0 + i);
    p.right.push_back(r0 + i);
  }
  return p;
}

TrialSet synth_generate(std::size_t n_per_class, std::size_t channels, std::size_t samples, std::uint64_t seed,
                        double snr, float sample_rate) {
  if (n_per_class < 1) throw std::invalid_argument("synth: need at least one trial per class");
  if (!(snr > 0.0)) throw std::invalid_argument("synth: snr must be positive");
  if (samples == 0) throw std::invalid_argument("synth: samples must be positive");
  PlantInfo plant = plant_layout(channels);
  plant.snr = snr;

  TrialSet s;
  s.n = 2 * n_per_class;
  s.channels = channels;
  s.samples = samples;
  s.sample_rate = sample_rate;
  s.source = "synthetic";
  s.labels.resize(s.n);
  for (std::size_t i = 0; i < s.n; ++i) s.labels[i] = i < n_per_class ? 0 : 1;

  std::mt19937_64 rng(seed);
  std::shuffle(s.labels.begin(), s.labels.end(), rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double sigma = std::isfinite(snr) ? 1.0 / snr : 0.0;
  const double w = 2.0 * std::numbers::pi * plant.frequency_hz / sample_rate;

  s.data.assign(s.n * channels * samples, 0.0f);
  for (std::size_t i = 0; i < s.n; ++i) {
    float* x = s.trial(i);
    for (std::size_t k = 0; k < channels * samples; ++k) x[k] = static_cast<float>(sigma * noise(rng));
    const double phi = phase(rng);
    for (std::size_t c : s.labels[i] == 0 ? plant.left : plant.right) {
      for (std::size_t t = 0; t < samples; ++t) x[c * samples + t] += static_cast<float>(std::sin(w * double(t) + phi));
    }
  }
  s.plant = plant;
  return s;
}

template <typename Real>
Tensor<Real> gather(const TrialSet& set, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("gather: empty index list");
  Tensor<Real> out({indices.size(), set.channels, set.samples});
  const std::size_t stride = set.channels * set.samples;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= set.n) throw std::out_of_range("gather: trial index out of range");
    const float* src = set.trial(indices[b]);
    std::copy(src, src + stride, out.data() + b * stride);
  }
  return out;
}

template Tensor<float> gather(const TrialSet&, std::span<const std::size_t>);
template Tensor<double> gather(const TrialSet&, std::span<const std::size_t>);

Corpus load_corpus(const std::string& dir, std::size_t num_classes) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("data directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".etf") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Corpus corpus;
  for (const auto& f : files) {
    TrialSet s = load_trials(f.string(), num_classes);
    auto& sessions = corpus[s.subject];
    if (sessions.count(s.session)) {
      throw std::runtime_error("duplicate subject " + std::to_string(s.subject) + " session " +
                               std::to_string(s.session) + " in '" + f.string() + "'");
    }
    sessions.emplace(s.session, std::move(s));
  }
  return corpus;
}

}  // namespace mftnet
