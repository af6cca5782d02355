#pragma once

// Trial storage, the ETF file format, validation splits and the synthetic
// planted-channel generator.
//
// ETF layout (little-endian):
//   "EEGT"  u32 version (1)  u32 n  u32 C  u32 T  f32 sample_rate
//   u32 subject  u32 session
//   u8 labels[n]
//   f32 samples[n][C][T]
//   u32 CRC-32 of every preceding byte
// An optional sidecar "<basename>.json" records provenance and, for
// synthetic sets, the planted channels.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mftnet/tensor.hpp"

namespace mftnet {

inline constexpr std::uint32_t kEtfVersion = 1;

struct PlantInfo {
  std::vector<std::size_t> left;   // channels carrying the class-0 rhythm
  std::vector<std::size_t> right;  // channels carrying the class-1 rhythm
  double frequency_hz = 11.0;
  double snr = 0.0;
};

struct TrialSet {
  std::size_t n = 0;
  std::size_t channels = 0;
  std::size_t samples = 0;
  float sample_rate = 250.0f;
  std::uint32_t subject = 1;
  std::uint32_t session = 1;
  std::vector<std::uint8_t> labels;  // 0 = left hand, 1 = right hand
  std::vector<float> data;           // [n][channels][samples]

  // Sidecar provenance.
  std::string source;
  std::string tool_version;
  std::optional<PlantInfo> plant;

  const float* trial(std::size_t i) const { return data.data() + i * channels * samples; }
  float* trial(std::size_t i) { return data.data() + i * channels * samples; }
  std::size_t count(std::uint8_t label) const;

  // Throws std::invalid_argument on any violated invariant.
  void validate(std::size_t num_classes = 2) const;
};

// Load failures. Each file-level problem has its own type.
class EtfError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class EtfMagicError : public EtfError {
 public:
  using EtfError::EtfError;
};
class EtfVersionError : public EtfError {
 public:
  using EtfError::EtfError;
};
class EtfChecksumError : public EtfError {
 public:
  using EtfError::EtfError;
};
class EtfShapeError : public EtfError {
 public:
  using EtfError::EtfError;
};
class EtfValueError : public EtfError {
 public:
  using EtfError::EtfError;
};

std::vector<std::byte> encode_trials(const TrialSet& set);
TrialSet decode_trials(std::span<const std::byte> bytes, std::size_t num_classes = 2);

// Writes the ETF file and, when the set carries provenance, its sidecar.
void save_trials(const std::string& path, const TrialSet& set);
TrialSet load_trials(const std::string& path, std::size_t num_classes = 2);
std::string sidecar_path(const std::string& etf_path);

TrialSet subset(const TrialSet& set, std::span<const std::size_t> indices);

struct SplitSpec {
  double val_fraction = 0.2;
  std::uint64_t seed = 42;
};

struct Split {
  TrialSet train;
  TrialSet val;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

// Stratified seeded split: every class contributes round(f * n_c) trials
// (at least one, at most n_c - 1) to validation.
Split split_train_val(const TrialSet& set, const SplitSpec& spec, std::size_t num_classes = 2);

// Two-class synthetic set. Every channel carries N(0, 1/snr) noise; trials
// of class 0 add a unit 11 Hz sinusoid with a random phase on the left plant
// channels, class 1 on the right plant channels. Each plant set holds
// max(1, C/8) channels; the two sets are disjoint. snr may be +inf.
TrialSet synth_generate(std::size_t n_per_class, std::size_t channels, std::size_t samples, std::uint64_t seed,
                        double snr, float sample_rate = 250.0f);

// Plant channels used by synth_generate for C channels.
PlantInfo plant_layout(std::size_t channels);

// [indices.size(), C, T] batch of the chosen trials.
template <typename Real>
Tensor<Real> gather(const TrialSet& set, std::span<const std::size_t> indices);

// Every "*.etf" file below `dir`, keyed by subject then session.
using Corpus = std::map<std::uint32_t, std::map<std::uint32_t, TrialSet>>;
Corpus load_corpus(const std::string& dir, std::size_t num_classes = 2);

}  // namespace mftnet
