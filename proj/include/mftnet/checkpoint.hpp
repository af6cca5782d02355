#pragma once

// Weight checkpoints ("MFTW").
//
// Little-endian layout:
//   "MFTW"  u32 version (1)
//   u32 length + UTF-8 JSON model config
//   u32 record count, then per record:
//     u32 length + name, u32 rank, u64 extents[rank], u8 dtype (4 = f32,
//     8 = f64), raw values
//   u32 CRC-32 of every preceding byte
// Records cover trainable weights and batch-norm running moments in model
// order.

#include <stdexcept>
#include <string>

#include "mftnet/model.hpp"

namespace mftnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Real>
void save_checkpoint(const std::string& path, const Model<Real>& model);

// Rebuilds the model from the embedded config and loads every record.
// Values stored at the other precision are converted.
template <typename Real>
Model<Real> load_checkpoint(const std::string& path);

}  // namespace mftnet
