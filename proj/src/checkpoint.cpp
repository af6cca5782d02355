#include "mftnet/checkpoint.hpp"

#include <cstring>

#include "detail/binary_io.hpp"
#include "mftnet/crc32.hpp"

namespace mftnet {

namespace {
constexpr char kMagic[4] = {'M', 'F', 'T', 'W'};

template <typename Stored, typename Real>
void copy_values(const std::byte* src, Tensor<Real>& dst) {
  for (std::size_t i = 0; i < dst.numel(); ++i) {
    Stored v;
    std::memcpy(&v, src + i * sizeof(Stored), sizeof(Stored));
    dst[i] = static_cast<Real>(v);
  }
}
}  // namespace

template <typename Real>
void save_checkpoint(const std::string& path, const Model<Real>& model) {
  detail::ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_string(model_config_to_json(model.config(), -1));
  const auto params = model.all_parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const Parameter<Real>* p : params) {
    w.put_string(p->name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) w.put<std::uint64_t>(d);
    w.put<std::uint8_t>(sizeof(Real));
    w.put_bytes(p->value.data(), p->value.numel() * sizeof(Real));
  }
  w.put<std::uint32_t>(crc32(w.bytes()));
  detail::write_file(path, w.bytes());
}

template <typename Real>
Model<Real> load_checkpoint(const std::string& path) {
  std::vector<std::byte> bytes;
  try {
    bytes = detail::read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("'" + path + "' is not a weight checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (crc32(std::span(bytes.data(), body)) != stored_crc) {
    throw CheckpointError("'" + path + "': checksum mismatch");
  }
  try {
    detail::ByteReader r(bytes.data(), body);
    r.take(4);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("'" + path + "': unsupported checkpoint version " + std::to_string(version));
    }
    const ModelConfig cfg = model_config_from_json(r.get_string());
    Model<Real> model = build_model<Real>(cfg, 0);
    const auto count = r.get<std::uint32_t>();
    auto params = model.all_parameters();
    if (count != params.size()) {
      throw CheckpointError("'" + path + "': " + std::to_string(count) + " records, model expects " +
                            std::to_string(params.size()));
    }
    for (Parameter<Real>* p : params) {
      const std::string name = r.get_string();
      if (name != p->name) throw CheckpointError("'" + path + "': expected record " + p->name + ", found " + name);
      const auto rank = r.get<std::uint32_t>();
      Shape shape;
      for (std::uint32_t i = 0; i < rank && i < 16; ++i) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      if (shape != p->value.shape()) {
        throw CheckpointError("'" + path + "': record " + name + " has shape " + shape_str(shape) + ", expected " +
                              shape_str(p->value.shape()));
      }
      const auto dtype = r.get<std::uint8_t>();
      if (dtype == 4) copy_values<float>(r.take(p->value.numel() * 4), p->value);
      else if (dtype == 8) copy_values<double>(r.take(p->value.numel() * 8), p->value);
      else throw CheckpointError("'" + path + "': record " + name + " has unknown dtype " + std::to_string(dtype));
    }
    if (r.remaining() != 0) throw CheckpointError("'" + path + "': trailing bytes after records");
    return model;
  } catch (const detail::TruncatedError& e) {
    throw CheckpointError("'" + path + "': truncated (" + e.what() + ")");
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError("'" + path + "': bad embedded config (" + e.what() + ")");
  }
}

template void save_checkpoint(const std::string&, const Model<float>&);
template void save_checkpoint(const std::string&, const Model<double>&);
template Model<float> load_checkpoint<float>(const std::string&);
template Model<double> load_checkpoint<double>(const std::string&);

}  // namespace mftnet
