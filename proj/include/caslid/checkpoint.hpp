#pragma once

// Native checkpoint: version tag, embedded config (text + hash, validated on
// load), named parameter payloads in store order, optional optimizer state.
// Round-trips byte-exactly.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "caslid/adam.hpp"
#include "caslid/config.hpp"
#include "caslid/params.hpp"
#include "caslid/synthdata.hpp"  // detail::put/take + read_file_bytes

namespace caslid {

struct CheckpointInfo {
  uint32_t version = 1;
  uint8_t scalar_bytes = 4;  // 4 = float, 8 = double
  uint64_t config_hash = 0;
  std::string config_json;
  bool has_optimizer = false;
  int64_t step = 0;
};

namespace detail {

template <typename S>
void put_tensor(std::string& buf, const Tensor<S>& t) {
  put<uint8_t>(buf, static_cast<uint8_t>(t.rank()));
  for (int64_t i = 0; i < t.rank(); ++i) put<uint64_t>(buf, static_cast<uint64_t>(t.dim(i)));
  for (int64_t i = 0; i < t.numel(); ++i) put<S>(buf, t[i]);
}

template <typename S>
Tensor<S> take_tensor(const std::string& buf, size_t& off) {
  const auto rank = take<uint8_t>(buf, off);
  Shape shape;
  for (uint8_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(take<uint64_t>(buf, off)));
  std::vector<S> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = take<S>(buf, off);
  return Tensor<S>::from_vector(std::move(shape), std::move(v));
}

}  // namespace detail

template <typename S>
std::string serialize_checkpoint(const ParamStore<S>& store, const AdamState<S>* adam,
                                 const std::string& config_json, uint64_t config_hash) {
  std::string buf;
  buf.append("CSCK");
  detail::put<uint32_t>(buf, 1);  // version
  detail::put<uint8_t>(buf, static_cast<uint8_t>(sizeof(S)));
  detail::put<uint64_t>(buf, config_hash);
  detail::put<uint64_t>(buf, config_json.size());
  buf.append(config_json);
  detail::put<uint32_t>(buf, static_cast<uint32_t>(store.size()));
  for (const auto& p : store.params()) {
    detail::put<uint16_t>(buf, static_cast<uint16_t>(p.name.size()));
    buf.append(p.name);
    detail::put_tensor(buf, p.value);
  }
  detail::put<uint8_t>(buf, adam ? 1 : 0);
  if (adam) {
    detail::put<uint64_t>(buf, static_cast<uint64_t>(adam->step));
    for (const auto& m : adam->m) detail::put_tensor(buf, m);
    for (const auto& v : adam->v) detail::put_tensor(buf, v);
  }
  return buf;
}

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& store, const AdamState<S>* adam,
                     const std::string& config_json, uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const auto buf = serialize_checkpoint(store, adam, config_json, config_hash);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline CheckpointInfo peek_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "CSCK") throw IoError("not a checkpoint file");
  size_t off = 4;
  CheckpointInfo info;
  info.version = detail::take<uint32_t>(bytes, off);
  if (info.version != 1) throw IoError("unsupported checkpoint version");
  info.scalar_bytes = detail::take<uint8_t>(bytes, off);
  info.config_hash = detail::take<uint64_t>(bytes, off);
  const auto len = detail::take<uint64_t>(bytes, off);
  if (off + len > bytes.size()) throw IoError("checkpoint truncated");
  info.config_json = bytes.substr(off, len);
  return info;
}

// Loads parameters (and optimizer state if present) into an existing store.
// The store must have been built from the same architecture: names, shapes
// and the config hash are all validated.
template <typename S>
CheckpointInfo load_checkpoint(const std::string& bytes, ParamStore<S>& store,
                               AdamState<S>* adam, uint64_t expected_config_hash) {
  CheckpointInfo info = peek_checkpoint(bytes);
  if (info.scalar_bytes != sizeof(S))
    throw IoError(detail::strfmt("checkpoint precision is %d-bit but runtime is %d-bit",
                                 info.scalar_bytes * 8, static_cast<int>(sizeof(S)) * 8));
  if (info.config_hash != expected_config_hash)
    throw IoError("checkpoint config hash does not match the model configuration");

  size_t off = 4 + 4 + 1 + 8 + 8 + info.config_json.size();
  const auto n_params = detail::take<uint32_t>(bytes, off);
  if (n_params != store.size()) throw IoError("checkpoint parameter count mismatch");
  std::vector<Tensor<S>> values;
  for (uint32_t i = 0; i < n_params; ++i) {
    const auto name_len = detail::take<uint16_t>(bytes, off);
    const std::string name = bytes.substr(off, name_len);
    off += name_len;
    auto t = detail::take_tensor<S>(bytes, off);
    auto& p = store.params()[i];
    if (p.name != name) throw IoError("checkpoint parameter order mismatch at " + name);
    if (p.shape != t.shape()) throw IoError("checkpoint shape mismatch at " + name);
    values.push_back(std::move(t));
  }
  store.assign_values(values);

  info.has_optimizer = detail::take<uint8_t>(bytes, off) != 0;
  if (info.has_optimizer) {
    const auto step = detail::take<uint64_t>(bytes, off);
    std::vector<Tensor<S>> m, v;
    for (uint32_t i = 0; i < n_params; ++i) m.push_back(detail::take_tensor<S>(bytes, off));
    for (uint32_t i = 0; i < n_params; ++i) v.push_back(detail::take_tensor<S>(bytes, off));
    if (adam) {
      adam->step = static_cast<int64_t>(step);
      adam->m = std::move(m);
      adam->v = std::move(v);
    }
    info.step = static_cast<int64_t>(step);
  }
  if (off != bytes.size()) throw IoError("checkpoint has trailing bytes");
  return info;
}

}  // namespace caslid
