#pragma once

// Checkpoint container:
//   8 bytes  magic "SPICECKP"
//   u32      format version
//   u64      header length
//   header   JSON: network spec, training config, step, Adam state, and a
//            directory of tensors (name, shape, offset, count)
//   payload  float32 little-endian tensor data

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spice/model/network.hpp"
#include "spice/util/hash.hpp"

namespace spice {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'I', 'C', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  std::unique_ptr<SpiceNetwork<T>> network;
  nlohmann::json config;  // training config as written
  nlohmann::json extra;   // free-form (last losses, config hash, ...)
  std::int64_t step = 0;
  std::int64_t adam_steps = 0;
  bool has_adam_state = false;
};

namespace detail {

template <typename T>
struct TensorRef {
  std::string name;
  nn::Tensor<T>* tensor;
};

template <typename T>
std::vector<TensorRef<T>> checkpoint_tensors(SpiceNetwork<T>& net, bool adam) {
  std::vector<TensorRef<T>> out;
  for (auto* p : net.parameters()) {
    out.push_back({p->name, &p->var.mutable_value()});
    if (adam) {
      out.push_back({p->name + "#adam_m", &p->m});
      out.push_back({p->name + "#adam_v", &p->v});
    }
  }
  for (auto& [name, stats] : net.batchnorm_stats()) {
    out.push_back({name + ".running_mean", &stats->running_mean});
    out.push_back({name + ".running_var", &stats->running_var});
  }
  return out;
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(SpiceNetwork<T>& net, const nlohmann::json& config,
                                 std::int64_t step, const nn::Adam<T>* adam,
                                 const nlohmann::json& extra = nlohmann::json::object()) {
  auto tensors = detail::checkpoint_tensors(net, adam != nullptr);
  nlohmann::json dir = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    dir.push_back({{"name", t.name},
                   {"shape", t.tensor->shape},
                   {"offset", offset},
                   {"count", t.tensor->size()}});
    offset += t.tensor->size();
  }
  nlohmann::json header = {{"network", net.spec()},
                           {"config", config},
                           {"step", step},
                           {"extra", extra},
                           {"tensors", dir}};
  if (adam) {
    header["adam"] = {{"step", adam->step_count()},
                      {"lr", adam->options().lr},
                      {"beta1", adam->options().beta1},
                      {"beta2", adam->options().beta2},
                      {"eps", adam->options().eps}};
  }
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  auto put = [&out](const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
  };
  put(&kCheckpointVersion, 4);
  const std::uint64_t hlen = h.size();
  put(&hlen, 8);
  out += h;
  std::vector<float> buf;
  for (const auto& t : tensors) {
    buf.assign(t.tensor->data.begin(), t.tensor->data.end());
    put(buf.data(), buf.size() * sizeof(float));
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, SpiceNetwork<T>& net, const nlohmann::json& config,
                     std::int64_t step, const nn::Adam<T>* adam,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  const std::string bytes = serialize_checkpoint(net, config, step, adam, extra);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError("cannot move checkpoint into place at " + path);
  }
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint file");
  }
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&hlen, bytes.data() + 12, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  if (20 + hlen > bytes.size()) throw CheckpointError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(20, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  const std::size_t data_start = 20 + hlen;

  Checkpoint<T> ck;
  const NetworkSpec spec = header.at("network").get<NetworkSpec>();
  ck.network = std::make_unique<SpiceNetwork<T>>(spec, 0);
  ck.config = header.value("config", nlohmann::json::object());
  ck.extra = header.value("extra", nlohmann::json::object());
  ck.step = header.at("step").get<std::int64_t>();
  ck.has_adam_state = header.contains("adam");
  if (ck.has_adam_state) ck.adam_steps = header["adam"].at("step").get<std::int64_t>();

  std::map<std::string, const nlohmann::json*> dir;
  for (const auto& e : header.at("tensors")) dir[e.at("name").get<std::string>()] = &e;
  for (auto& ref : detail::checkpoint_tensors(*ck.network, ck.has_adam_state)) {
    auto it = dir.find(ref.name);
    if (it == dir.end()) throw CheckpointError("checkpoint lacks tensor " + ref.name);
    const auto& e = *it->second;
    const auto shape = e.at("shape").template get<nn::Shape>();
    if (shape != ref.tensor->shape) {
      throw CheckpointError("tensor " + ref.name + " has shape " + nn::shape_str(shape) +
                            ", network expects " + nn::shape_str(ref.tensor->shape));
    }
    const auto offset = e.at("offset").template get<std::size_t>();
    const auto count = e.at("count").template get<std::size_t>();
    if (count != ref.tensor->size() ||
        data_start + (offset + count) * sizeof(float) > bytes.size()) {
      throw CheckpointError("truncated data for tensor " + ref.name);
    }
    std::vector<float> buf(count);
    std::memcpy(buf.data(), bytes.data() + data_start + offset * sizeof(float),
                count * sizeof(float));
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::isfinite(buf[i])) throw CheckpointError("non-finite value in " + ref.name);
      ref.tensor->data[i] = static_cast<T>(buf[i]);
    }
  }
  return ck;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  try {
    return deserialize_checkpoint<T>(read_file_bytes(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": malformed header: " + e.what());
  }
}

inline std::string checkpoint_hash(const std::string& path) {
  return hex64(fnv1a64(read_file_bytes(path)));
}

}  // namespace spice
