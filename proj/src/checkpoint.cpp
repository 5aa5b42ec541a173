#include "icps/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "icps/config_json.hpp"

namespace fs = std::filesystem;

namespace icps {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_uint(std::istream& is, int bytes, const fs::path& path) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw IoError("truncated checkpoint '" + path.string() + "'");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

std::string shape_str(const std::vector<Index>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

template <typename Scalar>
Checkpoint make_checkpoint(Model<Scalar>& model, const nlohmann::json& metadata) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.metadata = metadata;
  for (const auto& p : model.parameters()) {
    CheckpointTensor t{"parameter", p.param->dims, {}};
    t.values.resize(static_cast<std::size_t>(p.param->value.size()));
    for (Index i = 0; i < p.param->value.size(); ++i) t.values[static_cast<std::size_t>(i)] = static_cast<float>(p.param->value.data()[i]);
    ckpt.tensors.emplace(p.name, std::move(t));
  }
  for (const auto& b : model.buffers()) {
    CheckpointTensor t{"buffer", b.dims, {}};
    t.values.resize(static_cast<std::size_t>(b.tensor->size()));
    for (Index i = 0; i < b.tensor->size(); ++i) t.values[static_cast<std::size_t>(i)] = static_cast<float>(b.tensor->data()[i]);
    ckpt.tensors.emplace(b.name, std::move(t));
  }
  return ckpt;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["model_config"] = to_json(ckpt.config);
  header["metadata"] = ckpt.metadata;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    header["tensors"].push_back(
        {{"name", name}, {"kind", t.kind}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    offset += t.values.size();
  }
  const std::string text = header.dump();

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint '" + path.string() + "'");
    os.write(kCheckpointMagic, 8);
    put_u32(os, kCheckpointVersion);
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      for (float v : t.values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(os, bits);
      }
    }
    if (!os) throw IoError("failed writing checkpoint '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("'" + path.string() + "' is not a checkpoint");
  const auto version = get_uint(is, 4, path);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
  const auto header_len = get_uint(is, 8, path);
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw IoError("truncated checkpoint header in '" + path.string() + "'");

  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ckpt.config = model_config_from_json(header.at("model_config"));
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in '" + path.string() + "': " + e.what());
  }
  const std::streampos payload = is.tellg();
  for (const auto& entry : header.at("tensors")) {
    CheckpointTensor t;
    t.kind = entry.at("kind").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<Index>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    is.seekg(payload + static_cast<std::streamoff>(offset * 4));
    t.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto bits = static_cast<std::uint32_t>(get_uint(is, 4, path));
      std::memcpy(&t.values[i], &bits, 4);
    }
    ckpt.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

template <typename Scalar>
void load_state(Model<Scalar>& model, const Checkpoint& ckpt) {
  struct Slot {
    std::vector<Index> dims;
    Tensor<Scalar>* tensor;
  };
  std::map<std::string, Slot> slots;
  for (const auto& p : model.parameters()) slots[p.name] = {p.param->dims, &p.param->value};
  for (const auto& b : model.buffers()) slots[b.name] = {b.dims, b.tensor};

  std::vector<std::string> problems;
  for (const auto& [name, slot] : slots) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      problems.push_back("missing '" + name + "'");
    } else if (it->second.shape != slot.dims) {
      problems.push_back("shape mismatch '" + name + "': model " + shape_str(slot.dims) + ", checkpoint " +
                         shape_str(it->second.shape));
    }
  }
  for (const auto& [name, t] : ckpt.tensors)
    if (!slots.count(name)) problems.push_back("unexpected '" + name + "'");
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match model (" + std::to_string(problems.size()) + " problems):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ContractViolation(msg);
  }
  for (auto& [name, slot] : slots) {
    const auto& values = ckpt.tensors.at(name).values;
    for (std::size_t i = 0; i < values.size(); ++i) slot.tensor->data()[i] = static_cast<Scalar>(values[i]);
  }
}

template Checkpoint make_checkpoint<float>(Model<float>&, const nlohmann::json&);
template Checkpoint make_checkpoint<double>(Model<double>&, const nlohmann::json&);
template void load_state<float>(Model<float>&, const Checkpoint&);
template void load_state<double>(Model<double>&, const Checkpoint&);

}  // namespace icps
