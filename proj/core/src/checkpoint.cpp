#include "ensemblenet/checkpoint.hpp"

#include <algorithm>
#include <unordered_map>

#include "binary_io.hpp"
#include "ensemblenet/config.hpp"
#include "ensemblenet/model.hpp"

namespace enet {

namespace {

constexpr char kMagic[4] = {'E', 'N', 'S', 'C'};
constexpr std::uint32_t kVersion = 1;

std::vector<std::uint64_t> dims_of(const Tensor& t) {
  const Shape s = t.shape();
  return {static_cast<std::uint64_t>(s.n), static_cast<std::uint64_t>(s.c),
          static_cast<std::uint64_t>(s.h), static_cast<std::uint64_t>(s.w)};
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  detail::BinaryWriter w(path);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(metadata.size()));
  w.bytes(metadata.data(), metadata.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.kind));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) w.put<std::uint64_t>(d);
    w.bytes(e.data.data(), e.data.size() * sizeof(double));
  }
  w.finish(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  detail::BinaryReader r(path);
  Checkpoint ckpt;
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("bad checkpoint magic", 0);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  ckpt.metadata = r.str(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.get<std::uint16_t>());
    const auto kind_offset = r.offset();
    const auto kind = r.get<std::uint8_t>();
    if (kind > 1) throw FormatError("bad entry kind for " + e.name, kind_offset);
    e.kind = static_cast<EntryKind>(kind);
    const auto ndim = r.get<std::uint32_t>();
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.dims.push_back(r.get<std::uint64_t>());
      numel *= e.dims.back();
    }
    r.need(numel * sizeof(double));
    e.data.resize(numel);
    r.read(e.data.data(), numel * sizeof(double));
    ckpt.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return ckpt;
}

Checkpoint make_checkpoint(Model& model) {
  Checkpoint ckpt;
  ckpt.metadata = model_config_to_json(model.config());
  for (Parameter* p : model.parameters()) {
    ckpt.entries.push_back({p->name, EntryKind::kParameter, dims_of(p->value),
                            {p->value.values().begin(), p->value.values().end()}});
  }
  for (Buffer* b : model.buffers()) {
    ckpt.entries.push_back({b->name, EntryKind::kBuffer, dims_of(b->value),
                            {b->value.values().begin(), b->value.values().end()}});
  }
  return ckpt;
}

void apply_checkpoint(Model& model, const Checkpoint& ckpt) {
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : ckpt.entries) by_name[e.name] = &e;

  std::vector<std::string> problems;
  std::vector<std::pair<Tensor*, const CheckpointEntry*>> plan;
  auto match = [&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems.push_back(name + " (missing from checkpoint)");
      return;
    }
    if (it->second->dims != dims_of(t)) {
      problems.push_back(name + " (shape mismatch)");
    } else {
      plan.emplace_back(&t, it->second);
    }
    by_name.erase(it);
  };
  for (Parameter* p : model.parameters()) match(p->name, p->value);
  for (Buffer* b : model.buffers()) match(b->name, b->value);
  for (const auto& [name, e] : by_name) problems.push_back(name + " (not in model)");

  if (!problems.empty()) {
    std::sort(problems.begin(), problems.end());
    std::string msg = "checkpoint does not match model:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw LoadError(msg);
  }
  for (auto& [tensor, entry] : plan) std::copy(entry->data.begin(), entry->data.end(), tensor->data());
}

Model load_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.metadata.empty()) throw LoadError("checkpoint has no model config: " + path.string());
  Model model(model_config_from_json(ckpt.metadata));
  apply_checkpoint(model, ckpt);
  return model;
}

}  // namespace enet
