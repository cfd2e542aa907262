#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "bssard/autograd.hpp"

namespace bssard {

/// One named float32 array.
struct NamedTable {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

/// Metadata header plus named tables. On disk: "BSCK", u16 version, u32 header
/// length, UTF-8 JSON header, u32 table count, then per table u16 name length,
/// name, u8 rank, u32 dims and little-endian float32 data.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTable> tables;

  const NamedTable* find(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename T>
NamedTable to_table(const std::string& name, const ag::Mat<T>& m) {
  NamedTable t;
  t.name = name;
  t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return t;
}

/// Copies a table into an existing matrix; throws kDimensionMismatch on shape or
/// absence.
template <typename T>
void from_table(const Checkpoint& ckpt, const std::string& name, ag::Mat<T>& out) {
  const NamedTable* t = ckpt.find(name);
  if (t == nullptr) throw Error(ErrorCode::kDimensionMismatch, "checkpoint lacks table " + name);
  if (t->shape.size() != 2 || static_cast<Eigen::Index>(t->shape[0]) != out.rows() ||
      static_cast<Eigen::Index>(t->shape[1]) != out.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "table " + name + " has the wrong shape");
  }
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<T>(t->data[static_cast<std::size_t>(i)]);
}

template <typename T>
void add_store(Checkpoint& ckpt, const ag::ParamStore<T>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) ckpt.tables.push_back(to_table(store[i].name, store[i].value));
}

template <typename T>
void load_store(const Checkpoint& ckpt, ag::ParamStore<T>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) from_table(ckpt, store[i].name, store[i].value);
}

}  // namespace bssard
