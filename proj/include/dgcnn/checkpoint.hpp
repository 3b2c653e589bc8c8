#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dgcnn/error.hpp"
#include "dgcnn/tensor.hpp"

namespace dgcnn {

// Checkpoint container, version 1.  Little-endian throughout:
//   magic "DGCKPT", u16 version, u32 entry count, then per entry:
//   u16 name length, name bytes, u8 dtype (0=f64, 1=f32), u8 rank,
//   i64 extents[rank], raw values.
// Loading is strict: the model and file must carry exactly the same names
// with the same shapes and dtype.

static_assert(std::endian::native == std::endian::little, "checkpoint i/o assumes a little-endian host");

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated: " + path);
  return v;
}

template <typename S>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<S, double> ? 0 : 1;
}

}  // namespace detail

template <typename S, typename P>
void save_checkpoint(const std::string& path, P& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  std::vector<std::pair<std::string, Tensor<S>*>> entries;
  params.visit([&](const std::string& name, Tensor<S>& t, bool) { entries.emplace_back(name, &t); });

  out.write("DGCKPT", 6);
  detail::write_pod<std::uint16_t>(out, 1);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (auto& [name, tensor] : entries) {
    detail::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint8_t>(out, detail::dtype_tag<S>());
    detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(tensor->rank()));
    for (Index e : tensor->shape()) detail::write_pod<std::int64_t>(out, static_cast<std::int64_t>(e));
    out.write(reinterpret_cast<const char*>(tensor->data()),
              static_cast<std::streamsize>(tensor->numel() * static_cast<Index>(sizeof(S))));
  }
  if (!out) throw DataError("short write while saving checkpoint: " + path);
}

template <typename S, typename P>
void load_checkpoint(const std::string& path, P& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "DGCKPT", 6) != 0) throw CheckpointError("not a checkpoint file: " + path);
  auto version = detail::read_pod<std::uint16_t>(in, path);
  if (version != 1) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  auto count = detail::read_pod<std::uint32_t>(in, path);

  std::map<std::string, std::pair<Shape, std::vector<S>>> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = detail::read_pod<std::uint16_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    auto dtype = detail::read_pod<std::uint8_t>(in, path);
    if (dtype != detail::dtype_tag<S>())
      throw CheckpointError("checkpoint dtype does not match the model precision: " + path);
    auto rank = detail::read_pod<std::uint8_t>(in, path);
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(detail::read_pod<std::int64_t>(in, path)));
    std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(S)));
    if (!in) throw CheckpointError("checkpoint truncated: " + path);
    stored.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
  }

  std::size_t matched = 0;
  std::string problem;
  params.visit([&](const std::string& name, Tensor<S>& t, bool) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      if (problem.empty()) problem = "parameter '" + name + "' missing from checkpoint";
      return;
    }
    if (it->second.first != t.shape()) {
      if (problem.empty())
        problem = "parameter '" + name + "' has shape " + shape_str(it->second.first) + " in the checkpoint but " +
                  shape_str(t.shape()) + " in the model";
      return;
    }
    std::memcpy(t.data(), it->second.second.data(), it->second.second.size() * sizeof(S));
    ++matched;
  });
  if (!problem.empty()) throw CheckpointError(problem + ": " + path);
  if (matched != stored.size())
    throw CheckpointError("checkpoint carries " + std::to_string(stored.size() - matched) +
                          " entries the model does not have: " + path);
}

}  // namespace dgcnn
