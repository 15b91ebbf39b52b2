#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/net.hpp"
#include "xloco/rewards.hpp"

namespace xloco {

// Text manifest followed by one contiguous little-endian f32 blob:
//
//   XLOCO-CKPT v1
//   kind <specialist_loco|specialist_recovery|specialist_wbc|student|...>
//   config_hash <16 hex>
//   joint_profile <name>
//   meta <key> <value>            (0+ lines, sorted by key)
//   tensors <N>
//   tensor <name> <rows> <cols>   (N lines, registry order)
//   blob f32 <element count>
//   <raw column-major f32 data>
//
// Weights are stored in f32; a save -> load -> save cycle is byte-identical
// because reloaded values are exactly f32-representable.

struct TensorInfo {
  std::string name;
  int rows = 0, cols = 0;
};

struct CheckpointHeader {
  std::string kind;
  std::string config_hash;
  std::string joint_profile;
  std::map<std::string, std::string> meta;
  std::vector<TensorInfo> tensors;

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += static_cast<int64_t>(t.rows) * t.cols;
    return n;
  }
};

namespace ckpt_detail {

inline constexpr const char* kMagic = "XLOCO-CKPT v1";

inline std::string next_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(std::string("checkpoint: truncated before ") + what);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline std::vector<std::string> split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

/// Reads the manifest, leaving the stream at the first blob byte.
inline CheckpointHeader read_header(std::istream& in, const std::string& path) {
  CheckpointHeader h;
  if (next_line(in, "magic") != kMagic) throw ConfigError("checkpoint: bad magic in '" + path + "'");

  std::string line = next_line(in, "kind");
  auto tok = split(line);
  if (tok.size() != 2 || tok[0] != "kind") throw ConfigError("checkpoint: expected 'kind', got '" + line + "'");
  h.kind = tok[1];

  line = next_line(in, "config_hash");
  tok = split(line);
  if (tok.size() != 2 || tok[0] != "config_hash")
    throw ConfigError("checkpoint: expected 'config_hash', got '" + line + "'");
  h.config_hash = tok[1];

  line = next_line(in, "joint_profile");
  tok = split(line);
  if (tok.size() != 2 || tok[0] != "joint_profile")
    throw ConfigError("checkpoint: expected 'joint_profile', got '" + line + "'");
  h.joint_profile = tok[1];

  // optional meta lines, then the tensor table
  while (true) {
    line = next_line(in, "tensors");
    tok = split(line);
    if (!tok.empty() && tok[0] == "meta") {
      if (tok.size() < 3) throw ConfigError("checkpoint: malformed meta line '" + line + "'");
      std::string value = tok[2];
      for (size_t i = 3; i < tok.size(); ++i) value += " " + tok[i];
      h.meta[tok[1]] = value;
      continue;
    }
    if (tok.size() == 2 && tok[0] == "tensors") break;
    throw ConfigError("checkpoint: expected 'meta' or 'tensors', got '" + line + "'");
  }
  const int n = std::stoi(tok[1]);
  require(n >= 0, "checkpoint: negative tensor count");

  for (int i = 0; i < n; ++i) {
    line = next_line(in, "tensor entry");
    tok = split(line);
    if (tok.size() != 4 || tok[0] != "tensor")
      throw ConfigError("checkpoint: malformed tensor line '" + line + "'");
    TensorInfo t;
    t.name = tok[1];
    t.rows = std::stoi(tok[2]);
    t.cols = std::stoi(tok[3]);
    require(t.rows >= 0 && t.cols >= 0, "checkpoint: negative tensor shape");
    h.tensors.push_back(std::move(t));
  }

  line = next_line(in, "blob");
  tok = split(line);
  if (tok.size() != 3 || tok[0] != "blob" || tok[1] != "f32")
    throw ConfigError("checkpoint: expected 'blob f32 <count>', got '" + line + "'");
  if (std::stoll(tok[2]) != h.total_elements())
    throw ConfigError("checkpoint: blob count disagrees with the tensor table in '" + path + "'");
  return h;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                            const std::vector<TensorRef>& refs) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "checkpoint: cannot write '" + path + "'");

  int64_t total = 0;
  for (const TensorRef& r : refs) total += r.size();

  out << ckpt_detail::kMagic << "\n";
  out << "kind " << header.kind << "\n";
  out << "config_hash " << header.config_hash << "\n";
  out << "joint_profile " << header.joint_profile << "\n";
  for (const auto& [k, v] : header.meta) out << "meta " << k << " " << v << "\n";
  out << "tensors " << refs.size() << "\n";
  for (const TensorRef& r : refs) out << "tensor " << r.name << " " << r.rows << " " << r.cols << "\n";
  out << "blob f32 " << total << "\n";

  std::vector<float> buf;
  for (const TensorRef& r : refs) {
    buf.resize(static_cast<size_t>(r.size()));
    for (int i = 0; i < r.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(r.value[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  require(out.good(), "checkpoint: write failed for '" + path + "'");
}

/// Manifest only — used to check shapes/kinds before constructing networks.
inline CheckpointHeader peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open '" + path + "'");
  return ckpt_detail::read_header(in, path);
}

/// Loads weights into an existing registry; names and shapes must match the
/// manifest exactly, in order.
inline CheckpointHeader load_checkpoint(const std::string& path, const std::vector<TensorRef>& refs) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open '" + path + "'");
  const CheckpointHeader h = ckpt_detail::read_header(in, path);

  if (h.tensors.size() != refs.size())
    throw ConfigError("checkpoint: '" + path + "' holds " + std::to_string(h.tensors.size()) + " tensors, expected " +
                      std::to_string(refs.size()));
  for (size_t i = 0; i < refs.size(); ++i) {
    const TensorInfo& t = h.tensors[i];
    const TensorRef& r = refs[i];
    if (t.name != r.name || t.rows != r.rows || t.cols != r.cols)
      throw ConfigError("checkpoint: tensor " + std::to_string(i) + " is " + t.name + "[" + std::to_string(t.rows) +
                        "x" + std::to_string(t.cols) + "], expected " + r.name + "[" + std::to_string(r.rows) + "x" +
                        std::to_string(r.cols) + "]");
  }

  std::vector<float> buf;
  for (const TensorRef& r : refs) {
    buf.resize(static_cast<size_t>(r.size()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
      throw ConfigError("checkpoint: blob truncated in '" + path + "'");
    for (int i = 0; i < r.size(); ++i) r.value[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  }
  return h;
}

inline std::string specialist_checkpoint_kind(Specialist s) {
  return std::string("specialist_") + specialist_name(s);
}

}  // namespace xloco
