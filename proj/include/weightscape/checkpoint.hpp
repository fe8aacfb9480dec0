#pragma once

// Checkpoint container and its on-disk format.
//
// File layout (all integers little-endian):
//
//   magic      8 bytes   89 57 53 58 0D 0A 1A 0A   ("\x89WSX\r\n\x1a\n")
//   version    u32       1
//   length     u64       byte length of the manifest text
//   manifest   text      lines terminated by '\n':
//                          provenance <single-line text>        (0..n)
//                          entries <N>
//                          <name> <block> <kind> f32 <d0>x<d1>.. <offset> <count>
//   payload    bytes     float32 LE, entries back to back in manifest order;
//                        <offset> is the byte offset inside the payload
//   checksum   u64       FNV-1a 64 of the payload bytes

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weightscape/config.hpp"
#include "weightscape/error.hpp"
#include "weightscape/manifest.hpp"
#include "weightscape/parallel.hpp"
#include "weightscape/random.hpp"
#include "weightscape/tensor.hpp"

namespace weightscape {

struct CheckpointEntry {
  std::string name;
  BlockId block;
  ParamKind kind;
  Tensor tensor;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

/// Named, block-tagged parameter collection. Immutable once built; derived
/// checkpoints are new values.
class Checkpoint {
 public:
  Checkpoint() = default;

  explicit Checkpoint(std::vector<CheckpointEntry> entries,
                      std::vector<std::string> provenance = {})
      : entries_(std::move(entries)), provenance_(std::move(provenance)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.name.empty() ||
          e.name.find_first_of(" \t\r\n") != std::string::npos) {
        throw FormatError("invalid entry name '" + e.name + "'");
      }
      if (!index_.emplace(e.name, i).second) {
        throw DuplicateNameError("duplicate entry name '" + e.name + "'");
      }
      if (e.kind == ParamKind::bn_running_var) {
        for (float v : e.tensor.data()) {
          if (!(v >= 0.0f)) {
            throw FormatError("running variance '" + e.name +
                              "' has a negative element");
          }
        }
      }
    }
    for (const auto& line : provenance_) {
      if (line.find('\n') != std::string::npos) {
        throw FormatError("provenance records must be single lines");
      }
    }
  }

  const std::vector<CheckpointEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::string>& provenance() const noexcept { return provenance_; }

  const CheckpointEntry* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  const CheckpointEntry& at(std::string_view name) const {
    if (const auto* e = find(name)) return *e;
    throw ManifestError("checkpoint has no entry '" + std::string(name) + "'");
  }

  Manifest manifest() const {
    Manifest m;
    m.reserve(entries_.size());
    for (const auto& e : entries_) m.push_back({e.name, e.block, e.kind, e.tensor.shape()});
    return m;
  }

  /// Same entries with an extra provenance record appended.
  Checkpoint with_provenance(std::string record) const {
    auto lines = provenance_;
    lines.push_back(std::move(record));
    return Checkpoint(entries_, std::move(lines));
  }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.entries_ == b.entries_ && a.provenance_ == b.provenance_;
  }

 private:
  std::vector<CheckpointEntry> entries_;
  std::vector<std::string> provenance_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::uint32_t checkpoint_format_version = 1;
inline constexpr std::string_view checkpoint_magic{"\x89WSX\r\n\x1a\n", 8};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(std::string_view bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= std::uint64_t{static_cast<unsigned char>(bytes[pos + i])} << (8 * i);
  }
  return v;
}

inline Shape parse_shape(const std::string& text) {
  Shape shape;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('x', start), text.size());
    const std::string piece = text.substr(start, end - start);
    std::size_t extent = 0;
    auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), extent);
    if (piece.empty() || ec != std::errc{} || ptr != piece.data() + piece.size() ||
        extent == 0) {
      throw FormatError("malformed shape '" + text + "'");
    }
    shape.push_back(extent);
    start = end + 1;
  }
  return shape;
}

}  // namespace detail

/// Serializes to the portable byte format.
inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream manifest;
  for (const auto& line : ckpt.provenance()) manifest << "provenance " << line << '\n';
  manifest << "entries " << ckpt.size() << '\n';
  std::size_t offset = 0;
  for (const auto& e : ckpt.entries()) {
    manifest << e.name << ' ' << e.block.to_string() << ' ' << to_string(e.kind)
             << " f32 " << shape_string(e.tensor.shape()) << ' ' << offset << ' '
             << e.tensor.size() << '\n';
    offset += e.tensor.size() * 4;
  }
  const std::string text = manifest.str();

  std::string out;
  out.reserve(checkpoint_magic.size() + 12 + text.size() + offset + 8);
  out.append(checkpoint_magic);
  detail::put_u32(out, checkpoint_format_version);
  detail::put_u64(out, text.size());
  out.append(text);
  const std::size_t payload_start = out.size();
  for (const auto& e : ckpt.entries()) {
    for (float v : e.tensor.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  detail::put_u64(out, fnv1a64(std::string_view(out).substr(payload_start)));
  return out;
}

/// Parses the byte format. Every failure throws before anything is returned.
inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < checkpoint_magic.size() ||
      bytes.substr(0, checkpoint_magic.size()) != checkpoint_magic) {
    throw FormatError("not a checkpoint file (bad magic bytes)");
  }
  std::size_t pos = checkpoint_magic.size();
  if (bytes.size() < pos + 12) throw TruncatedError("checkpoint truncated inside header");
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, pos, 4));
  if (version != checkpoint_format_version) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) +
                       " (expected " + std::to_string(checkpoint_format_version) + ")");
  }
  const std::uint64_t manifest_len = detail::get_le(bytes, pos + 4, 8);
  pos += 12;
  if (manifest_len > bytes.size() - pos) {
    throw TruncatedError("checkpoint truncated inside manifest");
  }
  std::istringstream manifest{std::string(bytes.substr(pos, manifest_len))};
  const std::size_t payload_start = pos + manifest_len;

  struct Record {
    std::string name;
    BlockId block;
    ParamKind kind;
    Shape shape;
    std::size_t offset;
    std::size_t count;
  };
  std::vector<std::string> provenance;
  std::vector<Record> records;
  std::unordered_map<std::string, std::size_t> seen;
  std::optional<std::size_t> declared;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.rfind("provenance ", 0) == 0 && !declared) {
      provenance.push_back(line.substr(11));
      continue;
    }
    std::istringstream fields(line);
    if (!declared) {
      std::string tag;
      std::size_t n = 0;
      if (!(fields >> tag >> n) || tag != "entries") {
        throw FormatError("manifest: expected 'entries <N>', got '" + line + "'");
      }
      declared = n;
      continue;
    }
    std::string name, block, kind, dtype, shape;
    std::size_t offset = 0, count = 0;
    if (!(fields >> name >> block >> kind >> dtype >> shape >> offset >> count)) {
      throw FormatError("manifest: malformed entry record '" + line + "'");
    }
    auto block_id = BlockId::parse(block);
    auto kind_id = parse_param_kind(kind);
    if (!block_id) throw FormatError("manifest: unknown block tag '" + block + "'");
    if (!kind_id) throw FormatError("manifest: unknown kind '" + kind + "'");
    if (dtype != "f32") throw FormatError("manifest: unsupported dtype '" + dtype + "'");
    Shape parsed = detail::parse_shape(shape);
    if (shape_size(parsed) != count) {
      throw FormatError("manifest: entry '" + name + "' count disagrees with shape");
    }
    if (!seen.emplace(name, records.size()).second) {
      throw DuplicateNameError("duplicate entry name '" + name + "'");
    }
    records.push_back({name, *block_id, *kind_id, std::move(parsed), offset, count});
  }
  if (!declared) throw FormatError("manifest: missing entries record");
  if (*declared != records.size()) {
    throw FormatError("manifest declares " + std::to_string(*declared) +
                      " entries but lists " + std::to_string(records.size()));
  }

  std::size_t expected_offset = 0;
  for (const auto& r : records) {
    if (r.offset != expected_offset) {
      throw FormatError("manifest: entry '" + r.name + "' has non-contiguous offset");
    }
    if (payload_start + r.offset + r.count * 4 > bytes.size()) {
      throw TruncatedError("checkpoint truncated inside entry '" + r.name + "'");
    }
    expected_offset += r.count * 4;
  }
  const std::size_t payload_end = payload_start + expected_offset;
  if (bytes.size() < payload_end + 8) throw TruncatedError("checkpoint truncated before checksum");
  if (bytes.size() > payload_end + 8) throw FormatError("trailing bytes after checksum");
  const std::uint64_t stored = detail::get_le(bytes, payload_end, 8);
  if (stored != fnv1a64(bytes.substr(payload_start, expected_offset))) {
    throw ChecksumError("payload checksum mismatch");
  }

  std::vector<CheckpointEntry> entries;
  entries.reserve(records.size());
  for (auto& r : records) {
    std::vector<float> data(r.count);
    const std::size_t base = payload_start + r.offset;
    for (std::size_t i = 0; i < r.count; ++i) {
      data[i] = std::bit_cast<float>(
          static_cast<std::uint32_t>(detail::get_le(bytes, base + 4 * i, 4)));
    }
    entries.push_back({std::move(r.name), r.block, r.kind, Tensor(std::move(r.shape), std::move(data))});
  }
  return Checkpoint(std::move(entries), std::move(provenance));
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Synthesis

enum class InitScheme { unit_normal, scaled_fan_in };

inline std::optional<InitScheme> parse_init_scheme(std::string_view text) {
  if (text == "unit_normal") return InitScheme::unit_normal;
  if (text == "scaled_fan_in") return InitScheme::scaled_fan_in;
  return std::nullopt;
}

/// Deterministic stand-in checkpoint for a config. Running means are 0 and
/// running variances 1; every other entry is normal with std 1 (unit_normal)
/// or 1/sqrt(fan_in) (scaled_fan_in).
inline Checkpoint synthesize(const GraphConfig& config, std::uint64_t seed,
                             InitScheme scheme) {
  const Manifest manifest = build_manifest(config);
  std::vector<CheckpointEntry> entries(manifest.size());
  parallel_for(manifest.size(), [&](std::size_t i) {
    const ParamSpec& spec = manifest[i];
    Tensor t(spec.shape);
    if (spec.kind == ParamKind::bn_running_var) {
      std::fill(t.data().begin(), t.data().end(), 1.0f);
    } else if (spec.kind != ParamKind::bn_running_mean) {
      const double scale = scheme == InitScheme::unit_normal
                               ? 1.0
                               : 1.0 / std::sqrt(static_cast<double>(fan_in(spec, manifest)));
      const SeedStream stream(seed, spec.name);
      auto data = t.data();
      for (std::size_t j = 0; j < data.size(); ++j) {
        data[j] = static_cast<float>(scale * stream.normal(j, DrawPurpose::init));
      }
    }
    entries[i] = {spec.name, spec.block, spec.kind, std::move(t)};
  });
  return Checkpoint(std::move(entries));
}

// ---------------------------------------------------------------------------
// Statistics

enum class StatsMode { per_pixel, whole_entry };

/// Population mean/std of one entry. Conv kernels in per-pixel mode carry one
/// value per kernel position (rows x cols), pooled over the C_out x C_in
/// axes; everything else is a single whole-entry value (rows = cols = 1).
struct EntryStats {
  std::string name;
  BlockId block;
  ParamKind kind;
  bool per_pixel = false;
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t samples = 0;  // elements pooled per position
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t position_of(std::size_t element) const {
    return per_pixel ? element % (rows * cols) : 0;
  }
};

struct WeightStats {
  std::vector<EntryStats> entries;

  const EntryStats* find(std::string_view name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
};

inline EntryStats compute_entry_stats(const CheckpointEntry& entry,
                                      StatsMode mode = StatsMode::per_pixel) {
  EntryStats s;
  s.name = entry.name;
  s.block = entry.block;
  s.kind = entry.kind;
  const Shape& shape = entry.tensor.shape();
  s.per_pixel = mode == StatsMode::per_pixel && entry.kind == ParamKind::conv_kernel &&
                shape.size() == 4;
  if (s.per_pixel) {
    s.rows = shape[2];
    s.cols = shape[3];
  }
  const std::size_t positions = s.rows * s.cols;
  s.samples = entry.tensor.size() / positions;
  // Welford, one accumulator per kernel position
  std::vector<double> mean(positions, 0.0), m2(positions, 0.0);
  std::vector<std::size_t> n(positions, 0);
  const auto data = entry.tensor.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t p = s.position_of(i);
    const double x = data[i];
    const double delta = x - mean[p];
    mean[p] += delta / static_cast<double>(++n[p]);
    m2[p] += delta * (x - mean[p]);
  }
  s.mean = mean;
  s.std.resize(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    s.std[p] = std::sqrt(std::max(0.0, m2[p] / static_cast<double>(n[p])));
  }
  return s;
}

inline WeightStats compute_stats(const Checkpoint& ckpt,
                                 StatsMode mode = StatsMode::per_pixel) {
  WeightStats stats;
  stats.entries.resize(ckpt.size());
  parallel_for(ckpt.size(), [&](std::size_t i) {
    stats.entries[i] = compute_entry_stats(ckpt.entries()[i], mode);
  });
  return stats;
}

/// One JSON object per line, one line per entry.
inline std::string stats_report(const WeightStats& stats) {
  std::string out;
  for (const auto& e : stats.entries) {
    nlohmann::json j = {
        {"name", e.name},
        {"block", e.block.to_string()},
        {"kind", std::string(to_string(e.kind))},
        {"samples", e.samples},
        {"per_pixel", e.per_pixel},
    };
    if (e.per_pixel) {
      j["positions"] = {e.rows, e.cols};
      j["mean"] = e.mean;
      j["std"] = e.std;
    } else {
      j["mean"] = e.mean.front();
      j["std"] = e.std.front();
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diff

struct EntryDiff {
  std::string name;
  BlockId block;
  ParamKind kind;
  double max_abs_diff = 0.0;
  std::size_t differing = 0;  // elements whose bit patterns differ
  std::size_t count = 0;
};

/// Per-entry comparison of two checkpoints with identical manifests.
inline std::vector<EntryDiff> diff(const Checkpoint& a, const Checkpoint& b) {
  if (a.manifest() != b.manifest()) {
    throw ManifestError("cannot diff checkpoints with different manifests");
  }
  std::vector<EntryDiff> report;
  report.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entries()[i];
    const auto& eb = b.entries()[i];
    EntryDiff d;
    d.name = ea.name;
    d.block = ea.block;
    d.kind = ea.kind;
    d.count = ea.tensor.size();
    const auto da = ea.tensor.data();
    const auto db = eb.tensor.data();
    for (std::size_t j = 0; j < da.size(); ++j) {
      if (std::bit_cast<std::uint32_t>(da[j]) != std::bit_cast<std::uint32_t>(db[j])) {
        ++d.differing;
        d.max_abs_diff = std::max(
            d.max_abs_diff, std::abs(static_cast<double>(da[j]) - static_cast<double>(db[j])));
      }
    }
    report.push_back(std::move(d));
  }
  return report;
}

inline std::string diff_report(const std::vector<EntryDiff>& report) {
  std::string out;
  for (const auto& d : report) {
    nlohmann::json j = {
        {"name", d.name},
        {"block", d.block.to_string()},
        {"kind", std::string(to_string(d.kind))},
        {"count", d.count},
        {"differing", d.differing},
        {"max_abs_diff", d.max_abs_diff},
    };
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace weightscape
