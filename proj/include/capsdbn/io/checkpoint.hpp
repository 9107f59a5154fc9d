#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/io/files.hpp"
#include "capsdbn/tensor.hpp"

namespace capsdbn::io {

// CBLF container, all integers little-endian:
//
//   "CBLF"  u32 version  u32 section_count
//   section table, per section:
//     u32 name_len, name bytes, u8 kind, u32 rank, rank x u32 dims,
//     u64 payload_offset (from file start), u64 payload_bytes
//   payloads, concatenated in table order
//
// kind 0: IEEE-754 binary32 tensor; kind 1: u32 array; kind 2: UTF-8 text.

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class SectionKind : std::uint8_t { f32 = 0, u32 = 1, text = 2 };

struct Section {
  std::string name;
  SectionKind kind = SectionKind::f32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint32_t> u32;
  std::string text;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Ordered collection of named sections with a byte-exact serialization.
class Checkpoint {
 public:
  void add_tensor(std::string name, const Tensor<float>& t) {
    Section s{std::move(name), SectionKind::f32, {}, t.storage(), {}, {}};
    for (std::size_t e : t.shape()) s.dims.push_back(static_cast<std::uint32_t>(e));
    add(std::move(s));
  }
  void add_u32(std::string name, std::vector<std::uint32_t> values) {
    const auto n = static_cast<std::uint32_t>(values.size());
    add(Section{std::move(name), SectionKind::u32, {n}, {}, std::move(values), {}});
  }
  void add_text(std::string name, std::string text) {
    const auto n = static_cast<std::uint32_t>(text.size());
    add(Section{std::move(name), SectionKind::text, {n}, {}, {}, std::move(text)});
  }

  bool has(std::string_view name) const { return find(name) != nullptr; }

  Tensor<float> tensor(std::string_view name) const {
    const Section& s = get(name, SectionKind::f32);
    Shape shape(s.dims.begin(), s.dims.end());
    return Tensor<float>(shape, s.f32);
  }
  const std::vector<std::uint32_t>& u32(std::string_view name) const { return get(name, SectionKind::u32).u32; }
  const std::string& text(std::string_view name) const { return get(name, SectionKind::text).text; }
  const std::vector<Section>& sections() const { return sections_; }

  std::string serialize() const {
    std::string table;
    std::vector<std::string> payloads;
    for (const Section& s : sections_) {
      std::string p;
      switch (s.kind) {
        case SectionKind::f32:
          for (float f : s.f32) detail::put_u32(p, std::bit_cast<std::uint32_t>(f));
          break;
        case SectionKind::u32:
          for (std::uint32_t v : s.u32) detail::put_u32(p, v);
          break;
        case SectionKind::text:
          p = s.text;
          break;
      }
      payloads.push_back(std::move(p));
    }
    std::size_t table_bytes = 0;
    for (const Section& s : sections_) table_bytes += 4 + s.name.size() + 1 + 4 + 4 * s.dims.size() + 16;
    std::uint64_t offset = 12 + table_bytes;
    std::string out = "CBLF";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(sections_.size()));
    for (std::size_t i = 0; i < sections_.size(); ++i) {
      const Section& s = sections_[i];
      detail::put_u32(out, static_cast<std::uint32_t>(s.name.size()));
      out += s.name;
      out.push_back(static_cast<char>(s.kind));
      detail::put_u32(out, static_cast<std::uint32_t>(s.dims.size()));
      for (std::uint32_t d : s.dims) detail::put_u32(out, d);
      detail::put_u64(out, offset);
      detail::put_u64(out, payloads[i].size());
      offset += payloads[i].size();
    }
    for (const std::string& p : payloads) out += p;
    return out;
  }

  static Checkpoint parse(std::string_view bytes) {
    detail::Reader r(bytes);
    if (r.take(4) != "CBLF") throw IoError("not a CBLF checkpoint (bad magic)");
    const auto version = static_cast<std::uint32_t>(r.uint(4));
    if (version != kCheckpointVersion)
      throw IoError("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
    const auto count = static_cast<std::uint32_t>(r.uint(4));
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
      Section s;
      s.name = std::string(r.take(static_cast<std::size_t>(r.uint(4))));
      const auto kind = static_cast<std::uint8_t>(r.uint(1));
      if (kind > 2) throw IoError("checkpoint section '" + s.name + "' has unknown kind");
      s.kind = static_cast<SectionKind>(kind);
      const auto rank = static_cast<std::uint32_t>(r.uint(4));
      std::uint64_t elements = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        s.dims.push_back(static_cast<std::uint32_t>(r.uint(4)));
        elements *= s.dims.back();
      }
      const std::uint64_t offset = r.uint(8), length = r.uint(8);
      if (offset + length > bytes.size()) throw IoError("checkpoint section '" + s.name + "' out of bounds");
      const std::uint64_t width = s.kind == SectionKind::text ? 1 : 4;
      if (rank == 0 || elements * width != length)
        throw IoError("checkpoint section '" + s.name + "' length does not match its dims");
      detail::Reader payload(bytes.substr(offset, length));
      for (std::uint64_t e = 0; e < elements && s.kind != SectionKind::text; ++e) {
        const auto v = static_cast<std::uint32_t>(payload.uint(4));
        if (s.kind == SectionKind::f32) s.f32.push_back(std::bit_cast<float>(v));
        else s.u32.push_back(v);
      }
      if (s.kind == SectionKind::text) s.text = std::string(payload.take(length));
      ck.add(std::move(s));
    }
    return ck;
  }

  void save(const std::filesystem::path& path) const { write_atomic(path, serialize()); }
  static Checkpoint load(const std::filesystem::path& path) {
    try {
      return parse(read_file(path));
    } catch (const IoError& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }

 private:
  void add(Section s) {
    if (has(s.name)) throw UsageError("checkpoint: duplicate section '" + s.name + "'");
    sections_.push_back(std::move(s));
  }
  const Section* find(std::string_view name) const {
    for (const Section& s : sections_)
      if (s.name == name) return &s;
    return nullptr;
  }
  const Section& get(std::string_view name, SectionKind kind) const {
    const Section* s = find(name);
    if (!s) throw IoError("checkpoint: missing section '" + std::string(name) + "'");
    if (s->kind != kind) throw IoError("checkpoint: section '" + std::string(name) + "' has the wrong kind");
    return *s;
  }

  std::vector<Section> sections_;
};

}  // namespace capsdbn::io
