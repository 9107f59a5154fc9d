#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/io/checkpoint.hpp"
#include "capsdbn/io/config.hpp"
#include "capsdbn/io/files.hpp"
#include "capsdbn/preprocess.hpp"

namespace capsdbn::io {

// --- CSV ---------------------------------------------------------------------

/// Splits one CSV record; fields may be double-quoted ("" escapes a quote).
inline std::vector<std::string> parse_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else if (ch != '\r') {
      fields.back() += ch;
    }
  }
  if (quoted) throw ConfigError("unterminated quote");
  return fields;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::string fixed6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// --- manifest ----------------------------------------------------------------

struct ManifestRow {
  std::filesystem::path path;  // resolved against the manifest's directory
  std::string raw_path;
  std::size_t label = 0;
  std::size_t line = 0;
};

/// Parses a `path,label` CSV; errors carry the offending line number.
inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& manifest, const RunConfig& cfg) {
  std::istringstream in(read_file(manifest));
  std::vector<ManifestRow> rows;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError("manifest " + manifest.string() + " line " + std::to_string(line_no) + ": " + msg);
  };
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    try {
      f = parse_csv_line(line);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
    if (line_no == 1) {
      if (f.size() != 2 || detail::trim(f[0]) != "path" || detail::trim(f[1]) != "label")
        fail("expected header 'path,label'");
      continue;
    }
    if (f.size() != 2) fail("expected 2 fields, got " + std::to_string(f.size()));
    ManifestRow row;
    row.raw_path = detail::trim(f[0]);
    row.line = line_no;
    if (row.raw_path.empty()) fail("empty path");
    const std::string label = detail::trim(f[1]);
    try {
      row.label = cfg.category_id(label);
    } catch (const ConfigError&) {
      fail("label '" + label + "' is not a declared category");
    }
    std::filesystem::path p(row.raw_path);
    row.path = p.is_absolute() ? p : manifest.parent_path() / p;
    if (!std::filesystem::exists(row.path)) fail("file not found: " + row.path.string());
    rows.push_back(std::move(row));
  }
  if (line_no == 0) throw ConfigError("manifest " + manifest.string() + " is empty");
  return rows;
}

// --- processed-patch archive --------------------------------------------------

// Layout: index.csv (file,split,label,source_id,channels,height,width),
// tensors/NNNNNN.f32 (raw little-endian binary32, [C,H,W] row-major),
// whitening.cblf (training-split statistics) and config.txt.

struct Archive {
  std::vector<ImagePatch> train;
  std::vector<ImagePatch> val;
  WhiteningStats whitening;
};

inline std::string tensor_bytes(const Tensor<float>& t) {
  std::string out;
  out.reserve(t.size() * 4);
  for (float f : t.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
  return out;
}

inline Tensor<float> tensor_from_bytes(std::string_view bytes, Shape shape, const std::string& what) {
  const std::size_t n = shape_size(shape);
  if (bytes.size() != n * 4) throw IoError(what + ": expected " + std::to_string(n * 4) + " bytes");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{static_cast<unsigned char>(bytes[i * 4 + b])} << (8 * b);
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor<float>(std::move(shape), std::move(data));
}

inline Checkpoint whitening_checkpoint(const WhiteningStats& w) {
  Checkpoint ck;
  ck.add_text("kind", "whitening");
  ck.add_tensor("whiten.mean", w.mean);
  ck.add_tensor("whiten.std", w.stddev);
  ck.add_tensor("whiten.eps", Tensor<float>({1}, {static_cast<float>(w.eps)}));
  return ck;
}

inline WhiteningStats whitening_from(const Checkpoint& ck) {
  WhiteningStats w;
  w.mean = ck.tensor("whiten.mean");
  w.stddev = ck.tensor("whiten.std");
  w.eps = ck.tensor("whiten.eps")[0];
  return w;
}

inline void write_archive(const std::filesystem::path& dir, const Archive& a, const RunConfig& cfg) {
  std::filesystem::create_directories(dir / "tensors");
  std::string index = "file,split,label,source_id,channels,height,width\n";
  std::size_t n = 0;
  for (const auto* part : {&a.train, &a.val}) {
    const char* split = part == &a.train ? "train" : "val";
    for (const ImagePatch& p : *part) {
      char name[32];
      std::snprintf(name, sizeof name, "tensors/%06zu.f32", n++);
      write_atomic(dir / name, tensor_bytes(p.pixels));
      index += std::string(name) + "," + split + "," + std::to_string(p.label.value()) + "," + csv_field(p.source_id) +
               "," + std::to_string(p.channels()) + "," + std::to_string(p.height()) + "," +
               std::to_string(p.width()) + "\n";
    }
  }
  write_atomic(dir / "index.csv", index);
  whitening_checkpoint(a.whitening).save(dir / "whitening.cblf");
  write_atomic(dir / "config.txt", cfg.to_text());
}

inline Archive read_archive(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "index.csv")) throw IoError("archive " + dir.string() + ": missing index.csv");
  std::istringstream in(read_file(dir / "index.csv"));
  Archive a;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    if (++line_no == 1 || line.empty()) continue;
    const auto f = parse_csv_line(line);
    if (f.size() != 7) throw IoError("archive index line " + std::to_string(line_no) + ": expected 7 fields");
    const Shape shape{std::stoul(f[4]), std::stoul(f[5]), std::stoul(f[6])};
    ImagePatch p{tensor_from_bytes(read_file(dir / f[0]), shape, f[0]), std::stoul(f[2]), f[3]};
    if (f[1] == "train") a.train.push_back(std::move(p));
    else if (f[1] == "val") a.val.push_back(std::move(p));
    else throw IoError("archive index line " + std::to_string(line_no) + ": unknown split '" + f[1] + "'");
  }
  a.whitening = whitening_from(Checkpoint::load(dir / "whitening.cblf"));
  return a;
}

}  // namespace capsdbn::io
