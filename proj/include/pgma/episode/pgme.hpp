// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// PGME episode container.
//
//   magic "PGME" | version u32 | record*
//   record := name_len u16 | name bytes | dtype u8 (0 = f32, 1 = u8) | rank u8
//             | dims u32 * rank | row-major payload
//
// Everything little-endian. Records run to end of file. Record names:
//   meta.class_id (f32 [1]), meta.image_size (f32 [2] = H, W), text.embed,
//   query.feat.S{s}.L{l}, query.clip, query.mask (optional),
//   support{k}.feat.S{s}.L{l}, support{k}.clip, support{k}.mask,
//   meta.mode (u8 [2] = kind, level; optional, defaults to fss).
// Unrecognized record names are skipped so newer writers stay readable.

#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>

#include "pgma/core/binary_io.hpp"
#include "pgma/episode/episode.hpp"

namespace pgma {

inline constexpr char kEpisodeMagic[4] = {'P', 'G', 'M', 'E'};
inline constexpr std::uint32_t kEpisodeVersion = 1;

enum class Dtype : std::uint8_t { F32 = 0, U8 = 1 };

namespace pgme {

using Record = std::variant<Tensor<float>, Tensor<std::uint8_t>>;

inline void write_record(io::Writer& w, const std::string& name, const Tensor<float>& t) {
  w.str16(name);
  w.u8(static_cast<std::uint8_t>(Dtype::F32));
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.data()) w.f32(v);
}

inline void write_record(io::Writer& w, const std::string& name, const Tensor<std::uint8_t>& t) {
  w.str16(name);
  w.u8(static_cast<std::uint8_t>(Dtype::U8));
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.bytes(t.ptr(), t.size());
}

inline void write_stack(io::Writer& w, const std::string& prefix, const FeatureStack& fs) {
  for (std::size_t s = 0; s < fs.stages.size(); ++s)
    for (std::size_t l = 0; l < fs.stages[s].size(); ++l)
      write_record(w, prefix + ".feat.S" + std::to_string(s) + ".L" + std::to_string(l), fs.stages[s][l]);
  write_record(w, prefix + ".clip", fs.clip_visual);
}

inline std::map<std::string, Record> read_records(std::istream& is, const std::string& origin) {
  io::Reader r(is);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kEpisodeMagic, 4) != 0) {
    throw io::FormatError(io::FormatError::Kind::MagicMismatch, origin + ": bad magic, not a PGME file");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kEpisodeVersion) {
    throw io::FormatError(io::FormatError::Kind::UnsupportedVersion,
                          origin + ": unsupported PGME version " + std::to_string(version));
  }
  std::map<std::string, Record> out;
  while (!r.at_eof()) {
    std::string name = r.str16("record name");
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype > 1) {
      throw io::FormatError(io::FormatError::Kind::UnknownDtype,
                            origin + ": record " + name + " has unknown dtype " + std::to_string(dtype));
    }
    const std::uint8_t rank = r.u8("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dims");
    if (dtype == static_cast<std::uint8_t>(Dtype::F32)) {
      Tensor<float> t(shape);
      for (auto& v : t.data()) v = r.f32("f32 payload");
      out[name] = std::move(t);
    } else {
      Tensor<std::uint8_t> t(shape);
      r.bytes(t.ptr(), t.size(), "u8 payload");
      out[name] = std::move(t);
    }
  }
  return out;
}

template <typename U>
const Tensor<U>& expect(const std::map<std::string, Record>& recs, const std::string& name, const std::string& origin) {
  auto it = recs.find(name);
  if (it == recs.end()) {
    throw io::FormatError(io::FormatError::Kind::MissingRecord, origin + ": missing record " + name);
  }
  if (!std::holds_alternative<Tensor<U>>(it->second)) {
    throw io::FormatError(io::FormatError::Kind::BadRecord, origin + ": record " + name + " has wrong dtype");
  }
  return std::get<Tensor<U>>(it->second);
}

inline FeatureStack read_stack(const std::map<std::string, Record>& recs, const std::string& prefix,
                               const std::string& origin) {
  FeatureStack fs;
  for (std::size_t s = 0;; ++s) {
    const std::string stage = prefix + ".feat.S" + std::to_string(s) + ".L";
    if (!recs.count(stage + "0")) break;
    std::vector<Tensor<float>> layers;
    for (std::size_t l = 0; recs.count(stage + std::to_string(l)); ++l) {
      layers.push_back(expect<float>(recs, stage + std::to_string(l), origin));
    }
    fs.stages.push_back(std::move(layers));
  }
  if (fs.stages.empty()) {
    throw io::FormatError(io::FormatError::Kind::MissingRecord, origin + ": no " + prefix + ".feat records");
  }
  fs.clip_visual = expect<float>(recs, prefix + ".clip", origin);
  return fs;
}

}  // namespace pgme

inline void write_episode(std::ostream& os, const Episode& ep) {
  io::Writer w(os);
  w.bytes(kEpisodeMagic, 4);
  w.u32(kEpisodeVersion);
  pgme::write_record(w, "meta.class_id", Tensor<float>(Shape{1}, {static_cast<float>(ep.class_id)}));
  pgme::write_record(w, "meta.image_size",
                     Tensor<float>(Shape{2}, {static_cast<float>(ep.query.height), static_cast<float>(ep.query.width)}));
  pgme::write_record(w, "meta.mode",
                     Tensor<std::uint8_t>(Shape{2}, {static_cast<std::uint8_t>(ep.mode.kind),
                                                     static_cast<std::uint8_t>(ep.mode.level)}));
  pgme::write_record(w, "text.embed", ep.text_embed);
  pgme::write_stack(w, "query", ep.query);
  if (ep.query_mask) pgme::write_record(w, "query.mask", *ep.query_mask);
  for (std::size_t k = 0; k < ep.supports.size(); ++k) {
    const std::string prefix = "support" + std::to_string(k);
    pgme::write_stack(w, prefix, ep.supports[k].features);
    pgme::write_record(w, prefix + ".mask", ep.supports[k].mask);
  }
}

inline Episode read_episode(std::istream& is, const std::string& origin = "<stream>") {
  const auto recs = pgme::read_records(is, origin);
  Episode ep;
  const auto& cid = pgme::expect<float>(recs, "meta.class_id", origin);
  const auto& size = pgme::expect<float>(recs, "meta.image_size", origin);
  if (cid.size() != 1 || size.size() != 2) {
    throw io::FormatError(io::FormatError::Kind::BadRecord, origin + ": malformed meta record");
  }
  ep.class_id = static_cast<int>(cid[0]);
  ep.text_embed = pgme::expect<float>(recs, "text.embed", origin);
  ep.query = pgme::read_stack(recs, "query", origin);
  ep.query.height = static_cast<std::size_t>(size[0]);
  ep.query.width = static_cast<std::size_t>(size[1]);
  if (recs.count("query.mask")) ep.query_mask = pgme::expect<std::uint8_t>(recs, "query.mask", origin);
  if (recs.count("meta.mode")) {
    const auto& m = pgme::expect<std::uint8_t>(recs, "meta.mode", origin);
    if (m.size() != 2 || m[0] > static_cast<std::uint8_t>(TaskKind::CORRUPT_IMAGE)) {
      throw io::FormatError(io::FormatError::Kind::BadRecord, origin + ": malformed meta.mode");
    }
    ep.mode = TaskMode{static_cast<TaskKind>(m[0]), m[1]};
  }
  for (std::size_t k = 0; recs.count("support" + std::to_string(k) + ".mask"); ++k) {
    const std::string prefix = "support" + std::to_string(k);
    Shot shot;
    shot.features = pgme::read_stack(recs, prefix, origin);
    shot.mask = pgme::expect<std::uint8_t>(recs, prefix + ".mask", origin);
    if (shot.mask.rank() != 2) {
      throw io::FormatError(io::FormatError::Kind::BadRecord, origin + ": " + prefix + ".mask must be rank 2");
    }
    shot.features.height = shot.mask.dim(0);
    shot.features.width = shot.mask.dim(1);
    ep.supports.push_back(std::move(shot));
  }
  try {
    validate(ep);
  } catch (const EpisodeError& e) {
    throw io::FormatError(io::FormatError::Kind::BadRecord, origin + ": " + e.what());
  }
  return ep;
}

inline void save_episode(const Episode& ep, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::FormatError(io::FormatError::Kind::Io, "cannot write " + path.string());
  write_episode(os, ep);
  if (!os) throw io::FormatError(io::FormatError::Kind::Io, "write failed: " + path.string());
}

inline Episode load_episode(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError(io::FormatError::Kind::Io, "cannot open " + path.string());
  return read_episode(is, path.string());
}

// Keeps the first k support shots; fails if fewer are present.
inline Episode select_shots(Episode ep, std::size_t k) {
  if (ep.supports.size() < k) {
    throw EpisodeError("episode has " + std::to_string(ep.supports.size()) + " support shots, " +
                       std::to_string(k) + " requested");
  }
  ep.supports.resize(k);
  return ep;
}

}  // namespace pgma
