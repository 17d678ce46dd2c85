// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file:
//   magic "PGMC" | version u32 | config text (u32 length + bytes)
//   | parameter count u32 | records: name(u16 len + bytes) rank u8 dims u32* f32 payload
//   | has_optimizer u8 | [step u64, lr/wd/beta1/beta2/eps f64, count u32,
//                          records: name, m payload f32, v payload f32]
// All integers and floats little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "pgma/core/adamw.hpp"
#include "pgma/core/binary_io.hpp"
#include "pgma/core/graph.hpp"

namespace pgma {

inline constexpr char kCheckpointMagic[4] = {'P', 'G', 'M', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  std::string config_text;
  ParamStore<T> params;
  std::optional<AdamWState<T>> optimizer;
};

namespace detail {

template <typename T>
void write_payload(io::Writer& w, const Tensor<T>& t) {
  for (T v : t.data()) w.f32(static_cast<float>(v));
}

template <typename T>
Tensor<T> read_payload(io::Reader& r, const Shape& shape) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(r.f32("payload"));
  return t;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParamStore<T>& params,
                     const AdamWState<T>* optimizer = nullptr) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw io::FormatError(io::FormatError::Kind::Io, "cannot write " + tmp.string());
    io::Writer w(os);
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(config_text.size()));
    w.bytes(config_text.data(), config_text.size());
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, p] : params) {
      w.str16(name);
      w.u8(static_cast<std::uint8_t>(p.value.rank()));
      for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
      detail::write_payload(w, p.value);
    }
    w.u8(optimizer ? 1 : 0);
    if (optimizer) {
      const auto& c = optimizer->config;
      w.u64(optimizer->step);
      w.f64(c.lr);
      w.f64(c.weight_decay);
      w.f64(c.beta1);
      w.f64(c.beta2);
      w.f64(c.eps);
      w.u32(static_cast<std::uint32_t>(optimizer->m.size()));
      for (const auto& [name, m] : optimizer->m) {
        w.str16(name);
        detail::write_payload(w, m);
        detail::write_payload(w, optimizer->v.at(name));
      }
    }
    if (!os) throw io::FormatError(io::FormatError::Kind::Io, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError(io::FormatError::Kind::Io, "cannot open checkpoint " + path.string());
  io::Reader r(is);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw io::FormatError(io::FormatError::Kind::MagicMismatch, "not a checkpoint file: " + path.string());
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw io::FormatError(io::FormatError::Kind::UnsupportedVersion,
                          "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint<T> ck;
  const std::uint32_t cfg_len = r.u32("config length");
  ck.config_text.resize(cfg_len);
  r.bytes(ck.config_text.data(), cfg_len, "config");
  const std::uint32_t count = r.u32("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str16("parameter name");
    const std::uint8_t rank = r.u8("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dims");
    ck.params.add(name, detail::read_payload<T>(r, shape));
  }
  if (r.u8("optimizer flag")) {
    AdamWState<T> st;
    st.step = r.u64("step");
    st.config.lr = r.f64("lr");
    st.config.weight_decay = r.f64("weight decay");
    st.config.beta1 = r.f64("beta1");
    st.config.beta2 = r.f64("beta2");
    st.config.eps = r.f64("eps");
    const std::uint32_t n = r.u32("moment count");
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.str16("moment name");
      if (!ck.params.contains(name)) {
        throw io::FormatError(io::FormatError::Kind::BadRecord, "moment for unknown parameter " + name);
      }
      const Shape& shape = ck.params.get(name).value.shape();
      st.m[name] = detail::read_payload<T>(r, shape);
      st.v[name] = detail::read_payload<T>(r, shape);
    }
    ck.optimizer = std::move(st);
  }
  return ck;
}

}  // namespace pgma
