#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "flame/model.hpp"
#include "flame/optimizer.hpp"

namespace flame {

// Versioned binary checkpoint: model spec, every named parameter array
// (including running statistics), optional optimizer state, epoch counter
// and run seed. The layout is fully deterministic, so save -> load -> save
// reproduces the file byte for byte.

inline constexpr std::uint32_t kCheckpointMagic = 0x4b434c46;  // "FLCK"
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckio {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw std::runtime_error("checkpoint: truncated file " + path);
  }
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const std::string& path) {
  const auto n = read_pod<std::uint64_t>(is, path);
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw std::runtime_error("checkpoint: truncated string in " + path);
  }
  return s;
}

template <typename Scalar>
void write_mat(std::ostream& os, const MatX<Scalar>& m) {
  write_pod<std::int64_t>(os, m.rows());
  write_pod<std::int64_t>(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
}

template <typename Scalar>
MatX<Scalar> read_mat(std::istream& is, const std::string& path) {
  const auto rows = read_pod<std::int64_t>(is, path);
  const auto cols = read_pod<std::int64_t>(is, path);
  if (rows < 0 || cols < 0) throw std::runtime_error("checkpoint: bad matrix header in " + path);
  MatX<Scalar> m(rows, cols);
  if (!is.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(sizeof(Scalar) * m.size()))) {
    throw std::runtime_error("checkpoint: truncated matrix in " + path);
  }
  return m;
}

}  // namespace ckio

template <typename Scalar>
void save_checkpoint(const std::string& path, FlameNet<Scalar>& net, std::int64_t epoch,
                     std::uint64_t seed, const AdamState<Scalar>* opt = nullptr) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);

  const ModelSpec& spec = net.spec();
  ckio::write_pod(os, kCheckpointMagic);
  ckio::write_pod(os, kCheckpointVersion);
  ckio::write_pod<std::uint8_t>(os, sizeof(Scalar));
  ckio::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(spec.variant));
  ckio::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(spec.preset));
  ckio::write_pod<std::int32_t>(os, spec.input_resolution);
  for (Index c : spec.channel_plan) ckio::write_pod<std::int64_t>(os, c);
  for (Index w : spec.head_widths) ckio::write_pod<std::int64_t>(os, w);
  ckio::write_pod<double>(os, spec.dropout);
  ckio::write_pod<double>(os, spec.heatmap_scale);
  ckio::write_pod<double>(os, spec.bn_eps);
  ckio::write_pod<double>(os, spec.bn_momentum);
  ckio::write_pod<std::int64_t>(os, epoch);
  ckio::write_pod<std::uint64_t>(os, seed);
  ckio::write_pod<std::uint8_t>(os, opt ? 1 : 0);

  ParamRefs<Scalar> params;
  net.collect_params(params);
  ckio::write_pod<std::uint64_t>(os, params.size());
  for (auto* p : params) {
    ckio::write_string(os, p->name);
    ckio::write_pod<std::uint8_t>(os, p->trainable ? 1 : 0);
    ckio::write_mat(os, p->value);
  }

  if (opt) {
    ckio::write_pod<std::int64_t>(os, opt->step);
    ckio::write_pod<std::uint64_t>(os, opt->m.size());
    for (std::size_t i = 0; i < opt->m.size(); ++i) {
      ckio::write_mat(os, opt->m[i]);
      ckio::write_mat(os, opt->v[i]);
    }
  }
  if (!os) throw std::runtime_error("checkpoint: short write to " + path);
}

template <typename Scalar>
struct LoadedCheckpoint {
  ModelSpec spec;
  std::int64_t epoch = 0;
  std::uint64_t seed = 0;
  std::unique_ptr<FlameNet<Scalar>> net;
  AdamState<Scalar> opt;
  bool has_opt = false;
};

// Element width (4 or 8) recorded in a checkpoint, for precision dispatch.
inline int checkpoint_scalar_size(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  if (ckio::read_pod<std::uint32_t>(is, path) != kCheckpointMagic) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  ckio::read_pod<std::uint32_t>(is, path);
  return ckio::read_pod<std::uint8_t>(is, path);
}

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

  if (ckio::read_pod<std::uint32_t>(is, path) != kCheckpointMagic) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = ckio::read_pod<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  }
  const auto ssize = ckio::read_pod<std::uint8_t>(is, path);
  if (ssize != sizeof(Scalar)) {
    throw std::runtime_error("checkpoint: precision mismatch in " + path + " (stored " +
                             std::to_string(int(ssize) * 8) + "-bit)");
  }

  LoadedCheckpoint<Scalar> out;
  out.spec.variant = static_cast<Variant>(ckio::read_pod<std::uint8_t>(is, path));
  out.spec.preset = static_cast<Preset>(ckio::read_pod<std::uint8_t>(is, path));
  out.spec.input_resolution = ckio::read_pod<std::int32_t>(is, path);
  for (auto& c : out.spec.channel_plan) c = ckio::read_pod<std::int64_t>(is, path);
  for (auto& w : out.spec.head_widths) w = ckio::read_pod<std::int64_t>(is, path);
  out.spec.dropout = ckio::read_pod<double>(is, path);
  out.spec.heatmap_scale = ckio::read_pod<double>(is, path);
  out.spec.bn_eps = ckio::read_pod<double>(is, path);
  out.spec.bn_momentum = ckio::read_pod<double>(is, path);
  out.epoch = ckio::read_pod<std::int64_t>(is, path);
  out.seed = ckio::read_pod<std::uint64_t>(is, path);
  out.has_opt = ckio::read_pod<std::uint8_t>(is, path) != 0;
  out.spec.validate();

  out.net = std::make_unique<FlameNet<Scalar>>(out.spec, out.seed);
  ParamRefs<Scalar> params;
  out.net->collect_params(params);

  const auto count = ckio::read_pod<std::uint64_t>(is, path);
  if (count != params.size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  }
  for (auto* p : params) {
    const std::string name = ckio::read_string(is, path);
    const bool trainable = ckio::read_pod<std::uint8_t>(is, path) != 0;
    if (name != p->name || trainable != p->trainable) {
      throw std::runtime_error("checkpoint: parameter order mismatch at " + name + " in " +
                               path);
    }
    MatX<Scalar> m = ckio::read_mat<Scalar>(is, path);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name + " in " + path);
    }
    p->value = std::move(m);
  }

  if (out.has_opt) {
    out.opt.step = ckio::read_pod<std::int64_t>(is, path);
    const auto n = ckio::read_pod<std::uint64_t>(is, path);
    out.opt.m.resize(n);
    out.opt.v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.opt.m[i] = ckio::read_mat<Scalar>(is, path);
      out.opt.v[i] = ckio::read_mat<Scalar>(is, path);
    }
  }
  return out;
}

}  // namespace flame
