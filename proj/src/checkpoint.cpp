#include "slm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "byte_io.hpp"
#include "slm/errors.hpp"

namespace slm {

namespace {

constexpr std::uint32_t kVersion = 1;

void write_config(detail::ByteWriter& w, const ModelConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.arch));
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.hidden_dim));
  w.u32(static_cast<std::uint32_t>(c.num_layers));
  w.u32(static_cast<std::uint32_t>(c.num_residual_blocks));
  w.u32(static_cast<std::uint32_t>(c.output_dim));
  w.f32(c.dropout_rate);
}

ModelConfig read_config(detail::ByteReader& r, const std::string& path) {
  ModelConfig c;
  const std::uint32_t arch = r.u32();
  if (arch > 1) throw FormatError(path + ": unknown arch code " + std::to_string(arch));
  c.arch = static_cast<Arch>(arch);
  c.input_dim = r.u32();
  c.hidden_dim = r.u32();
  c.num_layers = r.u32();
  c.num_residual_blocks = r.u32();
  c.output_dim = r.u32();
  c.dropout_rate = r.f32();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(path + ": invalid model config: " + e.what());
  }
  return c;
}

void write_tensors(detail::ByteWriter& w, const ModelParams& p) {
  for (auto t : tensor_views(p)) w.f32s(t);
}

void read_tensors(detail::ByteReader& r, ModelParams& p) {
  for (auto t : tensor_views(p)) r.f32s(t);
}

void expect_magic(detail::ByteReader& r, const char (&magic)[5], const std::string& path) {
  char buf[4];
  r.bytes(buf, 4);
  if (std::memcmp(buf, magic, 4) != 0) throw FormatError(path + ": bad magic, expected " + magic);
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return in;
}

}  // namespace

std::vector<char> serialize_model(const ModelConfig& config, const ModelParams& params) {
  check_shapes(params, config);
  detail::ByteWriter w;
  w.bytes("SLMP", 4);
  w.u32(kVersion);
  write_config(w, config);
  write_tensors(w, params);
  return w.buffer();
}

void save_model(const std::string& path, const ModelConfig& config, const ModelParams& params) {
  detail::write_file_bytes(path, serialize_model(config, params));
}

ModelCheckpoint load_model(const std::string& path) {
  auto in = open_binary(path);
  detail::ByteReader r(in, path);
  expect_magic(r, "SLMP", path);
  ModelCheckpoint ckpt{read_config(r, path), {}};
  ckpt.params = zero_params<float>(ckpt.config);
  read_tensors(r, ckpt.params);
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after tensors");
  if (!ckpt.params.all_finite()) throw ValidationError(path + ": non-finite parameter");
  return ckpt;
}

std::vector<char> serialize_optimizer(const ModelConfig& config, const OptimizerState& state) {
  check_shapes(state.first_moment, config);
  check_shapes(state.second_moment, config);
  detail::ByteWriter w;
  w.bytes("SLMO", 4);
  w.u32(kVersion);
  write_config(w, config);
  w.u64(state.step);
  write_tensors(w, state.first_moment);
  write_tensors(w, state.second_moment);
  return w.buffer();
}

void save_optimizer(const std::string& path, const ModelConfig& config,
                    const OptimizerState& state) {
  detail::write_file_bytes(path, serialize_optimizer(config, state));
}

OptimizerState load_optimizer(const std::string& path, const ModelConfig& expected_config) {
  auto in = open_binary(path);
  detail::ByteReader r(in, path);
  expect_magic(r, "SLMO", path);
  const ModelConfig config = read_config(r, path);
  if (!(config == expected_config)) {
    throw ValidationError(path + ": optimizer state belongs to a different model config");
  }
  OptimizerState state;
  state.step = r.u64();
  state.first_moment = zero_params<float>(config);
  state.second_moment = zero_params<float>(config);
  read_tensors(r, state.first_moment);
  read_tensors(r, state.second_moment);
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after tensors");
  return state;
}

}  // namespace slm
