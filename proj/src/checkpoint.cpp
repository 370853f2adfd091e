#include <fstream>
#include <stdexcept>

#include "unitslu/binary_io.hpp"
#include "unitslu/model.hpp"

// Layout: "USLU", version, config block, tensor block (parameters), u64 Adam
// step, tensor block (first moments), tensor block (second moments).
// Tensor block: u32 count, then per tensor u32 name length, name bytes,
// u32 rank, u32 dims, little-endian f64 data in row-major order.

namespace unitslu {
namespace {

constexpr char kMagic[5] = "USLU";
constexpr std::uint32_t kVersion = 1;

void write_config(std::ostream& out, const ModelConfig& c) {
  for (int v : {c.enc_layers, c.slu_dec_layers, c.unit_dec_layers, c.d_model, c.heads, c.ffn_dim,
                c.input_dim, c.slu_vocab_size, c.unit_vocab_size, c.max_decode_len}) {
    binary::write_u32(out, static_cast<std::uint32_t>(v));
  }
  binary::write_f64(out, c.dropout);
  binary::write_u64(out, c.seed);
}

ModelConfig read_config(std::istream& in) {
  ModelConfig c;
  for (int* v : {&c.enc_layers, &c.slu_dec_layers, &c.unit_dec_layers, &c.d_model, &c.heads,
                 &c.ffn_dim, &c.input_dim, &c.slu_vocab_size, &c.unit_vocab_size,
                 &c.max_decode_len}) {
    *v = static_cast<int>(binary::read_u32(in));
  }
  c.dropout = binary::read_f64(in);
  c.seed = binary::read_u64(in);
  return c;
}

void write_tensors(std::ostream& out, const Parameters& p) {
  binary::write_u32(out, static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& name = p.name(i);
    const Matrix& t = p.tensor(i);
    binary::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binary::write_u32(out, 2);
    binary::write_u32(out, static_cast<std::uint32_t>(t.rows()));
    binary::write_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) binary::write_f64(out, t(r, c));
    }
  }
}

Parameters read_tensors(std::istream& in, const ModelConfig& config) {
  Parameters p(config);
  const auto n = binary::read_u32(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = binary::read_u32(in);
    if (len > (1u << 16)) throw std::runtime_error("checkpoint: implausible tensor name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != static_cast<std::streamsize>(len)) {
      throw binary::TruncatedError("checkpoint: truncated tensor name");
    }
    const auto rank = binary::read_u32(in);
    if (rank != 2) throw std::runtime_error("checkpoint: tensor '" + name + "' has rank " +
                                            std::to_string(rank));
    const auto rows = binary::read_u32(in);
    const auto cols = binary::read_u32(in);
    Matrix t(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) t(r, c) = binary::read_f64(in);
    }
    p.add(name, std::move(t));
  }
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const Parameters& params,
                     const OptimizerState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  binary::write_magic(out, kMagic);
  binary::write_u32(out, kVersion);
  write_config(out, params.config());
  write_tensors(out, params);
  binary::write_u64(out, state.step);
  const OptimizerState fresh = OptimizerState::for_params(params);
  write_tensors(out, state.m.size() == params.size() ? state.m : fresh.m);
  write_tensors(out, state.v.size() == params.size() ? state.v : fresh.v);
  if (!out) throw std::runtime_error("error writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  if (!binary::read_magic(in, kMagic)) {
    throw std::runtime_error("checkpoint '" + path + "': bad magic");
  }
  const auto version = binary::read_u32(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint '" + path + "': unsupported version " +
                             std::to_string(version));
  }
  Checkpoint ck;
  const ModelConfig config = read_config(in);
  validate(config);
  ck.params = read_tensors(in, config);
  if (ck.params.count() != expected_parameter_count(config)) {
    throw std::runtime_error("checkpoint '" + path + "': tensors do not match the stored config");
  }
  ck.state.step = binary::read_u64(in);
  ck.state.m = read_tensors(in, config);
  ck.state.v = read_tensors(in, config);
  return ck;
}

}  // namespace unitslu
