#include "clinembed/checkpoint.hpp"

#include <fstream>
#include <limits>

#include "clinembed/io.hpp"

namespace clinembed {

namespace {
constexpr char kMagic[4] = {'M', 'G', 'E', 'H'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kMaxRank = 8;
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  AtomicFile file(path);
  std::ostream& out = file.stream();

  out.write(kMagic, 4);
  bin::put_u32(out, kVersion);
  bin::put_u32(out, ckpt.config.vocab_size);
  bin::put_u32(out, ckpt.config.d_model);
  bin::put_u32(out, ckpt.config.n_layers);
  bin::put_u32(out, ckpt.config.n_heads);
  bin::put_u32(out, ckpt.config.d_ffn);
  bin::put_u32(out, ckpt.config.max_seq_len);
  bin::put_f32(out, ckpt.config.dropout_rate);

  bin::put_u32(out, static_cast<uint32_t>(ckpt.params.items.size()));
  for (const auto& item : ckpt.params.items) {
    if (item.name.size() > std::numeric_limits<uint16_t>::max()) {
      throw UsageError("parameter name too long: " + item.name);
    }
    bin::put_u16(out, static_cast<uint16_t>(item.name.size()));
    bin::put_bytes(out, item.name);
    bin::put_u32(out, static_cast<uint32_t>(item.tensor.rank()));
    for (int d : item.tensor.shape) {
      bin::put_u32(out, static_cast<uint32_t>(d));
    }
    for (float v : item.tensor.data) {
      bin::put_f32(out, v);
    }
  }
  file.commit();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open checkpoint '" + path + "'");
  }
  bin::Reader r(in, "checkpoint '" + path + "'");
  r.expect_magic(kMagic);
  const uint32_t version = r.get_u32();
  if (version != kVersion) {
    throw r.error("unsupported version " + std::to_string(version));
  }

  Checkpoint ckpt;
  ckpt.config.vocab_size = r.get_u32();
  ckpt.config.d_model = r.get_u32();
  ckpt.config.n_layers = r.get_u32();
  ckpt.config.n_heads = r.get_u32();
  ckpt.config.d_ffn = r.get_u32();
  ckpt.config.max_seq_len = r.get_u32();
  ckpt.config.dropout_rate = r.get_f32();

  const uint32_t count = r.get_u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.get_u16();
    std::string name = r.get_bytes(name_len);
    const uint32_t rank = r.get_u32();
    if (rank == 0 || rank > kMaxRank) {
      throw r.error("parameter '" + name + "' has invalid rank " +
                    std::to_string(rank));
    }
    std::vector<int> shape(rank);
    size_t numel = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      const uint32_t dim = r.get_u32();
      if (dim == 0 || dim > (1u << 28)) {
        throw r.error("parameter '" + name + "' has invalid dimension " +
                      std::to_string(dim));
      }
      shape[k] = static_cast<int>(dim);
      numel *= dim;
    }
    std::vector<float> data(numel);
    for (size_t j = 0; j < numel; ++j) data[j] = r.get_f32();
    ckpt.params.add(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  r.expect_eof();
  return ckpt;
}

}  // namespace clinembed
