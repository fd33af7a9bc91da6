#include "clinembed/store.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "clinembed/io.hpp"

namespace clinembed {

namespace {
constexpr char kMagic[4] = {'E', 'M', 'B', 'D'};
constexpr uint32_t kVersion = 1;
}  // namespace

void EmbeddingStore::validate() const {
  if (dim <= 0) {
    throw UsageError("embedding store '" + name + "' has non-positive dim");
  }
  if (matrix.size() != ids.size() * static_cast<size_t>(dim)) {
    throw ShapeError("embedding store '" + name + "': matrix has " +
                     std::to_string(matrix.size()) + " values for " +
                     std::to_string(ids.size()) + " ids of dim " +
                     std::to_string(dim));
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) {
      throw UsageError("embedding store '" + name + "': duplicate id '" + id +
                       "'");
    }
  }
  for (float v : matrix) {
    if (!std::isfinite(v)) {
      throw NumericError("embedding store '" + name +
                         "' contains non-finite values");
    }
  }
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine: vector lengths disagree, " +
                     std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) {
    throw NumericError("cosine: zero-norm vector");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

EmbeddingStore concat_embeddings(const EmbeddingStore& a,
                                 const EmbeddingStore& b, bool normalize) {
  if (a.ids.size() != b.ids.size()) {
    throw AlignmentError("concat: stores hold " + std::to_string(a.ids.size()) +
                         " and " + std::to_string(b.ids.size()) + " rows");
  }
  for (size_t i = 0; i < a.ids.size(); ++i) {
    if (a.ids[i] != b.ids[i]) {
      throw AlignmentError("concat: id mismatch at row " + std::to_string(i) +
                           ": '" + a.ids[i] + "' vs '" + b.ids[i] + "'");
    }
  }

  EmbeddingStore out;
  out.name = a.name + "+" + b.name;
  out.dim = a.dim + b.dim;
  out.ids = a.ids;
  out.matrix.resize(out.ids.size() * static_cast<size_t>(out.dim));

  auto copy_block = [&](const EmbeddingStore& src, size_t row, size_t offset) {
    const float* in = src.matrix.data() + row * static_cast<size_t>(src.dim);
    float* dst =
        out.matrix.data() + row * static_cast<size_t>(out.dim) + offset;
    if (!normalize) {
      std::copy(in, in + src.dim, dst);
      return;
    }
    double sq = 0.0;
    for (int j = 0; j < src.dim; ++j) sq += static_cast<double>(in[j]) * in[j];
    if (sq <= 0.0) {
      throw NumericError("concat: zero-norm row '" + src.ids[row] + "' in '" +
                         src.name + "' cannot be normalized");
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(sq));
    for (int j = 0; j < src.dim; ++j) dst[j] = in[j] * inv;
  };

  for (size_t row = 0; row < out.ids.size(); ++row) {
    copy_block(a, row, 0);
    copy_block(b, row, static_cast<size_t>(a.dim));
  }
  return out;
}

void write_store(const EmbeddingStore& store, const std::string& path) {
  store.validate();
  if (store.name.size() > std::numeric_limits<uint16_t>::max()) {
    throw UsageError("store name too long");
  }

  AtomicFile file(path);
  std::ostream& out = file.stream();
  out.write(kMagic, 4);
  bin::put_u32(out, kVersion);
  bin::put_u32(out, static_cast<uint32_t>(store.ids.size()));
  bin::put_u32(out, static_cast<uint32_t>(store.dim));
  bin::put_u16(out, static_cast<uint16_t>(store.name.size()));
  bin::put_bytes(out, store.name);
  for (const auto& id : store.ids) {
    if (id.size() > std::numeric_limits<uint16_t>::max()) {
      throw UsageError("record id too long: " + id);
    }
    bin::put_u16(out, static_cast<uint16_t>(id.size()));
    bin::put_bytes(out, id);
  }
  for (float v : store.matrix) bin::put_f32(out, v);
  file.commit();
}

EmbeddingStore read_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open store '" + path + "'");
  }
  bin::Reader r(in, "store '" + path + "'");
  r.expect_magic(kMagic);
  const uint32_t version = r.get_u32();
  if (version != kVersion) {
    throw r.error("unsupported version " + std::to_string(version));
  }

  EmbeddingStore store;
  const uint32_t count = r.get_u32();
  const uint32_t dim = r.get_u32();
  if (dim == 0 || dim > (1u << 24)) {
    throw r.error("invalid dim " + std::to_string(dim));
  }
  store.dim = static_cast<int>(dim);
  store.name = r.get_bytes(r.get_u16());
  store.ids.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    store.ids.push_back(r.get_bytes(r.get_u16()));
  }
  store.matrix.resize(static_cast<size_t>(count) * dim);
  for (auto& v : store.matrix) v = r.get_f32();
  r.expect_eof();
  store.validate();
  return store;
}

}  // namespace clinembed
