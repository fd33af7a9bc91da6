#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clinembed/error.hpp"

namespace clinembed {

// Named matrix of fixed-dimension embeddings with aligned record ids.
// Immutable by convention once built; safe for shared concurrent reads.
struct EmbeddingStore {
  std::string name;
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<float> matrix;  // count x dim, row-major

  size_t count() const { return ids.size(); }

  std::span<const float> row(size_t i) const {
    return {matrix.data() + i * static_cast<size_t>(dim),
            static_cast<size_t>(dim)};
  }

  // Checks id uniqueness, matrix sizing, and value finiteness.
  void validate() const;
};

// Concatenates rows of two stores with identical id lists. With normalize
// (the default) each input row is L2-normalized first, which makes the hybrid
// cosine the arithmetic mean of the component cosines.
EmbeddingStore concat_embeddings(const EmbeddingStore& a,
                                 const EmbeddingStore& b,
                                 bool normalize = true);

// Binary layout (all integers little-endian): magic "EMBD", u32 version = 1,
// u32 count, u32 dim, u16 name length + name bytes, count x (u16 id length +
// id bytes), then count*dim little-endian f32 values, row-major.
void write_store(const EmbeddingStore& store, const std::string& path);
EmbeddingStore read_store(const std::string& path);

double cosine(std::span<const float> a, std::span<const float> b);

}  // namespace clinembed
