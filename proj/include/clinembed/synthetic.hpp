#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clinembed/corpus.hpp"

namespace clinembed {

struct SyntheticConfig {
  int n_sentences = 1000;
  int n_topics = 2;
  uint64_t seed = 42;
};

struct SyntheticCorpus {
  std::vector<RawDocument> documents;  // one sentence per document
  // record id ("<doc_id>#0") -> topic name, aligned with documents.
  std::vector<std::pair<std::string, std::string>> labels;
};

// Templated clinical-style sentences drawn from disjoint topic vocabularies.
// Every sentence has at least five words, survives the preprocessing filter
// unchanged, and is byte-deterministic for a fixed seed.
SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg);

void write_labels(const std::string& path,
                  const std::vector<std::pair<std::string, std::string>>& labels);
std::vector<std::pair<std::string, std::string>> read_labels(
    const std::string& path);

}  // namespace clinembed
