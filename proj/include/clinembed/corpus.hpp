#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "clinembed/error.hpp"

namespace clinembed {

struct RawDocument {
  std::string doc_id;
  std::string admission_id;
  std::string subject_id;
  std::string text;
};

// One kept sentence. Fragments under five words never reach this type.
struct SentenceRecord {
  std::string doc_id;
  std::string admission_id;
  int index = 0;
  std::string text;
  int word_count = 0;

  std::string record_id() const {
    return doc_id + "#" + std::to_string(index);
  }
};

// Replaces line breaks with spaces, strips the masking characters '=' and
// '_', collapses whitespace runs, and trims. Idempotent.
std::string clean_text(const std::string& raw);

// Abbreviations whose trailing period does not end a sentence. Entries are
// stored without the period and matched case-insensitively; single capital
// letters (initials) are handled separately.
const std::vector<std::string>& default_abbreviations();

// Splits cleaned text on . ! ? boundaries, keeping abbreviation periods and
// periods inside numbers (e.g. "21.7") attached to their sentence.
std::vector<std::string> segment_sentences(const std::string& cleaned);
std::vector<std::string> segment_sentences(
    const std::string& cleaned, const std::vector<std::string>& abbreviations);

int count_words(const std::string& text);

// Keeps sentences with at least five whitespace-delimited words, in order,
// assigning indices 0..n-1 over the kept set.
std::vector<SentenceRecord> filter_fragments(
    const std::vector<std::string>& sentences, const std::string& doc_id = "",
    const std::string& admission_id = "");

// clean -> segment -> filter for one document.
std::vector<SentenceRecord> preprocess_document(const RawDocument& doc);
std::vector<SentenceRecord> preprocess_document(
    const RawDocument& doc, const std::vector<std::string>& abbreviations);

// Token ids are dense; PAD/UNK/BOS/EOS occupy 0-3 and content tokens follow
// in descending frequency order (ties lexicographic).
class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kBos = 2;
  static constexpr int32_t kEos = 3;

  Vocabulary();

  // Lowercased alphanumeric-run tokenization; punctuation and whitespace are
  // separators.
  static std::vector<std::string> tokenize(const std::string& text);

  static Vocabulary build(const std::vector<SentenceRecord>& corpus,
                          int min_frequency);

  int32_t id_of(const std::string& token) const;
  const std::string& token_of(int32_t id) const;
  int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }
  int min_frequency() const { return min_frequency_; }

  std::vector<int32_t> encode(const std::string& text) const;
  std::string decode(const std::vector<int32_t>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::unordered_map<std::string, int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
  int min_frequency_ = 1;
};

// Line-delimited record files: tab-separated key=value fields, one record per
// line; tabs, newlines, and backslashes inside values are backslash-escaped.
void write_documents(const std::string& path,
                     const std::vector<RawDocument>& docs);
std::vector<RawDocument> read_documents(const std::string& path);
void write_records(const std::string& path,
                   const std::vector<SentenceRecord>& records);
std::vector<SentenceRecord> read_records(const std::string& path);

}  // namespace clinembed
