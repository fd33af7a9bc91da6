#include "clinembed/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "clinembed/io.hpp"

namespace clinembed {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string to_lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Table entries are matched lowercase with at most one trailing period removed.
std::string normalize_abbrev(const std::string& entry) {
  std::string e = to_lower(entry);
  if (!e.empty() && e.back() == '.') e.pop_back();
  return e;
}

}  // namespace

std::string clean_text(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (c == '=' || c == '_') continue;
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

const std::vector<std::string>& default_abbreviations() {
  static const std::vector<std::string> table = {
      "Dr.", "Mr.", "Mrs.", "Ms.", "vs.", "e.g.", "i.e.",
      "St.", "No.", "Fig.", "pt.", "hx.", "s/p", "c/f",
  };
  return table;
}

std::vector<std::string> segment_sentences(const std::string& cleaned) {
  return segment_sentences(cleaned, default_abbreviations());
}

std::vector<std::string> segment_sentences(
    const std::string& cleaned, const std::vector<std::string>& abbreviations) {
  std::unordered_set<std::string> table;
  for (const auto& a : abbreviations) table.insert(normalize_abbrev(a));

  std::vector<std::string> out;
  const size_t n = cleaned.size();

  auto emit = [&](size_t begin, size_t end) {
    while (begin < end && is_space(cleaned[begin])) ++begin;
    while (end > begin && is_space(cleaned[end - 1])) --end;
    if (end > begin) out.push_back(cleaned.substr(begin, end - begin));
  };

  size_t start = 0;
  for (size_t i = 0; i < n; ++i) {
    const char c = cleaned[i];
    if (c != '.' && c != '!' && c != '?') continue;
    // A terminator only ends a sentence when followed by whitespace or the
    // end of text; this keeps periods inside tokens ("21.7", "e.g.") intact.
    if (i + 1 < n && !is_space(cleaned[i + 1])) continue;
    if (c == '.') {
      // Preceding whitespace-delimited token, without this period.
      size_t tb = i;
      while (tb > start && !is_space(cleaned[tb - 1])) --tb;
      std::string token = cleaned.substr(tb, i - tb);
      size_t strip = 0;
      while (strip < token.size() && !is_alnum(token[strip])) ++strip;
      token = token.substr(strip);
      const bool initial =
          token.size() == 1 && std::isupper(static_cast<unsigned char>(token[0]));
      if (initial || table.count(to_lower(token)) > 0) continue;
      if (i > 0 && i + 1 < n && is_digit(cleaned[i - 1]) && is_digit(cleaned[i + 1])) {
        continue;
      }
    }
    emit(start, i + 1);
    start = i + 1;
  }
  emit(start, n);
  return out;
}

int count_words(const std::string& text) {
  int count = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++count;
    }
  }
  return count;
}

std::vector<SentenceRecord> filter_fragments(
    const std::vector<std::string>& sentences, const std::string& doc_id,
    const std::string& admission_id) {
  std::vector<SentenceRecord> out;
  for (const auto& s : sentences) {
    const int words = count_words(s);
    if (words < 5) continue;
    SentenceRecord rec;
    rec.doc_id = doc_id;
    rec.admission_id = admission_id;
    rec.index = static_cast<int>(out.size());
    rec.text = s;
    rec.word_count = words;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<SentenceRecord> preprocess_document(const RawDocument& doc) {
  return preprocess_document(doc, default_abbreviations());
}

std::vector<SentenceRecord> preprocess_document(
    const RawDocument& doc, const std::vector<std::string>& abbreviations) {
  const std::string cleaned = clean_text(doc.text);
  return filter_fragments(segment_sentences(cleaned, abbreviations),
                          doc.doc_id, doc.admission_id);
}

Vocabulary::Vocabulary() {
  id_to_token_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
  for (int32_t i = 0; i < 4; ++i) token_to_id_[id_to_token_[i]] = i;
}

std::vector<std::string> Vocabulary::tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (is_alnum(c)) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

Vocabulary Vocabulary::build(const std::vector<SentenceRecord>& corpus,
                             int min_frequency) {
  if (corpus.empty()) {
    throw UsageError("build_vocab: corpus is empty");
  }
  if (min_frequency < 1) {
    throw UsageError("build_vocab: min_frequency must be >= 1");
  }

  std::unordered_map<std::string, int64_t> counts;
  for (const auto& rec : corpus) {
    for (const auto& tok : tokenize(rec.text)) ++counts[tok];
  }

  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [tok, cnt] : counts) {
    if (cnt >= min_frequency) kept.emplace_back(tok, cnt);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.min_frequency_ = min_frequency;
  for (const auto& [tok, cnt] : kept) {
    (void)cnt;
    v.token_to_id_[tok] = static_cast<int32_t>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int32_t id) const {
  if (id < 0 || id >= size()) {
    throw UsageError("token id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int32_t> Vocabulary::encode(const std::string& text) const {
  std::vector<int32_t> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id_of(tok));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int32_t>& ids) const {
  std::string out;
  for (int32_t id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (!out.empty()) out += ' ';
    out += token_of(id);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  AtomicFile file(path);
  std::ostream& out = file.stream();
  for (int32_t id = 0; id < size(); ++id) {
    out << id << '\t' << id_to_token_[static_cast<size_t>(id)] << '\n';
  }
  file.commit();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open vocabulary '" + path + "'");
  }
  Vocabulary v;
  std::string line;
  int line_no = 0;
  int32_t expected = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("vocabulary '" + path + "' line " +
                        std::to_string(line_no) + ": missing tab");
    }
    int32_t id;
    try {
      id = static_cast<int32_t>(std::stol(line.substr(0, tab)));
    } catch (const std::exception&) {
      throw FormatError("vocabulary '" + path + "' line " +
                        std::to_string(line_no) + ": bad id");
    }
    const std::string token = line.substr(tab + 1);
    if (id != expected) {
      throw FormatError("vocabulary '" + path + "' line " +
                        std::to_string(line_no) + ": ids must be dense, got " +
                        std::to_string(id));
    }
    if (id < 4) {
      if (token != v.id_to_token_[static_cast<size_t>(id)]) {
        throw FormatError("vocabulary '" + path + "' line " +
                          std::to_string(line_no) +
                          ": special token mismatch: " + token);
      }
    } else {
      if (v.token_to_id_.count(token)) {
        throw FormatError("vocabulary '" + path + "' line " +
                          std::to_string(line_no) +
                          ": duplicate token: " + token);
      }
      v.token_to_id_[token] = id;
      v.id_to_token_.push_back(token);
    }
    ++expected;
  }
  if (expected < 4) {
    throw FormatError("vocabulary '" + path + "': missing special tokens");
  }
  return v;
}

namespace {

std::string escape_value(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_value(const std::string& s, const std::string& context) {
  std::string out;
  out.reserve(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (i + 1 >= s.size()) {
      throw FormatError(context + ": dangling escape");
    }
    switch (s[++i]) {
      case '\\': out += '\\'; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      default:
        throw FormatError(context + ": unknown escape \\" + s[i]);
    }
  }
  return out;
}

// One record line: tab-separated key=value fields.
std::map<std::string, std::string> parse_fields(const std::string& line,
                                                const std::string& context) {
  std::map<std::string, std::string> fields;
  size_t pos = 0;
  while (pos <= line.size()) {
    size_t tab = line.find('\t', pos);
    if (tab == std::string::npos) tab = line.size();
    const std::string field = line.substr(pos, tab - pos);
    const size_t eq = field.find('=');
    if (eq == std::string::npos) {
      throw FormatError(context + ": field without '=': " + field);
    }
    fields[field.substr(0, eq)] = unescape_value(field.substr(eq + 1), context);
    pos = tab + 1;
  }
  return fields;
}

const std::string& require_field(const std::map<std::string, std::string>& f,
                                 const std::string& key,
                                 const std::string& context) {
  auto it = f.find(key);
  if (it == f.end()) {
    throw FormatError(context + ": missing field '" + key + "'");
  }
  return it->second;
}

}  // namespace

void write_documents(const std::string& path,
                     const std::vector<RawDocument>& docs) {
  AtomicFile file(path);
  std::ostream& out = file.stream();
  for (const auto& d : docs) {
    out << "doc_id=" << escape_value(d.doc_id)
        << "\tadmission_id=" << escape_value(d.admission_id)
        << "\tsubject_id=" << escape_value(d.subject_id)
        << "\ttext=" << escape_value(d.text) << '\n';
  }
  file.commit();
}

std::vector<RawDocument> read_documents(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open documents '" + path + "'");
  }
  std::vector<RawDocument> docs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context =
        "documents '" + path + "' line " + std::to_string(line_no);
    auto f = parse_fields(line, context);
    RawDocument d;
    d.doc_id = require_field(f, "doc_id", context);
    d.admission_id = require_field(f, "admission_id", context);
    d.subject_id = require_field(f, "subject_id", context);
    d.text = require_field(f, "text", context);
    docs.push_back(std::move(d));
  }
  return docs;
}

void write_records(const std::string& path,
                   const std::vector<SentenceRecord>& records) {
  AtomicFile file(path);
  std::ostream& out = file.stream();
  for (const auto& r : records) {
    out << "doc_id=" << escape_value(r.doc_id)
        << "\tadmission_id=" << escape_value(r.admission_id)
        << "\tindex=" << r.index << "\tword_count=" << r.word_count
        << "\ttext=" << escape_value(r.text) << '\n';
  }
  file.commit();
}

std::vector<SentenceRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open records '" + path + "'");
  }
  std::vector<SentenceRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context =
        "records '" + path + "' line " + std::to_string(line_no);
    auto f = parse_fields(line, context);
    SentenceRecord r;
    r.doc_id = require_field(f, "doc_id", context);
    r.admission_id = require_field(f, "admission_id", context);
    try {
      r.index = std::stoi(require_field(f, "index", context));
      r.word_count = std::stoi(require_field(f, "word_count", context));
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception&) {
      throw FormatError(context + ": bad integer field");
    }
    r.text = require_field(f, "text", context);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace clinembed
