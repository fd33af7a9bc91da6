#include "clinembed/synthetic.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "clinembed/io.hpp"
#include "clinembed/rng.hpp"

namespace clinembed {

namespace {

struct TopicPool {
  const char* name;
  std::array<const char*, 16> terms;
};

// Disjoint term pools. Templates are slot-heavy so topic terms make up close
// to half of every sentence; that is what lets a from-scratch desk-scale
// encoder pick up the topic structure within a few hundred steps.
const std::array<TopicPool, 6> kTopics = {{
    {"renal",
     {"creatinine", "dialysis", "proteinuria", "oliguria", "nephropathy",
      "hyperkalemia", "azotemia", "uremia", "hemodialysis", "nephritis",
      "albuminuria", "diuresis", "nephron", "glomerular", "renal", "kidney"}},
    {"cardiac",
     {"troponin", "angina", "tachycardia", "infarction", "stenosis",
      "arrhythmia", "palpitations", "ischemia", "bradycardia", "hypertension",
      "murmur", "orthopnea", "cardiomyopathy", "atrial", "coronary",
      "systolic"}},
    {"pulmonary",
     {"dyspnea", "hypoxia", "wheezing", "pneumonia", "effusion", "atelectasis",
      "bronchitis", "hemoptysis", "tachypnea", "consolidation", "asthma",
      "hypercapnia", "pleural", "bronchial", "alveolar", "pneumothorax"}},
    {"neuro",
     {"seizure", "aphasia", "hemiparesis", "neuropathy", "tremor", "ataxia",
      "dysarthria", "syncope", "paresthesia", "migraine", "vertigo",
      "obtundation", "dysphonia", "nystagmus", "cerebellar", "cortical"}},
    {"gi",
     {"nausea", "hematemesis", "diarrhea", "constipation", "ascites",
      "jaundice", "dysphagia", "melena", "gastritis", "colitis", "distension",
      "anorexia", "hepatic", "biliary", "pancreatitis", "duodenal"}},
    {"endocrine",
     {"hyperglycemia", "hypoglycemia", "thyroiditis", "goiter", "ketoacidosis",
      "polyuria", "polydipsia", "hirsutism", "osteopenia", "galactorrhea",
      "myxedema", "insulinoma", "adrenal", "pituitary", "thyroid",
      "cortisol"}},
}};

// {0}/{1}/{2} are slots for topic terms. Each template carries enough fixed
// words that every rendered sentence clears the five-word floor.
const std::array<const char*, 8> kTemplates = {{
    "patient notes {0} with {1} and {2} today.",
    "worsening {0} and {1} after {2} this week.",
    "exam shows {0} plus {1} suggesting {2} now.",
    "ongoing {0} with {1} and intermittent {2} overnight.",
    "new {0} with {1} despite treatment of {2}.",
    "chronic {0} complicated by {1} and recurrent {2}.",
    "labs confirm {0} alongside {1} raising concern for {2}.",
    "history of {0} presenting with {1} and {2} again.",
}};

std::string render(const char* tmpl, const TopicPool& pool, Rng& rng) {
  std::string out;
  for (const char* p = tmpl; *p; ++p) {
    if (*p == '{' && p[1] && p[2] == '}') {
      out += pool.terms[rng.uniform_index(pool.terms.size())];
      p += 2;
      continue;
    }
    out += *p;
  }
  return out;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg) {
  if (cfg.n_topics < 2) {
    throw UsageError("gen-synthetic: n_topics must be >= 2");
  }
  if (cfg.n_topics > static_cast<int>(kTopics.size())) {
    throw UsageError("gen-synthetic: at most " +
                     std::to_string(kTopics.size()) + " topics available");
  }
  if (cfg.n_sentences < cfg.n_topics) {
    throw UsageError("gen-synthetic: n_sentences must be >= n_topics");
  }

  Rng rng(mix_seed(cfg.seed, 0x53594e54));
  SyntheticCorpus corpus;
  corpus.documents.reserve(static_cast<size_t>(cfg.n_sentences));
  corpus.labels.reserve(static_cast<size_t>(cfg.n_sentences));

  char buf[32];
  for (int i = 0; i < cfg.n_sentences; ++i) {
    const TopicPool& pool = kTopics[static_cast<size_t>(i % cfg.n_topics)];
    RawDocument doc;
    std::snprintf(buf, sizeof(buf), "doc%05d", i);
    doc.doc_id = buf;
    std::snprintf(buf, sizeof(buf), "adm%05d", i / 4);
    doc.admission_id = buf;
    std::snprintf(buf, sizeof(buf), "subj%05d", i / 8);
    doc.subject_id = buf;
    doc.text = render(kTemplates[rng.uniform_index(kTemplates.size())], pool, rng);
    corpus.labels.emplace_back(doc.doc_id + "#0", pool.name);
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

void write_labels(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& labels) {
  AtomicFile file(path);
  for (const auto& [id, label] : labels) {
    file.stream() << id << '\t' << label << '\n';
  }
  file.commit();
}

std::vector<std::pair<std::string, std::string>> read_labels(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open labels '" + path + "'");
  }
  std::vector<std::pair<std::string, std::string>> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("labels '" + path + "' line " +
                        std::to_string(line_no) + ": missing tab");
    }
    labels.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return labels;
}

}  // namespace clinembed
