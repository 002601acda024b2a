#include "biasaudit/corpus.hpp"

#include <algorithm>

#include <json.hpp>

#include "biasaudit/errors.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/rng.hpp"
#include "biasaudit/text.hpp"

namespace biasaudit {

using nlohmann::json;

namespace {

constexpr const char* kBankFormatName = "biasaudit-embedding-bank";
constexpr int kBankFormatVersion = 1;

bool all_space(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::vector<std::string> load_corpus(const std::filesystem::path& path) {
  return read_lines(path);
}

std::string corpus_content_hash(const std::vector<std::string>& lines) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](std::string_view data) {
    for (unsigned char c : data) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const std::string& line : lines) {
    feed(line);
    feed("\n");
  }
  return hex64(h);
}

std::vector<SentenceOccurrence> harvest_sentences(
    const std::vector<std::string>& lines, const std::vector<std::string>& words,
    const std::set<std::string>& exclusion, int cap, std::uint64_t seed,
    HarvestReport* report) {
  if (cap <= 0) throw ValidationError("harvest cap must be positive");
  for (const std::string& w : words)
    if (exclusion.count(w))
      throw ValidationError("query word '" + w + "' is also in the exclusion set");

  // Tokenize each line once; harvesting scans the corpus per query word.
  std::vector<std::vector<std::string>> tokens(lines.size());
  std::vector<bool> excluded(lines.size(), false);
  int excluded_count = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (all_space(lines[i])) continue;
    tokens[i] = word_tokens(lines[i]);
    for (const std::string& tok : tokens[i]) {
      if (exclusion.count(tok)) {
        excluded[i] = true;
        ++excluded_count;
        break;
      }
    }
  }

  std::vector<SentenceOccurrence> out;
  for (const std::string& word : words) {
    std::vector<std::uint64_t> hits;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (excluded[i]) continue;
      if (std::find(tokens[i].begin(), tokens[i].end(), word) != tokens[i].end())
        hits.push_back(static_cast<std::uint64_t>(i));
    }
    if (report) report->sentence_counts[word] = static_cast<int>(hits.size());
    if (hits.empty()) {
      if (report) report->missing_words.push_back(word);
      continue;
    }
    if (report && static_cast<int>(hits.size()) < kLowCoverageThreshold)
      report->low_coverage_words.push_back(word);
    if (static_cast<int>(hits.size()) > cap) {
      Rng rng = make_rng(substream_seed(seed, word));
      std::vector<std::uint64_t> sample;
      std::sample(hits.begin(), hits.end(), std::back_inserter(sample),
                  static_cast<std::size_t>(cap), rng);
      hits = std::move(sample);
    }
    for (std::uint64_t id : hits)
      out.push_back({id, word, lines[static_cast<std::size_t>(id)]});
  }
  if (report) report->excluded_sentences = excluded_count;
  return out;
}

void verify_exclusion(const std::vector<SentenceOccurrence>& occurrences,
                      const std::set<std::string>& exclusion) {
  for (const SentenceOccurrence& occ : occurrences) {
    for (const std::string& tok : word_tokens(occ.sentence)) {
      if (exclusion.count(tok))
        throw ValidationError("sentence " + std::to_string(occ.sentence_id) +
                              " harvested for '" + occ.word +
                              "' contains excluded word '" + tok + "'");
    }
  }
}

EmbeddingBank EmbeddingBank::build(const Model& model,
                                   const std::vector<SentenceOccurrence>& occurrences,
                                   BankMetadata metadata,
                                   std::vector<std::string>* warnings) {
  metadata.model_id = metadata.model_id.empty() ? model.info().identifier : metadata.model_id;
  metadata.hidden_size = model.info().hidden_size;
  EmbeddingBank bank(std::move(metadata));
  std::set<std::string> skipped;
  for (const SentenceOccurrence& occ : occurrences) {
    if (!model.is_single_token(occ.word)) {
      if (skipped.insert(occ.word).second && warnings)
        warnings->push_back("excluded word '" + occ.word +
                            "': not a single token in the model vocabulary");
      continue;
    }
    for (Occurrence& emb : model.embed_occurrences(occ.sentence, occ.word, warnings)) {
      bank.add(occ.word, {occ.sentence_id, emb.position, std::move(emb.vector)});
    }
  }
  return bank;
}

std::vector<std::string> EmbeddingBank::words() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [word, occs] : entries_) out.push_back(word);
  return out;
}

int EmbeddingBank::count(const std::string& word) const {
  auto it = entries_.find(word);
  return it == entries_.end() ? 0 : static_cast<int>(it->second.size());
}

const std::vector<BankOccurrence>& EmbeddingBank::occurrences(const std::string& word) const {
  auto it = entries_.find(word);
  if (it == entries_.end())
    throw CoverageError("embedding bank has no vectors for word '" + word + "'");
  return it->second;
}

std::vector<std::string> EmbeddingBank::missing_from(
    const std::vector<std::string>& required) const {
  std::vector<std::string> missing;
  for (const std::string& w : required)
    if (!has(w)) missing.push_back(w);
  return missing;
}

Eigen::VectorXd EmbeddingBank::mean_vector(const std::string& word) const {
  const std::vector<BankOccurrence>& occs = occurrences(word);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(metadata_.hidden_size);
  for (const BankOccurrence& occ : occs) mean += occ.vector;
  return mean / static_cast<double>(occs.size());
}

void EmbeddingBank::add(const std::string& word, BankOccurrence occurrence) {
  if (occurrence.vector.size() != metadata_.hidden_size)
    throw ValidationError("occurrence vector size does not match bank hidden_size");
  entries_[word].push_back(std::move(occurrence));
}

EmbeddingBank EmbeddingBank::merge(const EmbeddingBank& a, const EmbeddingBank& b) {
  if (a.metadata_.model_id != b.metadata_.model_id ||
      a.metadata_.hidden_size != b.metadata_.hidden_size ||
      a.metadata_.corpus_hash != b.metadata_.corpus_hash)
    throw ValidationError("cannot merge banks with different model or corpus provenance");
  EmbeddingBank out(a.metadata_);
  out.entries_ = a.entries_;
  for (const auto& [word, occs] : b.entries_) {
    if (out.entries_.count(word))
      throw ValidationError("banks overlap on word '" + word + "'");
    out.entries_[word] = occs;
  }
  return out;
}

void EmbeddingBank::save(const std::filesystem::path& index_path) const {
  std::filesystem::path vector_path = index_path;
  vector_path.replace_extension(".f32");

  json doc;
  doc["format"] = kBankFormatName;
  doc["version"] = kBankFormatVersion;
  doc["model_id"] = metadata_.model_id;
  doc["hidden_size"] = metadata_.hidden_size;
  doc["corpus_hash"] = metadata_.corpus_hash;
  doc["cap"] = metadata_.cap;
  doc["seed"] = metadata_.seed;
  doc["vector_file"] = vector_path.filename().string();

  std::vector<float> values;
  json words = json::array();
  std::uint64_t offset = 0;
  for (const auto& [word, occs] : entries_) {
    json entry;
    entry["word"] = word;
    entry["offset"] = offset;
    json occ_list = json::array();
    for (const BankOccurrence& occ : occs) {
      occ_list.push_back({{"sentence_id", occ.sentence_id}, {"position", occ.position}});
      for (Eigen::Index i = 0; i < occ.vector.size(); ++i)
        values.push_back(static_cast<float>(occ.vector[i]));
      offset += static_cast<std::uint64_t>(occ.vector.size());
    }
    entry["occurrences"] = std::move(occ_list);
    words.push_back(std::move(entry));
  }
  doc["words"] = std::move(words);

  write_f32_array(vector_path, values);
  atomic_write_text(index_path, doc.dump() + "\n");
}

EmbeddingBank EmbeddingBank::load(const std::filesystem::path& index_path) {
  json doc;
  try {
    doc = json::parse(read_text_file(index_path));
  } catch (const json::parse_error& e) {
    throw FormatError("bank index " + index_path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kBankFormatName)
    throw FormatError("bank index " + index_path.string() + " lacks format marker '" +
                      kBankFormatName + "'");
  if (doc.value("version", 0) != kBankFormatVersion)
    throw FormatError("unsupported bank version in " + index_path.string());

  BankMetadata meta;
  meta.model_id = doc.value("model_id", "");
  meta.hidden_size = doc.value("hidden_size", 0);
  meta.corpus_hash = doc.value("corpus_hash", "");
  meta.cap = doc.value("cap", 0);
  meta.seed = doc.value("seed", std::uint64_t{0});
  if (meta.hidden_size <= 0)
    throw FormatError("bank index " + index_path.string() + " has invalid hidden_size");

  std::filesystem::path vector_path =
      index_path.parent_path() / doc.value("vector_file", "");
  std::vector<float> values = read_f32_array(vector_path);

  EmbeddingBank bank(meta);
  const auto h = static_cast<std::size_t>(meta.hidden_size);
  try {
    for (const json& entry : doc.at("words")) {
      const std::string word = entry.at("word").get<std::string>();
      std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      for (const json& occ : entry.at("occurrences")) {
        if (offset + h > values.size())
          throw FormatError("bank vector file " + vector_path.string() +
                            " is shorter than its index claims");
        BankOccurrence bo;
        bo.sentence_id = occ.at("sentence_id").get<std::uint64_t>();
        bo.position = occ.at("position").get<int>();
        bo.vector = Eigen::VectorXd(meta.hidden_size);
        for (std::size_t i = 0; i < h; ++i)
          bo.vector[static_cast<Eigen::Index>(i)] =
              static_cast<double>(values[static_cast<std::size_t>(offset) + i]);
        offset += h;
        bank.add(word, std::move(bo));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("bank index " + index_path.string() + " is malformed: " + e.what());
  }
  return bank;
}

}  // namespace biasaudit
