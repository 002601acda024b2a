#include "biasaudit/lexicon.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "biasaudit/errors.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/rng.hpp"
#include "biasaudit/text.hpp"

namespace biasaudit {

using nlohmann::json;

namespace {

constexpr int kLexiconFormatVersion = 1;
constexpr const char* kLexiconFormatName = "biasaudit-lexicon";

void check_entry(const std::string& word, const std::string& list_name) {
  if (word.empty()) throw FormatError("empty entry in " + list_name);
  if (word != to_lower(word))
    throw FormatError("entry '" + word + "' in " + list_name + " must be lowercase");
  std::vector<std::string> tokens = word_tokens(word);
  if (tokens.size() != 1 || tokens[0] != word)
    throw FormatError("entry '" + word + "' in " + list_name + " is not a single word token");
}

std::vector<WordPair> parse_pairs(const json& arr, const std::string& list_name) {
  std::vector<WordPair> pairs;
  for (const json& item : arr) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_string() || !item[1].is_string())
      throw FormatError(list_name + " entries must be [female, male] string pairs");
    pairs.push_back({item[0].get<std::string>(), item[1].get<std::string>()});
  }
  return pairs;
}

json pairs_to_json(const std::vector<WordPair>& pairs) {
  json arr = json::array();
  for (const WordPair& p : pairs) arr.push_back(json::array({p.female, p.male}));
  return arr;
}

}  // namespace

Lexicon Lexicon::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("lexicon file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kLexiconFormatName)
    throw FormatError("lexicon file " + path.string() + " lacks format marker '" +
                      kLexiconFormatName + "'");
  if (doc.value("version", 0) != kLexiconFormatVersion)
    throw FormatError("unsupported lexicon version in " + path.string());
  if (!doc.contains("attribute_pairs") || !doc.contains("stereotypes"))
    throw FormatError("lexicon file " + path.string() +
                      " must contain 'attribute_pairs' and 'stereotypes'");
  const json& stereo = doc.at("stereotypes");
  if (!stereo.is_object() || !stereo.contains("female") || !stereo.contains("male"))
    throw FormatError("'stereotypes' must contain 'female' and 'male' lists");
  return from_parts(parse_pairs(doc.at("attribute_pairs"), "attribute_pairs"),
                    stereo.at("female").get<std::vector<std::string>>(),
                    stereo.at("male").get<std::vector<std::string>>(),
                    doc.contains("name_pairs")
                        ? parse_pairs(doc.at("name_pairs"), "name_pairs")
                        : std::vector<WordPair>{});
}

Lexicon Lexicon::from_parts(std::vector<WordPair> attribute_pairs,
                            std::vector<std::string> stereotypes_female,
                            std::vector<std::string> stereotypes_male,
                            std::vector<WordPair> name_pairs) {
  Lexicon lex;
  lex.attribute_pairs_ = std::move(attribute_pairs);
  lex.stereotypes_female_ = std::move(stereotypes_female);
  lex.stereotypes_male_ = std::move(stereotypes_male);
  lex.name_pairs_ = std::move(name_pairs);
  lex.validate();
  lex.build_index();
  return lex;
}

void Lexicon::validate() const {
  if (attribute_pairs_.empty()) throw ValidationError("lexicon has no attribute pairs");
  if (stereotypes_female_.empty() || stereotypes_male_.empty())
    throw ValidationError("lexicon stereotype lists must both be non-empty");

  auto check_unique = [](const std::vector<std::string>& words, const std::string& list_name) {
    std::set<std::string> seen;
    for (const std::string& w : words) {
      check_entry(w, list_name);
      if (!seen.insert(w).second)
        throw ValidationError("duplicate entry '" + w + "' in " + list_name);
    }
    return seen;
  };

  auto pair_sides = [&](const std::vector<WordPair>& pairs, const std::string& list_name) {
    std::vector<std::string> f, m;
    for (const WordPair& p : pairs) {
      f.push_back(p.female);
      m.push_back(p.male);
    }
    std::set<std::string> fs = check_unique(f, list_name + " (female side)");
    std::set<std::string> ms = check_unique(m, list_name + " (male side)");
    for (const std::string& w : fs)
      if (ms.count(w))
        throw ValidationError("'" + w + "' appears on both sides of " + list_name);
    fs.insert(ms.begin(), ms.end());
    return fs;
  };

  std::set<std::string> attr = pair_sides(attribute_pairs_, "attribute_pairs");
  std::set<std::string> stereo_f = check_unique(stereotypes_female_, "stereotypes.female");
  std::set<std::string> stereo_m = check_unique(stereotypes_male_, "stereotypes.male");
  std::set<std::string> stereo = stereo_f;
  for (const std::string& w : stereo_m)
    if (!stereo.insert(w).second)
      throw ValidationError("stereotype '" + w + "' appears in both gender lists");

  std::vector<std::string> clashes;
  for (const std::string& w : stereo)
    if (attr.count(w)) clashes.push_back(w);
  if (!clashes.empty()) {
    std::ostringstream msg;
    msg << "attribute and stereotype sets overlap:";
    for (const std::string& w : clashes) msg << " '" << w << "'";
    throw ValidationError(msg.str());
  }

  if (!name_pairs_.empty()) {
    std::set<std::string> names = pair_sides(name_pairs_, "name_pairs");
    for (const std::string& w : names)
      if (attr.count(w) || stereo.count(w))
        throw ValidationError("name '" + w + "' collides with an attribute or stereotype entry");
  }
}

void Lexicon::build_index() {
  roles_.clear();
  counterparts_.clear();
  for (const WordPair& p : attribute_pairs_) {
    roles_[p.female] = WordRole::attribute_female;
    roles_[p.male] = WordRole::attribute_male;
    counterparts_[p.female] = p.male;
    counterparts_[p.male] = p.female;
  }
  for (const std::string& w : stereotypes_female_) roles_[w] = WordRole::stereotype_female;
  for (const std::string& w : stereotypes_male_) roles_[w] = WordRole::stereotype_male;
  for (const WordPair& p : name_pairs_) {
    roles_[p.female] = WordRole::name_female;
    roles_[p.male] = WordRole::name_male;
    counterparts_[p.female] = p.male;
    counterparts_[p.male] = p.female;
  }
}

std::vector<std::string> Lexicon::female_attribute_words() const {
  std::vector<std::string> out;
  out.reserve(attribute_pairs_.size());
  for (const WordPair& p : attribute_pairs_) out.push_back(p.female);
  return out;
}

std::vector<std::string> Lexicon::male_attribute_words() const {
  std::vector<std::string> out;
  out.reserve(attribute_pairs_.size());
  for (const WordPair& p : attribute_pairs_) out.push_back(p.male);
  return out;
}

std::vector<std::string> Lexicon::attribute_words() const {
  std::vector<std::string> out = female_attribute_words();
  std::vector<std::string> m = male_attribute_words();
  out.insert(out.end(), m.begin(), m.end());
  return out;
}

std::vector<std::string> Lexicon::stereotype_words() const {
  std::vector<std::string> out = stereotypes_female_;
  out.insert(out.end(), stereotypes_male_.begin(), stereotypes_male_.end());
  return out;
}

WordRole Lexicon::role(const std::string& lower_word) const {
  auto it = roles_.find(lower_word);
  return it == roles_.end() ? WordRole::none : it->second;
}

std::optional<std::string> Lexicon::counterfactual(const std::string& lower_word,
                                                   bool include_names) const {
  WordRole r = role(lower_word);
  if (!is_attribute(r) && !(include_names && is_name(r))) return std::nullopt;
  return counterparts_.at(lower_word);
}

void Lexicon::save(const std::filesystem::path& path) const {
  json doc;
  doc["format"] = kLexiconFormatName;
  doc["version"] = kLexiconFormatVersion;
  doc["attribute_pairs"] = pairs_to_json(attribute_pairs_);
  doc["stereotypes"] = {{"female", stereotypes_female_}, {"male", stereotypes_male_}};
  doc["name_pairs"] = pairs_to_json(name_pairs_);
  atomic_write_text(path, doc.dump(2) + "\n");
}

std::string swap_gender_terms(const std::string& text, const Lexicon& lexicon,
                              bool include_names, int* swapped_count) {
  std::string out;
  out.reserve(text.size());
  int swapped = 0;
  for (const Segment& seg : segment_text(text)) {
    if (!seg.is_word) {
      out += seg.text;
      continue;
    }
    std::optional<std::string> other =
        lexicon.counterfactual(to_lower(seg.text), include_names);
    if (other) {
      out += apply_case(*other, case_pattern(seg.text));
      ++swapped;
    } else {
      out += seg.text;
    }
  }
  if (swapped_count) *swapped_count = swapped;
  return out;
}

std::vector<std::string> AttributeSplit::train_words() const {
  std::vector<std::string> out;
  for (const WordPair& p : train_pairs) {
    out.push_back(p.female);
    out.push_back(p.male);
  }
  return out;
}

std::vector<std::string> AttributeSplit::test_words() const {
  std::vector<std::string> out;
  for (const WordPair& p : test_pairs) {
    out.push_back(p.female);
    out.push_back(p.male);
  }
  return out;
}

AttributeSplit split_attribute_pairs(const Lexicon& lexicon, double train_fraction,
                                     std::uint64_t seed) {
  const std::vector<WordPair>& pairs = lexicon.attribute_pairs();
  if (pairs.size() < 2)
    throw ValidationError("attribute split needs at least two pairs");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must lie strictly between 0 and 1");

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto n = static_cast<long>(pairs.size());
  long train_count = std::lround(train_fraction * static_cast<double>(n));
  train_count = std::clamp(train_count, 1L, n - 1);

  AttributeSplit split;
  split.seed = seed;
  split.train_fraction = train_fraction;
  for (long i = 0; i < n; ++i) {
    const WordPair& p = pairs[order[static_cast<std::size_t>(i)]];
    (i < train_count ? split.train_pairs : split.test_pairs).push_back(p);
  }
  return split;
}

namespace {

const std::vector<WordPair>& default_attribute_pairs() {
  static const std::vector<WordPair> pairs = {
      {"she", "he"},
      {"her", "his"},
      {"herself", "himself"},
      {"woman", "man"},
      {"women", "men"},
      {"female", "male"},
      {"females", "males"},
      {"girl", "boy"},
      {"girls", "boys"},
      {"mother", "father"},
      {"mothers", "fathers"},
      {"mom", "dad"},
      {"mommy", "daddy"},
      {"mama", "papa"},
      {"ma", "pa"},
      {"daughter", "son"},
      {"daughters", "sons"},
      {"sister", "brother"},
      {"sisters", "brothers"},
      {"aunt", "uncle"},
      {"niece", "nephew"},
      {"grandmother", "grandfather"},
      {"grandma", "grandpa"},
      {"granddaughter", "grandson"},
      {"stepmother", "stepfather"},
      {"wife", "husband"},
      {"wives", "husbands"},
      {"bride", "groom"},
      {"girlfriend", "boyfriend"},
      {"fiancee", "fiance"},
      {"mistress", "master"},
      {"maiden", "bachelor"},
      {"madam", "sir"},
      {"lady", "gentleman"},
      {"ladies", "gentlemen"},
      {"gal", "guy"},
      {"chick", "dude"},
      {"queen", "king"},
      {"queens", "kings"},
      {"princess", "prince"},
      {"empress", "emperor"},
      {"duchess", "duke"},
      {"baroness", "baron"},
      {"heiress", "heir"},
      {"heroine", "hero"},
      {"goddess", "god"},
      {"witch", "wizard"},
      {"witches", "wizards"},
      {"priestess", "priest"},
      {"nun", "monk"},
      {"nuns", "monks"},
      {"abbess", "abbot"},
      {"convent", "monastery"},
      {"sorority", "fraternity"},
      {"actress", "actor"},
      {"actresses", "actors"},
      {"waitress", "waiter"},
      {"hostess", "host"},
      {"belle", "beau"},
      {"maternal", "paternal"},
      {"estrogen", "testosterone"},
      {"lesbian", "gay"},
      {"mare", "stallion"},
      {"filly", "colt"},
      {"cow", "bull"},
  };
  return pairs;
}

const std::vector<std::string>& default_stereotypes_female() {
  static const std::vector<std::string> words = {
      "beauty",   "blonde",       "cheerleading", "cooking",  "flirt",
      "flower",   "gossip",       "housekeeper",  "jewelry",  "nanny",
      "nurse",    "nurses",       "pink",         "pretty",   "receptionist",
      "sewing",   "softball",     "makeup",       "therapist", "maid",
      "chairperson",
  };
  return words;
}

const std::vector<std::string>& default_stereotypes_male() {
  static const std::vector<std::string> words = {
      "warrior",   "strong",     "terrorist",     "soldier",   "sniper",
      "baseball",  "sergeant",   "bodyguard",     "boss",      "boxer",
      "captain",   "carpenter",  "chancellor",    "colonel",   "commander",
      "conductor", "diplomat",   "drummer",       "engineer",  "gangster",
      "geek",      "guitarist",  "industrialist", "marshal",   "mechanic",
      "philosopher", "physicist", "scientist",    "rapper",    "clergy",
  };
  return words;
}

const std::vector<WordPair>& default_name_pairs() {
  static const std::vector<WordPair> pairs = {
      {"mary", "john"},        {"patricia", "james"},  {"jennifer", "robert"},
      {"linda", "michael"},    {"elizabeth", "william"}, {"barbara", "david"},
      {"susan", "richard"},    {"jessica", "joseph"},  {"sarah", "thomas"},
      {"karen", "charles"},    {"lisa", "christopher"}, {"nancy", "daniel"},
      {"betty", "matthew"},    {"margaret", "anthony"}, {"sandra", "mark"},
      {"ashley", "donald"},    {"kimberly", "steven"}, {"emily", "paul"},
      {"donna", "andrew"},     {"michelle", "joshua"},
  };
  return pairs;
}

}  // namespace

Lexicon default_lexicon() {
  return Lexicon::from_parts(default_attribute_pairs(), default_stereotypes_female(),
                             default_stereotypes_male(), default_name_pairs());
}

}  // namespace biasaudit
