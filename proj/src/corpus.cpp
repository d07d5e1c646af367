#include "readlab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "readlab/rng.hpp"

namespace readlab::corpus {

namespace {

const char* const kSpecialTokens[kNumSpecials] = {"<pad>", "<unk>", "<bos>", "<eos>"};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialTokens) add(s);
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = token_to_id_.emplace(token, size());
  if (inserted) id_to_token_.push_back(token);
  return it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (int i = kNumSpecials; i < size(); ++i) out << id_to_token_[static_cast<std::size_t>(i)] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (v.contains(line)) throw std::runtime_error("duplicate vocabulary entry: " + line);
    v.add(line);
  }
  return v;
}

int LabelMap::resolve(const std::string& name) {
  auto it = ids.find(name);
  if (it != ids.end()) return it->second;
  if (frozen) throw std::runtime_error("unknown label '" + name + "' against frozen label map");
  const int id = size();
  ids.emplace(name, id);
  names.push_back(name);
  return id;
}

TextFormat parse_text_format(std::string_view s) {
  if (s == "tsv" || s == "label_tab") return TextFormat::LabelTab;
  if (s == "trec") return TextFormat::Trec;
  throw std::invalid_argument("unknown data format '" + std::string(s) + "' (tsv|trec)");
}

LabelField parse_label_field(std::string_view s) {
  if (s == "coarse") return LabelField::Coarse;
  if (s == "fine") return LabelField::Fine;
  throw std::invalid_argument("unknown label field '" + std::string(s) + "' (coarse|fine)");
}

Encoding parse_encoding(std::string_view s) {
  if (s == "auto") return Encoding::Auto;
  if (s == "utf-8" || s == "utf8") return Encoding::Utf8;
  if (s == "latin-1" || s == "latin1") return Encoding::Latin1;
  throw std::invalid_argument("unknown encoding '" + std::string(s) + "' (auto|utf-8|latin-1)");
}

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xE) extra = 2;
    else if ((c >> 3) == 0x1E) extra = 3;
    else return false;
    if (i + static_cast<std::size_t>(extra) >= s.size() && extra > 0) return false;
    for (int k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]) >> 6) != 0x2) return false;
    }
    i += static_cast<std::size_t>(extra) + 1;
  }
  return true;
}

std::string latin1_to_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80) {
      out.push_back(ch);
    } else {
      out.push_back(static_cast<char>(0xC0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
  }
  return out;
}

std::vector<Example> parse_label_text(std::string_view content, const LoadOptions& opts,
                                      LabelMap& labels) {
  std::string decoded;
  switch (opts.encoding) {
    case Encoding::Utf8:
      if (!is_valid_utf8(content)) throw std::runtime_error("input is not valid UTF-8");
      decoded = std::string(content);
      break;
    case Encoding::Latin1:
      decoded = latin1_to_utf8(content);
      break;
    case Encoding::Auto:
      decoded = is_valid_utf8(content) ? std::string(content) : latin1_to_utf8(content);
      break;
  }

  std::vector<Example> out;
  std::istringstream in(decoded);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;

    std::string label;
    std::string_view text;
    if (opts.format == TextFormat::LabelTab) {
      const auto tab = line.find('\t');
      if (tab == std::string_view::npos) throw ParseError("expected LABEL<TAB>text", line_no);
      label = std::string(trim(line.substr(0, tab)));
      text = trim(line.substr(tab + 1));
    } else {
      const auto sp = line.find_first_of(" \t");
      const std::string_view head = line.substr(0, sp);
      const auto colon = head.find(':');
      if (colon == std::string_view::npos || colon == 0 || colon + 1 == head.size())
        throw ParseError("expected COARSE:fine label", line_no);
      label = std::string(opts.label_field == LabelField::Coarse ? head.substr(0, colon) : head);
      text = sp == std::string_view::npos ? std::string_view{} : trim(line.substr(sp));
    }
    if (label.empty()) throw ParseError("empty label", line_no);

    Example ex;
    ex.text = std::string(text);
    ex.index = out.size();
    try {
      ex.label = labels.resolve(label);
    } catch (const std::runtime_error& e) {
      throw ParseError(e.what(), line_no);
    }
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw std::runtime_error("no examples");
  return out;
}

std::vector<Example> load_label_text(const std::filesystem::path& path, const LoadOptions& opts,
                                     LabelMap& labels) {
  return parse_label_text(read_file(path), opts, labels);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary build_vocab(std::span<const Example> examples, int min_freq) {
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
  std::unordered_map<std::string, long> freq;
  for (const Example& ex : examples) {
    for (std::string& t : tokenize(ex.text)) ++freq[std::move(t)];
  }
  std::vector<std::pair<std::string, long>> items;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq) items.emplace_back(tok, n);
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, n] : items) {
    // A corpus token spelled like a special keeps the special's id.
    v.add(tok);
  }
  return v;
}

std::vector<int> encode(std::string_view text, const Vocabulary& vocab, int max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  std::vector<int> ids;
  for (const std::string& t : tokenize(text)) {
    if (static_cast<int>(ids.size()) == max_len) break;
    ids.push_back(vocab.id(t));
  }
  if (static_cast<int>(ids.size()) < max_len) ids.push_back(kEos);
  return ids;
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

void encode_all(std::vector<Example>& examples, const Vocabulary& vocab, int max_len) {
  for (Example& ex : examples) ex.tokens = encode(ex.text, vocab, max_len);
}

DatasetSplit split_labeled(std::span<const Example> examples, double fraction,
                           std::uint64_t seed, int k) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("label fraction must be in (0, 1]");
  if (k < 1) throw std::invalid_argument("k must be >= 1");

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& lbl = examples[i].label;
    if (!lbl) throw std::invalid_argument("split_labeled requires labeled examples");
    if (*lbl < 0 || *lbl >= k) throw std::invalid_argument("label out of range");
    by_class[static_cast<std::size_t>(*lbl)].push_back(i);
  }

  Rng rng(seed);
  std::vector<char> chosen(examples.size(), 0);
  std::size_t n_labeled = 0;
  for (auto& members : by_class) {
    if (members.empty()) continue;
    const double exact = fraction * static_cast<double>(members.size());
    auto take = static_cast<std::size_t>(std::floor(exact + 1e-9));
    take = std::clamp<std::size_t>(take, 1, members.size());
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < take; ++j) chosen[members[j]] = 1;
    n_labeled += take;
  }
  if (n_labeled == 0) throw std::invalid_argument("labeled set would be empty");

  DatasetSplit split;
  split.k = k;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (chosen[i]) {
      split.labeled.push_back(examples[i]);
    } else {
      Example ex = examples[i];
      ex.label.reset();
      split.unlabeled.push_back(std::move(ex));
    }
  }
  return split;
}

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto dump = [&out](const std::vector<Example>& part, char tag) {
    std::vector<std::size_t> idx;
    idx.reserve(part.size());
    for (const Example& ex : part) idx.push_back(ex.index);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) out << i << '\t' << tag << '\n';
  };
  dump(split.labeled, 'L');
  dump(split.unlabeled, 'U');
  dump(split.test, 'T');
}

std::vector<Example> synth_grammar(std::uint64_t seed, int n,
                                   std::span<const ClassTemplates> classes) {
  if (classes.size() < 2) throw std::invalid_argument("synth_grammar needs at least 2 classes");
  for (const ClassTemplates& c : classes) {
    if (c.patterns.empty()) throw std::invalid_argument("class '" + c.name + "' has no patterns");
  }
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    const auto cls = static_cast<std::size_t>(i) % classes.size();
    const ClassTemplates& c = classes[cls];
    std::uniform_int_distribution<std::size_t> pick_pattern(0, c.patterns.size() - 1);
    const std::string& pattern = c.patterns[pick_pattern(rng)];

    std::string text;
    std::size_t pos = 0;
    while (pos < pattern.size()) {
      const auto open = pattern.find('{', pos);
      if (open == std::string::npos) {
        text += pattern.substr(pos);
        break;
      }
      const auto close = pattern.find('}', open);
      if (close == std::string::npos) throw std::invalid_argument("unterminated slot in " + pattern);
      text += pattern.substr(pos, open - pos);
      const std::string slot = pattern.substr(open + 1, close - open - 1);
      auto it = c.slots.find(slot);
      if (it == c.slots.end() || it->second.empty())
        throw std::invalid_argument("slot '" + slot + "' has no fillers");
      std::uniform_int_distribution<std::size_t> pick_word(0, it->second.size() - 1);
      text += it->second[pick_word(rng)];
      pos = close + 1;
    }
    Example ex;
    ex.text = std::move(text);
    ex.label = static_cast<int>(cls);
    out.push_back(std::move(ex));
  }
  std::shuffle(out.begin(), out.end(), rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].index = i;
  return out;
}

namespace {

std::vector<std::string> frames() {
  return {
      "what {adj} {noun} did the {agent} {verb} ?",
      "how does the {agent} {verb} a {adj} {noun} ?",
      "why would a {adj} {agent} {verb} the {noun} ?",
      "where can the {agent} find a {noun} to {verb} ?",
      "which {noun} is {adj} enough for a {agent} ?",
  };
}

}  // namespace

std::vector<ClassTemplates> topic_grammar() {
  ClassTemplates sport;
  sport.name = "SPORT";
  sport.patterns = frames();
  sport.slots["agent"] = {"striker", "goalie", "coach",   "referee", "pitcher", "sprinter",
                          "umpire",  "captain", "jockey", "boxer",   "skater",  "batter",
                          "golfer",  "fielder", "diver",  "rower",   "wrestler", "caddie"};
  sport.slots["noun"] = {"ball",    "racket", "helmet", "trophy",  "stadium", "league",
                         "penalty", "medal",  "tackle", "scoreboard", "jersey", "dugout",
                         "marathon", "puck",  "net",    "bat",     "whistle", "podium"};
  sport.slots["verb"] = {"kick",  "dribble", "serve",  "pitch",  "score", "tackle",
                         "sprint", "dunk",   "volley", "punt",   "bowl",  "referee",
                         "coach",  "block",  "pass",   "shoot",  "lap",   "spike"};
  sport.slots["adj"] = {"offside", "athletic", "sporty", "competitive", "olympic", "varsity",
                        "defensive", "winning", "seeded", "muddy",      "padded",  "rookie"};

  ClassTemplates science;
  science.name = "SCIENCE";
  science.patterns = frames();
  science.slots["agent"] = {"chemist",  "biologist", "physicist", "geologist", "astronomer",
                            "botanist", "engineer",  "surgeon",   "virologist", "zoologist",
                            "ecologist", "technician", "pharmacist", "researcher", "geneticist",
                            "statistician", "meteorologist", "oceanographer"};
  science.slots["noun"] = {"molecule", "telescope", "enzyme",  "neutron",  "fossil",   "microscope",
                           "vaccine",  "catalyst",  "genome",  "isotope",  "specimen", "reactor",
                           "protein",  "galaxy",    "crystal", "electrode", "beaker",  "bacterium"};
  science.slots["verb"] = {"synthesize", "measure", "observe", "catalyze", "sequence", "dissect",
                           "calibrate",  "titrate", "culture", "analyze",  "irradiate", "distill",
                           "classify",   "model",   "isolate", "compute",  "centrifuge", "replicate"};
  science.slots["adj"] = {"organic", "nuclear",  "magnetic", "genetic", "molecular", "thermal",
                          "sterile", "chemical", "quantum",  "viral",   "acidic",    "orbital"};
  return {sport, science};
}

std::vector<ClassTemplates> disjoint_grammar() {
  ClassTemplates a;
  a.name = "A";
  a.patterns = {"alpha {x} beta {y}", "gamma {y} delta {x}"};
  a.slots["x"] = {"red", "green", "blue", "cyan"};
  a.slots["y"] = {"cat", "dog", "cow", "pig"};
  ClassTemplates b;
  b.name = "B";
  b.patterns = {"one {x} two {y}", "three {y} four {x}"};
  b.slots["x"] = {"iron", "gold", "zinc", "lead"};
  b.slots["y"] = {"oak", "elm", "ash", "fir"};
  return {a, b};
}

}  // namespace readlab::corpus
