#pragma once

// Dataset ingestion, tokenization, vocabulary and labeled/unlabeled splitting,
// plus a seeded template grammar used as a desk-scale stand-in corpus.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace readlab::corpus {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kNumSpecials = 4;
inline constexpr int kDefaultMaxLen = 64;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class Vocabulary {
 public:
  Vocabulary();

  /// Unknown tokens map to kUnk.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(std::string_view token) const;
  /// Appends a token if absent; returns its id.
  int add(const std::string& token);

  /// One token per line; line i (0-based) holds id i + 4. Specials are implicit.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct Example {
  std::string text;
  std::vector<int> tokens;
  std::optional<int> label;
  std::size_t index = 0;  // originating line/sample index
};

/// Label names to dense ids, built in first-seen order and frozen after the
/// training file is read.
struct LabelMap {
  std::vector<std::string> names;
  std::unordered_map<std::string, int> ids;
  bool frozen = false;

  int size() const { return static_cast<int>(names.size()); }
  /// Looks up (or, while unfrozen, inserts) a label. Throws when frozen and unknown.
  int resolve(const std::string& name);
};

enum class TextFormat { LabelTab, Trec };
enum class LabelField { Coarse, Fine };
enum class Encoding { Auto, Utf8, Latin1 };

struct LoadOptions {
  TextFormat format = TextFormat::LabelTab;
  LabelField label_field = LabelField::Coarse;
  Encoding encoding = Encoding::Auto;
};

TextFormat parse_text_format(std::string_view s);
LabelField parse_label_field(std::string_view s);
Encoding parse_encoding(std::string_view s);

/// Reads one example per non-empty line. Tokens are left empty; call encode_all
/// once a vocabulary exists.
std::vector<Example> load_label_text(const std::filesystem::path& path, const LoadOptions& opts,
                                     LabelMap& labels);
std::vector<Example> parse_label_text(std::string_view content, const LoadOptions& opts,
                                      LabelMap& labels);

bool is_valid_utf8(std::string_view s);
std::string latin1_to_utf8(std::string_view s);

/// Lowercase + whitespace split.
std::vector<std::string> tokenize(std::string_view text);

Vocabulary build_vocab(std::span<const Example> examples, int min_freq);

/// Truncates to max_len ids; appends EOS only if room remains.
std::vector<int> encode(std::string_view text, const Vocabulary& vocab,
                        int max_len = kDefaultMaxLen);
/// Inverse of encode up to UNK substitution. Stops at EOS; PAD and BOS are skipped.
std::string decode(std::span<const int> ids, const Vocabulary& vocab);

void encode_all(std::vector<Example>& examples, const Vocabulary& vocab,
                int max_len = kDefaultMaxLen);

struct DatasetSplit {
  std::vector<Example> labeled;
  std::vector<Example> unlabeled;  // labels stripped
  std::vector<Example> test;
  int k = 0;
};

/// Stratified split: floor(fraction * n_c) per class, at least one per class,
/// chosen by a seeded shuffle. The remainder becomes unlabeled.
DatasetSplit split_labeled(std::span<const Example> examples, double fraction,
                           std::uint64_t seed, int k);

/// `<index>\t<L|U|T>` per example, sorted by index within each part.
void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split);

/// One class of the template grammar: slotted patterns ("the {noun} runs") and
/// the word list for each slot.
struct ClassTemplates {
  std::string name;
  std::vector<std::string> patterns;
  std::map<std::string, std::vector<std::string>> slots;
};

/// Samples n labeled sentences; classes are assigned round-robin (balanced
/// within one) and the result is shuffled. Deterministic per seed.
std::vector<Example> synth_grammar(std::uint64_t seed, int n,
                                   std::span<const ClassTemplates> classes);

/// Two-topic question grammar with shared sentence frames and topic-specific
/// slot vocabularies. Used by the acceptance runs and the default config.
std::vector<ClassTemplates> topic_grammar();
/// Same frames, but the two classes share no token at all.
std::vector<ClassTemplates> disjoint_grammar();

}  // namespace readlab::corpus
