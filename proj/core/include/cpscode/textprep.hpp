#pragma once
// Chat text normalization, tokenization and vocabulary construction.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cpscode {

// Pattern classes for the normalization pass. Custom matches a literal
// word (case-insensitive); it exists for the configurable nickname list.
enum class MatcherKind {
  NumberLiteral,
  ResistorName,
  VoltageValue,
  CurrentValue,
  VoltWord,
  ResistorWord,
  Custom,
};

struct ReplacementRule {
  std::string rule_id;
  MatcherKind matcher = MatcherKind::Custom;
  std::string pattern;  // Custom only: the literal word to replace
  std::string target;   // single token ([R_*] rules derive it from the digit)
};

// Built-in rule order: voltage -> current -> resistor-name -> bare-number
// -> word synonyms -> nicknames. Composite patterns must fire before the
// bare-number rule.
std::vector<ReplacementRule> default_replacement_rules();

// One rule per line: `rule_id <TAB> matcher <TAB> target`. Matcher is one
// of number, resistor_name, voltage, current, volt_word, resistor_word, or
// `custom:<word>`.
std::vector<ReplacementRule> parse_replacement_rules(std::string_view text);
std::vector<ReplacementRule> load_replacement_rules(const std::string& path);
std::string format_replacement_rules(const std::vector<ReplacementRule>&);

// Left-to-right, first-matching-rule-wins scan. Total and idempotent:
// already-emitted bracket tokens are skipped atomically.
std::string apply_replacements(std::string_view text,
                               const std::vector<ReplacementRule>& rules);

inline constexpr size_t kDefaultMaxLen = 16;

// Lowercased tokens split on whitespace and punctuation (punctuation kept
// as single-char tokens); bracketed domain tokens stay atomic and keep
// their case. Truncation keeps the sentence head.
std::vector<std::string> surface_tokens(std::string_view text,
                                        size_t max_len = kDefaultMaxLen);

class Vocab {
 public:
  Vocab() = default;

  // Reserved block, always occupying the id prefix in this order.
  static const std::vector<std::string>& reserved_tokens();

  // Deterministic: tokens ranked by frequency, ties broken
  // lexicographically; tokens below min_frequency excluded. ensure_tokens
  // are appended (in the given order) even if absent from the corpus.
  static Vocab build(const std::vector<std::string>& corpus,
                     size_t min_frequency = 1,
                     const std::vector<std::string>& ensure_tokens = {});

  // Rebuild from an explicit token list (checkpoint loading). The list
  // must start with the reserved block.
  static Vocab from_tokens(std::vector<std::string> tokens);

  size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  // Id of `token`, or the [UNK] id when absent.
  int id_or_unk(std::string_view token) const;
  std::optional<int> id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  int pad_id() const { return 0; }
  int unk_id() const { return 1; }
  int cls_id() const { return 2; }
  int sep_id() const { return 3; }
  int mask_id() const { return 4; }

  // FNV-1a over the token list; checkpoints store this to reject loads
  // against a different vocabulary.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, int>> index_;  // sorted by token

  void rebuild_index();
};

struct TokenSequence {
  std::vector<int> ids;               // slot markers use negative ids
  std::vector<std::string> surface;   // one entry per id
  std::optional<size_t> mask_position;

  size_t size() const { return ids.size(); }
};

// Content-only sequence (no [CLS]/[SEP]); out-of-vocabulary tokens map to
// [UNK]. max_len bounds the content length.
TokenSequence tokenize(std::string_view text, const Vocab& vocab,
                       size_t max_len = kDefaultMaxLen);

}  // namespace cpscode
