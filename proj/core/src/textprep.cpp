#include "cpscode/textprep.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "cpscode/error.hpp"

namespace cpscode {
namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

bool is_boundary(std::string_view text, size_t pos) {
  return pos >= text.size() || !is_word_char(text[pos]);
}

char lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

// Case-insensitive whole-word match of `word` at `pos`; returns length or 0.
size_t match_word(std::string_view text, size_t pos, std::string_view word) {
  if (pos + word.size() > text.size()) return 0;
  for (size_t i = 0; i < word.size(); ++i) {
    if (lower(text[pos + i]) != lower(word[i])) return 0;
  }
  return is_boundary(text, pos + word.size()) ? word.size() : 0;
}

// digits ('.' digits)? -- no trailing-boundary requirement; composite
// matchers continue past the number.
size_t match_number_run(std::string_view text, size_t pos) {
  size_t i = pos;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])))
    ++i;
  if (i == pos) return 0;
  if (i < text.size() && text[i] == '.' && i + 1 < text.size() &&
      std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
    ++i;
    while (i < text.size() &&
           std::isdigit(static_cast<unsigned char>(text[i])))
      ++i;
  }
  return i - pos;
}

// number + optional single space + one of `units`, whole-word.
size_t match_number_with_unit(std::string_view text, size_t pos,
                              const std::vector<std::string_view>& units) {
  const size_t num = match_number_run(text, pos);
  if (num == 0) return 0;
  size_t i = pos + num;
  size_t space = 0;
  if (i < text.size() && text[i] == ' ') space = 1;
  for (std::string_view unit : units) {
    const size_t m = match_word(text, i + space, unit);
    if (m > 0) return num + space + m;
  }
  return 0;
}

struct Match {
  size_t length = 0;
  std::string replacement;
};

Match try_rule(const ReplacementRule& rule, std::string_view text,
               size_t pos) {
  switch (rule.matcher) {
    case MatcherKind::VoltageValue: {
      const size_t len =
          match_number_with_unit(text, pos, {"v", "volt", "volts"});
      if (len) return {len, rule.target};
      return {};
    }
    case MatcherKind::CurrentValue: {
      const size_t len = match_number_with_unit(text, pos, {"a"});
      if (len) return {len, rule.target};
      return {};
    }
    case MatcherKind::ResistorName: {
      if (pos + 1 >= text.size()) return {};
      if (lower(text[pos]) != 'r') return {};
      const char digit = text[pos + 1];
      if (digit < '0' || digit > '3') return {};
      if (!is_boundary(text, pos + 2)) return {};
      static constexpr std::array<std::string_view, 4> kNames = {
          "[R_zero]", "[R_one]", "[R_two]", "[R_three]"};
      return {2, std::string(kNames[static_cast<size_t>(digit - '0')])};
    }
    case MatcherKind::NumberLiteral: {
      const size_t len = match_number_run(text, pos);
      if (len && is_boundary(text, pos + len)) return {len, rule.target};
      return {};
    }
    case MatcherKind::VoltWord: {
      for (std::string_view w : {"voltage", "volts", "volt"}) {
        const size_t len = match_word(text, pos, w);
        if (len) return {len, rule.target};
      }
      return {};
    }
    case MatcherKind::ResistorWord: {
      for (std::string_view w : {"resistor", "res", "r"}) {
        const size_t len = match_word(text, pos, w);
        if (len) return {len, rule.target};
      }
      return {};
    }
    case MatcherKind::Custom: {
      const size_t len = match_word(text, pos, rule.pattern);
      if (len) return {len, rule.target};
      return {};
    }
  }
  return {};
}

// Length of a bracket token `[word_chars]` at pos, or 0.
size_t bracket_token_length(std::string_view text, size_t pos) {
  if (text[pos] != '[') return 0;
  size_t i = pos + 1;
  while (i < text.size() && is_word_char(text[i])) ++i;
  if (i > pos + 1 && i < text.size() && text[i] == ']') return i - pos + 1;
  return 0;
}

}  // namespace

std::vector<ReplacementRule> default_replacement_rules() {
  return {
      {"voltage_value", MatcherKind::VoltageValue, "", "[voltage]"},
      {"current_value", MatcherKind::CurrentValue, "", "[current]"},
      {"resistor_name", MatcherKind::ResistorName, "", "[R_*]"},
      {"number", MatcherKind::NumberLiteral, "", "[number]"},
      {"volt_word", MatcherKind::VoltWord, "", "voltage"},
      {"resistor_word", MatcherKind::ResistorWord, "", "resistor"},
      // Nickname defaults; projects usually override these via config.
      {"nick_tiger", MatcherKind::Custom, "tiger", "alice"},
      {"nick_lion", MatcherKind::Custom, "lion", "bob"},
  };
}

std::string apply_replacements(std::string_view text,
                               const std::vector<ReplacementRule>& rules) {
  std::string out;
  out.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    if (const size_t blen = bracket_token_length(text, i)) {
      out.append(text.substr(i, blen));
      i += blen;
      continue;
    }
    const bool word_start =
        is_word_char(text[i]) && (i == 0 || !is_word_char(text[i - 1]));
    if (word_start) {
      Match match;
      for (const auto& rule : rules) {
        match = try_rule(rule, text, i);
        if (match.length) break;
      }
      if (match.length) {
        out.append(match.replacement);
        i += match.length;
        continue;
      }
      // No rule fired: copy the whole word-char run so inner positions are
      // never rescanned.
      size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      out.append(text.substr(i, j - i));
      i = j;
      continue;
    }
    out.push_back(text[i]);
    ++i;
  }
  return out;
}

std::vector<ReplacementRule> parse_replacement_rules(std::string_view text) {
  std::vector<ReplacementRule> rules;
  std::istringstream in{std::string(text)};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      raise(ErrorCode::BadConfig, "replacement rules line " +
                                      std::to_string(line_no) +
                                      ": expected 3 tab-separated fields");
    }
    ReplacementRule rule;
    rule.rule_id = fields[0];
    rule.target = fields[2];
    const std::string& m = fields[1];
    if (m == "number") {
      rule.matcher = MatcherKind::NumberLiteral;
    } else if (m == "resistor_name") {
      rule.matcher = MatcherKind::ResistorName;
    } else if (m == "voltage") {
      rule.matcher = MatcherKind::VoltageValue;
    } else if (m == "current") {
      rule.matcher = MatcherKind::CurrentValue;
    } else if (m == "volt_word") {
      rule.matcher = MatcherKind::VoltWord;
    } else if (m == "resistor_word") {
      rule.matcher = MatcherKind::ResistorWord;
    } else if (m.rfind("custom:", 0) == 0) {
      rule.matcher = MatcherKind::Custom;
      rule.pattern = m.substr(7);
      if (rule.pattern.empty()) {
        raise(ErrorCode::BadConfig,
              "replacement rules line " + std::to_string(line_no) +
                  ": custom matcher needs a word (custom:<word>)");
      }
    } else {
      raise(ErrorCode::BadConfig, "replacement rules line " +
                                      std::to_string(line_no) +
                                      ": unknown matcher \"" + m + "\"");
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

std::vector<ReplacementRule> load_replacement_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot open rules file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_replacement_rules(buf.str());
}

std::string format_replacement_rules(
    const std::vector<ReplacementRule>& rules) {
  std::string out;
  for (const auto& rule : rules) {
    std::string matcher;
    switch (rule.matcher) {
      case MatcherKind::NumberLiteral: matcher = "number"; break;
      case MatcherKind::ResistorName: matcher = "resistor_name"; break;
      case MatcherKind::VoltageValue: matcher = "voltage"; break;
      case MatcherKind::CurrentValue: matcher = "current"; break;
      case MatcherKind::VoltWord: matcher = "volt_word"; break;
      case MatcherKind::ResistorWord: matcher = "resistor_word"; break;
      case MatcherKind::Custom: matcher = "custom:" + rule.pattern; break;
    }
    out += rule.rule_id + "\t" + matcher + "\t" + rule.target + "\n";
  }
  return out;
}

std::vector<std::string> surface_tokens(std::string_view text,
                                        size_t max_len) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < text.size() && tokens.size() < max_len) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (const size_t blen = bracket_token_length(text, i)) {
      tokens.emplace_back(text.substr(i, blen));
      i += blen;
      continue;
    }
    if (is_word_char(c)) {
      size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      std::string tok(text.substr(i, j - i));
      std::transform(tok.begin(), tok.end(), tok.begin(),
                     [](char ch) { return lower(ch); });
      tokens.push_back(std::move(tok));
      i = j;
      continue;
    }
    tokens.emplace_back(1, c);  // punctuation kept as its own token
    ++i;
  }
  return tokens;
}

const std::vector<std::string>& Vocab::reserved_tokens() {
  static const std::vector<std::string> kReserved = {
      "[PAD]",    "[UNK]",   "[CLS]",   "[SEP]",     "[MASK]",
      "[number]", "[R_zero]", "[R_one]", "[R_two]",  "[R_three]",
      "[voltage]", "[current]"};
  return kReserved;
}

void Vocab::rebuild_index() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    index_.emplace_back(tokens_[i], static_cast<int>(i));
  }
  std::sort(index_.begin(), index_.end());
}

Vocab Vocab::build(const std::vector<std::string>& corpus,
                   size_t min_frequency,
                   const std::vector<std::string>& ensure_tokens) {
  if (corpus.empty()) raise(ErrorCode::EmptyCorpus, "empty vocab corpus");
  std::map<std::string, size_t> counts;
  for (const auto& text : corpus) {
    for (auto& tok : surface_tokens(text, std::string::npos)) ++counts[tok];
  }

  Vocab vocab;
  vocab.tokens_ = reserved_tokens();
  auto in_vocab = [&vocab](const std::string& tok) {
    return std::find(vocab.tokens_.begin(), vocab.tokens_.end(), tok) !=
           vocab.tokens_.end();
  };

  std::vector<std::pair<std::string, size_t>> ranked;
  for (const auto& [tok, count] : counts) {
    if (count >= min_frequency && !in_vocab(tok)) {
      ranked.emplace_back(tok, count);
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (auto& [tok, _] : ranked) vocab.tokens_.push_back(tok);
  for (const auto& tok : ensure_tokens) {
    if (!in_vocab(tok)) vocab.tokens_.push_back(tok);
  }
  vocab.rebuild_index();
  return vocab;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    raise(ErrorCode::BadCheckpoint,
          "vocab token list does not start with the reserved block");
  }
  Vocab vocab;
  vocab.tokens_ = std::move(tokens);
  vocab.rebuild_index();
  return vocab;
}

bool Vocab::contains(std::string_view token) const {
  return id(token).has_value();
}

std::optional<int> Vocab::id(std::string_view token) const {
  auto it = std::lower_bound(
      index_.begin(), index_.end(), token,
      [](const auto& entry, std::string_view t) { return entry.first < t; });
  if (it != index_.end() && it->first == token) return it->second;
  return std::nullopt;
}

int Vocab::id_or_unk(std::string_view token) const {
  return id(token).value_or(unk_id());
}

const std::string& Vocab::token(int id) const {
  return tokens_.at(static_cast<size_t>(id));
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV offset basis
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 1099511628211ULL;  // FNV prime
  };
  for (const auto& tok : tokens_) {
    for (char c : tok) mix(static_cast<unsigned char>(c));
    mix(0);  // token separator
  }
  return h;
}

TokenSequence tokenize(std::string_view text, const Vocab& vocab,
                       size_t max_len) {
  TokenSequence seq;
  seq.surface = surface_tokens(text, max_len);
  seq.ids.reserve(seq.surface.size());
  for (size_t i = 0; i < seq.surface.size(); ++i) {
    const int id = vocab.id_or_unk(seq.surface[i]);
    seq.ids.push_back(id);
    if (id == vocab.mask_id() && !seq.mask_position) seq.mask_position = i;
  }
  return seq;
}

}  // namespace cpscode
