#pragma once

// Documents, vocabulary and the heterogeneous node layout
// ([DOC] [SENT] tok tok ... [SENT] tok ...).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hetformer::corpus {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Mention {
  std::size_t sentence = 0;
  std::size_t char_start = 0;
  std::size_t char_end = 0;  // exclusive

  bool operator==(const Mention&) const = default;
};

using MentionCluster = std::vector<Mention>;

struct Document {
  std::string id;
  std::vector<std::string> sentences;
  std::optional<std::vector<std::string>> gold_summary;
  std::optional<std::vector<MentionCluster>> entity_clusters;
  std::optional<std::vector<std::size_t>> doc_boundaries;
  std::optional<std::vector<int>> labels;
};

struct Token {
  std::string text;  // lowercased, edge punctuation stripped
  std::size_t char_start = 0;
  std::size_t char_end = 0;
};

// Lowercase whitespace tokenizer; punctuation is stripped from token edges
// and tokens that become empty are dropped.
std::vector<Token> tokenize(std::string_view sentence);
std::vector<std::string> tokenize_words(std::string_view sentence);

bool is_stopword(std::string_view word);

class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kDoc = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();
  // Reserved entries are implied; `tokens` are the non-reserved entries in id order.
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return id_to_token_.size(); }
  std::vector<std::string> non_reserved_tokens() const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
};

enum class NodeKind : std::uint8_t { Token, Sent, Doc };

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
};

struct NodeSequence {
  std::vector<std::int32_t> node_ids;
  std::vector<NodeKind> node_kind;
  std::vector<std::size_t> position;
  std::vector<std::uint8_t> segment;
  std::vector<std::size_t> sent_nodes;
  std::vector<std::size_t> doc_nodes;
  std::vector<Span> sent_span;
  std::vector<std::vector<std::size_t>> entity_positions;

  std::size_t size() const { return node_ids.size(); }
  // sent_nodes and doc_nodes merged in ascending order.
  std::vector<std::size_t> global_nodes() const;
};

struct BuildOptions {
  bool multi_doc = false;
  // Positions count from the start of the sequence instead of restarting at
  // each sentence node.
  bool global_positions = false;
};

std::vector<Document> parse_corpus(const std::filesystem::path& path);
// Parses a single JSONL record; `line_no` is only used in error messages.
Document parse_document(std::string_view line, std::size_t line_no = 1);
void validate_document(const Document& doc);

Vocab build_vocab(const std::vector<Document>& docs, std::size_t min_count);

std::vector<MentionCluster> resolve_entities_exact(const Document& doc);

NodeSequence build_nodes(const Document& doc, const Vocab& vocab, const BuildOptions& opts = {});

// Checks every structural invariant of a layout; throws std::logic_error.
void check_invariants(const NodeSequence& nodes);

}  // namespace hetformer::corpus
