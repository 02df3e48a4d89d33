#include "hetformer/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

namespace hetformer::corpus {

namespace {

using nlohmann::json;

// Fixed so the exact-match coreference fallback is platform independent.
constexpr std::array<std::string_view, 50> kStopwords = {
    "a",    "an",   "and",  "are",  "as",    "at",   "be",   "but",  "by",   "for",
    "from", "had",  "has",  "have", "he",    "her",  "his",  "i",    "in",   "is",
    "it",   "its",  "not",  "of",   "on",    "or",   "she",  "so",   "that", "the",
    "their", "them", "then", "there", "they", "this", "to",   "was",  "we",   "were",
    "what", "when", "which", "who", "will",  "with", "would", "you", "your", "been",
};

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

const json& require_field(const json& rec, const char* name, std::size_t line_no) {
  auto it = rec.find(name);
  if (it == rec.end())
    throw SchemaError("line " + std::to_string(line_no) + ": missing required field \"" + name + "\"");
  return *it;
}

[[noreturn]] void schema_fail(std::size_t line_no, const std::string& msg) {
  throw SchemaError("line " + std::to_string(line_no) + ": " + msg);
}

}  // namespace

std::vector<Token> tokenize(std::string_view sentence) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = sentence.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(sentence[i]))) ++i;
    std::size_t start = i;
    while (i < n && !std::isspace(static_cast<unsigned char>(sentence[i]))) ++i;
    std::size_t end = i;
    while (start < end && is_punct(static_cast<unsigned char>(sentence[start]))) ++start;
    while (end > start && is_punct(static_cast<unsigned char>(sentence[end - 1]))) --end;
    if (start == end) continue;
    Token t;
    t.text.reserve(end - start);
    for (std::size_t k = start; k < end; ++k)
      t.text.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(sentence[k]))));
    t.char_start = start;
    t.char_end = end;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::string> tokenize_words(std::string_view sentence) {
  std::vector<std::string> words;
  for (auto& t : tokenize(sentence)) words.push_back(std::move(t.text));
  return words;
}

bool is_stopword(std::string_view word) {
  return std::find(kStopwords.begin(), kStopwords.end(), word) != kStopwords.end();
}

// ---------------------------------------------------------------- Vocab

Vocab::Vocab() : id_to_token_{"[PAD]", "[UNK]", "[CLS]", "[DOC]"} {}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) {
    if (t.empty()) throw std::invalid_argument("vocab token is empty");
    auto [it, inserted] = v.token_to_id_.emplace(t, static_cast<std::int32_t>(v.id_to_token_.size()));
    if (!inserted) throw std::invalid_argument("duplicate vocab token: " + t);
    v.id_to_token_.push_back(t);
  }
  return v;
}

std::int32_t Vocab::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::out_of_range("vocab id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::non_reserved_tokens() const {
  return {id_to_token_.begin() + kReserved, id_to_token_.end()};
}

Vocab build_vocab(const std::vector<Document>& docs, std::size_t min_count) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  if (docs.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& doc : docs)
    for (const auto& s : doc.sentences)
      for (auto& w : tokenize_words(s)) ++freq[w];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : freq)
    if (c >= min_count) kept.emplace_back(w, c);
  // std::map iteration is lexicographic, so stable_sort keeps the tie order.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [w, c] : kept) tokens.push_back(w);
  return Vocab::from_tokens(tokens);
}

// ---------------------------------------------------------------- parsing

void validate_document(const Document& doc) {
  if (doc.sentences.empty()) throw SchemaError("document \"" + doc.id + "\" has no sentences");
  if (doc.entity_clusters) {
    for (const auto& cluster : *doc.entity_clusters) {
      for (const auto& m : cluster) {
        if (m.sentence >= doc.sentences.size())
          throw SchemaError("document \"" + doc.id + "\": mention sentence index " +
                            std::to_string(m.sentence) + " out of range");
        if (m.char_start >= m.char_end || m.char_end > doc.sentences[m.sentence].size())
          throw SchemaError("document \"" + doc.id + "\": mention span [" + std::to_string(m.char_start) +
                            ", " + std::to_string(m.char_end) + ") out of range for sentence " +
                            std::to_string(m.sentence));
      }
    }
  }
  if (doc.doc_boundaries) {
    const auto& b = *doc.doc_boundaries;
    if (b.empty() || b.front() != 0)
      throw SchemaError("document \"" + doc.id + "\": doc_boundaries must start at 0");
    for (std::size_t i = 1; i < b.size(); ++i)
      if (b[i] <= b[i - 1])
        throw SchemaError("document \"" + doc.id + "\": doc_boundaries must be strictly increasing");
    if (b.back() >= doc.sentences.size())
      throw SchemaError("document \"" + doc.id + "\": doc_boundaries index past last sentence");
  }
  if (doc.labels) {
    if (doc.labels->size() != doc.sentences.size())
      throw SchemaError("document \"" + doc.id + "\": labels length differs from sentence count");
    for (int l : *doc.labels)
      if (l != 0 && l != 1) throw SchemaError("document \"" + doc.id + "\": labels must be 0 or 1");
  }
}

Document parse_document(std::string_view line, std::size_t line_no) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    schema_fail(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!rec.is_object()) schema_fail(line_no, "record is not a JSON object");

  Document doc;
  try {
    if (auto it = rec.find("id"); it != rec.end()) doc.id = it->get<std::string>();
    else doc.id = "line" + std::to_string(line_no);

    doc.sentences = require_field(rec, "sentences", line_no).get<std::vector<std::string>>();
    if (auto it = rec.find("summary"); it != rec.end() && !it->is_null())
      doc.gold_summary = it->get<std::vector<std::string>>();
    if (auto it = rec.find("entities"); it != rec.end() && !it->is_null()) {
      std::vector<MentionCluster> clusters;
      for (const auto& c : *it) {
        MentionCluster cluster;
        for (const auto& m : c) {
          if (!m.is_array() || m.size() != 3) schema_fail(line_no, "entity mention must be [sent_idx, char_start, char_end]");
          cluster.push_back({m[0].get<std::size_t>(), m[1].get<std::size_t>(), m[2].get<std::size_t>()});
        }
        clusters.push_back(std::move(cluster));
      }
      doc.entity_clusters = std::move(clusters);
    }
    if (auto it = rec.find("doc_boundaries"); it != rec.end() && !it->is_null())
      doc.doc_boundaries = it->get<std::vector<std::size_t>>();
    if (auto it = rec.find("labels"); it != rec.end() && !it->is_null())
      doc.labels = it->get<std::vector<int>>();
  } catch (const json::exception& e) {
    schema_fail(line_no, std::string("bad field type: ") + e.what());
  }

  try {
    validate_document(doc);
  } catch (const SchemaError& e) {
    schema_fail(line_no, e.what());
  }
  return doc;
}

std::vector<Document> parse_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    docs.push_back(parse_document(line, line_no));
  }
  if (in.bad()) throw std::runtime_error("read error on corpus file: " + path.string());
  return docs;
}

// ---------------------------------------------------------------- entities

std::vector<MentionCluster> resolve_entities_exact(const Document& doc) {
  if (doc.entity_clusters) return *doc.entity_clusters;

  std::map<std::string, std::size_t> counts;
  std::vector<std::pair<std::string, Mention>> occurrences;
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
    for (auto& t : tokenize(doc.sentences[s])) {
      ++counts[t.text];
      occurrences.push_back({t.text, Mention{s, t.char_start, t.char_end}});
    }
  }

  std::vector<MentionCluster> clusters;
  std::map<std::string, std::size_t> cluster_of;
  for (auto& [word, mention] : occurrences) {
    if (counts[word] < 2 || is_stopword(word)) continue;
    auto [it, inserted] = cluster_of.emplace(word, clusters.size());
    if (inserted) clusters.emplace_back();
    clusters[it->second].push_back(mention);
  }
  return clusters;
}

// ---------------------------------------------------------------- layout

std::vector<std::size_t> NodeSequence::global_nodes() const {
  std::vector<std::size_t> g;
  g.reserve(sent_nodes.size() + doc_nodes.size());
  std::merge(sent_nodes.begin(), sent_nodes.end(), doc_nodes.begin(), doc_nodes.end(), std::back_inserter(g));
  return g;
}

NodeSequence build_nodes(const Document& doc, const Vocab& vocab, const BuildOptions& opts) {
  if (doc.sentences.empty()) throw std::invalid_argument("document \"" + doc.id + "\" has no sentences");
  if (opts.multi_doc && !doc.doc_boundaries)
    throw std::invalid_argument("document \"" + doc.id + "\": multi-document layout needs doc_boundaries");

  std::set<std::size_t> boundaries;
  if (opts.multi_doc) boundaries.insert(doc.doc_boundaries->begin(), doc.doc_boundaries->end());

  NodeSequence ns;
  // token node index for every (sentence, token) pair, used to place mentions
  std::vector<std::vector<Token>> sent_tokens(doc.sentences.size());
  std::vector<std::size_t> first_token_index(doc.sentences.size());

  auto push = [&](std::int32_t id, NodeKind kind, std::size_t pos, std::uint8_t seg) {
    ns.node_ids.push_back(id);
    ns.node_kind.push_back(kind);
    ns.position.push_back(opts.global_positions ? ns.node_ids.size() - 1 : pos);
    ns.segment.push_back(seg);
  };

  for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
    sent_tokens[s] = tokenize(doc.sentences[s]);
    if (sent_tokens[s].empty())
      throw std::invalid_argument("document \"" + doc.id + "\": sentence " + std::to_string(s) +
                                  " has no tokens");
    const auto seg = static_cast<std::uint8_t>(s % 2);
    if (boundaries.count(s)) {
      ns.doc_nodes.push_back(ns.size());
      push(Vocab::kDoc, NodeKind::Doc, 0, seg);
    }
    ns.sent_nodes.push_back(ns.size());
    push(Vocab::kCls, NodeKind::Sent, 0, seg);
    first_token_index[s] = ns.size();
    std::size_t pos = 1;
    for (const auto& t : sent_tokens[s]) push(vocab.id(t.text), NodeKind::Token, pos++, seg);
    ns.sent_span.push_back({first_token_index[s], ns.size()});
  }

  for (const auto& cluster : resolve_entities_exact(doc)) {
    std::set<std::size_t> heads;
    for (const auto& m : cluster) {
      if (m.sentence >= sent_tokens.size()) continue;
      const auto& toks = sent_tokens[m.sentence];
      for (std::size_t k = 0; k < toks.size(); ++k) {
        if (toks[k].char_start < m.char_end && toks[k].char_end > m.char_start) {
          heads.insert(first_token_index[m.sentence] + k);
          break;
        }
      }
    }
    if (!heads.empty()) ns.entity_positions.emplace_back(heads.begin(), heads.end());
  }
  return ns;
}

void check_invariants(const NodeSequence& ns) {
  auto fail = [](const std::string& what) { throw std::logic_error("node layout invariant violated: " + what); };
  const std::size_t n = ns.size();
  if (ns.node_kind.size() != n || ns.position.size() != n || ns.segment.size() != n) fail("field lengths");
  if (ns.sent_span.size() != ns.sent_nodes.size()) fail("one span per sentence node");

  std::size_t tokens = 0;
  for (std::size_t i = 0; i < ns.sent_nodes.size(); ++i) {
    const auto s = ns.sent_nodes[i];
    const auto& sp = ns.sent_span[i];
    if (ns.node_kind[s] != NodeKind::Sent) fail("sent_nodes kind");
    if (!(s < sp.start) || sp.start != s + 1 || sp.end <= sp.start) fail("sentence span placement");
    for (std::size_t j = sp.start; j < sp.end; ++j) {
      if (ns.node_kind[j] != NodeKind::Token) fail("span covers non-token");
      if (ns.segment[j] != i % 2) fail("segment parity");
    }
    if (ns.segment[s] != i % 2) fail("segment parity");
    tokens += sp.end - sp.start;
  }
  for (auto d : ns.doc_nodes)
    if (ns.node_kind[d] != NodeKind::Doc) fail("doc_nodes kind");
  if (n != tokens + ns.sent_nodes.size() + ns.doc_nodes.size()) fail("node count identity");
  for (const auto& c : ns.entity_positions)
    for (auto j : c)
      if (j >= n || ns.node_kind[j] != NodeKind::Token) fail("entity position on non-token");
}

}  // namespace hetformer::corpus
