#include "kgforge/live.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>

#include "kgforge/ontology.hpp"
#include "kgforge/util.hpp"

namespace kgf {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kGenderPredicate = "sex_or_gender";
constexpr const char* kIdPath = "id";

bool is_operator_name(const std::string& predicate) {
  return !predicate.empty() && std::isupper(static_cast<unsigned char>(predicate[0]));
}

// ---------------------------------------------------------------------------
// KGQ lexer

struct Token {
  enum Kind { ident, number, text, symbol, end };
  Kind kind = end;
  std::string value;
  size_t pos = 0;
};

[[noreturn]] void syntax_error(size_t pos, const std::string& message) {
  raise(Errc::SyntaxError, "position " + std::to_string(pos) + ": " + message);
}

std::vector<Token> lex_kgq(const std::string& text) {
  std::vector<Token> out;
  size_t i = 0;
  auto peek = [&](size_t ahead) -> char {
    return i + ahead < text.size() ? text[i + ahead] : '\0';
  };
  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::string ident;
      while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) ||
                                 text[i] == '_')) {
        ident.push_back(text[i++]);
      }
      out.push_back({Token::ident, ident, start});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
      std::string digits;
      if (c == '-') {
        digits.push_back(c);
        ++i;
      }
      bool dotted = false;
      while (i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) ||
                                 (text[i] == '.' && !dotted))) {
        dotted = dotted || text[i] == '.';
        digits.push_back(text[i++]);
      }
      out.push_back({Token::number, digits, start});
      continue;
    }
    if (c == '"') {
      std::string value;
      ++i;
      bool closed = false;
      while (i < text.size()) {
        if (text[i] == '\\' && i + 1 < text.size()) {
          value.push_back(text[i + 1]);
          i += 2;
          continue;
        }
        if (text[i] == '"') {
          closed = true;
          ++i;
          break;
        }
        value.push_back(text[i++]);
      }
      if (!closed) syntax_error(start, "unterminated string literal");
      out.push_back({Token::text, value, start});
      continue;
    }
    if (c == '-') {
      if (peek(1) == '[') {
        out.push_back({Token::symbol, "-[", start});
        i += 2;
        continue;
      }
      syntax_error(start, "unexpected '-'");
    }
    if (c == ']') {
      if (peek(1) == '-' && peek(2) == '>') {
        out.push_back({Token::symbol, "]->", start});
        i += 3;
        continue;
      }
      if (peek(1) == '-') {
        out.push_back({Token::symbol, "]-", start});
        i += 2;
        continue;
      }
      syntax_error(start, "unexpected ']'");
    }
    if (c == '<') {
      if (peek(1) == '-' && peek(2) == '[') {
        out.push_back({Token::symbol, "<-[", start});
        i += 3;
        continue;
      }
      if (peek(1) == '=') {
        out.push_back({Token::symbol, "<=", start});
        i += 2;
        continue;
      }
      out.push_back({Token::symbol, "<", start});
      ++i;
      continue;
    }
    if (c == '>') {
      if (peek(1) == '=') {
        out.push_back({Token::symbol, ">=", start});
        i += 2;
        continue;
      }
      out.push_back({Token::symbol, ">", start});
      ++i;
      continue;
    }
    if (c == '!') {
      if (peek(1) == '=') {
        out.push_back({Token::symbol, "!=", start});
        i += 2;
        continue;
      }
      syntax_error(start, "unexpected '!'");
    }
    if (std::string("()=:,.*").find(c) != std::string::npos) {
      out.push_back({Token::symbol, std::string(1, c), start});
      ++i;
      continue;
    }
    syntax_error(start, std::string("unexpected character '") + c + "'");
  }
  out.push_back({Token::end, "", text.size()});
  return out;
}

// ---------------------------------------------------------------------------
// KGQ parser

class KgqParser {
 public:
  KgqParser(const std::string& text, int max_depth)
      : tokens_(lex_kgq(text)), max_depth_(max_depth) {}

  KgqQuery parse() {
    KgqQuery query;
    expect_keyword("MATCH");
    query.nodes.push_back(parse_node());
    while (peek().kind == Token::symbol && (peek().value == "-[" || peek().value == "<-[")) {
      query.edges.push_back(parse_edge());
      query.nodes.push_back(parse_node());
    }
    if (peek_keyword("WHERE")) {
      advance();
      query.where.push_back(parse_condition());
      while (peek_keyword("AND")) {
        advance();
        query.where.push_back(parse_condition());
      }
    }
    expect_keyword("RETURN");
    query.returns.push_back(parse_projection());
    while (peek().kind == Token::symbol && peek().value == ",") {
      advance();
      query.returns.push_back(parse_projection());
    }
    if (peek_keyword("LIMIT")) {
      advance();
      Token t = expect(Token::number, "limit count");
      if (t.value.find('.') != std::string::npos || t.value.find('-') != std::string::npos) {
        syntax_error(t.pos, "limit must be a non-negative integer");
      }
      query.limit = std::atoi(t.value.c_str());
    }
    if (peek().kind != Token::end) {
      syntax_error(peek().pos, "unexpected trailing input");
    }
    validate(query);
    return query;
  }

 private:
  const Token& peek() const { return tokens_[at_]; }
  void advance() { ++at_; }

  bool peek_keyword(const std::string& word) const {
    return peek().kind == Token::ident && peek().value == word;
  }

  void expect_keyword(const std::string& word) {
    if (!peek_keyword(word)) {
      syntax_error(peek().pos, "expected " + word);
    }
    advance();
  }

  Token expect(Token::Kind kind, const std::string& what) {
    if (peek().kind != kind) syntax_error(peek().pos, "expected " + what);
    Token t = peek();
    advance();
    return t;
  }

  void expect_symbol(const std::string& symbol) {
    if (peek().kind != Token::symbol || peek().value != symbol) {
      syntax_error(peek().pos, "expected '" + symbol + "'");
    }
    advance();
  }

  KgqNode parse_node() {
    expect_symbol("(");
    KgqNode node;
    node.var = expect(Token::ident, "variable name").value;
    if (peek().kind == Token::symbol && peek().value == ":") {
      advance();
      node.type = expect(Token::ident, "type name").value;
    }
    expect_symbol(")");
    return node;
  }

  KgqEdge parse_edge() {
    KgqEdge edge;
    if (peek().value == "<-[") {
      advance();
      edge.reversed = true;
      edge.predicate = expect(Token::ident, "predicate name").value;
      expect_symbol("]-");
      return edge;
    }
    expect_symbol("-[");
    edge.predicate = expect(Token::ident, "predicate name").value;
    if (peek().kind == Token::symbol && peek().value == "*") {
      size_t star_pos = peek().pos;
      advance();
      Token t = expect(Token::number, "repetition count");
      if (t.value.find('.') != std::string::npos || t.value.find('-') != std::string::npos ||
          std::atoi(t.value.c_str()) < 1) {
        syntax_error(t.pos, "repetition must be a positive integer");
      }
      if (is_operator_name(edge.predicate)) {
        syntax_error(star_pos, "operator edges take no repetition");
      }
      edge.repeat = std::atoi(t.value.c_str());
      if (edge.repeat > max_depth_) {
        raise(Errc::DepthExceeded, "repetition " + std::to_string(edge.repeat) +
                                       " exceeds the depth bound " + std::to_string(max_depth_));
      }
    }
    expect_symbol("]->");
    return edge;
  }

  std::vector<std::string> parse_predpath() {
    std::vector<std::string> path;
    path.push_back(expect(Token::ident, "predicate name").value);
    while (peek().kind == Token::symbol && peek().value == ".") {
      if (path.size() == 2) {
        syntax_error(peek().pos, "predicate paths allow at most two hops");
      }
      advance();
      path.push_back(expect(Token::ident, "predicate name").value);
    }
    return path;
  }

  KgqCondition parse_condition() {
    KgqCondition cond;
    if (peek_keyword("SEARCH")) {
      advance();
      cond.is_search = true;
      expect_symbol("(");
      cond.var = expect(Token::ident, "variable name").value;
      expect_symbol(",");
      cond.search_text = expect(Token::text, "search string").value;
      expect_symbol(")");
      return cond;
    }
    cond.var = expect(Token::ident, "variable name").value;
    expect_symbol(".");
    cond.predpath = parse_predpath();
    if (peek().kind != Token::symbol ||
        (peek().value != "=" && peek().value != "!=" && peek().value != "<" &&
         peek().value != "<=" && peek().value != ">" && peek().value != ">=")) {
      syntax_error(peek().pos, "expected a comparison operator");
    }
    cond.cmp = peek().value;
    advance();
    if (peek().kind == Token::text) {
      cond.literal = peek().value;
      cond.literal_quoted = true;
    } else if (peek().kind == Token::number) {
      cond.literal = peek().value;
      cond.literal_quoted = false;
    } else {
      syntax_error(peek().pos, "expected a literal");
    }
    advance();
    return cond;
  }

  KgqProjection parse_projection() {
    KgqProjection proj;
    proj.var = expect(Token::ident, "variable name").value;
    if (peek().kind == Token::symbol && peek().value == ".") {
      advance();
      proj.predpath = parse_predpath();
    }
    return proj;
  }

  void validate(const KgqQuery& query) const {
    std::set<std::string> bound;
    for (const auto& node : query.nodes) bound.insert(node.var);
    for (const auto& cond : query.where) {
      if (!bound.count(cond.var)) {
        raise(Errc::UnboundVariable, "variable " + cond.var + " is not bound in MATCH");
      }
    }
    for (const auto& proj : query.returns) {
      if (!bound.count(proj.var)) {
        raise(Errc::UnboundVariable, "variable " + proj.var + " is not bound in MATCH");
      }
    }
  }

  std::vector<Token> tokens_;
  size_t at_ = 0;
  int max_depth_;
};

std::string quote_literal(const std::string& value) {
  std::string out = "\"";
  for (char c : value) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string print_predpath(const std::vector<std::string>& path) {
  std::string out;
  for (size_t i = 0; i < path.size(); ++i) {
    if (i) out += ".";
    out += path[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Index helpers

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  double value = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return value;
}

const std::vector<ExtendedTriple>* facts_of(const LiveIndexes& indexes, const EntityId& id) {
  auto it = indexes.kv.find(id);
  return it == indexes.kv.end() ? nullptr : &it->second;
}

bool is_name_predicate(const std::string& predicate) {
  return predicate == kNamePredicate || predicate == kAliasPredicate;
}

std::set<std::string> live_tokens(const LiveIndexes& indexes, const EntityId& id) {
  std::set<std::string> out;
  const auto* facts = facts_of(indexes, id);
  if (!facts) return out;
  for (const auto& t : *facts) {
    if (!is_name_predicate(t.predicate) || indexes.blocked_facts.count(fact_key(t))) continue;
    for (const auto& token : tokenize(t.object)) out.insert(token);
  }
  return out;
}

void remove_postings(LiveIndexes& indexes, const EntityId& id) {
  for (auto it = indexes.inverted.begin(); it != indexes.inverted.end();) {
    auto& list = it->second;
    list.erase(std::remove(list.begin(), list.end(), id), list.end());
    it = list.empty() ? indexes.inverted.erase(it) : std::next(it);
  }
}

void add_postings(LiveIndexes& indexes, const EntityId& id) {
  for (const auto& token : live_tokens(indexes, id)) {
    auto& list = indexes.inverted[token];
    auto at = std::lower_bound(list.begin(), list.end(), id);
    if (at == list.end() || !(*at == id)) list.insert(at, id);
  }
}

bool entity_has_type(const LiveIndexes& indexes, const EntityId& id, const std::string& type) {
  const auto* facts = facts_of(indexes, id);
  if (!facts) return false;
  for (const auto& t : *facts) {
    if (t.predicate == kTypePredicate && !t.r_id && t.object == type &&
        !indexes.blocked_facts.count(fact_key(t))) {
      return true;
    }
  }
  return false;
}

bool entity_has_predicate(const LiveIndexes& indexes, const EntityId& id,
                          const std::string& predicate) {
  const auto* facts = facts_of(indexes, id);
  if (!facts) return false;
  for (const auto& t : *facts) {
    if (t.predicate == predicate && !indexes.blocked_facts.count(fact_key(t))) return true;
  }
  return false;
}

// Distinct raw values reachable from id over a one- or two-element predicate
// path. Two-element paths read both relationship-node groups (predicate +
// r_predicate) and chained simple facts through entity references.
std::vector<std::string> eval_path(const LiveIndexes& indexes, const EntityId& id,
                                   const std::vector<std::string>& path) {
  std::set<std::string> values;
  if (path.size() == 1 && path[0] == kIdPath) return {id.str()};
  const auto* facts = facts_of(indexes, id);
  if (!facts) return {};
  if (path.size() == 1) {
    for (const auto& t : *facts) {
      if (t.predicate != path[0] || t.r_id || indexes.blocked_facts.count(fact_key(t))) continue;
      values.insert(t.object);
    }
  } else {
    for (const auto& t : *facts) {
      if (t.predicate != path[0] || indexes.blocked_facts.count(fact_key(t))) continue;
      if (t.r_predicate && *t.r_predicate == path[1]) {
        values.insert(t.object);
        continue;
      }
      if (t.r_id || t.object_kind != ObjectKind::entity_ref) continue;
      for (const auto& value : eval_path(indexes, t.object_id(), {path[1]})) {
        values.insert(value);
      }
    }
  }
  return {values.begin(), values.end()};
}

bool compare_values(const std::string& value, const std::string& cmp, const std::string& literal) {
  auto lhs = parse_number(value);
  auto rhs = parse_number(literal);
  int sign;
  if (lhs && rhs) {
    sign = *lhs < *rhs ? -1 : (*lhs > *rhs ? 1 : 0);
  } else {
    sign = value.compare(literal);
    sign = sign < 0 ? -1 : (sign > 0 ? 1 : 0);
  }
  if (cmp == "=") return sign == 0;
  if (cmp == "!=") return sign != 0;
  if (cmp == "<") return sign < 0;
  if (cmp == "<=") return sign <= 0;
  if (cmp == ">") return sign > 0;
  return sign >= 0;
}

bool condition_holds(const LiveIndexes& indexes, const EntityId& id, const KgqCondition& cond) {
  if (cond.is_search) {
    auto tokens = tokenize(cond.search_text);
    auto live = live_tokens(indexes, id);
    for (const auto& token : tokens) {
      if (!live.count(token)) return false;
    }
    return !tokens.empty();
  }
  for (const auto& value : eval_path(indexes, id, cond.predpath)) {
    if (compare_values(value, cond.cmp, cond.literal)) return true;
  }
  return false;
}

// Entities reachable from `from` over 1..repeat hops of the edge predicate.
std::vector<EntityId> edge_targets(const LiveIndexes& indexes, const EntityId& from,
                                   const KgqEdge& edge) {
  std::set<EntityId> reached;
  if (edge.reversed) {
    for (const auto& [subject, facts] : indexes.kv) {
      for (const auto& t : facts) {
        if (t.predicate != edge.predicate || t.r_id ||
            t.object_kind != ObjectKind::entity_ref ||
            indexes.blocked_facts.count(fact_key(t))) {
          continue;
        }
        if (t.object_id() == from) reached.insert(subject);
      }
    }
    return {reached.begin(), reached.end()};
  }
  std::set<EntityId> frontier = {from};
  for (int hop = 0; hop < edge.repeat; ++hop) {
    std::set<EntityId> next;
    for (const auto& at : frontier) {
      const auto* facts = facts_of(indexes, at);
      if (!facts) continue;
      for (const auto& t : *facts) {
        if (t.predicate != edge.predicate || t.r_id ||
            t.object_kind != ObjectKind::entity_ref ||
            indexes.blocked_facts.count(fact_key(t))) {
          continue;
        }
        EntityId target = t.object_id();
        if (indexes.kv.count(target)) next.insert(target);
      }
    }
    for (const auto& id : next) reached.insert(id);
    frontier = std::move(next);
    if (frontier.empty()) break;
  }
  return {reached.begin(), reached.end()};
}

std::string render_cell(const std::vector<std::string>& values) {
  std::string out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += values[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Followup helpers

bool context_entity_has_type(const Interaction& interaction, const LiveIndexes& indexes,
                             const EntityId& id, const std::string& type) {
  auto it = interaction.entity_types.find(id);
  if (it != interaction.entity_types.end()) {
    if (std::find(it->second.begin(), it->second.end(), type) != it->second.end()) return true;
  }
  return entity_has_type(indexes, id, type);
}

std::string entity_gender(const LiveIndexes& indexes, const EntityId& id) {
  auto values = eval_path(indexes, id, {kGenderPredicate});
  return values.empty() ? "" : values.front();
}

}  // namespace

// ---------------------------------------------------------------------------
// Stream records

std::vector<StreamRecord> read_stream_records(const std::string& path) {
  std::vector<StreamRecord> out;
  std::string content = read_file(path);
  size_t line_no = 0;
  size_t at = 0;
  while (at < content.size()) {
    size_t nl = content.find('\n', at);
    std::string line = content.substr(at, nl == std::string::npos ? nl : nl - at);
    at = nl == std::string::npos ? content.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
      StreamRecord record;
      record.stream = doc.at("stream").get<std::string>();
      record.natural_key = doc.at("natural_key").get<std::string>();
      for (const auto& [key, value] : doc.at("fields").items()) {
        record.fields[key] = value.is_string() ? value.get<std::string>() : value.dump();
      }
      for (const auto& ref : doc.value("entity_references", json::array())) {
        record.entity_references.push_back({ref.at("field").get<std::string>(),
                                            ref.at("surface").get<std::string>(),
                                            ref.value("type_hint", "")});
      }
      out.push_back(std::move(record));
    } catch (const json::exception& e) {
      raise(Errc::FormatError, path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_stream_records(const std::string& path, const std::vector<StreamRecord>& records) {
  std::string out;
  for (const auto& record : records) {
    ordered_json doc;
    doc["stream"] = record.stream;
    doc["natural_key"] = record.natural_key;
    doc["fields"] = ordered_json::object();
    for (const auto& [key, value] : record.fields) doc["fields"][key] = value;
    doc["entity_references"] = ordered_json::array();
    for (const auto& ref : record.entity_references) {
      doc["entity_references"].push_back(
          {{"field", ref.field}, {"surface", ref.surface}, {"type_hint", ref.type_hint}});
    }
    out += doc.dump() + "\n";
  }
  write_file_atomic(path, out);
}

LiveIndexes build_live_indexes(const std::vector<ExtendedTriple>& stable_view,
                               const std::vector<StreamRecord>& streams,
                               const NerdView& nerd_view, const DisambWeights& weights) {
  LiveIndexes indexes;
  for (const auto& t : stable_view) indexes.kv[t.subject].push_back(t);
  for (auto& [id, facts] : indexes.kv) {
    std::sort(facts.begin(), facts.end(),
              [](const ExtendedTriple& a, const ExtendedTriple& b) {
                return fact_key(a) < fact_key(b);
              });
  }
  for (const auto& [id, facts] : indexes.kv) add_postings(indexes, id);
  for (const auto& record : streams) {
    indexes = ingest_stream_record(std::move(indexes), record, nerd_view, weights);
  }
  return indexes;
}

LiveIndexes ingest_stream_record(LiveIndexes indexes, const StreamRecord& record,
                                 const NerdView& nerd_view, const DisambWeights& weights) {
  EntityId subject = record.entity_id();
  remove_postings(indexes, subject);
  for (auto it = indexes.pending_resolution.begin(); it != indexes.pending_resolution.end();) {
    it = it->subject == subject ? indexes.pending_resolution.erase(it) : std::next(it);
  }

  std::vector<std::string> context;
  for (const auto& [field, value] : record.fields) {
    for (const auto& token : tokenize(value)) context.push_back(token);
  }

  std::map<std::string, std::string> values = record.fields;
  std::map<std::string, std::optional<EntityId>> resolutions;
  for (const auto& ref : record.entity_references) {
    if (!values.count(ref.field)) values[ref.field] = ref.surface;
    resolutions[ref.field] = resolve_object(nerd_view, weights, ref.surface, context,
                                            ref.type_hint);
  }

  std::vector<ExtendedTriple> facts;
  for (const auto& [field, value] : values) {
    ExtendedTriple t;
    t.subject = subject;
    t.predicate = field;
    t.object = value;
    t.sources = {record.stream};
    t.trust = {0.5};
    auto resolved = resolutions.find(field);
    if (resolved != resolutions.end()) {
      if (resolved->second) {
        t.object = resolved->second->str();
        t.object_kind = ObjectKind::entity_ref;
      } else {
        indexes.pending_resolution.insert(fact_key(t));
      }
    }
    facts.push_back(std::move(t));
  }
  std::sort(facts.begin(), facts.end(), [](const ExtendedTriple& a, const ExtendedTriple& b) {
    return fact_key(a) < fact_key(b);
  });
  indexes.kv[subject] = std::move(facts);
  add_postings(indexes, subject);
  return indexes;
}

// ---------------------------------------------------------------------------
// KGQ parse / print

KgqQuery parse_kgq(const std::string& text, int max_depth) {
  return KgqParser(text, max_depth).parse();
}

std::string print_kgq(const KgqQuery& query) {
  std::string out = "MATCH ";
  for (size_t i = 0; i < query.nodes.size(); ++i) {
    if (i) {
      const KgqEdge& edge = query.edges[i - 1];
      if (edge.reversed) {
        out += "<-[" + edge.predicate + "]-";
      } else {
        out += "-[" + edge.predicate;
        if (edge.repeat > 1) out += "*" + std::to_string(edge.repeat);
        out += "]->";
      }
    }
    out += "(" + query.nodes[i].var;
    if (query.nodes[i].type) out += ":" + *query.nodes[i].type;
    out += ")";
  }
  if (!query.where.empty()) {
    out += " WHERE ";
    for (size_t i = 0; i < query.where.size(); ++i) {
      if (i) out += " AND ";
      const KgqCondition& cond = query.where[i];
      if (cond.is_search) {
        out += "SEARCH(" + cond.var + ", " + quote_literal(cond.search_text) + ")";
      } else {
        out += cond.var + "." + print_predpath(cond.predpath) + " " + cond.cmp + " " +
               (cond.literal_quoted ? quote_literal(cond.literal) : cond.literal);
      }
    }
  }
  out += " RETURN ";
  for (size_t i = 0; i < query.returns.size(); ++i) {
    if (i) out += ", ";
    out += query.returns[i].var;
    if (!query.returns[i].predpath.empty()) {
      out += "." + print_predpath(query.returns[i].predpath);
    }
  }
  if (query.limit) out += " LIMIT " + std::to_string(*query.limit);
  return out;
}

// ---------------------------------------------------------------------------
// Virtual operators

void OperatorRegistry::register_op(const std::string& name, const std::string& fragment_kgq,
                                   int max_depth) {
  if (!is_operator_name(name)) {
    raise(Errc::ConfigError, "operator names start with an uppercase letter: " + name);
  }
  KgqQuery fragment = parse_kgq(fragment_kgq, max_depth);
  if (fragment.nodes.size() < 2) {
    raise(Errc::ConfigError, "operator " + name + " needs a chain of at least two nodes");
  }
  ops_[name] = std::move(fragment);
}

const KgqQuery* OperatorRegistry::find(const std::string& name) const {
  auto it = ops_.find(name);
  return it == ops_.end() ? nullptr : &it->second;
}

std::vector<std::string> OperatorRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, fragment] : ops_) out.push_back(name);
  return out;
}

namespace {

std::string fresh_var(std::set<std::string>& used, int& counter) {
  std::string name;
  do {
    name = "_x" + std::to_string(++counter);
  } while (!used.insert(name).second);
  return name;
}

KgqQuery expand_ops_impl(const KgqQuery& query, const OperatorRegistry& registry,
                         std::set<std::string>& active, std::set<std::string>& used,
                         int& counter) {
  KgqQuery out;
  out.returns = query.returns;
  out.limit = query.limit;
  out.where = query.where;
  out.nodes.push_back(query.nodes[0]);
  for (size_t i = 0; i < query.edges.size(); ++i) {
    const KgqEdge& edge = query.edges[i];
    const KgqNode& right = query.nodes[i + 1];
    if (!is_operator_name(edge.predicate)) {
      out.edges.push_back(edge);
      out.nodes.push_back(right);
      continue;
    }
    const KgqQuery* def = registry.find(edge.predicate);
    if (!def) raise(Errc::UnknownOperator, "operator " + edge.predicate + " is not registered");
    if (active.count(edge.predicate)) {
      raise(Errc::RecursiveExpansion, "operator " + edge.predicate + " expands through itself");
    }
    active.insert(edge.predicate);
    KgqQuery fragment = expand_ops_impl(*def, registry, active, used, counter);
    active.erase(edge.predicate);

    // Orient the fragment chain to the edge direction, then rename: the
    // endpoints take the query's adjacent variables, inner nodes get fresh
    // names so repeated expansions stay disjoint.
    std::vector<KgqNode> chain_nodes = fragment.nodes;
    std::vector<KgqEdge> chain_edges = fragment.edges;
    if (edge.reversed) {
      std::reverse(chain_nodes.begin(), chain_nodes.end());
      std::reverse(chain_edges.begin(), chain_edges.end());
      for (auto& e : chain_edges) e.reversed = !e.reversed;
    }
    std::map<std::string, std::string> rename;
    rename[chain_nodes.front().var] = out.nodes.back().var;
    rename[chain_nodes.back().var] = right.var;
    for (size_t j = 1; j + 1 < chain_nodes.size(); ++j) {
      if (!rename.count(chain_nodes[j].var)) {
        rename[chain_nodes[j].var] = fresh_var(used, counter);
      }
    }
    if (!out.nodes.back().type && chain_nodes.front().type) {
      out.nodes.back().type = chain_nodes.front().type;
    }
    for (size_t j = 1; j < chain_nodes.size(); ++j) {
      out.edges.push_back(chain_edges[j - 1]);
      KgqNode node;
      node.var = rename.at(chain_nodes[j].var);
      node.type = chain_nodes[j].type;
      if (j + 1 == chain_nodes.size()) {
        node.type = right.type ? right.type : chain_nodes[j].type;
      }
      out.nodes.push_back(node);
    }
    for (KgqCondition cond : fragment.where) {
      auto mapped = rename.find(cond.var);
      if (mapped != rename.end()) cond.var = mapped->second;
      out.where.push_back(std::move(cond));
    }
  }
  return out;
}

}  // namespace

KgqQuery expand_virtual_ops(const KgqQuery& query, const OperatorRegistry& registry) {
  std::set<std::string> active;
  std::set<std::string> used;
  for (const auto& node : query.nodes) used.insert(node.var);
  int counter = 0;
  return expand_ops_impl(query, registry, active, used, counter);
}

// ---------------------------------------------------------------------------
// Execution

ExecResult execute_query(const KgqQuery& query, const LiveIndexes& indexes) {
  for (const auto& edge : query.edges) {
    if (is_operator_name(edge.predicate)) {
      raise(Errc::UnknownOperator,
            "operator " + edge.predicate + " must be expanded before execution");
    }
  }
  std::set<std::string> bound;
  for (const auto& node : query.nodes) bound.insert(node.var);
  for (const auto& cond : query.where) {
    if (!bound.count(cond.var)) {
      raise(Errc::UnboundVariable, "variable " + cond.var + " is not bound in MATCH");
    }
  }
  for (const auto& proj : query.returns) {
    if (!bound.count(proj.var)) {
      raise(Errc::UnboundVariable, "variable " + proj.var + " is not bound in MATCH");
    }
  }

  // Per-node candidate sets: SEARCH conditions prune through the inverted
  // index, then type and attribute filters verify against live facts.
  std::vector<std::vector<EntityId>> candidates(query.nodes.size());
  for (size_t i = 0; i < query.nodes.size(); ++i) {
    const KgqNode& node = query.nodes[i];
    std::vector<const KgqCondition*> conds;
    bool searched = false;
    std::vector<EntityId> pool;
    for (const auto& cond : query.where) {
      if (cond.var != node.var) continue;
      conds.push_back(&cond);
      if (!cond.is_search) continue;
      std::vector<EntityId> hits;
      bool first = true;
      for (const auto& token : tokenize(cond.search_text)) {
        auto posting = indexes.inverted.find(token);
        std::vector<EntityId> list =
            posting == indexes.inverted.end() ? std::vector<EntityId>{} : posting->second;
        if (first) {
          hits = std::move(list);
          first = false;
        } else {
          std::vector<EntityId> merged;
          std::set_intersection(hits.begin(), hits.end(), list.begin(), list.end(),
                                std::back_inserter(merged));
          hits = std::move(merged);
        }
      }
      if (first) hits.clear();
      if (!searched) {
        pool = std::move(hits);
        searched = true;
      } else {
        std::vector<EntityId> merged;
        std::set_intersection(pool.begin(), pool.end(), hits.begin(), hits.end(),
                              std::back_inserter(merged));
        pool = std::move(merged);
      }
    }
    if (!searched) {
      for (const auto& [id, facts] : indexes.kv) pool.push_back(id);
    }
    for (const auto& id : pool) {
      if (node.type && !entity_has_type(indexes, id, *node.type)) continue;
      bool keep = true;
      for (const auto* cond : conds) {
        if (!condition_holds(indexes, id, *cond)) {
          keep = false;
          break;
        }
      }
      if (keep) candidates[i].push_back(id);
    }
  }

  ExecResult result;
  std::set<EntityId> seen_answers;
  std::map<std::string, EntityId> binding;
  size_t limit = query.limit ? static_cast<size_t>(*query.limit)
                             : std::numeric_limits<size_t>::max();

  std::function<void(size_t)> enumerate = [&](size_t depth) {
    if (result.rows.size() >= limit) return;
    if (depth == query.nodes.size()) {
      std::vector<std::string> row;
      for (const auto& proj : query.returns) {
        const EntityId& id = binding.at(proj.var);
        if (proj.predpath.empty()) {
          row.push_back(id.str());
        } else {
          row.push_back(render_cell(eval_path(indexes, id, proj.predpath)));
        }
      }
      result.rows.push_back(std::move(row));
      const EntityId& answer = binding.at(query.nodes.back().var);
      if (seen_answers.insert(answer).second) result.answers.push_back(answer);
      return;
    }
    const KgqNode& node = query.nodes[depth];
    auto try_bind = [&](const EntityId& id) {
      if (result.rows.size() >= limit) return;
      auto existing = binding.find(node.var);
      bool fresh = existing == binding.end();
      if (!fresh && !(existing->second == id)) return;
      if (fresh) binding[node.var] = id;
      enumerate(depth + 1);
      if (fresh) binding.erase(node.var);
    };
    if (depth == 0) {
      for (const auto& id : candidates[0]) try_bind(id);
      return;
    }
    const EntityId& from = binding.at(query.nodes[depth - 1].var);
    std::vector<EntityId> targets = edge_targets(indexes, from, query.edges[depth - 1]);
    std::vector<EntityId> allowed;
    std::set_intersection(targets.begin(), targets.end(), candidates[depth].begin(),
                          candidates[depth].end(), std::back_inserter(allowed));
    for (const auto& id : allowed) try_bind(id);
  };
  if (!query.nodes.empty()) enumerate(0);
  return result;
}

// ---------------------------------------------------------------------------
// Intent routing

void IntentRegistry::register_intent(const IntentDef& def) {
  if (def.alternatives.empty()) {
    raise(Errc::ConfigError, "intent " + def.name + " needs at least one alternative");
  }
  intents_[def.name] = def;
}

const IntentDef* IntentRegistry::find(const std::string& name) const {
  auto it = intents_.find(name);
  return it == intents_.end() ? nullptr : &it->second;
}

KgqQuery route_intent(const std::string& intent, const std::vector<EntityId>& args,
                      const LiveIndexes& indexes, const IntentRegistry& registry,
                      int max_depth) {
  const IntentDef* def = registry.find(intent);
  if (!def) {
    raise(Errc::NoApplicableAlternative, "intent " + intent + " is not registered");
  }
  if (args.empty()) {
    raise(Errc::NoApplicableAlternative, "intent " + intent + " needs at least one argument");
  }
  const EntityId& subject = args[0];
  for (const auto& alt : def->alternatives) {
    if (!alt.guard_type.empty() && !entity_has_type(indexes, subject, alt.guard_type)) continue;
    if (!alt.guard_predicate.empty() &&
        !entity_has_predicate(indexes, subject, alt.guard_predicate)) {
      continue;
    }
    std::string text = alt.kgq_template;
    for (size_t n = args.size(); n >= 1; --n) {
      std::string placeholder = "$" + std::to_string(n);
      size_t at;
      while ((at = text.find(placeholder)) != std::string::npos) {
        text.replace(at, placeholder.size(), args[n - 1].str());
      }
    }
    return parse_kgq(text, max_depth);
  }
  raise(Errc::NoApplicableAlternative,
        "no alternative of " + intent + " applies to " + subject.str());
}

// ---------------------------------------------------------------------------
// Multi-turn context

Interaction make_interaction(const std::string& intent, const std::vector<EntityId>& args,
                             const std::vector<EntityId>& answers, const LiveIndexes& indexes) {
  Interaction out;
  out.intent = intent;
  out.args = args;
  out.answers = answers;
  auto stamp = [&](const EntityId& id) {
    if (out.entity_types.count(id)) return;
    out.entity_types[id] = eval_path(indexes, id, {kTypePredicate});
  };
  for (const auto& id : args) stamp(id);
  for (const auto& id : answers) stamp(id);
  return out;
}

ContextGraph update_context(ContextGraph context, Interaction interaction) {
  context.interactions.push_back(std::move(interaction));
  while (context.interactions.size() > context.capacity) {
    context.interactions.erase(context.interactions.begin());
  }
  return context;
}

ParsedIntent resolve_followup(const ParsedIntent& parsed, const ContextGraph& context,
                              const LiveIndexes& indexes) {
  ParsedIntent out = parsed;
  if (!out.name) {
    if (context.interactions.empty()) {
      raise(Errc::UnresolvableReference, "no prior interaction supplies the intent");
    }
    out.name = context.interactions.back().intent;
  }
  for (auto& slot : out.args) {
    if (slot.entity) continue;
    std::string gender;
    if (slot.reference) {
      if (*slot.reference == "she") gender = "female";
      if (*slot.reference == "he") gender = "male";
    }
    for (auto it = context.interactions.rbegin();
         !slot.entity && it != context.interactions.rend(); ++it) {
      std::vector<EntityId> pool = it->answers;
      pool.insert(pool.end(), it->args.begin(), it->args.end());
      pool.insert(pool.end(), it->salient.begin(), it->salient.end());
      for (const auto& id : pool) {
        if (slot.required_type &&
            !context_entity_has_type(*it, indexes, id, *slot.required_type)) {
          continue;
        }
        if (!gender.empty() && entity_gender(indexes, id) != gender) continue;
        slot.entity = id;
        break;
      }
    }
    if (!slot.entity) {
      raise(Errc::UnresolvableReference, "no context entity binds the slot");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curation

const char* curation_action_name(CurationAction a) {
  switch (a) {
    case CurationAction::block_fact: return "block_fact";
    case CurationAction::edit_fact: return "edit_fact";
    case CurationAction::block_entity: return "block_entity";
  }
  return "block_fact";
}

CurationAction curation_action_from(const std::string& name) {
  if (name == "block_fact") return CurationAction::block_fact;
  if (name == "edit_fact") return CurationAction::edit_fact;
  if (name == "block_entity") return CurationAction::block_entity;
  raise(Errc::FormatError, "unknown curation action: " + name);
}

namespace {

ordered_json fact_key_to_json(const FactKey& key) {
  ordered_json out;
  out["subject"] = key.subject.str();
  out["predicate"] = key.predicate;
  out["r_id"] = key.r_id ? json(*key.r_id) : json(nullptr);
  out["r_predicate"] = key.r_predicate ? json(*key.r_predicate) : json(nullptr);
  out["object"] = key.object;
  out["locale"] = key.locale ? json(*key.locale) : json(nullptr);
  return out;
}

std::optional<std::string> opt_field(const json& doc, const std::string& field) {
  if (!doc.contains(field) || doc[field].is_null()) return std::nullopt;
  return doc[field].get<std::string>();
}

FactKey fact_key_from_json(const json& doc) {
  FactKey key;
  key.subject = EntityId::parse(doc.at("subject").get<std::string>());
  key.predicate = doc.at("predicate").get<std::string>();
  key.r_id = opt_field(doc, "r_id");
  key.r_predicate = opt_field(doc, "r_predicate");
  key.object = doc.at("object").get<std::string>();
  key.locale = opt_field(doc, "locale");
  return key;
}

bool kv_holds_fact(const LiveIndexes& indexes, const FactKey& key) {
  const auto* facts = facts_of(indexes, key.subject);
  if (!facts) return false;
  for (const auto& t : *facts) {
    if (fact_key(t) == key) return true;
  }
  return false;
}

void journal_curation(const std::string& path, const CurationRecord& record) {
  std::ofstream out(path, std::ios::app);
  if (!out) raise(Errc::IoError, "cannot open curation stream " + path);
  out << record.to_json().dump() << '\n';
  out.flush();
  if (!out) raise(Errc::IoError, "cannot append to curation stream " + path);
}

}  // namespace

ordered_json CurationRecord::to_json() const {
  ordered_json out;
  out["action"] = curation_action_name(action);
  out["fact"] = fact ? fact_key_to_json(*fact) : ordered_json(nullptr);
  out["entity"] = entity ? ordered_json(entity->str()) : ordered_json(nullptr);
  out["replacement"] = replacement ? triple_to_json(*replacement) : ordered_json(nullptr);
  return out;
}

CurationRecord CurationRecord::from_json(const json& doc) {
  CurationRecord out;
  out.action = curation_action_from(doc.at("action").get<std::string>());
  if (doc.contains("fact") && !doc["fact"].is_null()) {
    out.fact = fact_key_from_json(doc["fact"]);
  }
  if (doc.contains("entity") && !doc["entity"].is_null()) {
    out.entity = EntityId::parse(doc["entity"].get<std::string>());
  }
  if (doc.contains("replacement") && !doc["replacement"].is_null()) {
    out.replacement = triple_from_json(doc["replacement"]);
  }
  return out;
}

std::vector<CurationRecord> read_curation_records(const std::string& path) {
  std::vector<CurationRecord> out;
  std::string content = read_file(path);
  size_t line_no = 0;
  size_t at = 0;
  while (at < content.size()) {
    size_t nl = content.find('\n', at);
    std::string line = content.substr(at, nl == std::string::npos ? nl : nl - at);
    at = nl == std::string::npos ? content.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(CurationRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      raise(Errc::FormatError, path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

LiveIndexes apply_curation(LiveIndexes indexes, const CurationRecord& record,
                           const std::string& stream_path) {
  // The journal is the log of curator actions, so unknown targets are still
  // recorded even though they change nothing here.
  journal_curation(stream_path, record);
  switch (record.action) {
    case CurationAction::block_fact: {
      if (!record.fact) raise(Errc::ConfigError, "block_fact needs a fact key");
      if (kv_holds_fact(indexes, *record.fact)) {
        indexes.blocked_facts.insert(*record.fact);
      }
      break;
    }
    case CurationAction::edit_fact: {
      if (!record.fact || !record.replacement) {
        raise(Errc::ConfigError, "edit_fact needs a fact key and a replacement");
      }
      if (!kv_holds_fact(indexes, *record.fact)) break;
      auto& facts = indexes.kv.at(record.fact->subject);
      for (auto& t : facts) {
        if (fact_key(t) == *record.fact) {
          t = *record.replacement;
          break;
        }
      }
      std::sort(facts.begin(), facts.end(),
                [](const ExtendedTriple& a, const ExtendedTriple& b) {
                  return fact_key(a) < fact_key(b);
                });
      remove_postings(indexes, record.fact->subject);
      add_postings(indexes, record.fact->subject);
      break;
    }
    case CurationAction::block_entity: {
      if (!record.entity) raise(Errc::ConfigError, "block_entity needs an entity id");
      if (!indexes.kv.count(*record.entity)) break;
      remove_postings(indexes, *record.entity);
      indexes.kv.erase(*record.entity);
      for (auto it = indexes.pending_resolution.begin();
           it != indexes.pending_resolution.end();) {
        it = it->subject == *record.entity ? indexes.pending_resolution.erase(it)
                                           : std::next(it);
      }
      break;
    }
  }
  return indexes;
}

SnapshotPtr apply_curation_to_snapshot(SnapshotPtr snapshot,
                                       const std::vector<CurationRecord>& records) {
  for (const auto& record : records) {
    switch (record.action) {
      case CurationAction::block_fact: {
        if (!record.fact) raise(Errc::ConfigError, "block_fact needs a fact key");
        snapshot = snapshot->remove_facts({*record.fact});
        break;
      }
      case CurationAction::edit_fact: {
        if (!record.fact || !record.replacement) {
          raise(Errc::ConfigError, "edit_fact needs a fact key and a replacement");
        }
        snapshot = snapshot->remove_facts({*record.fact});
        snapshot = snapshot->upsert_triples({*record.replacement});
        break;
      }
      case CurationAction::block_entity: {
        if (!record.entity) raise(Errc::ConfigError, "block_entity needs an entity id");
        std::vector<FactKey> keys;
        for (const auto& t : snapshot->get_entity(*record.entity)) keys.push_back(fact_key(t));
        if (!keys.empty()) snapshot = snapshot->remove_facts(keys);
        break;
      }
    }
  }
  return snapshot;
}

// ---------------------------------------------------------------------------
// Service endpoint

nlohmann::json LiveService::handle_request(const nlohmann::json& request) {
  try {
    std::string kind = request.at("kind").get<std::string>();
    std::string session = request.value("session_id", "default");
    KgqQuery query;
    std::string intent_name;
    std::vector<EntityId> args;
    if (kind == "kgq") {
      query = parse_kgq(request.at("query").get<std::string>(), max_depth);
    } else if (kind == "intent") {
      ParsedIntent parsed;
      if (request.contains("intent") && !request["intent"].is_null()) {
        parsed.name = request["intent"].get<std::string>();
      }
      for (const auto& arg : request.value("args", json::array())) {
        IntentSlot slot;
        if (arg.contains("entity") && !arg["entity"].is_null()) {
          slot.entity = EntityId::parse(arg["entity"].get<std::string>());
        }
        if (arg.contains("reference") && !arg["reference"].is_null()) {
          slot.reference = arg["reference"].get<std::string>();
        }
        if (arg.contains("type") && !arg["type"].is_null()) {
          slot.required_type = arg["type"].get<std::string>();
        }
        parsed.args.push_back(std::move(slot));
      }
      ParsedIntent resolved = resolve_followup(parsed, sessions[session], indexes);
      intent_name = *resolved.name;
      for (const auto& slot : resolved.args) args.push_back(*slot.entity);
      query = route_intent(intent_name, args, indexes, intents, max_depth);
    } else {
      raise(Errc::ConfigError, "unknown request kind: " + kind);
    }
    KgqQuery expanded = expand_virtual_ops(query, operators);
    ExecResult result = execute_query(expanded, indexes);
    if (!intent_name.empty()) {
      sessions[session] = update_context(
          sessions[session], make_interaction(intent_name, args, result.answers, indexes));
    }
    json response;
    response["rows"] = result.rows;
    response["answered_by"] = print_kgq(expanded);
    response["freshness_lsn"] = indexes.freshness_lsn;
    if (!intent_name.empty()) response["intent"] = intent_name;
    return response;
  } catch (const Error& e) {
    return json{{"error", e.what()}};
  } catch (const json::exception& e) {
    return json{{"error", std::string("FormatError: ") + e.what()}};
  }
}

}  // namespace kgf
