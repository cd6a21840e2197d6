#include "kvmon/predicates.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

namespace kvmon {

namespace pt = boost::property_tree;

const char* to_string(PredicateKind kind) {
  return kind == PredicateKind::Linear ? "linear" : "semilinear";
}

void PredicateSpec::validate() const {
  if (clauses.empty()) throw std::invalid_argument("predicate " + name + ": no clauses");
  for (const Clause& c : clauses) {
    if (c.empty()) throw std::invalid_argument("predicate " + name + ": empty clause");
    std::set<std::pair<std::string, std::string>> seen;
    for (const Term& t : c) {
      if (t.variable.empty()) throw std::invalid_argument("predicate " + name + ": unnamed var");
      if (!seen.emplace(t.variable, t.value).second) {
        throw std::invalid_argument("predicate " + name + ": repeated term " + t.variable);
      }
    }
  }
  if (kind == PredicateKind::Linear && clauses.size() != 1) {
    throw std::invalid_argument("predicate " + name +
                                ": linear predicates must be a single conjunctive clause");
  }
}

std::vector<std::string> PredicateSpec::variables() const {
  std::vector<std::string> out;
  for (const Clause& c : clauses) {
    for (const Term& t : c) {
      if (std::find(out.begin(), out.end(), t.variable) == out.end()) out.push_back(t.variable);
    }
  }
  return out;
}

bool PredicateSpec::mentions(std::string_view variable) const {
  return std::any_of(clauses.begin(), clauses.end(), [&](const Clause& c) {
    return std::any_of(c.begin(), c.end(), [&](const Term& t) { return t.variable == variable; });
  });
}

namespace {

std::string trimmed(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

PredicateSpec parse_spec(std::string_view document, std::string fallback_name) {
  pt::ptree tree;
  std::istringstream in{std::string(document)};
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw std::invalid_argument(std::string("predicate xml: ") + e.what());
  }
  const auto root = tree.get_child_optional("predicate");
  if (!root) throw std::invalid_argument("predicate xml: missing <predicate> element");

  PredicateSpec spec;
  spec.name = trimmed(root->get<std::string>("name", fallback_name));
  const std::string kind = trimmed(root->get<std::string>("type", ""));
  if (kind == "linear") {
    spec.kind = PredicateKind::Linear;
  } else if (kind == "semilinear") {
    spec.kind = PredicateKind::Semilinear;
  } else {
    throw std::invalid_argument("predicate xml: unsupported kind '" + kind + "'");
  }
  for (const auto& [tag, clause_node] : *root) {
    if (tag != "conjClause") continue;
    Clause clause;
    for (const auto& [vtag, var] : clause_node) {
      if (vtag != "var") continue;
      clause.push_back(Term{trimmed(var.get<std::string>("name", "")),
                            trimmed(var.get<std::string>("value", ""))});
    }
    if (clause.empty()) throw std::invalid_argument("predicate xml: empty conjClause");
    spec.clauses.push_back(std::move(clause));
  }
  spec.validate();
  return spec;
}

std::string serialize_spec(const PredicateSpec& spec) {
  pt::ptree root;
  if (!spec.name.empty()) root.put("name", spec.name);
  root.put("type", to_string(spec.kind));
  for (std::size_t i = 0; i < spec.clauses.size(); ++i) {
    pt::ptree clause;
    clause.put("id", i);
    for (const Term& t : spec.clauses[i]) {
      pt::ptree var;
      var.put("name", t.variable);
      var.put("value", t.value);
      clause.add_child("var", var);
    }
    root.add_child("conjClause", clause);
  }
  pt::ptree doc;
  doc.add_child("predicate", root);
  std::ostringstream out;
  pt::write_xml(out, doc, pt::xml_writer_make_settings<std::string>(' ', 2));
  return out.str();
}

PredicateSpec load_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predicate file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string stem = path.substr(path.find_last_of('/') + 1);
  stem = stem.substr(0, stem.find('.'));
  return parse_spec(buf.str(), stem);
}

std::string flag_variable(std::uint64_t a, std::uint64_t b, std::uint64_t owner) {
  return "flag" + std::to_string(a) + "_" + std::to_string(b) + "_" + std::to_string(owner);
}

std::string turn_variable(std::uint64_t a, std::uint64_t b) {
  return "turn" + std::to_string(a) + "_" + std::to_string(b);
}

std::string edge_predicate_name(std::uint64_t a, std::uint64_t b) {
  return "mutex" + std::to_string(a) + "_" + std::to_string(b);
}

PredicateSpec edge_mutex_spec(std::uint64_t a, std::uint64_t b) {
  PredicateSpec spec;
  spec.name = edge_predicate_name(a, b);
  spec.kind = PredicateKind::Semilinear;
  const std::string turn = turn_variable(a, b);
  spec.clauses.push_back({
      {flag_variable(a, b, a), "true"},
      {turn, std::to_string(a)},
      {flag_variable(a, b, b), "true"},
      {turn, std::to_string(b)},
  });
  return spec;
}

std::optional<PredicateSpec> infer_from_variable(std::string_view variable) {
  static const std::regex flag_re(R"(flag(\d+)_(\d+)_(\d+))");
  static const std::regex turn_re(R"(turn(\d+)_(\d+))");
  if (!variable.starts_with("flag") && !variable.starts_with("turn")) return std::nullopt;
  const std::string name(variable);
  std::smatch m;
  std::uint64_t a = 0, b = 0;
  if (std::regex_match(name, m, flag_re)) {
    a = std::stoull(m[1]);
    b = std::stoull(m[2]);
    const std::uint64_t owner = std::stoull(m[3]);
    if (owner != a && owner != b) {
      throw std::invalid_argument("lock variable " + name + ": owner is not an edge endpoint");
    }
  } else if (std::regex_match(name, m, turn_re)) {
    a = std::stoull(m[1]);
    b = std::stoull(m[2]);
  } else {
    return std::nullopt;
  }
  if (a >= b) {
    throw std::invalid_argument("lock variable " + name + ": endpoints must satisfy A < B");
  }
  return edge_mutex_spec(a, b);
}

std::uint64_t stable_hash(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::size_t assign_monitor(std::string_view name, std::size_t monitor_count) {
  if (monitor_count == 0) throw std::invalid_argument("assign_monitor: no monitors");
  return static_cast<std::size_t>(stable_hash(name) % monitor_count);
}

Placement::Placement(std::size_t server_count) : server_count_(server_count) {
  if (server_count_ == 0) throw std::invalid_argument("placement: no servers");
}

void Placement::set(const std::string& variable, std::size_t server) {
  if (server >= server_count_) throw std::out_of_range("placement: unknown server");
  homes_[variable] = server;
}

std::size_t Placement::home(std::string_view variable) const {
  auto it = homes_.find(variable);
  if (it != homes_.end()) return it->second;
  return static_cast<std::size_t>(stable_hash(variable) % server_count_);
}

std::vector<std::size_t> participants(const PredicateSpec& spec, const Placement& placement) {
  std::vector<std::size_t> out;
  if (spec.kind == PredicateKind::Semilinear) {
    for (std::size_t s = 0; s < placement.server_count(); ++s) out.push_back(s);
    return out;
  }
  for (const std::string& v : spec.variables()) out.push_back(placement.home(v));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

PredicateRegistry::PredicateRegistry(std::size_t monitor_count, Timestamp idle_timeout)
    : monitor_count_(monitor_count), idle_timeout_(idle_timeout) {
  if (monitor_count_ == 0) throw std::invalid_argument("registry: no monitors");
}

void PredicateRegistry::declare(PredicateSpec spec) {
  spec.validate();
  const std::size_t index = declared_.size();
  for (const std::string& v : spec.variables()) declared_by_var_[v].push_back(index);
  declared_.push_back(std::move(spec));
}

bool PredicateRegistry::activate(const PredicateSpec& spec, Timestamp now) {
  auto it = active_.find(spec.name);
  if (it != active_.end()) {
    it->second.last_activity = std::max(it->second.last_activity, now);
    return false;
  }
  active_.emplace(spec.name, Entry{spec, now, assign_monitor(spec.name, monitor_count_)});
  return true;
}

void PredicateRegistry::touch(std::string_view name, Timestamp now) {
  auto it = active_.find(name);
  if (it != active_.end()) it->second.last_activity = std::max(it->second.last_activity, now);
}

std::vector<const PredicateRegistry::Entry*> PredicateRegistry::on_write(std::string_view variable,
                                                                        Timestamp now) {
  std::vector<const Entry*> out;
  auto add = [&](const PredicateSpec& spec) {
    activate(spec, now);
    const Entry* e = &active_.find(spec.name)->second;
    if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
  };
  auto it = declared_by_var_.find(variable);
  if (it != declared_by_var_.end()) {
    for (std::size_t index : it->second) add(declared_[index]);
  }
  if (auto inferred = infer_from_variable(variable)) add(*inferred);
  return out;
}

const PredicateRegistry::Entry* PredicateRegistry::find(std::string_view name) const {
  auto it = active_.find(name);
  return it == active_.end() ? nullptr : &it->second;
}

std::size_t PredicateRegistry::gc_inactive(Timestamp now, std::vector<std::string>* removed) {
  std::size_t count = 0;
  for (auto it = active_.begin(); it != active_.end();) {
    if (now - it->second.last_activity > idle_timeout_) {
      if (removed) removed->push_back(it->first);
      it = active_.erase(it);
      ++count;
    } else {
      ++it;
    }
  }
  return count;
}

}  // namespace kvmon
