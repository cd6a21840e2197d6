#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kvmon/hvc.hpp"

namespace kvmon {

enum class PredicateKind { Linear, Semilinear };

const char* to_string(PredicateKind kind);

struct Term {
  std::string variable;
  std::string value;

  friend bool operator==(const Term&, const Term&) = default;
};

using Clause = std::vector<Term>;

/// The negation of a safety predicate in disjunctive normal form: the system
/// is in violation when every term of some clause holds.
struct PredicateSpec {
  std::string name;
  PredicateKind kind = PredicateKind::Semilinear;
  std::vector<Clause> clauses;

  friend bool operator==(const PredicateSpec&, const PredicateSpec&) = default;

  /// Throws std::invalid_argument if the spec is empty, repeats a term within a
  /// clause, or is a linear spec with more than one clause.
  void validate() const;
  /// Distinct variable names in first-appearance order.
  std::vector<std::string> variables() const;
  bool mentions(std::string_view variable) const;
};

/// Parses the XML form (<predicate><type>..</type><conjClause><var>..). The
/// optional <name> element wins over `fallback_name`.
PredicateSpec parse_spec(std::string_view document, std::string fallback_name = {});
std::string serialize_spec(const PredicateSpec& spec);
PredicateSpec load_spec_file(const std::string& path);

/// Edge lock variable names used by the Peterson locks of the coloring workload.
std::string flag_variable(std::uint64_t a, std::uint64_t b, std::uint64_t owner);
std::string turn_variable(std::uint64_t a, std::uint64_t b);
std::string edge_predicate_name(std::uint64_t a, std::uint64_t b);
PredicateSpec edge_mutex_spec(std::uint64_t a, std::uint64_t b);

/// Recognizes flag<A>_<B>_<A|B> and turn<A>_<B> and returns the mutual-exclusion
/// spec for edge A_B; other names yield nullopt. Throws on A >= B or an owner
/// that is neither endpoint.
std::optional<PredicateSpec> infer_from_variable(std::string_view variable);

std::uint64_t stable_hash(std::string_view text);
std::size_t assign_monitor(std::string_view name, std::size_t monitor_count);

/// Which server's copy of a variable a linear predicate reads. Unlisted
/// variables fall back to a hash of the name.
class Placement {
 public:
  explicit Placement(std::size_t server_count = 1);

  void set(const std::string& variable, std::size_t server);
  std::size_t home(std::string_view variable) const;
  std::size_t server_count() const { return server_count_; }

 private:
  std::size_t server_count_;
  std::map<std::string, std::size_t, std::less<>> homes_;
};

/// Servers that emit candidates for a spec: every server for semilinear specs,
/// the home servers of the clause variables for linear specs.
std::vector<std::size_t> participants(const PredicateSpec& spec, const Placement& placement);

class PredicateRegistry {
 public:
  struct Entry {
    PredicateSpec spec;
    Timestamp last_activity = 0;
    std::size_t monitor = 0;
  };

  explicit PredicateRegistry(std::size_t monitor_count,
                             Timestamp idle_timeout = 60 * 1000 * 1000);

  /// A spec known up front (for example from a file). It becomes active on the
  /// first write to one of its variables and again after being collected.
  void declare(PredicateSpec spec);
  /// Marks `spec` active; returns true if it was not active before.
  bool activate(const PredicateSpec& spec, Timestamp now);
  void touch(std::string_view name, Timestamp now);

  /// Specs concerned by a write of `variable`: declared specs naming it plus
  /// the inferred edge spec. All of them are activated and touched.
  std::vector<const Entry*> on_write(std::string_view variable, Timestamp now);

  const Entry* find(std::string_view name) const;
  std::size_t size() const { return active_.size(); }
  std::size_t monitor_count() const { return monitor_count_; }
  Timestamp idle_timeout() const { return idle_timeout_; }

  /// Drops entries idle for longer than the timeout; names go to `removed`.
  std::size_t gc_inactive(Timestamp now, std::vector<std::string>* removed = nullptr);

 private:
  std::size_t monitor_count_;
  Timestamp idle_timeout_;
  std::map<std::string, Entry, std::less<>> active_;
  std::vector<PredicateSpec> declared_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> declared_by_var_;
};

}  // namespace kvmon
