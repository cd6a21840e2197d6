#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace kvmon {

/// Simulated physical time in microseconds.
using Timestamp = std::int64_t;

inline constexpr Timestamp kInfiniteEpsilon = std::numeric_limits<Timestamp>::max();

inline constexpr bool is_infinite(Timestamp epsilon) { return epsilon == kInfiniteEpsilon; }

enum class CausalRelation { Before, After, Concurrent };

const char* to_string(CausalRelation r);

/// Hybrid vector clock of one process. Entry k is the latest physical time of
/// process k known to the owner, bounded below by (owner time - epsilon).
class HybridVectorClock {
 public:
  HybridVectorClock() = default;
  HybridVectorClock(std::size_t owner, std::vector<Timestamp> entries,
                    Timestamp epsilon = kInfiniteEpsilon);

  /// All-zero clock for a process that has not executed any event yet.
  static HybridVectorClock initial(std::size_t owner, std::size_t n,
                                   Timestamp epsilon = kInfiniteEpsilon);

  std::size_t owner() const { return owner_; }
  std::size_t size() const { return entries_.size(); }
  Timestamp epsilon() const { return epsilon_; }
  Timestamp operator[](std::size_t k) const { return entries_[k]; }
  Timestamp own_time() const { return entries_[owner_]; }
  const std::vector<Timestamp>& entries() const { return entries_; }

  friend bool operator==(const HybridVectorClock&, const HybridVectorClock&) = default;

  std::string to_string() const;

 private:
  std::size_t owner_ = 0;
  std::vector<Timestamp> entries_;
  Timestamp epsilon_ = kInfiniteEpsilon;
};

/// Clock update performed when the owner sends a message at physical time pt.
HybridVectorClock advance_send(const HybridVectorClock& clock, Timestamp pt);

/// Clock update performed when the owner receives a message stamped msg_clock.
/// Entries keep the owner's prior knowledge (componentwise max with the local
/// clock), which keeps the clock a faithful happened-before witness.
HybridVectorClock on_receive(const HybridVectorClock& clock, const HybridVectorClock& msg_clock,
                             Timestamp pt);

/// Componentwise comparison: Before iff a <= b everywhere and a < b somewhere.
/// Identical clocks compare Concurrent.
CausalRelation compare(const HybridVectorClock& a, const HybridVectorClock& b);

/// Compact form: bit k is set iff entry k differs from (owner time - epsilon);
/// the explicit list holds the set entries in index order.
struct CompactHvc {
  std::size_t owner = 0;
  std::string bits;
  std::vector<Timestamp> explicit_entries;
  Timestamp epsilon = kInfiniteEpsilon;
  /// Set when epsilon is infinite: every entry is listed explicitly.
  bool degenerate = false;
};

CompactHvc compact_encode(const HybridVectorClock& clock);
HybridVectorClock compact_decode(const CompactHvc& compact, Timestamp owner_pt);

struct HvcInterval {
  HybridVectorClock start;
  HybridVectorClock end;

  HvcInterval() = default;
  HvcInterval(HybridVectorClock s, HybridVectorClock e);

  std::size_t owner() const { return start.owner(); }
};

/// Causal relation between two intervals recorded by different processes.
/// Uncertain and boundary cases resolve to Concurrent so that no possible
/// overlap is ever ruled out.
CausalRelation interval_relation(const HvcInterval& i1, const HvcInterval& i2);

}  // namespace kvmon
