#include "kvmon/hvc.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace kvmon {

const char* to_string(CausalRelation r) {
  switch (r) {
    case CausalRelation::Before: return "before";
    case CausalRelation::After: return "after";
    case CausalRelation::Concurrent: return "concurrent";
  }
  return "?";
}

HybridVectorClock::HybridVectorClock(std::size_t owner, std::vector<Timestamp> entries,
                                     Timestamp epsilon)
    : owner_(owner), entries_(std::move(entries)), epsilon_(epsilon) {
  if (owner_ >= entries_.size()) {
    throw std::invalid_argument("hvc: owner index out of range");
  }
  if (epsilon_ < 0) throw std::invalid_argument("hvc: negative epsilon");
}

HybridVectorClock HybridVectorClock::initial(std::size_t owner, std::size_t n, Timestamp epsilon) {
  return HybridVectorClock(owner, std::vector<Timestamp>(n, 0), epsilon);
}

std::string HybridVectorClock::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    if (k) os << ',';
    os << entries_[k];
  }
  os << ']';
  return os.str();
}

namespace {

// pt - epsilon, or "no lower bound" when epsilon is infinite.
Timestamp lower_bound_for(Timestamp pt, Timestamp epsilon) {
  if (is_infinite(epsilon)) return std::numeric_limits<Timestamp>::min();
  return pt - epsilon;
}

void check_monotone(const HybridVectorClock& clock, Timestamp pt) {
  if (pt < clock.own_time()) {
    throw std::invalid_argument("hvc: physical time moved backwards");
  }
}

}  // namespace

HybridVectorClock advance_send(const HybridVectorClock& clock, Timestamp pt) {
  check_monotone(clock, pt);
  std::vector<Timestamp> out = clock.entries();
  const Timestamp floor = lower_bound_for(pt, clock.epsilon());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = (j == clock.owner()) ? pt : std::max(out[j], floor);
  }
  return HybridVectorClock(clock.owner(), std::move(out), clock.epsilon());
}

HybridVectorClock on_receive(const HybridVectorClock& clock, const HybridVectorClock& msg_clock,
                             Timestamp pt) {
  if (clock.size() != msg_clock.size()) {
    throw std::invalid_argument("hvc: dimension mismatch on receive");
  }
  check_monotone(clock, pt);
  std::vector<Timestamp> out = clock.entries();
  const Timestamp floor = lower_bound_for(pt, clock.epsilon());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = (j == clock.owner()) ? pt : std::max({out[j], msg_clock[j], floor});
  }
  return HybridVectorClock(clock.owner(), std::move(out), clock.epsilon());
}

CausalRelation compare(const HybridVectorClock& a, const HybridVectorClock& b) {
  if (a.size() != b.size()) throw std::invalid_argument("hvc: dimension mismatch on compare");
  bool a_less = false;
  bool b_less = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] < b[k]) a_less = true;
    if (b[k] < a[k]) b_less = true;
  }
  if (a_less && !b_less) return CausalRelation::Before;
  if (b_less && !a_less) return CausalRelation::After;
  return CausalRelation::Concurrent;
}

CompactHvc compact_encode(const HybridVectorClock& clock) {
  CompactHvc out;
  out.owner = clock.owner();
  out.epsilon = clock.epsilon();
  out.degenerate = is_infinite(clock.epsilon());
  out.bits.reserve(clock.size());
  const Timestamp implied = out.degenerate ? 0 : clock.own_time() - clock.epsilon();
  for (std::size_t k = 0; k < clock.size(); ++k) {
    const bool explicit_entry = out.degenerate || clock[k] != implied;
    out.bits.push_back(explicit_entry ? '1' : '0');
    if (explicit_entry) out.explicit_entries.push_back(clock[k]);
  }
  return out;
}

HybridVectorClock compact_decode(const CompactHvc& compact, Timestamp owner_pt) {
  std::vector<Timestamp> entries(compact.bits.size());
  std::size_t next = 0;
  const Timestamp implied = compact.degenerate ? 0 : owner_pt - compact.epsilon;
  for (std::size_t k = 0; k < compact.bits.size(); ++k) {
    if (compact.bits[k] == '1') {
      if (next >= compact.explicit_entries.size()) {
        throw std::invalid_argument("hvc: compact form has too few explicit entries");
      }
      entries[k] = compact.explicit_entries[next++];
    } else {
      entries[k] = implied;
    }
  }
  if (next != compact.explicit_entries.size()) {
    throw std::invalid_argument("hvc: compact form has surplus explicit entries");
  }
  return HybridVectorClock(compact.owner, std::move(entries), compact.epsilon);
}

HvcInterval::HvcInterval(HybridVectorClock s, HybridVectorClock e)
    : start(std::move(s)), end(std::move(e)) {
  if (start.owner() != end.owner() || start.size() != end.size()) {
    throw std::invalid_argument("hvc interval: endpoints from different owners");
  }
  for (std::size_t k = 0; k < start.size(); ++k) {
    if (start[k] > end[k]) throw std::invalid_argument("hvc interval: start after end");
  }
}

CausalRelation interval_relation(const HvcInterval& i1, const HvcInterval& i2) {
  if (i1.owner() == i2.owner()) {
    throw std::invalid_argument("interval_relation: intervals share an owner");
  }
  // Order the pair so that the first interval does not start after the second.
  const bool swapped = compare(i1.start, i2.start) == CausalRelation::After;
  const HvcInterval& first = swapped ? i2 : i1;
  const HvcInterval& second = swapped ? i1 : i2;

  if (compare(second.start, first.end) == CausalRelation::Before) {
    return CausalRelation::Concurrent;
  }
  if (compare(first.end, second.start) != CausalRelation::Before) {
    return CausalRelation::Concurrent;
  }
  const Timestamp eps = first.end.epsilon();
  if (!is_infinite(eps) && first.end[first.owner()] > second.start[second.owner()] - eps) {
    return CausalRelation::Concurrent;
  }
  return swapped ? CausalRelation::After : CausalRelation::Before;
}

}  // namespace kvmon
