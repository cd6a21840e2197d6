#include "kvmon/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kvmon {

namespace {

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffU;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Timestamp from_ms(double ms) { return static_cast<Timestamp>(std::llround(ms * kMicrosPerMilli)); }
double to_ms(Timestamp t) { return static_cast<double>(t) / kMicrosPerMilli; }

LatencyModel::LatencyModel(std::size_t region_count, LinkLatency intra, LinkLatency cross)
    : regions_(region_count), links_(region_count * region_count, cross) {
  if (region_count == 0) throw std::invalid_argument("latency model needs at least one region");
  for (RegionId r = 0; r < regions_; ++r) links_[r * regions_ + r] = intra;
}

void LatencyModel::set_link(RegionId a, RegionId b, LinkLatency latency) {
  if (a >= regions_ || b >= regions_) throw std::out_of_range("latency model: unknown region");
  links_[a * regions_ + b] = latency;
  links_[b * regions_ + a] = latency;
}

const LinkLatency& LatencyModel::link(RegionId a, RegionId b) const {
  if (a >= regions_ || b >= regions_) throw std::out_of_range("latency model: unknown region pair");
  return links_[a * regions_ + b];
}

Timestamp LatencyModel::sample(RegionId from, RegionId to, std::mt19937_64& rng) const {
  const LinkLatency& l = link(from, to);
  double jitter = 0.0;
  if (l.gamma_shape > 0.0 && l.gamma_scale > 0.0) {
    std::gamma_distribution<double> gamma(l.gamma_shape, l.gamma_scale);
    jitter = gamma(rng);
  }
  return std::max<Timestamp>(1, l.base + static_cast<Timestamp>(std::llround(jitter)));
}

void Scheduler::at(Timestamp t, Handler h) {
  if (t < now_) throw std::logic_error("scheduler: event scheduled in the past");
  queue_.push(Event{t, next_seq_++, std::move(h)});
}

std::size_t Scheduler::run_until(Timestamp stop) {
  std::size_t count = 0;
  stopping_ = false;
  while (!queue_.empty() && !stopping_ && queue_.top().time <= stop) {
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    now_ = ev.time;
    trace_hash_ = fnv_mix(fnv_mix(trace_hash_, static_cast<std::uint64_t>(ev.time)), ev.seq);
    ++executed_;
    ++count;
    ev.handler();
  }
  return count;
}

std::size_t Scheduler::run() { return run_until(std::numeric_limits<Timestamp>::max()); }

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::Get: return "GET";
    case MessageKind::GetReply: return "GET_REPLY";
    case MessageKind::GetVersion: return "GET_VERSION";
    case MessageKind::GetVersionReply: return "GET_VERSION_REPLY";
    case MessageKind::Put: return "PUT";
    case MessageKind::PutAck: return "PUT_ACK";
    case MessageKind::Candidate: return "CANDIDATE";
    case MessageKind::Violation: return "VIOLATION";
    case MessageKind::Count: break;
  }
  return "?";
}

Network::Network(Scheduler& scheduler, LatencyModel model, std::uint64_t seed, Timestamp epsilon)
    : scheduler_(scheduler), model_(std::move(model)), rng_(seed), epsilon_(epsilon) {}

ProcessId Network::add_process(RegionId region, std::string label) {
  if (frozen_) throw std::logic_error("network: process added after freeze");
  if (region >= model_.region_count()) throw std::out_of_range("network: unknown region");
  processes_.push_back(ProcessInfo{region, std::move(label), {}, 0});
  return processes_.size() - 1;
}

void Network::freeze() {
  if (frozen_) return;
  frozen_ = true;
  for (ProcessId p = 0; p < processes_.size(); ++p) {
    processes_[p].clock = HybridVectorClock::initial(p, processes_.size(), epsilon_);
  }
}

Timestamp Network::physical_time(ProcessInfo& info) {
  info.last_pt = std::max(scheduler_.now(), info.last_pt + 1);
  return info.last_pt;
}

const HybridVectorClock& Network::tick(ProcessId p) {
  if (!frozen_) freeze();
  ProcessInfo& info = processes_.at(p);
  info.clock = advance_send(info.clock, physical_time(info));
  return info.clock;
}

bool Network::partitioned(RegionId a, RegionId b, Timestamp t) const {
  return std::any_of(partitions_.begin(), partitions_.end(), [&](const PartitionWindow& w) {
    const bool pair = (w.a == a && w.b == b) || (w.a == b && w.b == a);
    return pair && t >= w.from && t < w.to;
  });
}

bool Network::send(ProcessId from, ProcessId to, MessageKind kind,
                   std::function<void()> on_deliver) {
  if (!frozen_) freeze();
  ProcessInfo& sender = processes_.at(from);
  const RegionId to_region = processes_.at(to).region;
  sender.clock = advance_send(sender.clock, physical_time(sender));
  ++sent_[static_cast<std::size_t>(kind)];
  if (partitioned(sender.region, to_region, scheduler_.now())) {
    ++dropped_;
    return false;
  }
  const Timestamp latency = model_.sample(sender.region, to_region, rng_);
  Timestamp deliver = scheduler_.now() + latency;
  const std::uint64_t channel = static_cast<std::uint64_t>(from) * processes_.size() + to;
  auto [it, inserted] = channel_tail_.try_emplace(channel, deliver);
  if (!inserted) {
    deliver = std::max(deliver, it->second);
    it->second = deliver;
  }
  trace_hash_ = fnv_mix(fnv_mix(fnv_mix(trace_hash_, from), to),
                        static_cast<std::uint64_t>(deliver) * 16 + static_cast<std::uint64_t>(kind));
  scheduler_.at(deliver, [this, to, stamp = sender.clock, fn = std::move(on_deliver)]() {
    ProcessInfo& receiver = processes_[to];
    receiver.clock = on_receive(receiver.clock, stamp, physical_time(receiver));
    fn();
  });
  return true;
}

}  // namespace kvmon
