#pragma once

#include <string>

#include "kvmon/hvc.hpp"

namespace kvmon {

struct ViolationReport;

/// Receives instrumentation events from servers, clients and monitors.
/// The default implementation ignores everything.
class MetricsSink {
 public:
  virtual ~MetricsSink() = default;

  virtual void server_op(Timestamp) {}
  virtual void app_op(Timestamp) {}
  virtual void candidate(Timestamp) {}
  virtual void detection(const ViolationReport&) {}
  /// Ground-truth violation observed by the workload (for example two clients
  /// inside the same critical section).
  virtual void violation(Timestamp, const std::string& /*what*/) {}
  virtual void abort(Timestamp, std::size_t /*client*/, std::size_t /*task*/) {}
  virtual void consistency_switch(Timestamp, std::size_t /*client*/) {}
  virtual void progress(Timestamp, std::size_t /*nodes*/) {}
};

inline MetricsSink& null_metrics() {
  static MetricsSink sink;
  return sink;
}

}  // namespace kvmon
