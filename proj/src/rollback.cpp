#include "kvmon/rollback.hpp"

#include <algorithm>
#include <stdexcept>

namespace kvmon {

void Task::begin_write() {
  if (phase != Phase::Read) throw std::logic_error("task not in read phase");
  phase = Phase::Write;
}

void Task::complete() {
  if (phase != Phase::Write) throw std::logic_error("task not in write phase");
  phase = Phase::Done;
}

void Task::abort() {
  if (phase != Phase::Read) throw std::logic_error("only a read-phase task can abort");
  ++attempts;
}

StrategyKind LivelockStrategy::parse_kind(std::string_view name) {
  if (name == "none") return StrategyKind::None;
  if (name == "backoff") return StrategyKind::Backoff;
  if (name == "reorder") return StrategyKind::Reorder;
  if (name == "adaptive") return StrategyKind::Adaptive;
  throw std::invalid_argument("unknown livelock strategy: " + std::string(name));
}

std::string_view LivelockStrategy::kind_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::None: return "none";
    case StrategyKind::Backoff: return "backoff";
    case StrategyKind::Reorder: return "reorder";
    case StrategyKind::Adaptive: return "adaptive";
  }
  return "?";
}

Timestamp backoff_delay(const LivelockStrategy& s, int attempt, std::mt19937_64& rng) {
  const int shift = std::clamp(attempt, 0, std::max(0, s.backoff_cap));
  const Timestamp hi = s.max_delay << shift;
  if (hi <= 0) return 0;
  return std::uniform_int_distribution<Timestamp>(0, hi - 1)(rng);
}

ViolationAction handle_violation(const Task* current, bool involved) {
  if (!involved || current == nullptr) return ViolationAction::Ignore;
  switch (current->phase) {
    case Phase::Read: return ViolationAction::AbortCurrent;
    case Phase::Write: return ViolationAction::ContinueWrite;
    case Phase::Done: return ViolationAction::Ignore;
  }
  return ViolationAction::Ignore;
}

ClientRuntime::ClientRuntime(std::size_t client, std::vector<Task> tasks, LivelockStrategy strategy,
                             QuorumConfig quorum, std::uint64_t seed)
    : client_(client),
      remaining_(tasks.begin(), tasks.end()),
      strategy_(strategy),
      quorum_(quorum),
      rng_(seed) {}

void ClientRuntime::begin_attempt() {
  active_ = true;
  abort_requested_ = false;
  attempt_writes_ = 0;
}

ViolationAction ClientRuntime::on_violation(const ViolationReport& r) {
  ++notifications_;
  // On a sequential quorum there is nothing to roll back.
  if (classify_consistency(quorum_) == Consistency::Sequential) {
    ++ignored_;
    return ViolationAction::Ignore;
  }
  const Task* cur = (active_ && !remaining_.empty()) ? &remaining_.front() : nullptr;
  const ViolationAction a = handle_violation(cur, involved(r));
  if (a == ViolationAction::AbortCurrent) {
    abort_requested_ = true;
  } else if (a == ViolationAction::Ignore) {
    ++ignored_;
  }
  return a;
}

void ClientRuntime::append(std::vector<Task> tasks) {
  for (Task& t : tasks) remaining_.push_back(std::move(t));
}

RetryPlan ClientRuntime::on_abort(Timestamp now) {
  Task& t = remaining_.front();
  t.abort();
  ++aborts_;
  writes_in_aborted_ += attempt_writes_;
  attempt_writes_ = 0;
  abort_requested_ = false;
  active_ = false;

  RetryPlan plan;
  switch (strategy_.kind) {
    case StrategyKind::None:
      break;
    case StrategyKind::Backoff:
      plan.delay = backoff_delay(strategy_, t.attempts - 1, rng_);
      break;
    case StrategyKind::Reorder:
      if (remaining_.size() > 1) {
        Task moved = std::move(remaining_.front());
        remaining_.pop_front();
        remaining_.push_back(std::move(moved));
      }
      break;
    case StrategyKind::Adaptive:
      recent_aborts_.push_back(now);
      while (!recent_aborts_.empty() && recent_aborts_.front() < now - strategy_.window) {
        recent_aborts_.pop_front();
      }
      if (!switched_ && static_cast<int>(recent_aborts_.size()) >= strategy_.threshold) {
        switched_ = true;
        quorum_ = strategy_.sequential;
        plan.switched = true;
      }
      break;
  }
  return plan;
}

void ClientRuntime::on_success() {
  remaining_.front().complete();
  remaining_.pop_front();
  ++completed_;
  active_ = false;
  abort_requested_ = false;
  attempt_writes_ = 0;
}

TaskRunner::TaskRunner(Scheduler& sched, ClientRuntime& rt, TaskHooks hooks, MetricsSink& metrics,
                       Timestamp park_delay, std::uint64_t seed)
    : sched_(sched),
      rt_(rt),
      hooks_(std::move(hooks)),
      metrics_(metrics),
      park_delay_(park_delay),
      rng_(seed) {}

void TaskRunner::start() { next(); }

void TaskRunner::on_report(const ViolationReport& r) { rt_.on_violation(r); }

void TaskRunner::next() {
  if (rt_.finished()) {
    if (on_finished_) on_finished_();
    return;
  }
  perform();
}

void TaskRunner::perform() {
  rt_.begin_attempt();
  Task& task = rt_.current();
  hooks_.acquire(task, [this, &task](bool acquired) {
    if (!acquired) {
      hooks_.release(task, [this] {
        ++parks_;
        rt_.end_attempt();
        const Timestamp half = park_delay_ / 2;
        const Timestamp d =
            park_delay_ > 0 ? std::uniform_int_distribution<Timestamp>(half, half + park_delay_ - 1)(rng_) : 0;
        sched_.after(d, [this] { perform(); });
      });
      return;
    }
    hooks_.read(task, [this, &task] {
      if (rt_.abort_requested()) {
        hooks_.release(task, [this, &task] {
          const std::size_t id = task.id;
          const RetryPlan plan = rt_.on_abort(sched_.now());
          metrics_.abort(sched_.now(), rt_.client(), id);
          if (plan.switched) {
            metrics_.consistency_switch(sched_.now(), rt_.client());
            if (hooks_.set_quorum) hooks_.set_quorum(rt_.quorum());
          }
          sched_.after(plan.delay, [this] { next(); });
        });
        return;
      }
      task.begin_write();
      hooks_.write(task, [this, &task] {
        hooks_.release(task, [this, &task] {
          const Task finished = task;
          rt_.on_success();
          if (on_task_done_) on_task_done_(finished);
          next();
        });
      });
    });
  });
}

}  // namespace kvmon
