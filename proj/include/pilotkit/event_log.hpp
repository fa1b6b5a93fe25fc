#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pilotkit {

// One state transition of a pilot, unit, container, Data-Unit or cluster.
// `seq` is a process-wide total order; `t_us` is monotonic microseconds
// since the log was created.
struct LogEvent {
  std::uint64_t seq = 0;
  std::int64_t t_us = 0;
  std::string entity;
  std::string from;
  std::string to;
  std::string reason;

  // "<t_us> <seq> <entity> <from>-><to> <reason>"
  std::string to_line() const;
  static std::optional<LogEvent> parse_line(std::string_view line);
};

class EventLog {
 public:
  EventLog();

  void record(std::string entity, std::string_view from, std::string_view to,
              std::string reason = {});

  std::vector<LogEvent> snapshot() const;
  std::vector<LogEvent> for_entity(std::string_view entity) const;
  std::size_t size() const;

  // Mirror every new line to a stream (e.g. a log file).
  void set_sink(std::ostream* sink);
  void write(std::ostream& os) const;

 private:
  mutable std::mutex mu_;
  std::chrono::steady_clock::time_point origin_;
  std::vector<LogEvent> events_;
  std::ostream* sink_ = nullptr;
};

}  // namespace pilotkit
