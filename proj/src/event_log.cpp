#include "pilotkit/event_log.hpp"

#include <ostream>
#include <sstream>

namespace pilotkit {

std::string LogEvent::to_line() const {
  std::ostringstream os;
  os << t_us << ' ' << seq << ' ' << entity << ' ' << from << "->" << to;
  if (!reason.empty()) os << ' ' << reason;
  return os.str();
}

std::optional<LogEvent> LogEvent::parse_line(std::string_view line) {
  std::istringstream is{std::string(line)};
  LogEvent ev;
  std::string arrow;
  if (!(is >> ev.t_us >> ev.seq >> ev.entity >> arrow)) return std::nullopt;
  const auto pos = arrow.find("->");
  if (pos == std::string::npos) return std::nullopt;
  ev.from = arrow.substr(0, pos);
  ev.to = arrow.substr(pos + 2);
  std::getline(is >> std::ws, ev.reason);
  return ev;
}

EventLog::EventLog() : origin_(std::chrono::steady_clock::now()) {}

void EventLog::record(std::string entity, std::string_view from,
                      std::string_view to, std::string reason) {
  std::lock_guard<std::mutex> lock(mu_);
  LogEvent ev;
  ev.seq = events_.size();
  ev.t_us = std::chrono::duration_cast<std::chrono::microseconds>(
                std::chrono::steady_clock::now() - origin_)
                .count();
  ev.entity = std::move(entity);
  ev.from = std::string(from);
  ev.to = std::string(to);
  ev.reason = std::move(reason);
  if (sink_) *sink_ << ev.to_line() << '\n';
  events_.push_back(std::move(ev));
}

std::vector<LogEvent> EventLog::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return events_;
}

std::vector<LogEvent> EventLog::for_entity(std::string_view entity) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<LogEvent> out;
  for (const auto& ev : events_) {
    if (ev.entity == entity) out.push_back(ev);
  }
  return out;
}

std::size_t EventLog::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return events_.size();
}

void EventLog::set_sink(std::ostream* sink) {
  std::lock_guard<std::mutex> lock(mu_);
  sink_ = sink;
}

void EventLog::write(std::ostream& os) const {
  for (const auto& ev : snapshot()) os << ev.to_line() << '\n';
}

}  // namespace pilotkit
