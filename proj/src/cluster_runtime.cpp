#include "pilotkit/cluster_runtime.hpp"

#include <fstream>
#include <system_error>

#include "pilotkit/error.hpp"

namespace pilotkit {

namespace fs = std::filesystem;

bool is_runtime_kind(const std::string& kind) {
  return kind == "yarn" || kind == "spark";
}

ClusterRuntime::ClusterRuntime(ClusterSpec spec) : spec_(std::move(spec)) {
  if (!is_runtime_kind(spec_.runtime_kind)) {
    throw Error(ErrorCode::ValidationError,
                "unknown runtime kind '" + spec_.runtime_kind + "'");
  }
  endpoint_ = "emu://" + spec_.pilot_id + "/coordinator";

  try {
    if (spec_.fail_phase == "config-gen") throw std::runtime_error("injected");
    write_config();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::BootstrapFailed, "config-gen", {e.what()});
  }

  if (spec_.fail_phase == "coordinator") {
    throw Error(ErrorCode::BootstrapFailed, "coordinator", {"injected"});
  }
  coordinator_ = std::thread([this] { coordinator_loop(); });
  {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return coordinator_up_; });
  }

  if (spec_.fail_phase == "worker") {
    stop();
    throw Error(ErrorCode::BootstrapFailed, "worker",
                {"worker on " + (spec_.nodes.empty() ? std::string("?")
                                                     : spec_.nodes.front()) +
                 " did not start"});
  }
  for (std::size_t i = 0; i < spec_.nodes.size(); ++i) {
    auto w = std::make_unique<Worker>();
    w->node = spec_.nodes[i];
    workers_.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < workers_.size(); ++i) {
    workers_[i]->thread = std::thread([this, i] { worker_loop(i); });
  }
}

ClusterRuntime::~ClusterRuntime() { stop(); }

void ClusterRuntime::write_config() {
  fs::create_directories(spec_.config_dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(spec_.config_dir / name, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + name);
    return out;
  };
  {
    auto out = open("masters");
    out << endpoint_ << "\n";
  }
  {
    auto out = open("workers");
    for (const auto& n : spec_.nodes) out << n << "\n";
  }
  for (const auto& n : spec_.nodes) {
    auto out = open("node-" + n + ".conf");
    out << "node=" << n << "\n"
        << "cores=" << spec_.cores_per_node << "\n"
        << "memory_mb=" << spec_.memory_per_node_mb << "\n";
  }
  auto out = open("runtime.conf");
  out << "runtime=" << spec_.runtime_kind << "\n"
      << "coordinator=" << endpoint_ << "\n"
      << "workers=" << spec_.nodes.size() << "\n";
}

bool ClusterRuntime::coordinator_alive() const {
  std::lock_guard<std::mutex> lock(mu_);
  return coordinator_up_ && !stop_;
}

std::uint64_t ClusterRuntime::tasks_executed() const {
  std::lock_guard<std::mutex> lock(mu_);
  return executed_;
}

std::future<void> ClusterRuntime::submit(std::function<void()> task) {
  std::packaged_task<void()> pt(std::move(task));
  auto fut = pt.get_future();
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (stop_ || workers_.empty()) {
      throw Error(ErrorCode::BootstrapFailed, "coordinator",
                  {endpoint_ + " is not accepting tasks"});
    }
    inbox_.push_back(std::move(pt));
  }
  cv_.notify_all();
  return fut;
}

void ClusterRuntime::coordinator_loop() {
  std::unique_lock<std::mutex> lock(mu_);
  coordinator_up_ = true;
  cv_.notify_all();
  while (true) {
    cv_.wait(lock, [&] { return stop_ || !inbox_.empty(); });
    if (stop_) break;
    auto task = std::move(inbox_.front());
    inbox_.pop_front();
    std::size_t best = 0;
    for (std::size_t i = 1; i < workers_.size(); ++i) {
      if (workers_[i]->queue.size() < workers_[best]->queue.size()) best = i;
    }
    workers_[best]->queue.push_back(std::move(task));
    cv_.notify_all();
  }
}

void ClusterRuntime::worker_loop(std::size_t index) {
  auto& self = *workers_[index];
  std::unique_lock<std::mutex> lock(mu_);
  while (true) {
    cv_.wait(lock, [&] { return stop_ || !self.queue.empty(); });
    if (self.queue.empty()) break;
    auto task = std::move(self.queue.front());
    self.queue.pop_front();
    lock.unlock();
    task();
    lock.lock();
    ++executed_;
  }
}

void ClusterRuntime::stop() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (stop_ && !coordinator_.joinable()) return;
    stop_ = true;
  }
  cv_.notify_all();
  if (coordinator_.joinable()) coordinator_.join();
  for (auto& w : workers_) {
    if (w->thread.joinable()) w->thread.join();
  }
  // Anything never dispatched is abandoned; its future reports broken_promise.
  std::lock_guard<std::mutex> lock(mu_);
  inbox_.clear();
}

}  // namespace pilotkit
