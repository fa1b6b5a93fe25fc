#include "pilotkit/agent.hpp"

#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "pilotkit/cluster_runtime.hpp"
#include "pilotkit/data_service.hpp"
#include "pilotkit/storage.hpp"
#include "pilotkit/task_context.hpp"

extern char** environ;

namespace pilotkit {

namespace fs = std::filesystem;

Agent::Agent(AgentConfig config, PilotManager& manager, DataService* data)
    : config_(std::move(config)), manager_(manager), data_(data) {}

Agent::~Agent() { stop(); }

void Agent::start() {
  for (int i = 0; i < config_.slots; ++i) {
    try {
      threads_.emplace_back([this, i] { slot_loop(i); });
    } catch (const std::system_error& e) {
      if (threads_.empty()) {
        throw Error(ErrorCode::AgentSpawnFailed, config_.agent_id, {e.what()});
      }
      break;
    }
  }
  manager_.log().record("agent:" + config_.agent_id, "NONE", "UP",
                        "pilot=" + config_.pilot_id + " slots=" +
                            std::to_string(threads_.size()));
}

void Agent::stop() {
  stop_ = true;
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

std::vector<Lease> Agent::kill() {
  std::lock_guard<std::mutex> lock(mu_);
  killed_ = true;
  stop_ = true;
  for (const auto& [unit, pid] : children_) ::kill(pid, SIGKILL);
  std::vector<Lease> out;
  for (const auto& [slot, lease] : current_) out.push_back(lease);
  manager_.log().record("agent:" + config_.agent_id, "UP", "KILLED",
                        std::to_string(out.size()) + " in flight");
  return out;
}

std::vector<Lease> Agent::in_flight() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<Lease> out;
  for (const auto& [slot, lease] : current_) out.push_back(lease);
  return out;
}

void Agent::set_runtime(std::shared_ptr<ClusterRuntime> runtime) {
  std::lock_guard<std::mutex> lock(mu_);
  runtime_ = std::move(runtime);
}

template <typename Fn>
bool Agent::report(Fn&& fn) {
  std::lock_guard<std::mutex> lock(mu_);
  if (killed_) return false;
  return fn();
}

void Agent::slot_loop(int slot) {
  while (!stop_) {
    std::optional<ComputeUnit> cu;
    try {
      cu = manager_.pull_next_wait(config_.pilot_id, config_.poll_interval);
    } catch (const Error&) {
      cu.reset();
    }
    if (!cu) {
      PilotState state = PilotState::Failed;
      try {
        state = manager_.pilot_info(config_.pilot_id).state;
      } catch (const Error&) {
      }
      if (state != PilotState::Running) std::this_thread::sleep_for(config_.poll_interval);
      continue;
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (killed_) {
        // Pulled after the crash; nobody else knows this lease.
        manager_.requeue_unit(cu->id, "agent lost", cu->attempt);
        break;
      }
      current_[slot] = Lease{cu->id, cu->attempt};
    }
    run_unit(*cu);
    {
      std::lock_guard<std::mutex> lock(mu_);
      current_.erase(slot);
    }
  }
}

void Agent::run_unit(const ComputeUnit& cu) {
  const auto sandbox = config_.pilot_dir / "units" / cu.id;
  std::error_code ec;
  fs::create_directories(sandbox, ec);
  if (ec) {
    report([&] {
      return manager_.fail_unit(cu.id, "sandbox: " + ec.message(), cu.attempt);
    });
    return;
  }

  std::string staging_space;
  std::string why;
  if (!stage_in(cu, sandbox, staging_space, why)) {
    report([&] { return manager_.fail_unit(cu.id, why, cu.attempt); });
    return;
  }

  // The input check and the STAGING_IN -> RUNNING step happen under the
  // data service lock so no replica can vanish in between.
  bool resident = true;
  const bool running = report([&] {
    if (cu.description.input_du_ids.empty() || !data_) {
      return manager_.mark_running(cu.id, cu.attempt);
    }
    bool marked = false;
    resident = data_->run_if_resident(cu.description.input_du_ids, config_.labels,
                                      [&] {
                                        marked = manager_.mark_running(cu.id, cu.attempt);
                                        return true;
                                      });
    return marked;
  });
  if (!resident) {
    report([&] {
      return manager_.fail_unit(cu.id, "input replica lost before start",
                                cu.attempt);
    });
    return;
  }
  if (!running) return;

  UnitOutcome outcome = execute(cu, sandbox, staging_space);
  if (!outcome.ok) {
    report([&] { return manager_.complete_unit(cu.id, outcome, cu.attempt); });
    return;
  }
  if (!report([&] { return manager_.mark_staging_out(cu.id, cu.attempt); })) return;
  try {
    stage_out(cu, sandbox, staging_space);
  } catch (const std::exception& e) {
    outcome = UnitOutcome::failure(std::string("stage-out: ") + e.what(),
                                   outcome.exit_code);
  }
  if (report([&] { return manager_.complete_unit(cu.id, outcome, cu.attempt); })) {
    ++completed_;
  }
}

bool Agent::stage_in(const ComputeUnit& cu, const fs::path& sandbox,
                     std::string& staging_space, std::string& why) {
  const auto& inputs = cu.description.input_du_ids;
  if (inputs.empty()) return true;
  if (!data_) {
    why = "no data service for inputs";
    return false;
  }
  try {
    for (const auto& du_id : inputs) {
      if (auto target = data_->space_for(config_.labels, config_.pilot_id)) {
        if (staging_space.empty()) staging_space = *target;
        if (!data_->has_matching_replica(du_id, config_.labels)) {
          data_->stage(du_id, *target);
        }
      } else if (!data_->has_matching_replica(du_id, config_.labels)) {
        why = "no space matching the pilot's labels for " + du_id;
        return false;
      }
      if (cu.description.kind == UnitKind::Executable) {
        for (const auto& [name, rec] : data_->data_unit(du_id).items) {
          write_file(sandbox / name, *data_->read_item(du_id, name));
        }
      }
    }
  } catch (const std::exception& e) {
    why = std::string("stage-in: ") + e.what();
    return false;
  }
  return true;
}

UnitOutcome Agent::execute(const ComputeUnit& cu, const fs::path& sandbox,
                           const std::string& staging_space) {
  if (cu.description.kind == UnitKind::Executable) return run_process(cu, sandbox);
  if (!cu.description.task) {
    return UnitOutcome::failure("no task payload for " + cu.description.task_ref);
  }
  TaskContext ctx;
  ctx.unit_id = cu.id;
  ctx.pilot_id = cu.pilot_id;
  ctx.attempt = cu.attempt;
  ctx.sandbox = sandbox;
  ctx.labels = config_.labels;
  ctx.data = data_;
  ctx.staging_space = staging_space;
  std::shared_ptr<ClusterRuntime> runtime;
  {
    std::lock_guard<std::mutex> lock(mu_);
    runtime = runtime_;
  }
  const auto task = cu.description.task;
  try {
    if (runtime && runtime->coordinator_alive()) {
      runtime->submit([&] { (*task)(ctx); }).get();
    } else {
      (*task)(ctx);
    }
  } catch (const std::exception& e) {
    return UnitOutcome::failure(e.what());
  }
  return UnitOutcome::success();
}

UnitOutcome Agent::run_process(const ComputeUnit& cu, const fs::path& sandbox) {
  const auto& d = cu.description;
  std::vector<std::string> args{d.executable};
  args.insert(args.end(), d.arguments.begin(), d.arguments.end());
  std::map<std::string, std::string> env_map;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv(*e);
    const auto eq = kv.find('=');
    if (eq != std::string::npos) env_map[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const auto& [k, v] : d.env) env_map[k] = v;
  env_map["PILOTKIT_UNIT_ID"] = cu.id;
  env_map["PILOTKIT_PILOT_ID"] = cu.pilot_id;
  std::vector<std::string> env;
  for (const auto& [k, v] : env_map) env.push_back(k + "=" + v);

  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  std::vector<char*> envp;
  for (auto& e : env) envp.push_back(e.data());
  envp.push_back(nullptr);
  const std::string dir = sandbox.string();
  const std::string out_path = (sandbox / "stdout").string();
  const std::string err_path = (sandbox / "stderr").string();

  std::unique_lock<std::mutex> lock(mu_);
  if (killed_) return UnitOutcome::failure("agent killed");
  const pid_t pid = fork();
  if (pid < 0) {
    return UnitOutcome::failure(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    if (chdir(dir.c_str()) != 0) _exit(126);
    const int out = open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    const int err = open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (out < 0 || err < 0) _exit(126);
    dup2(out, STDOUT_FILENO);
    dup2(err, STDERR_FILENO);
    close(out);
    close(err);
    execvpe(argv[0], argv.data(), envp.data());
    _exit(127);
  }
  children_[cu.id] = pid;
  lock.unlock();

  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  lock.lock();
  children_.erase(cu.id);
  lock.unlock();

  if (WIFEXITED(status)) {
    const int code = WEXITSTATUS(status);
    if (code == 0) return UnitOutcome::success(0);
    return UnitOutcome::failure("exit code " + std::to_string(code), code);
  }
  if (WIFSIGNALED(status)) {
    const int sig = WTERMSIG(status);
    return UnitOutcome::failure("killed by signal " + std::to_string(sig), 128 + sig);
  }
  return UnitOutcome::failure("abnormal termination");
}

void Agent::stage_out(const ComputeUnit& cu, const fs::path& sandbox,
                      const std::string& staging_space) {
  const auto& d = cu.description;
  if (d.kind != UnitKind::Executable || d.output_du_ids.empty() || !data_) return;
  const auto outputs = sandbox / "outputs";
  std::error_code ec;
  if (!fs::is_directory(outputs, ec)) return;
  std::string space = staging_space;
  if (space.empty()) {
    auto found = data_->space_for(config_.labels, config_.pilot_id);
    if (!found) {
      throw Error(ErrorCode::UnknownSpace, "no space for outputs of " + cu.id);
    }
    space = *found;
  }
  auto adaptor = data_->adaptor_of(space);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(outputs)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    adaptor->put(space, name, read_file(entry.path()));
    names.push_back(name);
  }
  data_->adopt_data_unit(space, names, d.output_du_ids.front());
}

}  // namespace pilotkit
