#include "organsim/jobs.hpp"

#include <algorithm>

#include "organsim/errors.hpp"

namespace organsim {

using nlohmann::json;

std::string_view job_state_name(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "queued";
}

json JobDescriptor::to_json() const {
  return {{"job_id", job_id},
          {"kind", kind},
          {"state", std::string(job_state_name(state))},
          {"progress", progress},
          {"error", error ? json(*error) : json(nullptr)},
          {"result_uri", result_uri ? json(*result_uri) : json(nullptr)},
          {"result", result}};
}

JobQueue::JobQueue(std::size_t workers) {
  for (std::size_t i = 0; i < std::max<std::size_t>(1, workers); ++i) {
    threads_.emplace_back([this] { worker(); });
  }
}

JobQueue::~JobQueue() { shutdown(); }

void JobQueue::shutdown() {
  {
    std::lock_guard lock(mu_);
    if (stop_) return;
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
}

std::string JobQueue::submit(std::string kind, Task task) {
  std::lock_guard lock(mu_);
  if (stop_) throw Error("job queue is shut down");
  const auto id = "job-" + std::to_string(next_++);
  JobDescriptor d;
  d.job_id = id;
  d.kind = std::move(kind);
  jobs_[id] = d;
  queue_.emplace_back(id, std::move(task));
  cv_.notify_all();
  return id;
}

std::optional<JobDescriptor> JobQueue::get(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

JobDescriptor JobQueue::wait(const std::string& job_id) const {
  std::unique_lock lock(mu_);
  if (!jobs_.count(job_id)) throw NotFound("unknown job " + job_id);
  cv_.wait(lock, [&] {
    const auto s = jobs_.at(job_id).state;
    return s == JobState::Done || s == JobState::Failed;
  });
  return jobs_.at(job_id);
}

void JobQueue::worker() {
  for (;;) {
    std::pair<std::string, Task> item;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;
      item = std::move(queue_.front());
      queue_.pop_front();
      jobs_[item.first].state = JobState::Running;
    }
    const auto& id = item.first;
    const auto progress = [&](double p) {
      std::lock_guard lock(mu_);
      auto& d = jobs_[id];
      d.progress = std::clamp(std::max(d.progress, p), 0.0, 1.0);
    };
    try {
      auto outcome = item.second(progress);
      std::lock_guard lock(mu_);
      auto& d = jobs_[id];
      d.state = JobState::Done;
      d.progress = 1.0;
      d.result_uri = std::move(outcome.result_uri);
      d.result = std::move(outcome.result);
    } catch (const std::exception& e) {
      std::lock_guard lock(mu_);
      auto& d = jobs_[id];
      d.state = JobState::Failed;
      d.error = e.what();
    }
    cv_.notify_all();
  }
}

}  // namespace organsim
