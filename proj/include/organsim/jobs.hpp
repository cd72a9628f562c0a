#pragma once

// Background job queue with a fixed worker pool.

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace organsim {

enum class JobState { Queued, Running, Done, Failed };
std::string_view job_state_name(JobState s);

struct JobDescriptor {
  std::string job_id;
  std::string kind;  // ingest | simulate | counterfactual | train | report
  JobState state = JobState::Queued;
  double progress = 0.0;
  std::optional<std::string> error;
  std::optional<std::string> result_uri;  // set when done
  nlohmann::json result;

  nlohmann::json to_json() const;
};

struct JobOutcome {
  std::string result_uri;
  nlohmann::json result;
};

class JobQueue {
 public:
  using Progress = std::function<void(double)>;
  using Task = std::function<JobOutcome(const Progress&)>;

  explicit JobQueue(std::size_t workers = 2);
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::string submit(std::string kind, Task task);
  std::optional<JobDescriptor> get(const std::string& job_id) const;
  // Blocks until the job is done or failed.
  JobDescriptor wait(const std::string& job_id) const;
  void shutdown();

 private:
  void worker();

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<std::string, JobDescriptor> jobs_;
  std::deque<std::pair<std::string, Task>> queue_;
  std::vector<std::thread> threads_;
  std::size_t next_ = 1;
  bool stop_ = false;
};

}  // namespace organsim
