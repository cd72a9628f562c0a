#pragma once

// Agent cores behind a uniform text-in/text-out contract: a deterministic
// surrogate, a content-addressed replay cache and a remote HTTP client.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "organsim/cohort.hpp"
#include "organsim/grammar.hpp"
#include "organsim/trend.hpp"

namespace organsim {

struct BackendDescriptor {
  std::string kind = "surrogate";  // surrogate | replay | remote
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t deterministic_seed = 0;

  nlohmann::json to_json() const;
  static BackendDescriptor from_json(const nlohmann::json& j);
};

class AgentBackend {
 public:
  virtual ~AgentBackend() = default;
  virtual std::string generate(std::string_view prompt) const = 0;
  virtual std::string_view kind() const = 0;
};

std::shared_ptr<const AgentBackend> make_backend(const BackendDescriptor& d);

// --- surrogate -------------------------------------------------------------

enum class TrendMode { LastValue, Linear };

struct SurrogateCoupling {
  std::string target;     // qualified
  std::string reference;  // qualified
  double coefficient = 0.0;
  // Reference level with no effect; the reference's window mean when absent.
  std::optional<double> baseline;
};

struct SurrogateDrugEffect {
  std::string drug;
  std::string target;  // qualified
  double gain = 0.0;   // per unit dose
  double duration_h = 1.0;
};

struct SurrogateConfig {
  TrendMode default_mode = TrendMode::LastValue;
  std::map<std::string, TrendMode> modes;  // per qualified indicator
  double residual_scale = 1.0;
  std::map<std::string, double> residual_scales;
  std::vector<SurrogateCoupling> couplings;
  // Coefficient for supplied references without an explicit coupling (a
  // distractible simulator); 0 ignores them.
  double distractor_coupling = 0.0;
  std::vector<SurrogateDrugEffect> drug_effects;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  AnalyzerConfig analyzer;
  double compensator_gain = 1.0;

  TrendMode mode_for(std::string_view qualified) const;
  double scale_for(std::string_view qualified) const;

  nlohmann::json to_json() const;
  static SurrogateConfig from_json(const nlohmann::json& j);
};

// Mean absolute one-step error of the trend rule replayed inside the window.
double rolling_error(std::span<const double> values, TrendMode mode);
double trend_forecast(std::span<const double> values, TrendMode mode);

ParsedSimulation surrogate_predict(const SystemWindowBlock& window,
                                   std::span<const ReferenceEntry> references,
                                   const SurrogateConfig& cfg,
                                   const TreatmentBlock* treatments = nullptr,
                                   std::uint64_t noise_key = 0);
ParsedSimulation surrogate_predict(const WindowSample& window,
                                   std::span<const ReferenceEntry> references,
                                   const SurrogateConfig& cfg);

struct CalibrationSample {
  std::string indicator;  // qualified
  double estimated_error = 0.0;
  double pred = 0.0;
  double truth = 0.0;
};

// Picks residual_scale (globally, or per indicator when `per_indicator`)
// minimising the summed constraint loss of exp(-scale * estimated_error).
SurrogateConfig fit_calibration(SurrogateConfig cfg, std::span<const CalibrationSample> samples,
                                double lambda = 1.0, bool per_indicator = false);

class SurrogateBackend final : public AgentBackend {
 public:
  explicit SurrogateBackend(SurrogateConfig cfg) : cfg_(std::move(cfg)) {}
  std::string generate(std::string_view prompt) const override;
  std::string_view kind() const override { return "surrogate"; }
  const SurrogateConfig& config() const noexcept { return cfg_; }

 private:
  SurrogateConfig cfg_;
};

// Mean of the non-null entries (0 when there are none).
double history_mean(std::span<const std::optional<double>> history);

// --- replay ----------------------------------------------------------------

class ReplayBackend final : public AgentBackend {
 public:
  explicit ReplayBackend(std::string cache_dir) : dir_(std::move(cache_dir)) {}
  std::string generate(std::string_view prompt) const override;  // CacheMiss
  std::string_view kind() const override { return "replay"; }

  static std::string cache_path(const std::string& dir, std::string_view prompt);
  static void prime(const std::string& dir, std::string_view prompt, std::string_view completion);

 private:
  std::string dir_;
};

// Writes every exchange of `inner` into a replay cache.
class RecordingBackend final : public AgentBackend {
 public:
  RecordingBackend(std::shared_ptr<const AgentBackend> inner, std::string cache_dir)
      : inner_(std::move(inner)), dir_(std::move(cache_dir)) {}
  std::string generate(std::string_view prompt) const override;
  std::string_view kind() const override { return inner_->kind(); }

 private:
  std::shared_ptr<const AgentBackend> inner_;
  std::string dir_;
};

// Answers simulator prompts with the grid value one step after the window
// (confidence 1.0) and hands every other prompt to `inner`.
class TruthOracleBackend final : public AgentBackend {
 public:
  TruthOracleBackend(IndicatorGrid grid, std::shared_ptr<const AgentBackend> inner)
      : grid_(std::move(grid)), inner_(std::move(inner)) {}
  std::string generate(std::string_view prompt) const override;
  std::string_view kind() const override { return "oracle"; }

 private:
  IndicatorGrid grid_;
  std::shared_ptr<const AgentBackend> inner_;
};

// --- remote ----------------------------------------------------------------

struct RemoteConfig {
  std::string url;  // scheme://host:port
  std::string path = "/generate";
  std::string token_env = "ORGANSIM_REMOTE_TOKEN";
  int timeout_ms = 30000;
  int max_retries = 2;
  int max_in_flight = 4;

  static RemoteConfig from_json(const nlohmann::json& j);
};

std::shared_ptr<const AgentBackend> make_remote_backend(const RemoteConfig& cfg);

}  // namespace organsim
