#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cshi/domain.hpp"
#include "cshi/pipeline.hpp"
#include "cshi/plugins.hpp"

namespace cshi {

enum class SimulatorKind { kCshi, kCshiNoFilter, kSinglePrompt, kSinglePromptUi };

std::string_view to_string(SimulatorKind kind);
SimulatorKind simulator_kind_from_string(std::string_view text);

// Per-session inputs. target_titles is only read by the single-prompt
// baselines, which are given the target outright.
struct SimulatorInit {
  Json raw_user_record = Json::object();
  std::string persona;
  std::vector<AttributeMap> target_info;
  std::vector<std::string> target_titles;
  std::uint64_t seed = 0;
};

struct SimulatorReply {
  std::string text;
  std::optional<std::string> handled_by;
  std::vector<std::string> invoked;
  std::vector<PreferenceFacet> activated;
  int regenerations = 0;
  bool redacted = false;
};

class UserSimulator {
 public:
  virtual ~UserSimulator() = default;

  virtual SimulatorKind kind() const = 0;
  // Builds long-term and real-time memory inside `state.memory`.
  virtual void initialize(SessionState& state, const SimulatorInit& init) = 0;
  // Next simulator utterance given the transcript so far. The caller
  // appends the reply to the transcript.
  virtual SimulatorReply respond(SessionState& state, int round) = 0;
};

// Plugin-pipeline simulator. Every reply passes the target-leak guard: a
// leaking reply is regenerated once with memory restored, then redacted.
class CshiSimulator : public UserSimulator {
 public:
  CshiSimulator(std::shared_ptr<const SimulatorServices> services,
                const PipelineConfig* config = nullptr, bool leak_guard = true,
                SimulatorKind kind = SimulatorKind::kCshi);

  SimulatorKind kind() const override { return kind_; }
  void initialize(SessionState& state, const SimulatorInit& init) override;
  SimulatorReply respond(SessionState& state, int round) override;

  PluginManager& plugins() { return manager_; }
  const PluginManager& plugins() const { return manager_; }

 private:
  std::shared_ptr<const SimulatorServices> services_;
  PluginManager manager_;
  bool leak_guard_;
  SimulatorKind kind_;
};

// One-prompt baseline: persona, target description and (optionally) the
// user's history in a single system prompt, no guard.
class SinglePromptSimulator : public UserSimulator {
 public:
  SinglePromptSimulator(std::shared_ptr<const SimulatorServices> services, bool with_history);

  SimulatorKind kind() const override {
    return with_history_ ? SimulatorKind::kSinglePromptUi : SimulatorKind::kSinglePrompt;
  }
  void initialize(SessionState& state, const SimulatorInit& init) override;
  SimulatorReply respond(SessionState& state, int round) override;

  static std::string render_dialogue(const std::vector<Message>& transcript);

 private:
  std::shared_ptr<const SimulatorServices> services_;
  bool with_history_;
  std::string target_text_;
  std::string history_text_;
};

std::unique_ptr<UserSimulator> make_simulator(SimulatorKind kind,
                                              std::shared_ptr<const SimulatorServices> services,
                                              const PipelineConfig* config = nullptr);

}  // namespace cshi
