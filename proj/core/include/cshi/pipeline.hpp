#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "cshi/domain.hpp"
#include "cshi/error.hpp"

namespace cshi {

struct StageId {
  std::string name;

  auto operator<=>(const StageId&) const = default;
};

namespace stage {
inline const StageId kUserProfileInit{"UserProfileInit"};
inline const StageId kPreferencesInit{"PreferencesInit"};
inline const StageId kMessageHandling{"MessageHandling"};
}  // namespace stage

// Per-invocation view handed to plugins. The context never exposes the
// session's target items, only the agent-side memory and transcript.
struct PluginContext {
  std::string session_id;
  int round = 0;
  AgentMemory* memory = nullptr;
  const std::vector<Message>* transcript = nullptr;
  std::optional<Message> last_message;
  std::optional<Intent> intent;
  // Stage input supplied by the caller (raw user record, target info, ...).
  Json input = Json::object();
  // Inter-plugin handoff; emptied at the start and end of every stage run.
  Json scratch = Json::object();
  // Output of the plugin that claimed the stage.
  std::optional<std::string> response;
};

enum class StepResult { kContinue, kHandled };

using PluginBody = std::function<StepResult(PluginContext&)>;
using ActivationPredicate = std::function<bool(const PluginContext&)>;

struct PluginDescriptor {
  std::string plugin_id;
  StageId stage;
  int priority = 0;  // lower runs first; ties broken by plugin_id
  ActivationPredicate activation;  // empty means always active
};

struct RegistrationHandle {
  StageId stage;
  std::string plugin_id;
  std::uint64_t serial = 0;
};

struct StageRun {
  std::vector<std::string> invoked;
  std::optional<std::string> handled_by;
};

class PluginFailure : public Error {
 public:
  PluginFailure(std::string plugin_id, const std::string& cause)
      : Error(ErrorCode::kPluginFailure, plugin_id + ": " + cause),
        plugin_id_(std::move(plugin_id)) {}

  const std::string& plugin_id() const { return plugin_id_; }

 private:
  std::string plugin_id_;
};

// Stage registry plus ordered plugin chains. Registration is guarded, so a
// manager may be shared by sessions running on different threads.
class PluginManager {
 public:
  PluginManager();

  void add_stage(const StageId& stage);
  bool has_stage(const StageId& stage) const;
  std::vector<StageId> stages() const;

  RegistrationHandle register_plugin(PluginDescriptor descriptor, PluginBody body);
  bool remove(const RegistrationHandle& handle);

  // Runs active plugins in priority order until one returns kHandled. A
  // throwing plugin aborts the stage after memory, intent, response and
  // scratch are restored to their pre-stage values.
  StageRun run_stage(const StageId& stage, PluginContext& ctx) const;

  std::vector<std::string> execution_order(const StageId& stage) const;
  std::uint64_t invocations(const StageId& stage, const std::string& plugin_id) const;
  void reset_counters();

 private:
  struct Entry {
    PluginDescriptor descriptor;
    PluginBody body;
    std::uint64_t serial = 0;
    std::shared_ptr<std::atomic<std::uint64_t>> calls;
  };

  std::vector<Entry> snapshot(const StageId& stage) const;

  mutable std::shared_mutex mutex_;
  std::map<StageId, std::vector<Entry>> stages_;
  std::uint64_t next_serial_ = 1;
};

// Plugin selection file: {"plugins": [{plugin_id, stage, priority, enabled,
// params}]}. Entries override the built-in defaults by plugin_id.
struct PluginConfigEntry {
  std::string plugin_id;
  std::string stage;
  std::optional<int> priority;
  bool enabled = true;
  Json params = Json::object();
};

struct PipelineConfig {
  std::vector<PluginConfigEntry> plugins;

  const PluginConfigEntry* find(const std::string& plugin_id) const;

  static PipelineConfig from_json(const Json& doc);
  static PipelineConfig from_file(const std::filesystem::path& path);
};

}  // namespace cshi
