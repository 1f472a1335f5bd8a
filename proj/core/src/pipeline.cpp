#include "cshi/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>

namespace cshi {

PluginManager::PluginManager() {
  for (const auto& s : {stage::kUserProfileInit, stage::kPreferencesInit, stage::kMessageHandling}) {
    stages_[s];
  }
}

void PluginManager::add_stage(const StageId& stage) {
  std::unique_lock lock(mutex_);
  stages_[stage];
}

bool PluginManager::has_stage(const StageId& stage) const {
  std::shared_lock lock(mutex_);
  return stages_.count(stage) > 0;
}

std::vector<StageId> PluginManager::stages() const {
  std::shared_lock lock(mutex_);
  std::vector<StageId> out;
  for (const auto& [id, entries] : stages_) out.push_back(id);
  return out;
}

RegistrationHandle PluginManager::register_plugin(PluginDescriptor descriptor, PluginBody body) {
  if (descriptor.plugin_id.empty()) {
    throw Error(ErrorCode::kPrecondition, "plugin_id must not be empty");
  }
  if (!body) throw Error(ErrorCode::kPrecondition, "plugin '" + descriptor.plugin_id + "' has no body");
  std::unique_lock lock(mutex_);
  auto it = stages_.find(descriptor.stage);
  if (it == stages_.end()) {
    throw Error(ErrorCode::kUnknownStage, "stage '" + descriptor.stage.name + "'");
  }
  auto& entries = it->second;
  for (const auto& e : entries) {
    if (e.descriptor.plugin_id == descriptor.plugin_id) {
      throw Error(ErrorCode::kDuplicatePlugin,
                  "'" + descriptor.plugin_id + "' already in stage " + descriptor.stage.name);
    }
  }
  RegistrationHandle handle{descriptor.stage, descriptor.plugin_id, next_serial_++};
  entries.push_back(Entry{std::move(descriptor), std::move(body), handle.serial,
                          std::make_shared<std::atomic<std::uint64_t>>(0)});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.descriptor.priority != b.descriptor.priority) {
      return a.descriptor.priority < b.descriptor.priority;
    }
    return a.descriptor.plugin_id < b.descriptor.plugin_id;
  });
  return handle;
}

bool PluginManager::remove(const RegistrationHandle& handle) {
  std::unique_lock lock(mutex_);
  auto it = stages_.find(handle.stage);
  if (it == stages_.end()) return false;
  auto& entries = it->second;
  const auto before = entries.size();
  entries.erase(std::remove_if(entries.begin(), entries.end(),
                               [&](const Entry& e) { return e.serial == handle.serial; }),
                entries.end());
  return entries.size() != before;
}

std::vector<PluginManager::Entry> PluginManager::snapshot(const StageId& stage) const {
  std::shared_lock lock(mutex_);
  auto it = stages_.find(stage);
  if (it == stages_.end()) throw Error(ErrorCode::kUnknownStage, "stage '" + stage.name + "'");
  return it->second;
}

StageRun PluginManager::run_stage(const StageId& stage, PluginContext& ctx) const {
  const auto entries = snapshot(stage);
  if (ctx.memory == nullptr) throw Error(ErrorCode::kPrecondition, "plugin context without memory");

  const AgentMemory memory_before = *ctx.memory;
  const auto intent_before = ctx.intent;
  const auto response_before = ctx.response;
  ctx.scratch = Json::object();

  StageRun run;
  for (const auto& entry : entries) {
    if (entry.descriptor.activation && !entry.descriptor.activation(ctx)) continue;
    run.invoked.push_back(entry.descriptor.plugin_id);
    entry.calls->fetch_add(1, std::memory_order_relaxed);
    StepResult result = StepResult::kContinue;
    try {
      result = entry.body(ctx);
    } catch (const std::exception& e) {
      *ctx.memory = memory_before;
      ctx.intent = intent_before;
      ctx.response = response_before;
      ctx.scratch = Json::object();
      throw PluginFailure(entry.descriptor.plugin_id, e.what());
    }
    if (result == StepResult::kHandled) {
      run.handled_by = entry.descriptor.plugin_id;
      break;
    }
  }
  ctx.scratch = Json::object();
  return run;
}

std::vector<std::string> PluginManager::execution_order(const StageId& stage) const {
  std::vector<std::string> out;
  for (const auto& e : snapshot(stage)) out.push_back(e.descriptor.plugin_id);
  return out;
}

std::uint64_t PluginManager::invocations(const StageId& stage, const std::string& plugin_id) const {
  for (const auto& e : snapshot(stage)) {
    if (e.descriptor.plugin_id == plugin_id) return e.calls->load();
  }
  return 0;
}

void PluginManager::reset_counters() {
  std::shared_lock lock(mutex_);
  for (const auto& [id, entries] : stages_) {
    for (const auto& e : entries) e.calls->store(0);
  }
}

const PluginConfigEntry* PipelineConfig::find(const std::string& plugin_id) const {
  for (const auto& p : plugins) {
    if (p.plugin_id == plugin_id) return &p;
  }
  return nullptr;
}

PipelineConfig PipelineConfig::from_json(const Json& doc) {
  PipelineConfig config;
  if (!doc.is_object() || !doc.contains("plugins") || !doc.at("plugins").is_array()) {
    throw Error(ErrorCode::kConfig, "pipeline config needs a \"plugins\" array");
  }
  for (const auto& p : doc.at("plugins")) {
    if (!p.is_object() || !p.contains("plugin_id") || !p.at("plugin_id").is_string()) {
      throw Error(ErrorCode::kConfig, "pipeline entry needs a string plugin_id");
    }
    PluginConfigEntry entry;
    entry.plugin_id = p.at("plugin_id").get<std::string>();
    entry.stage = p.value("stage", "");
    if (auto it = p.find("priority"); it != p.end() && it->is_number_integer()) {
      entry.priority = it->get<int>();
    }
    entry.enabled = p.value("enabled", true);
    entry.params = p.value("params", Json::object());
    config.plugins.push_back(std::move(entry));
  }
  return config;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open pipeline config " + path.string());
  try {
    return from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kConfig, "pipeline config " + path.string() + ": " + e.what());
  }
}

}  // namespace cshi
