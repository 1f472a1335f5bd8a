#include "cshi/simulator.hpp"

#include <sstream>

#include <spdlog/spdlog.h>

#include "cshi/error.hpp"
#include "cshi/text.hpp"

namespace cshi {

std::string_view to_string(SimulatorKind kind) {
  switch (kind) {
    case SimulatorKind::kCshi: return "cshi";
    case SimulatorKind::kCshiNoFilter: return "cshi-nofilter";
    case SimulatorKind::kSinglePrompt: return "single-prompt";
    case SimulatorKind::kSinglePromptUi: return "single-prompt-ui";
  }
  return "cshi";
}

SimulatorKind simulator_kind_from_string(std::string_view text) {
  for (auto k : {SimulatorKind::kCshi, SimulatorKind::kCshiNoFilter, SimulatorKind::kSinglePrompt,
                 SimulatorKind::kSinglePromptUi}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::kConfig, "unknown simulator '" + std::string(text) + "'");
}

// ---- CshiSimulator -----------------------------------------------------------

CshiSimulator::CshiSimulator(std::shared_ptr<const SimulatorServices> services,
                             const PipelineConfig* config, bool leak_guard, SimulatorKind kind)
    : services_(std::move(services)), leak_guard_(leak_guard), kind_(kind) {
  register_builtin_plugins(manager_, services_, config);
}

void CshiSimulator::initialize(SessionState& state, const SimulatorInit& init) {
  PluginContext ctx;
  ctx.session_id = state.session_id;
  ctx.memory = &state.memory;
  ctx.transcript = &state.transcript;
  state.memory.long_term.persona_text = init.persona;

  ctx.input = Json{{ctx_key::kRawUserRecord, init.raw_user_record}};
  manager_.run_stage(stage::kUserProfileInit, ctx);

  auto& summary = state.memory.long_term.taste_summary;
  if (leak_guard_ && services_->oracle && services_->oracle->leaks(summary)) {
    summary = services_->oracle->redact(summary);
  }

  ctx.input = Json{{ctx_key::kTargetInfo, init.target_info}, {"seed", init.seed}};
  manager_.run_stage(stage::kPreferencesInit, ctx);
}

SimulatorReply CshiSimulator::respond(SessionState& state, int round) {
  state.memory.dialogue_log = state.transcript;

  PluginContext ctx;
  ctx.session_id = state.session_id;
  ctx.round = round;
  ctx.memory = &state.memory;
  ctx.transcript = &state.transcript;
  if (!state.transcript.empty()) ctx.last_message = state.transcript.back();

  const AgentMemory before = state.memory;
  std::vector<PreferenceFacet> activated;
  auto run = [&](bool regenerate) {
    ctx.intent.reset();
    ctx.response.reset();
    ctx.input = Json::object();
    if (regenerate) ctx.input[ctx_key::kRegenerate] = true;
    const auto facets_before = state.memory.real_time;
    auto result = manager_.run_stage(stage::kMessageHandling, ctx);
    if (!ctx.response) {
      throw PluginFailure("pipeline", "no plugin produced a reply for this message");
    }
    activated.clear();
    for (std::size_t i = 0; i < state.memory.real_time.size() && i < facets_before.size(); ++i) {
      if (facets_before[i].visibility == Visibility::kUnknown &&
          state.memory.real_time[i].visibility == Visibility::kKnown) {
        activated.push_back(state.memory.real_time[i]);
      }
    }
    return result;
  };

  SimulatorReply reply;
  auto result = run(false);
  if (leak_guard_ && services_->oracle && services_->oracle->leaks(*ctx.response)) {
    spdlog::debug("session {}: reply names a target, regenerating", state.session_id);
    state.memory = before;
    ++reply.regenerations;
    result = run(true);
    if (services_->oracle->leaks(*ctx.response)) {
      ctx.response = services_->oracle->redact(*ctx.response);
      reply.redacted = true;
    }
  }
  reply.text = *ctx.response;
  reply.handled_by = result.handled_by;
  reply.invoked = std::move(result.invoked);
  reply.activated = std::move(activated);

  Message own;
  own.role = Role::kSimulator;
  own.text = reply.text;
  own.round = round;
  own.turn = state.next_turn();
  state.memory.dialogue_log.push_back(std::move(own));
  return reply;
}

// ---- SinglePromptSimulator -----------------------------------------------------

SinglePromptSimulator::SinglePromptSimulator(std::shared_ptr<const SimulatorServices> services,
                                             bool with_history)
    : services_(std::move(services)), with_history_(with_history) {
  if (!services_) throw Error(ErrorCode::kPrecondition, "simulator services required");
  const PromptLibrary library =
      services_->prompts ? *services_->prompts : PromptLibrary::defaults();
  const auto& prompt = library.get("single_prompt");
  for (const char* name : {"persona", "target_info", "ui_info"}) {
    if (!prompt.system.has(name)) {
      throw Error(ErrorCode::kConfig, std::string("single_prompt template lacks {{") + name + "}}");
    }
  }
  if (!prompt.user.has("dialogue")) {
    throw Error(ErrorCode::kConfig, "single_prompt template lacks {{dialogue}}");
  }
}

void SinglePromptSimulator::initialize(SessionState& state, const SimulatorInit& init) {
  auto& profile = state.memory.long_term;
  profile = plugin2_basic_info(init.raw_user_record);
  profile.persona_text = init.persona;

  std::vector<std::string> targets;
  for (std::size_t i = 0; i < init.target_titles.size(); ++i) {
    std::string line = init.target_titles[i];
    if (i < init.target_info.size()) {
      std::vector<std::string> parts;
      for (const auto& [name, values] : init.target_info[i]) {
        if (!values.empty()) parts.push_back(name + ": " + join(values, ", "));
      }
      if (!parts.empty()) line += " (" + join(parts, "; ") + ")";
    }
    targets.push_back(std::move(line));
  }
  target_text_ = join(targets, " | ");

  history_text_ = "none";
  if (with_history_ && services_->catalog != nullptr && !profile.interaction_history.empty()) {
    std::vector<std::string> lines;
    for (const auto& r : profile.interaction_history) {
      const auto* item = services_->catalog->find(r.item_id);
      if (item == nullptr) continue;
      std::ostringstream line;
      line << item->title << " (rated " << r.rating << ")";
      lines.push_back(line.str());
    }
    if (!lines.empty()) history_text_ = join(lines, "; ");
  }
}

std::string SinglePromptSimulator::render_dialogue(const std::vector<Message>& transcript) {
  std::string out;
  for (const auto& m : transcript) {
    out += m.role == Role::kCrs ? "Recommender: " : "You: ";
    out += m.text;
    if (m.recommended_items && !m.recommended_items->empty()) {
      std::vector<std::string> titles;
      for (const auto& item : *m.recommended_items) titles.push_back(item.title);
      out += " [" + join(titles, "; ") + "]";
    }
    out += "\n";
  }
  return out.empty() ? "(start the conversation)" : out;
}

SimulatorReply SinglePromptSimulator::respond(SessionState& state, int round) {
  const auto& persona = state.memory.long_term.persona_text;
  const std::string text = services_->ask_llm(
      "single_prompt",
      {{"persona", persona.empty() ? "none" : persona},
       {"target_info", target_text_},
       {"ui_info", history_text_},
       {"dialogue", render_dialogue(state.transcript)}},
      services_->generation_temperature);
  SimulatorReply reply;
  reply.text = trim(text);
  state.memory.dialogue_log = state.transcript;
  Message own;
  own.role = Role::kSimulator;
  own.text = reply.text;
  own.round = round;
  own.turn = state.next_turn();
  state.memory.dialogue_log.push_back(std::move(own));
  return reply;
}

std::unique_ptr<UserSimulator> make_simulator(SimulatorKind kind,
                                              std::shared_ptr<const SimulatorServices> services,
                                              const PipelineConfig* config) {
  switch (kind) {
    case SimulatorKind::kCshi:
      return std::make_unique<CshiSimulator>(std::move(services), config, true, kind);
    case SimulatorKind::kCshiNoFilter: {
      auto copy = std::make_shared<SimulatorServices>(*services);
      copy->anonymization.enabled = false;
      return std::make_unique<CshiSimulator>(std::move(copy), config, true, kind);
    }
    case SimulatorKind::kSinglePrompt:
      return std::make_unique<SinglePromptSimulator>(std::move(services), false);
    case SimulatorKind::kSinglePromptUi:
      return std::make_unique<SinglePromptSimulator>(std::move(services), true);
  }
  throw Error(ErrorCode::kConfig, "unknown simulator kind");
}

}  // namespace cshi
