#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dualfb/corpus.hpp"
#include "dualfb/errors.hpp"
#include "dualfb/generator.hpp"
#include "dualfb/text.hpp"

namespace dualfb {

struct LlmConfig {
  std::string endpoint;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string api_key;
  std::string model = "gpt-3.5-turbo";
  double sampling_temperature = 1.0;
  double rank_temperature = 0.1;  // softmax temperature over relevance scores
  int max_output_tokens = 150;
  int timeout_seconds = 30;
  int max_retries = 3;
  int concurrency_limit = 1;  // requests are issued sequentially, never more
  int backoff_base_ms = 200;
  std::string response_template;  // empty: built-in template
  std::string scoring_template;
  std::string demonstrations;  // few-shot block; empty = zero-shot

  void validate() const {
    if (endpoint.empty()) throw DataError("llm config: endpoint not set");
    if (sampling_temperature <= 0.0 || rank_temperature <= 0.0) {
      throw DataError("llm config: temperatures must be positive");
    }
    if (max_output_tokens < 1) throw DataError("llm config: max output tokens must be >= 1");
    if (max_retries < 0) throw DataError("llm config: negative retry count");
    if (concurrency_limit < 1) throw DataError("llm config: concurrency limit must be >= 1");
  }

  // Reads LLM_API_ENDPOINT / LLM_API_KEY on top of defaults.
  static LlmConfig from_env() {
    LlmConfig cfg;
    if (const char* ep = std::getenv("LLM_API_ENDPOINT")) cfg.endpoint = ep;
    if (const char* key = std::getenv("LLM_API_KEY")) cfg.api_key = key;
    return cfg;
  }
};

inline std::string default_response_template() {
  return
      "You are a task-oriented dialogue chatbot. Your initial priority is to "
      "understand the user's intent within the current user input, taking into "
      "account the dialogue history. Subsequently, you need to select the "
      "relevant information from the knowledge base that aligns with this "
      "intent. Finally, generate concise response by incorporating the current "
      "user input and the selected information from the knowledge base. "
      "Additionally, you need provide a confidence score for each response to "
      "indicate the level of certainty associated with it. The confidence "
      "score falls within the range of 0.0 to 1.0, denoted as a decimal. The "
      "output format of responses follows the structure:\n"
      "Response: [Generated response]\n"
      "Confidence: [Confidence score]\n"
      "\n"
      "{demonstrations}"
      "Knowledge base\n"
      "{knowledge_base}\n"
      "\n"
      "Dialogue history\n"
      "{dialogue_history}\n"
      "\n"
      "User input\n"
      "{user_input}\n"
      "\n"
      "Response:";
}

inline std::string default_scoring_template() {
  return
      "You are required to assign relevance scores to each entity-response "
      "pair in the input. These scores should range from 0.0 to 1.0 and "
      "maintain the order based on the input sequence and the total number of "
      "entities in the knowledge base. The output format should follow the "
      "pattern:\n"
      "Score: [relevance-score1, relevance-score2, ...]\n"
      "\n"
      "{demonstrations}"
      "Knowledge base\n"
      "{knowledge_base}\n"
      "\n"
      "Response:\n"
      "{response}\n"
      "\n"
      "Score:";
}

namespace detail {

inline void replace_all(std::string& text, const std::string& from,
                        const std::string& to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
}

inline std::string numbered_kb_block(const std::vector<const Entity*>& entities) {
  std::string out;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += std::to_string(i + 1) + ". " + linearize_entity(*entities[i]) + ".";
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

// Drops markdown fence lines (```...), keeping fenced content.
inline std::string strip_fences(const std::string& raw) {
  std::istringstream in(raw);
  std::string out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).rfind("```", 0) == 0) continue;
    out += line;
    out.push_back('\n');
  }
  return out;
}

}  // namespace detail

inline std::string render_response_prompt(
    const DialogueContext& ctx, const std::vector<const Entity*>& entities,
    const LlmConfig& cfg = {}) {
  if (entities.empty()) {
    throw DataError("render_response_prompt: no entities");
  }
  std::string out = cfg.response_template.empty() ? default_response_template()
                                                  : cfg.response_template;
  detail::replace_all(out, "{demonstrations}",
                      cfg.demonstrations.empty() ? "" : cfg.demonstrations + "\n\n");
  detail::replace_all(out, "{knowledge_base}", detail::numbered_kb_block(entities));
  std::string history;
  for (const std::string& line : ctx.history_lines()) {
    if (!history.empty()) history.push_back('\n');
    history += line;
  }
  detail::replace_all(out, "{dialogue_history}", history);
  detail::replace_all(out, "{user_input}", ctx.user_input_line());
  return out;
}

inline std::string render_scoring_prompt(
    const std::vector<const Entity*>& entities, const std::string& response,
    const LlmConfig& cfg = {}) {
  if (entities.empty()) {
    throw DataError("render_scoring_prompt: no entities");
  }
  std::string out = cfg.scoring_template.empty() ? default_scoring_template()
                                                 : cfg.scoring_template;
  detail::replace_all(out, "{demonstrations}",
                      cfg.demonstrations.empty() ? "" : cfg.demonstrations + "\n\n");
  detail::replace_all(out, "{knowledge_base}", detail::numbered_kb_block(entities));
  detail::replace_all(out, "{response}", response);
  return out;
}

struct ParsedResponse {
  std::string response;
  double confidence = 0.0;
  std::vector<std::string> warnings;
};

// Extracts "Response: ..." / "Confidence: x" from a completion. Tolerates
// surrounding whitespace and markdown fences; anything missing or non-numeric
// is a ParseError (retryable: the caller re-prompts once).
inline ParsedResponse parse_response_confidence(const std::string& raw) {
  const std::string text = detail::strip_fences(raw);
  const std::size_t resp_at = text.find("Response:");
  if (resp_at == std::string::npos) {
    throw ParseError("completion lacks a 'Response:' field");
  }
  const std::size_t conf_at = text.find("Confidence:", resp_at);
  if (conf_at == std::string::npos) {
    throw ParseError("completion lacks a 'Confidence:' field");
  }
  ParsedResponse out;
  out.response = detail::trim(
      text.substr(resp_at + 9, conf_at - (resp_at + 9)));
  if (out.response.empty()) throw ParseError("empty response text");

  const std::string conf_text = detail::trim(text.substr(conf_at + 11));
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(conf_text, &used);
  } catch (const std::exception&) {
    throw ParseError("confidence '" + conf_text + "' is not a number");
  }
  if (used == 0) throw ParseError("confidence '" + conf_text + "' is not a number");
  if (value < 0.0 || value > 1.0) {
    out.warnings.push_back("confidence " + std::to_string(value) +
                           " outside [0,1], clamped");
    value = std::clamp(value, 0.0, 1.0);
  }
  out.confidence = value;
  return out;
}

// Parses "Score: [s1, s2, ...]" into exactly expected_k scores; out-of-range
// entries are clamped with a warning, a count mismatch is a ParseError.
inline std::vector<double> parse_score_list(const std::string& raw,
                                            int expected_k,
                                            std::vector<std::string>* warnings = nullptr) {
  if (expected_k < 1) throw DataError("parse_score_list: expected_k must be >= 1");
  const std::string text = detail::strip_fences(raw);
  const std::size_t score_at = text.find("Score:");
  if (score_at == std::string::npos) {
    throw ParseError("completion lacks a 'Score:' field");
  }
  const std::size_t open = text.find('[', score_at);
  const std::size_t close = open == std::string::npos
                                ? std::string::npos
                                : text.find(']', open);
  if (open == std::string::npos || close == std::string::npos) {
    throw ParseError("score list is not bracketed");
  }

  std::vector<double> scores;
  std::string item;
  std::istringstream items(text.substr(open + 1, close - open - 1));
  while (std::getline(items, item, ',')) {
    const std::string t = detail::trim(item);
    if (t.empty()) continue;
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(t, &used);
    } catch (const std::exception&) {
      throw ParseError("score '" + t + "' is not a number");
    }
    if (used == 0) throw ParseError("score '" + t + "' is not a number");
    if (value < 0.0 || value > 1.0) {
      if (warnings) {
        warnings->push_back("score " + std::to_string(value) +
                            " outside [0,1], clamped");
      }
      value = std::clamp(value, 0.0, 1.0);
    }
    scores.push_back(value);
  }
  if (scores.size() != static_cast<std::size_t>(expected_k)) {
    throw ParseError("expected " + std::to_string(expected_k) +
                     " scores, got " + std::to_string(scores.size()));
  }
  return scores;
}

// Chat-completion client implementing the prompt protocol: sampled responses
// with self-reported confidence, and relevance-score lists as the entity
// scores. Requests are sequential; transient transport failures back off
// exponentially, malformed completions get one re-prompt with a format
// reminder before a hard failure.
class LlmAdapter : public GeneratorAdapter {
 public:
  using TraceFn = std::function<void(const std::string&)>;

  explicit LlmAdapter(LlmConfig cfg, TraceFn trace = nullptr)
      : cfg_(std::move(cfg)), trace_(std::move(trace)) {
    cfg_.validate();
    client_ = std::make_unique<httplib::Client>(cfg_.endpoint);
    client_->set_connection_timeout(cfg_.timeout_seconds);
    client_->set_read_timeout(cfg_.timeout_seconds);
  }

  std::string name() const override { return "llm"; }
  const LlmConfig& config() const { return cfg_; }

  double score_response(const DialogueContext& ctx, const Entity& entity,
                        const std::string& response) override {
    return score_entities_batch(ctx, {&entity}, response)[0];
  }

  std::vector<double> score_entities_batch(
      const DialogueContext& ctx, const std::vector<const Entity*>& entities,
      const std::string& response) override {
    (void)ctx;  // the scoring protocol conditions on entities and response only
    const std::string prompt = render_scoring_prompt(entities, response, cfg_);
    const int k = static_cast<int>(entities.size());
    std::vector<std::string> warnings;
    const auto scores = with_format_retry<std::vector<double>>(
        prompt,
        "Reminder: reply in exactly the format 'Score: [s1, s2, ...]' with " +
            std::to_string(k) + " scores.",
        [&](const std::string& raw) {
          return parse_score_list(raw, k, &warnings);
        });
    for (const auto& w : warnings) trace("warning: " + w);
    return scores;
  }

  HypothesisSet generate(const DialogueContext& ctx,
                         const std::vector<const Entity*>& entities,
                         int m) override {
    if (m < 1) throw DataError("generate: m must be >= 1");
    const std::string prompt = render_response_prompt(ctx, entities, cfg_);
    HypothesisSet out;
    for (int i = 0; i < m; ++i) {
      const auto parsed = with_format_retry<ParsedResponse>(
          prompt,
          "Reminder: reply in exactly the format 'Response: ...' then "
          "'Confidence: x' with x a decimal in [0,1].",
          [](const std::string& raw) { return parse_response_confidence(raw); });
      for (const auto& w : parsed.warnings) trace("warning: " + w);
      Hypothesis h{normalize_tokens(parsed.response), parsed.confidence};
      if (h.tokens.empty()) continue;
      const bool dup = std::any_of(
          out.hypotheses.begin(), out.hypotheses.end(),
          [&](const Hypothesis& other) { return other.tokens == h.tokens; });
      if (!dup) out.hypotheses.push_back(std::move(h));
    }
    std::sort(out.hypotheses.begin(), out.hypotheses.end(),
              [](const Hypothesis& a, const Hypothesis& b) {
                if (a.log_score != b.log_score) return a.log_score > b.log_score;
                return a.tokens < b.tokens;
              });
    out.truncated = out.hypotheses.size() < static_cast<std::size_t>(m);
    return out;
  }

 private:
  template <typename T, typename ParseFn>
  T with_format_retry(const std::string& prompt, const std::string& reminder,
                      const ParseFn& parse) {
    try {
      return parse(complete(prompt));
    } catch (const ParseError& first) {
      trace(std::string("parse failed, re-prompting: ") + first.what());
      try {
        return parse(complete(prompt + "\n\n" + reminder));
      } catch (const ParseError& second) {
        throw AdapterError(std::string("parse failed after re-prompt: ") +
                           second.what());
      }
    }
  }

  std::string complete(const std::string& prompt) {
    const nlohmann::json body = {
        {"model", cfg_.model},
        {"messages", nlohmann::json::array(
                         {{{"role", "user"}, {"content", prompt}}})},
        {"temperature", cfg_.sampling_temperature},
        {"max_tokens", cfg_.max_output_tokens}};
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!cfg_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    }
    const std::string correlation = std::to_string(++request_counter_);
    headers.emplace("X-Request-Id", correlation);
    trace("request " + correlation + " POST " + cfg_.path +
          " (authorization redacted) body=" + payload);

    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0 && cfg_.backoff_base_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(
            cfg_.backoff_base_ms * (1 << (attempt - 1))));
      }
      auto res = client_->Post(cfg_.path, headers, payload, "application/json");
      if (!res) {
        trace("request " + correlation + " transport error, attempt " +
              std::to_string(attempt + 1));
        continue;
      }
      if (res->status == 200) {
        trace("response " + correlation + " status 200 body=" + res->body);
        try {
          const auto parsed = nlohmann::json::parse(res->body);
          return parsed.at("choices").at(0).at("message").at("content")
              .get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
          throw AdapterError(std::string("malformed completion payload: ") +
                             ex.what());
        }
      }
      trace("response " + correlation + " status " +
            std::to_string(res->status));
      const bool transient = res->status == 429 || res->status >= 500;
      if (!transient) {
        throw AdapterError("endpoint returned status " +
                           std::to_string(res->status));
      }
    }
    throw AdapterError("transport failed after " +
                       std::to_string(cfg_.max_retries + 1) + " attempts");
  }

  void trace(const std::string& message) {
    if (trace_) trace_(message);
  }

  LlmConfig cfg_;
  TraceFn trace_;
  std::unique_ptr<httplib::Client> client_;
  std::uint64_t request_counter_ = 0;
};

}  // namespace dualfb
