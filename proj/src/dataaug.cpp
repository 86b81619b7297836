// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "dscc/dataaug.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "dscc/hash.hpp"
#include "dscc/parallel.hpp"
#include "dscc/rng.hpp"

namespace dscc {

using nlohmann::json;

// ---- templates ------------------------------------------------------------------

namespace {

constexpr std::string_view kParaphraseSystem =
    "You are an expert linguist specializing in semantic equivalence. Your task is to generate paraphrases "
    "that preserve the exact meaning of the original question while altering its syntactic structure and "
    "word choice.";

constexpr std::string_view kParaphraseInstruction =
    R"(Instruction: Given the original question below, generate three distinct paraphrased versions. Ensure that each paraphrase:
1. Uses completely different sentence structure and vocabulary where possible.
2. Maintains the precise intent and scope of the original question.
3. Does not add, remove, or alter any factual constraints or entities mentioned.

Original Question: "[INSERT_ORIGINAL_QUESTION_HERE]"

Output Format:
Paraphrase 1: [Your first paraphrase here]
Paraphrase 2: [Your second paraphrase here]
Paraphrase 3: [Your third paraphrase here]

Example:
Original Question: "What is the capital city of France?"
Paraphrase 1: "Which city serves as the capital of France?"
Paraphrase 2: "Can you name the French capital?"
Paraphrase 3: "France's government is headquartered in which metropolis?")";

constexpr std::string_view kPerturbSystem =
    "You are a mischievous AI designed to generate plausible-sounding but factually incorrect answers. Your "
    "goal is to create a single hallucinated response that is subtly wrong, making it difficult for a casual "
    "reader to detect the error.";

constexpr std::string_view kPerturbInstruction =
    R"(Instruction: Based on the correct answer provided below, generate one hallucinated answer. The hallucinated answer must:
1. Be factually incorrect, but sound highly plausible and coherent.
2. Contain only one key factual error (e.g., wrong date, wrong location, wrong person, wrong causal relationship).
3. Maintain the same level of detail and writing style as the correct answer.
4. Avoid obvious absurdities or contradictions.

Correct Answer: "[INSERT_CORRECT_ANSWER_HERE]"

Output Format:
Hallucinated Answer: [Your hallucinated answer here]

Example:
Correct Answer: "Steve Jobs was born in San Francisco, California, in 1955."
Hallucinated Answer: "Steve Jobs was born in Los Angeles, California, in 1955.")";

constexpr std::string_view kExternalSystem =
    "You are a dual-role AI. First, you are a factual expert who provides accurate information. Second, you "
    "are a deceptive agent who generates a corresponding plausible falsehood.";

constexpr std::string_view kExternalInstruction =
    R"(Instruction: For the question provided below, you must generate two responses:
1. A correct and factual answer.
2. A hallucinated answer that is factually incorrect but sounds reasonable.

Question: "[INSERT_COMMONSENSEQA_QUESTION_HERE]"

Output Format:
Correct Answer: [Your accurate, factual answer here]
Hallucinated Answer: [Your plausible-sounding but factually incorrect answer here]

Example:
Question: "What do people use to cut paper?"
Correct Answer: "People typically use scissors to cut paper."
Hallucinated Answer: "People typically use a knife to cut paper, as it provides a cleaner edge.")";

}  // namespace

std::string AugmentationTemplate::render(std::string_view value) const {
  std::string out(instruction);
  const auto pos = out.find(slot);
  if (pos == std::string::npos) throw Error(ErrorCode::InvalidArgument, "dataaug: template has no slot");
  out.replace(pos, slot.size(), value);
  return out;
}

const AugmentationTemplate& paraphrase_template() {
  static const AugmentationTemplate t{"paraphrase", kParaphraseSystem, kParaphraseInstruction,
                                      "[INSERT_ORIGINAL_QUESTION_HERE]",
                                      {"Paraphrase 1:", "Paraphrase 2:", "Paraphrase 3:"}};
  return t;
}

const AugmentationTemplate& perturbation_template() {
  static const AugmentationTemplate t{"perturbation", kPerturbSystem, kPerturbInstruction,
                                      "[INSERT_CORRECT_ANSWER_HERE]", {"Hallucinated Answer:"}};
  return t;
}

const AugmentationTemplate& external_template() {
  static const AugmentationTemplate t{"external", kExternalSystem, kExternalInstruction,
                                      "[INSERT_COMMONSENSEQA_QUESTION_HERE]",
                                      {"Correct Answer:", "Hallucinated Answer:"}};
  return t;
}

// ---- parsing ----------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

std::string_view strip_quotes(std::string_view s) {
  static constexpr std::pair<std::string_view, std::string_view> pairs[] = {
      {"\"", "\""}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"``", "''"}};
  for (const auto& [open, close] : pairs) {
    if (s.size() >= open.size() + close.size() && s.substr(0, open.size()) == open &&
        s.substr(s.size() - close.size()) == close) {
      return trim(s.substr(open.size(), s.size() - open.size() - close.size()));
    }
  }
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

template <class F>
auto with_retries(const GenClient& client, std::string_view what, F&& attempt) {
  const auto policy = client.retry_policy();
  auto delay = policy.backoff;
  for (int i = 1;; ++i) {
    try {
      return attempt();
    } catch (const Error& e) {
      const bool retryable = e.code() == ErrorCode::ClientFailure || e.code() == ErrorCode::MalformedClientOutput;
      if (!retryable || i >= policy.attempts) throw;
      spdlog::warn("dataaug: {} attempt {}/{} failed: {}", what, i, policy.attempts, e.what());
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

}  // namespace

std::string parse_labeled(const std::string& raw, std::string_view label) {
  std::optional<std::string_view> found;
  for (auto line : split_lines(raw)) {
    line = trim(line);
    if (!starts_with_ci(line, label)) continue;
    if (found) throw ClientOutputError("dataaug: label '" + std::string(label) + "' appears more than once", raw);
    found = line.substr(label.size());
  }
  if (!found) throw ClientOutputError("dataaug: missing label '" + std::string(label) + "'", raw);
  auto value = strip_quotes(trim(*found));
  if (value.empty()) throw ClientOutputError("dataaug: empty value for '" + std::string(label) + "'", raw);
  return std::string(value);
}

std::vector<std::string> paraphrase_question(std::string_view q, const GenClient& client) {
  if (trim(q).empty()) throw Error(ErrorCode::EmptyQuestion, "dataaug: paraphrase of an empty question");
  const auto& t = paraphrase_template();
  const auto instruction = t.render(q);
  return with_retries(client, "paraphrase", [&] {
    const auto raw = client.complete(t.system_role, instruction);
    std::vector<std::string> out;
    for (auto label : t.output_labels) {
      auto v = parse_labeled(raw, label);
      if (v == q) throw ClientOutputError("dataaug: paraphrase identical to the question", raw);
      if (std::find(out.begin(), out.end(), v) != out.end()) {
        throw ClientOutputError("dataaug: paraphrases are not distinct", raw);
      }
      out.push_back(std::move(v));
    }
    return out;
  });
}

std::string perturb_answer(std::string_view a_correct, const GenClient& client) {
  if (trim(a_correct).empty()) throw Error(ErrorCode::InvalidArgument, "dataaug: perturbation of an empty answer");
  const auto& t = perturbation_template();
  const auto instruction = t.render(a_correct);
  return with_retries(client, "perturb", [&] {
    const auto raw = client.complete(t.system_role, instruction);
    auto v = parse_labeled(raw, t.output_labels[0]);
    if (v == a_correct) throw ClientOutputError("dataaug: hallucinated answer equals the correct answer", raw);
    return v;
  });
}

namespace {

TrainingExample external_example(const std::string& question, const GenClient& client) {
  const auto& t = external_template();
  const auto instruction = t.render(question);
  return with_retries(client, "external", [&] {
    const auto raw = client.complete(t.system_role, instruction);
    TrainingExample e;
    e.question = question;
    e.correct_answer = parse_labeled(raw, t.output_labels[0]);
    e.hallucinated_answer = parse_labeled(raw, t.output_labels[1]);
    if (e.correct_answer == e.hallucinated_answer) {
      throw ClientOutputError("dataaug: correct and hallucinated answers are identical", raw);
    }
    e.provenance = Provenance::external;
    return e;
  });
}

}  // namespace

SupplementResult supplement_external(const std::vector<std::string>& questions, const GenClient& client,
                                     std::size_t concurrency) {
  std::vector<std::optional<TrainingExample>> slots(questions.size());
  std::vector<std::string> reasons(questions.size());
  parallel_for(questions.size(), concurrency, [&](std::size_t i) {
    try {
      if (trim(questions[i]).empty()) throw ClientOutputError("dataaug: empty external question", "");
      slots[i] = external_example(questions[i], client);
      slots[i]->id = "ext-" + std::to_string(i);
    } catch (const ClientOutputError& e) {
      reasons[i] = e.what();
    }
  });
  SupplementResult result;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) {
      result.examples.push_back(std::move(*slots[i]));
    } else {
      spdlog::warn("dataaug: skipping external question {}: {}", i, reasons[i]);
      result.skipped.push_back({i, "external", reasons[i]});
    }
  }
  return result;
}

// ---- mock client --------------------------------------------------------------------

namespace {

const AugmentationTemplate* template_for(std::string_view system_role) {
  for (const auto* t : {&paraphrase_template(), &perturbation_template(), &external_template()}) {
    if (t->system_role == system_role) return t;
  }
  return nullptr;
}

std::optional<std::string_view> slot_value(const AugmentationTemplate& t, std::string_view instruction) {
  const auto pos = t.instruction.find(t.slot);
  const auto prefix = t.instruction.substr(0, pos);
  const auto suffix = t.instruction.substr(pos + t.slot.size());
  if (instruction.size() < prefix.size() + suffix.size()) return std::nullopt;
  if (instruction.substr(0, prefix.size()) != prefix) return std::nullopt;
  if (instruction.substr(instruction.size() - suffix.size()) != suffix) return std::nullopt;
  return instruction.substr(prefix.size(), instruction.size() - prefix.size() - suffix.size());
}

struct ExampleBlock {
  std::string input;
  std::string output;
};

// The template's own worked example: the first line after "Example:" is the input, the rest
// is the expected output.
ExampleBlock example_block(const AugmentationTemplate& t) {
  constexpr std::string_view marker = "\nExample:\n";
  auto body = t.instruction.substr(t.instruction.find(marker) + marker.size());
  const auto nl = body.find('\n');
  auto first = body.substr(0, nl);
  return {std::string(strip_quotes(trim(first.substr(first.find(':') + 1)))), std::string(body.substr(nl + 1))};
}

std::string lower_first(std::string s) {
  if (s.size() > 1 && std::isupper(static_cast<unsigned char>(s[0])) &&
      !std::isupper(static_cast<unsigned char>(s[1]))) {
    s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
  }
  return s;
}

std::string synthetic_paraphrases(std::string_view q, Rng& rng) {
  const std::string body(q);
  const std::vector<std::string> forms{
      "In other words, " + lower_first(body),
      "Could you tell me: " + body,
      "Here is my question: " + body,
      "I would like to know: " + body,
      "Put simply, " + lower_first(body),
      "Please answer this: " + body,
  };
  std::vector<std::size_t> order{0, 1, 2, 3, 4, 5};
  rng.shuffle(std::span<std::size_t>(order));
  std::string out;
  for (int i = 0; i < 3; ++i) out += "Paraphrase " + std::to_string(i + 1) + ": \"" + forms[order[i]] + "\"\n";
  return out;
}

// Changes one number, or failing that one word, so the result differs from the input.
std::string synthetic_perturbation(std::string_view a, Rng& rng) {
  std::string s(a);
  auto last_digit = s.find_last_of("0123456789");
  if (last_digit != std::string::npos) {
    const int d = s[last_digit] - '0';
    s[last_digit] = static_cast<char>('0' + (d + 1 + static_cast<int>(rng.below(9))) % 10);
    return s;
  }
  std::size_t end = s.size();
  while (end > 0 && !std::isalpha(static_cast<unsigned char>(s[end - 1]))) --end;
  std::size_t begin = end;
  while (begin > 0 && std::isalpha(static_cast<unsigned char>(s[begin - 1]))) --begin;
  if (begin == end) return "Not " + s;
  static const char* decoys[] = {"Lisbon", "Geneva", "Kyoto", "Denver", "Porto", "Bergen", "Quebec", "Perth"};
  std::string word = decoys[rng.below(8)];
  if (word == s.substr(begin, end - begin)) word = "Marseille";
  if (!std::isupper(static_cast<unsigned char>(s[begin]))) word = lower_first(word);
  s.replace(begin, end - begin, word);
  return s;
}

}  // namespace

void MockGenClient::script(std::string slot_value, std::string response) {
  scripted_[std::move(slot_value)] = std::move(response);
}

std::string MockGenClient::complete(std::string_view system_role, std::string_view instruction) const {
  ++calls_;
  const auto* t = template_for(system_role);
  if (t == nullptr) return "";
  const auto value = slot_value(*t, instruction);
  if (!value) return "";
  if (auto it = scripted_.find(*value); it != scripted_.end()) return it->second;
  const auto example = example_block(*t);
  if (*value == example.input) return example.output;

  Sha256 h;
  h.update_u64(seed_).update_field(system_role).update_field(instruction);
  Rng rng(std::stoull(h.hex().substr(0, 16), nullptr, 16));
  if (t == &paraphrase_template()) return synthetic_paraphrases(*value, rng);
  if (t == &perturbation_template()) return "Hallucinated Answer: \"" + synthetic_perturbation(*value, rng) + "\"";
  const auto tag = std::to_string(rng.below(1000000));
  return "Correct Answer: \"Reference answer " + tag + " to: " + std::string(*value) +
         "\"\nHallucinated Answer: \"Fabricated answer " + tag + " to: " + std::string(*value) + "\"";
}

// ---- HTTP client --------------------------------------------------------------------

json HttpGenConfig::to_json() const {
  return {{"base_url", base_url},
          {"path", path},
          {"model", model},
          {"api_key_env", api_key_env},
          {"temperature", temperature},
          {"timeout_ms", timeout.count()},
          {"min_interval_ms", min_interval.count()},
          {"attempts", retry.attempts},
          {"backoff_ms", retry.backoff.count()}};
}

HttpGenConfig HttpGenConfig::from_json(const json& j) {
  HttpGenConfig c;
  try {
    c.base_url = j.value("base_url", c.base_url);
    c.path = j.value("path", c.path);
    c.model = j.value("model", c.model);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.temperature = j.value("temperature", c.temperature);
    c.timeout = std::chrono::milliseconds(j.value("timeout_ms", c.timeout.count()));
    c.min_interval = std::chrono::milliseconds(j.value("min_interval_ms", c.min_interval.count()));
    c.retry.attempts = j.value("attempts", c.retry.attempts);
    c.retry.backoff = std::chrono::milliseconds(j.value("backoff_ms", c.retry.backoff.count()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("dataaug: http client config: ") + e.what());
  }
  if (c.retry.attempts < 1) throw Error(ErrorCode::ConfigError, "dataaug: attempts must be >= 1");
  return c;
}

struct HttpGenClient::Limiter {
  std::mutex mutex;
  std::chrono::milliseconds interval{0};
  std::chrono::steady_clock::time_point next = std::chrono::steady_clock::now();

  void wait() {
    std::unique_lock lock(mutex);
    const auto now = std::chrono::steady_clock::now();
    if (now < next) std::this_thread::sleep_until(next);
    next = std::max(now, next) + interval;
  }
};

HttpGenClient::HttpGenClient(HttpGenConfig config)
    : config_(std::move(config)), limiter_(std::make_unique<Limiter>()) {
  limiter_->interval = config_.min_interval;
}

HttpGenClient::~HttpGenClient() = default;

std::string HttpGenClient::complete(std::string_view system_role, std::string_view instruction) const {
  limiter_->wait();
  httplib::Client client(config_.base_url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const json body{{"model", config_.model},
                  {"temperature", config_.temperature},
                  {"messages",
                   {{{"role", "system"}, {"content", std::string(system_role)}},
                    {{"role", "user"}, {"content", std::string(instruction)}}}}};
  auto res = client.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::ClientFailure,
                "dataaug: " + config_.base_url + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::ClientFailure, "dataaug: " + config_.base_url + ": HTTP " + std::to_string(res->status));
  }
  try {
    const auto parsed = json::parse(res->body);
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ClientFailure, std::string("dataaug: unexpected completion payload: ") + e.what());
  }
}

// ---- pipeline -----------------------------------------------------------------------

AugmentOps parse_ops(std::string_view ops) {
  AugmentOps out{false, false, false};
  std::stringstream ss{std::string(ops)};
  std::string item;
  bool any = false;
  while (std::getline(ss, item, ',')) {
    const auto name = trim(item);
    if (name.empty()) continue;
    if (name == "paraphrase") {
      out.paraphrase = true;
    } else if (name == "perturb" || name == "perturbation") {
      out.perturb = true;
    } else if (name == "external") {
      out.external = true;
    } else {
      throw Error(ErrorCode::ConfigError, "dataaug: unknown op '" + std::string(name) + "'");
    }
    any = true;
  }
  if (!any) throw Error(ErrorCode::ConfigError, "dataaug: no ops selected");
  return out;
}

std::string to_string(const AugmentOps& ops) {
  std::string s;
  const auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  add(ops.paraphrase, "paraphrase");
  add(ops.perturb, "perturb");
  add(ops.external, "external");
  return s;
}

namespace {

struct ItemOutput {
  std::vector<TrainingExample> examples;
  std::vector<SkippedItem> skipped;
};

ItemOutput augment_item(std::size_t index, const TrainingExample& original, const GenClient& client,
                        const AugmentConfig& config) {
  ItemOutput out;
  TrainingExample base = original;
  if (base.id.empty()) base.id = std::to_string(index);
  const auto skip = [&](const char* op, const ClientOutputError& e) {
    spdlog::warn("dataaug: skipping {} for example {}: {}", op, base.id, e.what());
    out.skipped.push_back({index, op, e.what()});
  };

  std::optional<TrainingExample> extra;
  if (config.ops.perturb && !base.correct_answer.empty()) {
    try {
      auto h = perturb_answer(base.correct_answer, client);
      if (base.hallucinated_answer.empty()) {
        base.hallucinated_answer = std::move(h);
        base.provenance = Provenance::perturbation;
      } else if (h != base.hallucinated_answer) {
        extra = base;
        extra->id = base.id + "-pert";
        extra->hallucinated_answer = std::move(h);
        extra->provenance = Provenance::perturbation;
      }
    } catch (const ClientOutputError& e) {
      skip("perturb", e);
    }
  }
  out.examples.push_back(base);
  if (extra) out.examples.push_back(*extra);

  if (config.ops.paraphrase && !base.question.empty()) {
    try {
      auto variants = paraphrase_question(base.question, client);
      variants.resize(std::min(variants.size(), config.paraphrases_per_question));
      for (std::size_t j = 0; j < variants.size(); ++j) {
        TrainingExample p = base;
        p.id = base.id + "-para" + std::to_string(j + 1);
        p.question = std::move(variants[j]);
        p.provenance = Provenance::paraphrase;
        out.examples.push_back(std::move(p));
      }
    } catch (const ClientOutputError& e) {
      skip("paraphrase", e);
    }
  }
  return out;
}

}  // namespace

AugmentResult augment(const Dataset& original, const std::vector<std::string>& external_questions,
                      const GenClient& client, const AugmentConfig& config) {
  if (config.paraphrases_per_question > 3) {
    throw Error(ErrorCode::ConfigError, "dataaug: at most 3 paraphrases per question");
  }
  std::vector<ItemOutput> items(original.size());
  parallel_for(original.size(), config.concurrency,
               [&](std::size_t i) { items[i] = augment_item(i, original[i], client, config); });

  Dataset data;
  std::vector<SkippedItem> skipped;
  for (auto& item : items) {
    for (auto& e : item.examples) data.push_back(std::move(e));
    for (auto& s : item.skipped) skipped.push_back(std::move(s));
  }
  if (config.ops.external && !external_questions.empty()) {
    auto questions = external_questions;
    if (config.external_limit > 0 && questions.size() > config.external_limit) {
      // A seeded sample, kept in input order.
      std::vector<std::size_t> idx(questions.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng(config.seed ^ 0xe77e7a1ULL);
      rng.shuffle(std::span<std::size_t>(idx));
      idx.resize(config.external_limit);
      std::sort(idx.begin(), idx.end());
      std::vector<std::string> picked;
      for (auto i : idx) picked.push_back(questions[i]);
      questions = std::move(picked);
    }
    auto ext = supplement_external(questions, client, config.concurrency);
    for (auto& e : ext.examples) data.push_back(std::move(e));
    for (auto& s : ext.skipped) skipped.push_back(std::move(s));
  }

  std::set<std::string> ids;
  for (const auto& e : data) {
    if (!ids.insert(e.id).second) throw Error(ErrorCode::SchemaViolation, "dataaug: duplicate example id " + e.id);
  }
  data = split_dataset(std::move(data), config.split_ratio, config.seed);

  json counts = json::object();
  std::size_t n_train = 0, incomplete = 0;
  for (const auto& e : data) {
    counts[std::string(to_string(e.provenance))] = counts.value(std::string(to_string(e.provenance)), 0) + 1;
    n_train += e.split == Split::train ? 1 : 0;
    incomplete += e.complete() ? 0 : 1;
  }
  json skipped_json = json::array();
  for (const auto& s : skipped) skipped_json.push_back({{"index", s.index}, {"op", s.op}, {"reason", s.reason}});

  AugmentResult result;
  result.manifest = {{"template_version", kTemplateVersion},
                     {"client", client.name()},
                     {"seed", config.seed},
                     {"ops", to_string(config.ops)},
                     {"split_ratio", config.split_ratio},
                     {"paraphrases_per_question", config.paraphrases_per_question},
                     {"n_input", original.size()},
                     {"n_external_questions", external_questions.size()},
                     {"n_output", data.size()},
                     {"n_train", n_train},
                     {"n_val", data.size() - n_train},
                     {"incomplete", incomplete},
                     {"provenance_counts", counts},
                     {"skipped", skipped_json}};
  result.data = std::move(data);
  return result;
}

std::vector<std::string> load_questions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "dataaug: cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '{') {
      try {
        out.push_back(json::parse(t).at("question").get<std::string>());
      } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, "dataaug: bad question row in " + path.string() + ": " + e.what());
      }
    } else {
      out.emplace_back(t);
    }
  }
  return out;
}

}  // namespace dscc
