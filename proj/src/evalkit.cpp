// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "dscc/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "dscc/error.hpp"
#include "dscc/parallel.hpp"

namespace dscc {

using nlohmann::json;

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
char fold(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = fold(c);
  return out;
}

bool is_terminal_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(fold(c));
  }
  while (!out.empty() && (is_terminal_punct(out.back()) || out.back() == ' ')) out.pop_back();
  return out;
}

bool exact_match(std::string_view prediction, std::string_view gold) {
  return normalize_answer(prediction) == normalize_answer(gold);
}

std::string_view to_string(MatchMode m) {
  return m == MatchMode::substring ? "substring" : "word_boundary";
}

MatchMode parse_match_mode(std::string_view s) {
  if (s == "word_boundary" || s == "word-boundary") return MatchMode::word_boundary;
  if (s == "substring") return MatchMode::substring;
  throw Error(ErrorCode::ConfigError, "evalkit: unknown match mode '" + std::string(s) + "'");
}

void KeywordSpec::validate() const {
  if (ground_truth.empty()) throw Error(ErrorCode::EmptySpec, "keyword spec '" + id + "' has no ground-truth phrases");
  std::set<std::string> gt;
  for (const auto& p : ground_truth) {
    if (p.empty()) throw Error(ErrorCode::InvalidArgument, "keyword spec '" + id + "': empty phrase");
    gt.insert(lower(p));
  }
  for (const auto& p : hallucination) {
    if (p.empty()) throw Error(ErrorCode::InvalidArgument, "keyword spec '" + id + "': empty phrase");
    if (gt.count(lower(p))) {
      throw Error(ErrorCode::InvalidArgument, "keyword spec '" + id + "': '" + p + "' is in both lists");
    }
  }
}

bool phrase_present(std::string_view text, std::string_view phrase, MatchMode mode) {
  if (phrase.empty()) return false;
  const std::string hay = lower(text);
  const std::string needle = lower(phrase);
  const bool check_left = mode == MatchMode::word_boundary && is_alnum(needle.front());
  const bool check_right = mode == MatchMode::word_boundary && is_alnum(needle.back());
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    const auto end = pos + needle.size();
    if (check_left && pos > 0 && is_alnum(hay[pos - 1])) continue;
    if (check_right && end < hay.size() && is_alnum(hay[end])) continue;
    return true;
  }
  return false;
}

FcrHits count_hits(std::string_view answer, const KeywordSpec& spec) {
  FcrHits h;
  for (const auto& p : spec.ground_truth) h.gt += phrase_present(answer, p, spec.mode) ? 1 : 0;
  for (const auto& p : spec.hallucination) h.hal += phrase_present(answer, p, spec.mode) ? 1 : 0;
  return h;
}

double fcr_from_hits(std::size_t hit_gt, std::size_t hit_hal, std::size_t n_gt) {
  if (n_gt == 0) throw Error(ErrorCode::EmptySpec, "fcr: no ground-truth phrases");
  const double raw = (static_cast<double>(hit_gt) - static_cast<double>(hit_hal)) / static_cast<double>(n_gt);
  return std::clamp(raw, 0.0, 1.0);
}

double fcr(std::string_view answer, const KeywordSpec& spec) {
  spec.validate();
  auto h = count_hits(answer, spec);
  return fcr_from_hits(h.gt, h.hal, spec.ground_truth.size());
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> out;
  for (const auto& row : read_jsonl(path)) {
    try {
      const auto& id = row.at("id");
      out.push_back({id.is_string() ? id.get<std::string>() : id.dump(), row.at("prediction").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
    }
  }
  return out;
}

void save_predictions(const std::vector<Prediction>& preds, const std::filesystem::path& path) {
  std::vector<json> rows;
  for (const auto& p : preds) rows.push_back({{"id", p.id}, {"prediction", p.prediction}});
  write_jsonl(rows, path);
}

std::map<std::string, KeywordSpec> load_keyword_specs(const std::filesystem::path& path) {
  std::map<std::string, KeywordSpec> out;
  for (const auto& row : read_jsonl(path)) {
    KeywordSpec s;
    try {
      const auto& id = row.at("id");
      s.id = id.is_string() ? id.get<std::string>() : id.dump();
      s.ground_truth = row.value("gt_keywords", std::vector<std::string>{});
      s.hallucination = row.value("hal_keywords", std::vector<std::string>{});
      s.mode = parse_match_mode(row.value("mode", "word_boundary"));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
    }
    s.validate();
    out[s.id] = std::move(s);
  }
  return out;
}

// ---- external scorer -----------------------------------------------------------

struct HttpScorer::Limiter {
  std::mutex mutex;
  std::chrono::milliseconds interval;
  std::chrono::steady_clock::time_point next = std::chrono::steady_clock::now();

  void wait() {
    std::unique_lock lock(mutex);
    auto now = std::chrono::steady_clock::now();
    if (now < next) std::this_thread::sleep_until(next);
    next = std::max(now, next) + interval;
  }
};

HttpScorer::HttpScorer(std::string url, std::chrono::milliseconds timeout,
                       std::chrono::milliseconds min_interval)
    : url_(std::move(url)), timeout_(timeout), limiter_(std::make_unique<Limiter>()) {
  limiter_->interval = min_interval;
}

HttpScorer::~HttpScorer() = default;

std::optional<double> HttpScorer::score(std::string_view question, std::string_view answer) const {
  auto scheme_end = url_.find("://");
  if (scheme_end == std::string::npos) return std::nullopt;
  auto path_start = url_.find('/', scheme_end + 3);
  std::string host = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);
  limiter_->wait();
  try {
    httplib::Client client(host);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    client.set_connection_timeout(secs.count(), (timeout_ - secs).count() * 1000);
    client.set_read_timeout(secs.count(), (timeout_ - secs).count() * 1000);
    json body{{"question", std::string(question)}, {"answer", std::string(answer)}};
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res || res->status != 200) {
      spdlog::warn("external scorer {}: request failed ({})", url_,
                   res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error()));
      return std::nullopt;
    }
    auto parsed = json::parse(res->body);
    if (!parsed.contains("score") || !parsed["score"].is_number()) return std::nullopt;
    double v = parsed["score"].get<double>();
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception& e) {
    spdlog::warn("external scorer {}: {}", url_, e.what());
    return std::nullopt;
  }
}

// ---- reports -------------------------------------------------------------------

void EvalReport::recompute() {
  n = records.size();
  std::size_t hits = 0, n_fcr = 0, n_ext = 0;
  double sum_fcr = 0.0, sum_ext = 0.0;
  for (const auto& r : records) {
    hits += r.em ? 1 : 0;
    if (r.fcr) {
      sum_fcr += *r.fcr;
      ++n_fcr;
    }
    if (r.external) {
      sum_ext += *r.external;
      ++n_ext;
    }
  }
  accuracy = n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
  mean_fcr = n_fcr == 0 ? std::nullopt : std::optional<double>(sum_fcr / static_cast<double>(n_fcr));
  mean_external = n_ext == 0 ? std::nullopt : std::optional<double>(sum_ext / static_cast<double>(n_ext));
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

json to_json(const EvalReport& r) {
  json records = json::array();
  for (const auto& e : r.records) {
    records.push_back({{"id", e.id},
                       {"prediction", e.prediction},
                       {"gold", e.gold},
                       {"em", e.em},
                       {"fcr", opt(e.fcr)},
                       {"external", opt(e.external)}});
  }
  return {{"n", r.n},
          {"accuracy", r.accuracy},
          {"mean_fcr", opt(r.mean_fcr)},
          {"mean_external", opt(r.mean_external)},
          {"external_missing", r.external_missing},
          {"fcr_formula", r.fcr_formula},
          {"meta", r.meta},
          {"records", records}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    for (const auto& e : j.at("records")) {
      r.records.push_back({e.at("id").get<std::string>(), e.at("prediction").get<std::string>(),
                           e.at("gold").get<std::string>(), e.at("em").get<bool>(), opt_from(e, "fcr"),
                           opt_from(e, "external")});
    }
    r.n = j.at("n").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.mean_fcr = opt_from(j, "mean_fcr");
    r.mean_external = opt_from(j, "mean_external");
    r.external_missing = j.value("external_missing", std::size_t{0});
    r.fcr_formula = j.value("fcr_formula", std::string(kFcrFormula));
    r.meta = j.value("meta", json::object());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("eval report: ") + e.what());
  }
  return r;
}

std::string render_table(const EvalReport& r) {
  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return std::string(buf);
  };
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %4s %8s %10s\n", "id", "EM", "FCR(%)", "External");
  out << line;
  for (const auto& e : r.records) {
    std::string id = e.id.size() > 20 ? e.id.substr(0, 17) + "..." : e.id;
    std::snprintf(line, sizeof line, "%-20s %4s %8s %10s\n", id.c_str(), e.em ? "1" : "0",
                  pct(e.fcr).c_str(), num(e.external).c_str());
    out << line;
  }
  std::snprintf(line, sizeof line, "%-20s %4s %8s %10s\n", "----", "----", "------", "--------");
  out << line;
  std::snprintf(line, sizeof line, "n=%zu  accuracy=%s%%  mean FCR=%s%%  external=%s  (missing %zu)\n", r.n,
                pct(r.accuracy).c_str(), pct(r.mean_fcr).c_str(), num(r.mean_external).c_str(),
                r.external_missing);
  out << line;
  return out.str();
}

EvalReport evaluate_run(const std::vector<Prediction>& predictions, const Dataset& data,
                        const std::map<std::string, KeywordSpec>& specs, const ExternalScorer* scorer,
                        std::size_t threads) {
  if (predictions.empty()) throw Error(ErrorCode::IdMismatch, "evaluate: prediction set is empty");
  std::map<std::string, const TrainingExample*> by_id;
  for (const auto& e : data) by_id.emplace(e.id, &e);
  std::set<std::string> seen;
  for (const auto& p : predictions) {
    if (!by_id.count(p.id)) throw Error(ErrorCode::IdMismatch, "evaluate: prediction id '" + p.id + "' not in dataset");
    if (!seen.insert(p.id).second) throw Error(ErrorCode::IdMismatch, "evaluate: duplicate prediction id '" + p.id + "'");
  }
  for (const auto& [id, spec] : specs) spec.validate();

  EvalReport report;
  report.records.resize(predictions.size());
  parallel_for(predictions.size(), threads, [&](std::size_t i) {
    const auto& p = predictions[i];
    const auto& ex = *by_id.at(p.id);
    EvalRecord rec;
    rec.id = p.id;
    rec.prediction = p.prediction;
    rec.gold = ex.correct_answer;
    rec.em = exact_match(p.prediction, ex.correct_answer);
    if (auto it = specs.find(p.id); it != specs.end()) rec.fcr = fcr(p.prediction, it->second);
    if (scorer) rec.external = scorer->score(ex.question, p.prediction);
    report.records[i] = std::move(rec);
  });
  if (scorer) {
    report.external_missing = static_cast<std::size_t>(std::count_if(
        report.records.begin(), report.records.end(), [](const EvalRecord& r) { return !r.external; }));
    report.meta["external_scorer"] = scorer->name();
  }
  report.recompute();
  return report;
}

}  // namespace dscc
