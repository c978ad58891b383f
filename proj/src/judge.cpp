#include "metaspatial/judge.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>

#include "judge_prompt.hpp"
#include "metaspatial/version.hpp"

namespace metaspatial {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::realism: return "realism";
    case Criterion::functionality: return "functionality";
    case Criterion::layout: return "layout";
    case Criterion::color_scheme: return "color_scheme";
    case Criterion::aesthetic: return "aesthetic";
  }
  return "?";
}

std::string_view to_string(RenderSource s) {
  return s == RenderSource::remote_judge ? "remote_judge" : "stub";
}

RenderReward render_reward(const JudgeGrades& grades, RenderSource source) {
  int sum = 0;
  for (const auto& g : grades.grades) sum += g.value_or(kUnknownGradeValue);
  return {static_cast<double>(sum) / 50.0, grades, source};
}

JudgeGrades stub_grades(double collision_ratio, double constraint_ratio, int color_scheme) {
  auto grade = [](double v) { return static_cast<int>(std::clamp<long>(std::lround(10.0 * v), 1, 10)); };
  JudgeGrades g;
  const int realism = grade(1.0 - collision_ratio);
  const int functionality = grade(1.0 - constraint_ratio);
  const int layout = grade(1.0 - 0.5 * collision_ratio - 0.5 * constraint_ratio);
  g[Criterion::realism] = realism;
  g[Criterion::functionality] = functionality;
  g[Criterion::layout] = layout;
  g[Criterion::color_scheme] = color_scheme;
  g[Criterion::aesthetic] =
      static_cast<int>(std::lround(static_cast<double>(realism + functionality + layout) / 3.0));
  return g;
}

const std::string& default_judge_prompt_template() {
  static const std::string tmpl = detail::kJudgePromptTemplate;
  return tmpl;
}

std::string default_example_json() {
  JudgeGrades example;
  for (auto c : kCriteria) example[c] = 7;
  return grades_to_json(example).dump();
}

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string letters_lower(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

// Canonical keys plus the long criterion titles a free-form judge tends to echo.
std::optional<Criterion> criterion_for_key(std::string_view key) {
  const std::string k = letters_lower(key);
  if (k.starts_with("realism")) return Criterion::realism;
  if (k.starts_with("functionality")) return Criterion::functionality;
  if (k.starts_with("layout")) return Criterion::layout;
  if (k.starts_with("color") || k.starts_with("colour")) return Criterion::color_scheme;
  if (k.starts_with("aesthetic") || k.starts_with("overall")) return Criterion::aesthetic;
  return std::nullopt;
}

std::optional<int> grade_value(const nlohmann::json& v, std::string_view raw) {
  if (v.is_object()) {
    if (auto it = v.find("grade"); it != v.end()) return grade_value(*it, raw);
    throw JudgeResponseError("judge grade object has no 'grade' field", std::string(raw));
  }
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (letters_lower(s) == "unknown") return std::nullopt;
    char* end = nullptr;
    const long n = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0' || n < 1 || n > 10) {
      throw JudgeResponseError("judge grade '" + s + "' is not 1..10 or unknown", std::string(raw));
    }
    return static_cast<int>(n);
  }
  if (v.is_number()) {
    const double d = v.get<double>();
    if (d != std::floor(d) || d < 1 || d > 10) {
      throw JudgeResponseError("judge grade " + v.dump() + " is not an integer in 1..10",
                               std::string(raw));
    }
    return static_cast<int>(d);
  }
  if (v.is_null()) return std::nullopt;
  throw JudgeResponseError("judge grade has unsupported type", std::string(raw));
}

std::optional<JudgeGrades> grades_from_object(const nlohmann::json& obj, std::string_view raw) {
  JudgeGrades g;
  std::array<bool, 5> seen{};
  for (const auto& [key, value] : obj.items()) {
    auto c = criterion_for_key(key);
    if (!c) continue;
    g[*c] = grade_value(value, raw);
    seen[static_cast<std::size_t>(*c)] = true;
  }
  if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return g;
  return std::nullopt;
}

JudgeGrades parse_judge_text(std::string_view text, std::string_view raw, int depth) {
  auto doc = nlohmann::json::parse(text, nullptr, false);
  if (!doc.is_discarded() && doc.is_object()) {
    if (auto g = grades_from_object(doc, raw)) return *g;
    // Chat-completion envelope.
    if (depth == 0 && doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
      const auto& msg = doc["choices"][0];
      if (msg.contains("message") && msg["message"].contains("content") &&
          msg["message"]["content"].is_string()) {
        return parse_judge_text(msg["message"]["content"].get<std::string>(), raw, depth + 1);
      }
    }
  }
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (doc.is_discarded() && open != std::string_view::npos && close != std::string_view::npos &&
      close > open && depth < 2) {
    return parse_judge_text(text.substr(open, close - open + 1), raw, depth + 1);
  }
  throw JudgeResponseError("judge response does not contain five grades", std::string(raw));
}

}  // namespace

std::string render_judge_prompt(std::string_view tmpl, std::string_view user_preference,
                                std::string_view example_json) {
  std::string out(tmpl);
  replace_all(out, "{user_preference}", user_preference);
  replace_all(out, "{example_json}", example_json);
  return out;
}

JudgeGrades parse_judge_response(std::string_view body) {
  return parse_judge_text(body, body, 0);
}

nlohmann::json grades_to_json(const JudgeGrades& g) {
  nlohmann::json j = nlohmann::json::object();
  for (auto c : kCriteria) {
    const auto& v = g[c];
    j[std::string(to_string(c))] = v ? nlohmann::json(*v) : nlohmann::json("unknown");
  }
  return j;
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host:port
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw EngineError("judge endpoint is not an http(s) URL: " + url);
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

JudgeGrades query_remote(const JudgeRequest& request, const JudgeConfig& config) {
  const Endpoint ep = split_endpoint(config.endpoint);
  httplib::Client client(ep.base);
  const auto timeout = std::chrono::duration<double>(config.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  httplib::Headers headers;
  if (const char* key = std::getenv(config.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const std::string& tmpl =
      config.prompt_template.empty() ? default_judge_prompt_template() : config.prompt_template;
  httplib::MultipartFormDataItems items{
      {"prompt", render_judge_prompt(tmpl, request.user_preference, default_example_json()), "", "text/plain"}};
  if (request.image) items.push_back({"image", *request.image, "render.png", "image/png"});
  if (request.stats) {
    items.push_back({"layout_stats",
                     nlohmann::json{{"collision_ratio", request.stats->collision_ratio},
                                    {"constraint_ratio", request.stats->constraint_ratio}}
                         .dump(),
                     "", "application/json"});
  }

  std::string last_cause;
  double backoff = config.backoff_initial_s;
  const int attempts = 1 + std::max(0, config.retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
    auto res = client.Post(ep.path, headers, items);
    if (!res) {
      last_cause = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_cause = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw JudgeResponseError("judge returned HTTP " + std::to_string(res->status), res->body);
    }
    JudgeGrades g = parse_judge_response(res->body);
    if (config.color_scheme_override) g[Criterion::color_scheme] = *config.color_scheme_override;
    return g;
  }
  throw EngineError("judge request to " + config.endpoint + " failed after " +
                    std::to_string(attempts) + " attempt(s): " + last_cause);
}

}  // namespace

JudgeGrades query_judge(const JudgeRequest& request, const JudgeConfig& config) {
  if (config.mode == JudgeMode::remote) return query_remote(request, config);
  if (!request.stats) throw std::invalid_argument("stub judge needs layout statistics");
  return stub_grades(request.stats->collision_ratio, request.stats->constraint_ratio,
                     config.stub_color_scheme);
}

struct JudgeStubServer::Impl {
  httplib::Server server;
  int color_scheme = 8;
  std::atomic<bool> listening{false};
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
}

std::optional<LayoutStats> stats_from_json(const nlohmann::json& j) {
  if (!j.is_object()) return std::nullopt;
  LayoutStats s;
  for (auto [key, field] : {std::pair{"collision_ratio", &s.collision_ratio},
                            std::pair{"constraint_ratio", &s.constraint_ratio}}) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) return std::nullopt;
    *field = it->get<double>();
    if (!(*field >= 0.0 && *field <= 1.0)) return std::nullopt;
  }
  return s;
}

}  // namespace

JudgeStubServer::JudgeStubServer(int color_scheme) : impl_(std::make_unique<Impl>()) {
  impl_->color_scheme = color_scheme;
  auto& srv = impl_->server;
  // httplib's default adds SO_REUSEPORT, which lets a second stub share a busy port silently
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"status", "ok"}, {"version", kVersion}}.dump(),
                    "application/json");
  });
  srv.Post("/v1/judge", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json stats_doc;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("layout_stats")) {
        send_error(res, 400, "missing 'layout_stats' part");
        return;
      }
      stats_doc = nlohmann::json::parse(req.get_file_value("layout_stats").content, nullptr, false);
    } else {
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (!body.is_discarded() && body.is_object() && body.contains("layout_stats")) {
        stats_doc = body["layout_stats"];
      } else {
        stats_doc = nlohmann::json::value_t::discarded;
      }
    }
    const auto stats = stats_doc.is_discarded() ? std::nullopt : stats_from_json(stats_doc);
    if (!stats) {
      send_error(res, 400, "layout_stats must be {collision_ratio, constraint_ratio} in [0, 1]");
      return;
    }
    const auto grades = stub_grades(stats->collision_ratio, stats->constraint_ratio, impl_->color_scheme);
    res.set_content(grades_to_json(grades).dump(), "application/json");
  });
}

JudgeStubServer::~JudgeStubServer() { stop(); }

int JudgeStubServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw EngineError("cannot bind judge stub to " + host + ":" + std::to_string(port));
  return bound;
}

void JudgeStubServer::listen() {
  impl_->listening = true;
  impl_->server.listen_after_bind();
}

void JudgeStubServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

void JudgeStubServer::stop() {
  if (!impl_) return;
  // A stop racing a listen() that has not started accepting yet would be lost.
  if (impl_->listening) impl_->server.wait_until_ready();
  impl_->server.stop();
}

}  // namespace metaspatial
