#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "metaspatial/errors.hpp"
#include "metaspatial/layout.hpp"

namespace metaspatial {

enum class Criterion : std::size_t {
  realism = 0,
  functionality = 1,
  layout = 2,
  color_scheme = 3,
  aesthetic = 4,
};

inline constexpr std::array<Criterion, 5> kCriteria{
    Criterion::realism, Criterion::functionality, Criterion::layout, Criterion::color_scheme,
    Criterion::aesthetic};

std::string_view to_string(Criterion c);

// Each grade is 1..10, or nullopt for "unknown".
struct JudgeGrades {
  std::array<std::optional<int>, 5> grades;

  std::optional<int>& operator[](Criterion c) { return grades[static_cast<std::size_t>(c)]; }
  const std::optional<int>& operator[](Criterion c) const {
    return grades[static_cast<std::size_t>(c)];
  }
  friend bool operator==(const JudgeGrades&, const JudgeGrades&) = default;
};

inline constexpr int kUnknownGradeValue = 5;

enum class RenderSource { remote_judge, stub };

std::string_view to_string(RenderSource s);

struct RenderReward {
  double value = 0.0;
  JudgeGrades grades;
  RenderSource source = RenderSource::stub;
};

RenderReward render_reward(const JudgeGrades& grades, RenderSource source = RenderSource::stub);

// Offline judge: grades derived from layout statistics.
JudgeGrades stub_grades(double collision_ratio, double constraint_ratio, int color_scheme = 8);

enum class JudgeMode { stub, remote };

struct JudgeConfig {
  JudgeMode mode = JudgeMode::stub;
  std::string endpoint = "http://127.0.0.1:8765/v1/judge";
  double timeout_s = 60.0;
  int retries = 3;
  double backoff_initial_s = 0.5;
  int stub_color_scheme = 8;
  std::optional<int> color_scheme_override;  // applied to remote grades
  std::string api_key_env = "METASPATIAL_JUDGE_API_KEY";
  std::string prompt_template;  // empty: built-in template
};

const std::string& default_judge_prompt_template();
std::string default_example_json();
std::string render_judge_prompt(std::string_view tmpl, std::string_view user_preference,
                                std::string_view example_json);

// Accepts a bare grade object, a chat-completion envelope, or free text
// containing one JSON object. Throws JudgeResponseError on anything else.
JudgeGrades parse_judge_response(std::string_view body);

nlohmann::json grades_to_json(const JudgeGrades& g);

class JudgeResponseError : public EngineError {
 public:
  JudgeResponseError(const std::string& what, std::string raw_body)
      : EngineError(what), raw_body_(std::move(raw_body)) {}
  const std::string& raw_body() const noexcept { return raw_body_; }

 private:
  std::string raw_body_;
};

struct LayoutStats {
  double collision_ratio = 0.0;
  double constraint_ratio = 0.0;
};

struct JudgeRequest {
  std::string user_preference;
  std::optional<std::string> image;  // encoded render; nullopt on the no-image path
  std::optional<LayoutStats> stats;
};

// Render hook. Returning nullopt sends the request without an image.
using ImageProvider =
    std::function<std::optional<std::string>(const SceneTask&, const Layout&)>;

// Blocking; remote transport failures are retried with exponential backoff and
// then reported as EngineError carrying the last cause.
JudgeGrades query_judge(const JudgeRequest& request, const JudgeConfig& config);

// Local judge speaking the same wire protocol, answering with stub grades.
//   POST /v1/judge   multipart (prompt, image?, layout_stats) or JSON {layout_stats}
//   GET  /health
class JudgeStubServer {
 public:
  explicit JudgeStubServer(int color_scheme = 8);
  ~JudgeStubServer();
  JudgeStubServer(const JudgeStubServer&) = delete;
  JudgeStubServer& operator=(const JudgeStubServer&) = delete;

  // Port 0 picks a free port. Returns the bound port, throws EngineError on failure.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  // Returns once listen() accepts connections (or has returned).
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace metaspatial
