#include "rlar/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "rlar/error.hpp"
#include "rlar/serialization.hpp"
#include "rlar/verifiers.hpp"

namespace rlar {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Loads the tool module, routes its prints to stderr and emits exactly one
// {"score": x} line on the real stdout.
constexpr std::string_view kDriverSource = R"PY(import importlib.util
import json
import math
import numbers
import sys


def main():
    path, entry = sys.argv[1], sys.argv[2]
    real_stdout = sys.stdout
    sys.stdout = sys.stderr
    try:
        spec = importlib.util.spec_from_file_location("reward_tool", path)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
    except BaseException as exc:
        print("load failed: %r" % (exc,), file=sys.stderr)
        return 3
    fn = getattr(module, entry, None)
    if not callable(fn):
        print("entry function %s not found" % entry, file=sys.stderr)
        return 4
    request = json.loads(sys.stdin.readline())
    value = fn(request["prompt"], request["response"], request["reference"])
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        print("non-numeric score: %r" % (value,), file=sys.stderr)
        return 5
    value = float(value)
    if not math.isfinite(value):
        print("non-finite score: %r" % (value,), file=sys.stderr)
        return 6
    real_stdout.write(json.dumps({"score": value}) + "\n")
    real_stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
)PY";

class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "rlar-sandbox-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) {
      fail(ErrorCode::kSandboxUnavailable, "cannot create sandbox directory");
    }
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& other) noexcept : fd_(other.release()) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = other.release();
    }
    return *this;
  }

  int get() const { return fd_; }
  int release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    fail(ErrorCode::kSandboxUnavailable, "pipe() failed: " + std::string(std::strerror(errno)));
  }
  return {Fd(fds[0]), Fd(fds[1])};
}

void ignore_sigpipe_once() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

}  // namespace

std::vector<std::string> split_command(std::string_view command) {
  std::vector<std::string> parts;
  std::istringstream in{std::string(command)};
  for (std::string part; in >> part;) parts.push_back(part);
  return parts;
}

ProcessSandbox::ProcessSandbox() : ProcessSandbox(Options{}) {}

ProcessSandbox::ProcessSandbox(Options options) : options_(std::move(options)) {
  if (options_.interpreter.empty()) {
    fail(ErrorCode::kInvalidArgument, "sandbox interpreter command is empty");
  }
  ignore_sigpipe_once();
}

bool ProcessSandbox::available() {
  try {
    SandboxRequest probe;
    probe.args = {"-c", "pass"};
    probe.timeout = std::chrono::seconds(10);
    const auto result = run(probe);
    return !result.timed_out && result.exit_code == 0;
  } catch (const Error&) {
    return false;
  }
}

SandboxResult ProcessSandbox::run(const SandboxRequest& request) {
  TempDir dir;
  for (const auto& file : request.files) {
    std::ofstream out(dir.path() / file.name, std::ios::binary);
    out << file.content;
    if (!out) fail(ErrorCode::kSandboxUnavailable, "cannot stage sandbox file " + file.name);
  }

  std::vector<std::string> argv_storage = options_.interpreter;
  argv_storage.insert(argv_storage.end(), request.args.begin(), request.args.end());
  std::vector<char*> argv;
  for (auto& arg : argv_storage) argv.push_back(arg.data());
  argv.push_back(nullptr);
  const std::string workdir = dir.path().string();
  const rlim_t mem_limit = static_cast<rlim_t>(options_.memory_limit_bytes);

  auto [stdin_r, stdin_w] = make_pipe();
  auto [stdout_r, stdout_w] = make_pipe();
  auto [stderr_r, stderr_w] = make_pipe();
  auto [exec_r, exec_w] = make_pipe();

  const auto started = Clock::now();
  const pid_t pid = ::fork();
  if (pid < 0) fail(ErrorCode::kSandboxUnavailable, "fork() failed");
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(stdin_r.get(), STDIN_FILENO);
    ::dup2(stdout_w.get(), STDOUT_FILENO);
    ::dup2(stderr_w.get(), STDERR_FILENO);
    if (::chdir(workdir.c_str()) != 0) ::_exit(126);
    if (mem_limit > 0) {
      rlimit lim{mem_limit, mem_limit};
      ::setrlimit(RLIMIT_AS, &lim);
    }
    rlimit no_core{0, 0};
    ::setrlimit(RLIMIT_CORE, &no_core);
    ::signal(SIGPIPE, SIG_DFL);
    ::execvp(argv[0], argv.data());
    const int err = errno;
    [[maybe_unused]] auto n = ::write(exec_w.get(), &err, sizeof(err));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  stdin_r.reset();
  stdout_w.reset();
  stderr_w.reset();
  exec_w.reset();

  int exec_errno = 0;
  if (::read(exec_r.get(), &exec_errno, sizeof(exec_errno)) == sizeof(exec_errno)) {
    int status;
    ::waitpid(pid, &status, 0);
    fail(ErrorCode::kSandboxUnavailable,
         "cannot launch '" + argv_storage.front() + "': " + std::strerror(exec_errno));
  }

  for (int fd : {stdin_w.get(), stdout_r.get(), stderr_r.get()}) {
    ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);
  }

  SandboxResult result;
  const auto deadline = started + request.timeout;
  std::size_t written = 0;
  if (request.stdin_data.empty()) stdin_w.reset();
  bool killed = false;
  auto kill_group = [&] {
    if (!killed) ::kill(-pid, SIGKILL);
    killed = true;
  };

  char buf[8192];
  while (stdout_r.get() >= 0 || stderr_r.get() >= 0) {
    const auto now = Clock::now();
    if (now >= deadline) {
      result.timed_out = true;
      kill_group();
      break;
    }
    const auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
    pollfd fds[3];
    nfds_t n = 0;
    Fd* owners[3];
    auto add = [&](Fd& fd, short events) {
      if (fd.get() < 0) return;
      fds[n] = pollfd{fd.get(), events, 0};
      owners[n++] = &fd;
    };
    add(stdin_w, POLLOUT);
    add(stdout_r, POLLIN);
    add(stderr_r, POLLIN);
    const int ready = ::poll(fds, n, static_cast<int>(std::max<long long>(1, wait_ms.count())));
    if (ready < 0 && errno != EINTR) break;
    for (nfds_t i = 0; i < n && ready > 0; ++i) {
      if (fds[i].revents == 0) continue;
      Fd& fd = *owners[i];
      if (&fd == &stdin_w) {
        const auto w = ::write(fd.get(), request.stdin_data.data() + written,
                               request.stdin_data.size() - written);
        if (w > 0) written += static_cast<std::size_t>(w);
        if (w < 0 && errno != EAGAIN) fd.reset();
        if (written >= request.stdin_data.size()) fd.reset();
        continue;
      }
      const auto r = ::read(fd.get(), buf, sizeof(buf));
      if (r > 0) {
        std::string& sink = &fd == &stdout_r ? result.stdout_data : result.stderr_data;
        sink.append(buf, static_cast<std::size_t>(r));
        if (sink.size() > options_.max_output_bytes) {
          result.output_truncated = true;
          kill_group();
          fd.reset();
        }
      } else if (r == 0 || errno != EAGAIN) {
        fd.reset();
      }
    }
  }

  int status = 0;
  while (true) {
    const pid_t done = ::waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0 && errno != EINTR) break;
    if (Clock::now() >= deadline) {
      result.timed_out = result.timed_out || !killed;
      kill_group();
      ::waitpid(pid, &status, 0);
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  // Reap stragglers left in the group (e.g. grandchildren of a killed script).
  ::kill(-pid, SIGKILL);

  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  if (result.output_truncated && result.exit_code == 0) result.exit_code = -1;
  result.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - started);
  return result;
}

std::string sandbox_request_line(const ContextTriplet& t) {
  Json line{{"prompt", t.query},
            {"response", t.response},
            {"reference", t.reference ? Json(*t.reference) : Json(nullptr)}};
  return line.dump() + "\n";
}

namespace {

std::string tail(std::string_view text, std::size_t n = 400) {
  return std::string(text.size() > n ? text.substr(text.size() - n) : text);
}

}  // namespace

Score run_sandbox(const SynthesizedScript& script, const ContextTriplet& t,
                  std::chrono::milliseconds timeout, SandboxClient& sandbox) {
  SandboxRequest request;
  request.files = {{"driver.py", std::string(kDriverSource)}, {"tool.py", script.source}};
  request.args = {"driver.py", "tool.py", script.entry_function};
  request.stdin_data = sandbox_request_line(t);
  request.timeout = timeout;

  const auto result = sandbox.run(request);
  if (result.timed_out) {
    fail(ErrorCode::kTimeout, "script '" + script.entry_function + "' exceeded " +
                                  std::to_string(timeout.count()) + " ms");
  }
  if (result.exit_code != 0) {
    fail(ErrorCode::kScriptError, "script exited with code " + std::to_string(result.exit_code) +
                                      ": " + tail(result.stderr_data));
  }
  std::string_view out = result.stdout_data;
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.remove_suffix(1);
  if (out.empty() || out.find('\n') != std::string_view::npos) {
    fail(ErrorCode::kScriptError, "script must print exactly one JSON line");
  }
  Json parsed;
  try {
    parsed = Json::parse(out);
  } catch (const Json::parse_error&) {
    fail(ErrorCode::kScriptError, "script output is not JSON: " + tail(out));
  }
  if (!parsed.is_object() || !parsed.contains("score") || !parsed["score"].is_number()) {
    fail(ErrorCode::kScriptError, "script output lacks a numeric score: " + tail(out));
  }
  const double value = parsed["score"].get<double>();
  if (!std::isfinite(value)) fail(ErrorCode::kScriptError, "script returned a non-finite score");
  if (value >= 0.0 && value <= 1.0) return Score::unit(value, value);
  return Score::logit(value);
}

std::string normalize_program_output(std::string_view text) {
  std::string out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
      line.remove_suffix(1);
    }
    out.append(line);
    out.push_back('\n');
    start = end + 1;
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

CodeGrade reward_code(const ContextTriplet& t, const UnitTestSuite& suite, SandboxClient& sandbox) {
  if (suite.cases.empty()) fail(ErrorCode::kInvalidArgument, "unit test suite has no cases");
  CodeGrade grade{Score::unit(0.0), false, 0, ""};
  const auto code = extract_last_code_block(t.response);
  if (!code) {
    grade.detail = "no fenced code block in response";
    return grade;
  }
  std::string program = *code;
  if (!suite.program_text.empty()) program += "\n\n" + suite.program_text + "\n";

  for (std::size_t i = 0; i < suite.cases.size(); ++i) {
    SandboxRequest request;
    request.files = {{"solution.py", program}};
    request.args = {"solution.py"};
    request.stdin_data = suite.cases[i].input;
    request.timeout = suite.timeout;
    const auto result = sandbox.run(request);
    if (result.timed_out) {
      grade.timed_out = true;
      grade.detail = "case " + std::to_string(i) + " timed out";
      return grade;
    }
    if (result.exit_code != 0) {
      grade.detail = "case " + std::to_string(i) + " exited with code " +
                     std::to_string(result.exit_code);
      return grade;
    }
    if (normalize_program_output(result.stdout_data) !=
        normalize_program_output(suite.cases[i].expected)) {
      grade.detail = "case " + std::to_string(i) + " output mismatch";
      return grade;
    }
    ++grade.cases_passed;
  }
  grade.score = Score::unit(1.0);
  grade.detail = "all cases passed";
  return grade;
}

}  // namespace rlar
