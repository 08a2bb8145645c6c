#pragma once

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "stemscribe/error.hpp"

extern char** environ;

// MIDI -> sheet music through an external MuseScore binary.
namespace stemscribe::notation {

namespace fs = std::filesystem;

inline constexpr const char* kExecutableEnv = "MUSESCORE_PATH";
inline constexpr const char* kExecutableName = "mscore";
inline constexpr std::chrono::milliseconds kDefaultTimeout{120000};

struct NotationJob {
  fs::path midi_path;
  fs::path output_path;
  fs::path executable;

  void validate() const {
    if (!fs::is_regular_file(midi_path))
      throw Error(ErrorCode::kFileNotFound, midi_path.string());
    const std::string ext = output_path.extension().string();
    if (ext != ".pdf" && ext != ".musicxml" && ext != ".png")
      throw Error(ErrorCode::kInvalidArgument,
                  "output must end in .pdf, .musicxml or .png: " + output_path.string());
  }
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr) return std::nullopt;
  return std::string(v);
}

inline bool is_executable_file(const fs::path& p) {
  std::error_code ec;
  return fs::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
}

// Explicit path, then $MUSESCORE_PATH, then `mscore` on $PATH.
inline fs::path resolve_executable(const EnvLookup& env,
                                   const std::optional<fs::path>& explicit_path = std::nullopt) {
  if (explicit_path && is_executable_file(*explicit_path)) return *explicit_path;
  const auto from_env = env(kExecutableEnv);
  if (from_env && !from_env->empty() && is_executable_file(*from_env)) return *from_env;
  if (const auto path = env("PATH")) {
    std::stringstream dirs(*path);
    std::string dir;
    while (std::getline(dirs, dir, ':')) {
      if (dir.empty()) continue;
      const fs::path candidate = fs::path(dir) / kExecutableName;
      if (is_executable_file(candidate)) return candidate;
    }
  }
  throw Error(ErrorCode::kExecutableNotFound,
              "probed explicit path '" + (explicit_path ? explicit_path->string() : "") +
                  "', $" + kExecutableEnv + "='" + from_env.value_or("") + "', '" +
                  kExecutableName + "' on $PATH");
}

inline fs::path resolve_executable(const std::optional<fs::path>& explicit_path = std::nullopt) {
  return resolve_executable(process_env, explicit_path);
}

inline std::vector<std::string> build_command(const NotationJob& job) {
  return {job.executable.string(), job.midi_path.string(), "-o", job.output_path.string()};
}

namespace detail {

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempFile {
  fs::path path;
  TempFile() {
    std::string tmpl = (fs::temp_directory_path() / "stemscribe-stderr-XXXXXX").string();
    const int fd = ::mkstemp(tmpl.data());
    if (fd < 0) throw Error(ErrorCode::kUnwritablePath, "cannot create temporary file");
    ::close(fd);
    path = tmpl;
  }
  ~TempFile() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

}  // namespace detail

// Runs the job; returns the output path once a nonempty file exists.
inline fs::path export_sheet(const NotationJob& job,
                             std::chrono::milliseconds timeout = kDefaultTimeout) {
  job.validate();
  if (!is_executable_file(job.executable))
    throw Error(ErrorCode::kExecutableNotFound, job.executable.string());

  const std::vector<std::string> args = build_command(job);
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  detail::TempFile err;
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, err.path.c_str(),
                                   O_WRONLY | O_TRUNC, 0600);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0)
    throw Error(ErrorCode::kExecutableNotFound,
                job.executable.string() + " could not be started");

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  for (;;) {
    const pid_t done = ::waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0) throw Error(ErrorCode::kProcessFailed, "waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      throw Error(ErrorCode::kTimeout, job.executable.string() + " exceeded " +
                                           std::to_string(timeout.count()) + " ms");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }

  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    const std::string how = WIFEXITED(status)
                                ? "exit code " + std::to_string(WEXITSTATUS(status))
                                : "signal " + std::to_string(WTERMSIG(status));
    throw Error(ErrorCode::kProcessFailed, how + ": " + detail::slurp(err.path));
  }
  std::error_code ec;
  if (!fs::is_regular_file(job.output_path, ec) || fs::file_size(job.output_path, ec) == 0)
    throw Error(ErrorCode::kOutputMissing, job.output_path.string());
  return job.output_path;
}

}  // namespace stemscribe::notation
