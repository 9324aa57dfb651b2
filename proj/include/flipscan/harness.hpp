#pragma once

// Sandboxed single execution of a (possibly corrupted) victim binary.

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <sys/personality.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "flipscan/error.hpp"

namespace flipscan {

struct ExecSpec {
  std::filesystem::path binary_path;
  std::vector<std::string> argv;  // arguments after argv[0]
  std::string stdin_payload;
  std::uint32_t timeout_ms = 1000;
  std::uint64_t memory_cap = 256ULL << 20;
  std::filesystem::path workdir;  // empty: a fresh temporary directory is created
  bool keep_artifacts = false;
  bool isolate_network = false;  // unshare(CLONE_NEWNET) when permitted
  bool fixed_layout = true;      // personality(ADDR_NO_RANDOMIZE)
};

enum class RunStatus : std::uint8_t { Exited, Signaled, TimedOut, LaunchFailed };

struct RawOutcome {
  RunStatus status = RunStatus::LaunchFailed;
  int code = 0;  // exit code, signal number, or errno for LaunchFailed
  std::string stdout_data;
  std::string stderr_data;
  double wall_ms = 0;

  bool operator==(const RawOutcome& o) const {
    return status == o.status && code == o.code && stdout_data == o.stdout_data && stderr_data == o.stderr_data;
  }
};

enum class RunClass : std::uint8_t { Completed, Crashed };

/// Malformed output counts as a crash: a vulnerable flip must yield usable output.
inline RunClass classify_raw(const RawOutcome& out, bool parse_ok) {
  if (out.status == RunStatus::Exited && out.code == 0 && parse_ok) return RunClass::Completed;
  return RunClass::Crashed;
}

/// Compact status used in campaign logs: "exit0", "sig11", "timeout", "launch".
inline std::string status_token(const RawOutcome& out) {
  switch (out.status) {
    case RunStatus::Exited: return "exit" + std::to_string(out.code);
    case RunStatus::Signaled: return "sig" + std::to_string(out.code);
    case RunStatus::TimedOut: return "timeout";
    case RunStatus::LaunchFailed: return "launch";
  }
  return "launch";
}

inline constexpr std::uint32_t kTimeoutGraceMs = 500;
inline constexpr std::size_t kMaxCapturedBytes = 64ULL << 20;

namespace detail {

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd(std::exchange(o.fd, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd = std::exchange(o.fd, -1);
    return *this;
  }
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

inline std::array<Fd, 2> make_pipe() {
  int p[2];
  if (::pipe2(p, O_CLOEXEC) != 0) throw Error(Errc::Io, "pipe2 failed");
  return {Fd(p[0]), Fd(p[1])};
}

inline std::filesystem::path make_temp_dir(const char* stem) {
  auto tmpl = (std::filesystem::temp_directory_path() / (std::string(stem) + "XXXXXX")).string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw Error(Errc::Io, "mkdtemp failed");
  return tmpl;
}

// Child side of fork: only async-signal-safe calls until execv.
[[noreturn]] inline void exec_child(const ExecSpec& spec, char* const* argv, int in_fd, int out_fd, int err_fd,
                                    int report_fd) {
  ::setpgid(0, 0);
  if (spec.isolate_network) ::unshare(CLONE_NEWNET);
  if (spec.fixed_layout) ::personality(ADDR_NO_RANDOMIZE);
  rlimit core{0, 0};
  ::setrlimit(RLIMIT_CORE, &core);
  if (spec.memory_cap != 0) {
    rlimit as{spec.memory_cap, spec.memory_cap};
    ::setrlimit(RLIMIT_AS, &as);
  }
  if (::chdir(spec.workdir.c_str()) != 0) {
    int e = errno;
    (void)!::write(report_fd, &e, sizeof e);
    ::_exit(127);
  }
  ::dup2(in_fd, 0);
  ::dup2(out_fd, 1);
  ::dup2(err_fd, 2);
  ::dup2(report_fd, 3);
  ::fcntl(3, F_SETFD, FD_CLOEXEC);
  ::close_range(4, ~0U, 0);
  ::execv(spec.binary_path.c_str(), argv);
  int e = errno;
  (void)!::write(3, &e, sizeof e);
  ::_exit(127);
}

}  // namespace detail

/// Runs the binary once, reaping it and its process group. Launch errors are
/// reported as RunStatus::LaunchFailed; only harness-side I/O failures throw.
inline RawOutcome run_once(const ExecSpec& spec_in) {
  using clock = std::chrono::steady_clock;
  static const bool sigpipe_ignored = [] { return ::signal(SIGPIPE, SIG_IGN) != SIG_ERR; }();
  (void)sigpipe_ignored;
  ExecSpec spec = spec_in;
  const bool own_workdir = spec.workdir.empty();
  if (own_workdir) spec.workdir = detail::make_temp_dir("flipscan-run-");
  else std::filesystem::create_directories(spec.workdir);

  std::vector<std::string> args;
  args.push_back(spec.binary_path.string());
  args.insert(args.end(), spec.argv.begin(), spec.argv.end());
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  RawOutcome out;
  const auto start = clock::now();
  pid_t pid = -1;
  detail::Fd in_w, out_r, err_r;

  // ETXTBSY happens when another thread's fork briefly inherited a write
  // descriptor to a freshly written binary; it clears as soon as that child execs.
  for (int attempt = 0;; ++attempt) {
    auto in = detail::make_pipe();
    auto so = detail::make_pipe();
    auto se = detail::make_pipe();
    auto report = detail::make_pipe();
    detail::Fd devnull(::open("/dev/null", O_RDONLY | O_CLOEXEC));
    const int child_in = spec.stdin_payload.empty() ? devnull.fd : in[0].fd;

    pid = ::fork();
    if (pid < 0) throw Error(Errc::Io, "fork failed");
    if (pid == 0) detail::exec_child(spec, argv.data(), child_in, so[1].fd, se[1].fd, report[1].fd);
    ::setpgid(pid, pid);
    report[1].reset();
    int child_errno = 0;
    ssize_t n;
    do n = ::read(report[0].fd, &child_errno, sizeof child_errno);
    while (n < 0 && errno == EINTR);
    if (n == static_cast<ssize_t>(sizeof child_errno)) {
      int st;
      ::waitpid(pid, &st, 0);
      if (child_errno == ETXTBSY && attempt < 200) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
        continue;
      }
      out.status = RunStatus::LaunchFailed;
      out.code = child_errno;
      out.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
      if (!spec.keep_artifacts) std::filesystem::remove_all(spec.workdir);
      return out;
    }
    in_w = std::move(in[1]);
    out_r = std::move(so[0]);
    err_r = std::move(se[0]);
    break;
  }

  if (spec.stdin_payload.empty()) in_w.reset();
  for (int fd : {in_w.fd, out_r.fd, err_r.fd})
    if (fd >= 0) ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);

  const auto deadline = start + std::chrono::milliseconds(spec.timeout_ms);
  std::size_t written = 0;
  bool timed_out = false;
  char buf[65536];
  while (out_r.fd >= 0 || err_r.fd >= 0) {
    const auto now = clock::now();
    if (now >= deadline) {
      timed_out = true;
      break;
    }
    std::vector<pollfd> fds;
    for (int fd : {out_r.fd, err_r.fd})
      if (fd >= 0) fds.push_back({fd, POLLIN, 0});
    if (in_w.fd >= 0) fds.push_back({in_w.fd, POLLOUT, 0});
    const auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count() + 1;
    const int r = ::poll(fds.data(), fds.size(), static_cast<int>(wait_ms));
    if (r < 0 && errno != EINTR) throw Error(Errc::Io, "poll failed");
    for (const auto& p : fds) {
      if (p.revents == 0) continue;
      if (p.fd == in_w.fd) {
        const ssize_t w = ::write(in_w.fd, spec.stdin_payload.data() + written, spec.stdin_payload.size() - written);
        if (w > 0) written += static_cast<std::size_t>(w);
        if (w < 0 && errno != EAGAIN) in_w.reset();
        if (written == spec.stdin_payload.size()) in_w.reset();
        continue;
      }
      const ssize_t rd = ::read(p.fd, buf, sizeof buf);
      std::string& sink = p.fd == out_r.fd ? out.stdout_data : out.stderr_data;
      if (rd > 0) {
        if (sink.size() < kMaxCapturedBytes) sink.append(buf, static_cast<std::size_t>(rd));
      } else if (rd == 0 || (errno != EAGAIN && errno != EINTR)) {
        (p.fd == out_r.fd ? out_r : err_r).reset();
      }
    }
  }

  int st = 0;
  if (!timed_out) {
    // Pipes closed; the child may still be running if it closed its stdout.
    while (true) {
      const pid_t w = ::waitpid(pid, &st, WNOHANG);
      if (w == pid) break;
      if (clock::now() >= deadline) {
        timed_out = true;
        break;
      }
      std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
  }
  if (timed_out) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &st, 0);
    out.status = RunStatus::TimedOut;
    out.code = 0;
  } else if (WIFEXITED(st)) {
    out.status = RunStatus::Exited;
    out.code = WEXITSTATUS(st);
  } else {
    out.status = RunStatus::Signaled;
    out.code = WTERMSIG(st);
  }
  ::kill(-pid, SIGKILL);  // stragglers in the group
  out.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
  if (!spec.keep_artifacts) std::filesystem::remove_all(spec.workdir);
  return out;
}

}  // namespace flipscan
