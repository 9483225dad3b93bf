#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <iostream>
#include <map>

#include "rfspmd/comm.hpp"
#include "rfspmd/error.hpp"

namespace rfspmd {

std::vector<int> launch(std::size_t n, const std::vector<std::string>& argv,
                        const LaunchOptions& options) {
  if (n == 0) throw InvalidArgument("launch: rank count must be >= 1");
  if (argv.empty()) throw InvalidArgument("launch: no program given");
  std::ostream& log = options.log ? *options.log : std::cerr;

  Listener listener(options.host, 0);
  const std::string addr = options.host + ":" + std::to_string(listener.port());

  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  // Inherited environment minus stale RF_SPMD_* entries, plus the group
  // settings shared by every rank.
  std::vector<std::string> base_env;
  for (char** e = environ; *e; ++e) {
    if (std::strncmp(*e, "RF_SPMD_", 8) != 0) base_env.emplace_back(*e);
  }
  base_env.push_back(std::string(kEnvSize) + "=" + std::to_string(n));
  base_env.push_back(std::string(kEnvAddr) + "=" + addr);
  base_env.push_back(std::string(kEnvTimeoutMs) + "=" + std::to_string(options.timeout.count()));

  const int null_fd = options.discard_stdout ? ::open("/dev/null", O_WRONLY | O_CLOEXEC) : -1;
  if (options.discard_stdout && null_fd < 0) {
    throw TransportError(std::string("launch: /dev/null: ") + std::strerror(errno));
  }

  std::map<pid_t, std::size_t> rank_of;
  std::vector<int> codes(n, -1);

  auto kill_all = [&] {
    for (auto& [pid, rank] : rank_of) ::kill(pid, SIGTERM);
  };

  for (std::size_t r = 0; r < n; ++r) {
    // Prepare everything the child needs before fork; only async-signal-safe
    // calls happen in the child.
    const std::string rank_s = std::to_string(r);
    const int listen_fd = listener.fd();
    std::vector<std::string> env_strings = base_env;
    env_strings.push_back(std::string(kEnvRank) + "=" + rank_s);
    if (r == 0) env_strings.push_back(std::string(kEnvListenFd) + "=" + std::to_string(listen_fd));
    std::vector<char*> envp;
    for (auto& e : env_strings) envp.push_back(e.data());
    envp.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) {
      const std::string err = std::strerror(errno);
      kill_all();
      for (auto& [p, rank] : rank_of) ::waitpid(p, nullptr, 0);
      if (null_fd >= 0) ::close(null_fd);
      throw TransportError("launch: fork failed for rank " + rank_s + ": " + err);
    }
    if (pid == 0) {
      if (r == 0) ::fcntl(listen_fd, F_SETFD, 0);  // rank 0 inherits the rendezvous socket
      if (null_fd >= 0) ::dup2(null_fd, 1);
      ::execvpe(cargv[0], cargv.data(), envp.data());
      const char msg[] = "rf launch: exec failed\n";
      [[maybe_unused]] auto w = ::write(2, msg, sizeof msg - 1);
      ::_exit(127);
    }
    rank_of[pid] = r;
  }
  ::close(listener.release());  // only rank 0 keeps the rendezvous socket
  if (null_fd >= 0) ::close(null_fd);

  bool failed = false;
  while (!rank_of.empty()) {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("launch: waitpid: ") + std::strerror(errno));
    }
    auto it = rank_of.find(pid);
    if (it == rank_of.end()) continue;
    const std::size_t rank = it->second;
    rank_of.erase(it);
    int code = 0;
    if (WIFEXITED(status)) {
      code = WEXITSTATUS(status);
      if (code != 0 && !failed) log << "rf launch: rank " << rank << " exited with status " << code << "\n";
    } else if (WIFSIGNALED(status)) {
      code = 128 + WTERMSIG(status);
      if (!failed) {
        log << "rf launch: rank " << rank << " crashed with signal " << WTERMSIG(status) << "\n";
      }
    }
    codes[rank] = code;
    if (code != 0 && !failed) {
      failed = true;
      kill_all();
    }
  }
  return codes;
}

}  // namespace rfspmd
