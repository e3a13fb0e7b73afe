// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/tool_backends.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <csignal>
#include <cstring>
#include <utility>

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

namespace kestrel
{

std::string_view to_string(ExitStatus status)
{
    switch (status)
    {
        case ExitStatus::ok: return "ok";
        case ExitStatus::error: return "error";
        case ExitStatus::timeout: return "timeout";
    }
    return "error";
}

namespace
{
    // Runs argv[1] after disabling the socket API. Executed with `python3 -I -c`.
    constexpr char const* python_wrapper = R"PY(
import sys, socket
def _deny(*args, **kwargs):
    raise OSError("network access is disabled in the sandbox")
class _DeniedSocket(socket.socket):
    def __init__(self, *args, **kwargs):
        _deny()
socket.socket = _DeniedSocket
socket.create_connection = _deny
socket.getaddrinfo = _deny
socket.socketpair = _deny
_src = sys.argv[1]
del sys.argv[1:]
exec(compile(_src, "<snippet>", "exec"), {"__name__": "__main__", "__builtins__": __builtins__})
)PY";

    constexpr int exec_failed_code = 127;
    constexpr char const* exec_failed_marker = "kestrel-sandbox: interpreter unavailable";
    constexpr std::size_t max_snippet_bytes = 100 * 1024;

    struct Pipe
    {
        int fds[2] { -1, -1 };

        Pipe()
        {
            if (::pipe2(fds, O_CLOEXEC) != 0)
                throw BackendError(fmt::format("sandbox pipe failed: {}", std::strerror(errno)));
        }
        ~Pipe()
        {
            close_read();
            close_write();
        }
        Pipe(Pipe const&) = delete;
        Pipe& operator=(Pipe const&) = delete;

        void close_read()
        {
            if (fds[0] >= 0)
                ::close(std::exchange(fds[0], -1));
        }
        void close_write()
        {
            if (fds[1] >= 0)
                ::close(std::exchange(fds[1], -1));
        }
    };

    [[noreturn]] void run_child(std::string const& snippet, Pipe& out, Pipe& err, SandboxLimits const& limits)
    {
        ::setpgid(0, 0);
        // A fresh user+network namespace leaves only a loopback-less stack. Best effort:
        // unprivileged namespaces may be disabled, the interpreter-level block still applies.
        (void) ::unshare(CLONE_NEWUSER | CLONE_NEWNET);

        auto const cpu_seconds = static_cast<rlim_t>(limits.wall_time.count() / 1000 + 2);
        rlimit cpu { cpu_seconds, cpu_seconds + 1 };
        ::setrlimit(RLIMIT_CPU, &cpu);
        rlimit mem { rlim_t { 1 } << 30, rlim_t { 1 } << 30 };
        ::setrlimit(RLIMIT_AS, &mem);
        rlimit fsize { rlim_t { 16 } << 20, rlim_t { 16 } << 20 };
        ::setrlimit(RLIMIT_FSIZE, &fsize);

        int const devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0)
            ::dup2(devnull, STDIN_FILENO);
        ::dup2(out.fds[1], STDOUT_FILENO);
        ::dup2(err.fds[1], STDERR_FILENO);

        char const* argv[] = { "python3", "-I", "-c", python_wrapper, snippet.c_str(), nullptr };
        ::execvp("python3", const_cast<char* const*>(argv));
        auto const written = ::write(STDERR_FILENO, exec_failed_marker, std::strlen(exec_failed_marker));
        (void) written;
        ::_exit(exec_failed_code);
    }
} // namespace

ExecResult code_exec(std::string_view snippet, SandboxLimits const& limits)
{
    if (snippet.find_first_not_of(" \t\r\n") == std::string_view::npos)
        throw PreconditionError("code_exec snippet must not be empty");
    if (snippet.size() > max_snippet_bytes)
        throw PreconditionError("code_exec snippet exceeds 100 KiB");
    if (snippet.find('\0') != std::string_view::npos)
        throw PreconditionError("code_exec snippet contains a NUL byte");

    std::string const source(snippet);
    Pipe out;
    Pipe err;

    auto const started = std::chrono::steady_clock::now();
    pid_t const pid = ::fork();
    if (pid < 0)
        throw BackendError(fmt::format("sandbox fork failed: {}", std::strerror(errno)));
    if (pid == 0)
        run_child(source, out, err, limits);

    ::setpgid(pid, pid);
    out.close_write();
    err.close_write();

    ExecResult result;
    auto const deadline = started + limits.wall_time;
    bool timed_out = false;
    std::array<pollfd, 2> fds { pollfd { out.fds[0], POLLIN, 0 }, pollfd { err.fds[0], POLLIN, 0 } };
    std::array<std::string*, 2> sinks { &result.stdout_text, &result.stderr_text };
    int open_streams = 2;
    char buffer[4096];

    while (open_streams > 0)
    {
        auto const now = std::chrono::steady_clock::now();
        if (now >= deadline)
        {
            timed_out = true;
            break;
        }
        auto const wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
        int const ready = ::poll(fds.data(), fds.size(), static_cast<int>(std::max<long>(1, wait_ms)));
        if (ready < 0)
        {
            if (errno == EINTR)
                continue;
            break;
        }
        for (std::size_t i = 0; i < fds.size(); ++i)
        {
            if (fds[i].fd < 0 || (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) == 0)
                continue;
            auto const n = ::read(fds[i].fd, buffer, sizeof buffer);
            if (n <= 0)
            {
                fds[i].fd = -1;
                --open_streams;
                continue;
            }
            auto& sink = *sinks[i];
            if (sink.size() < limits.output_bytes)
                sink.append(buffer, std::min<std::size_t>(static_cast<std::size_t>(n), limits.output_bytes - sink.size()));
        }
    }

    if (timed_out)
        ::kill(-pid, SIGKILL);

    int status = 0;
    while (true)
    {
        if (::waitpid(pid, &status, timed_out ? 0 : WNOHANG) == pid)
            break;
        if (std::chrono::steady_clock::now() >= deadline && !timed_out)
        {
            // Streams closed but the process lingers (daemonized children hold no pipes).
            timed_out = true;
            ::kill(-pid, SIGKILL);
        }
        else if (!timed_out)
            ::usleep(1000);
    }
    result.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);

    if (timed_out)
    {
        result.exit_status = ExitStatus::timeout;
        result.wall_time = std::max(result.wall_time, limits.wall_time);
        return result;
    }
    if (WIFEXITED(status) && WEXITSTATUS(status) == exec_failed_code
        && result.stderr_text.find(exec_failed_marker) != std::string::npos)
        throw BackendError("sandbox unavailable: python3 interpreter not found");

    result.exit_status = (WIFEXITED(status) && WEXITSTATUS(status) == 0) ? ExitStatus::ok : ExitStatus::error;
    if (result.exit_status == ExitStatus::error && result.stderr_text.empty())
        result.stderr_text = WIFSIGNALED(status) ? fmt::format("terminated by signal {}", WTERMSIG(status))
                                                 : fmt::format("exited with status {}", WEXITSTATUS(status));
    return result;
}

} // namespace kestrel
