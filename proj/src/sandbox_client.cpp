// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/hashing.hpp>
#include <promptevo/toolchain.hpp>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

extern char** environ;

namespace promptevo
{

std::string encode_frame(std::string_view body)
{
    const auto n = static_cast<std::uint32_t>(body.size());
    std::string out;
    out.reserve(body.size() + 4);
    out.push_back(static_cast<char>((n >> 24) & 0xff));
    out.push_back(static_cast<char>((n >> 16) & 0xff));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
    out.append(body);
    return out;
}

std::optional<std::string> decode_frame(std::string& buffer)
{
    if (buffer.size() < 4)
        return std::nullopt;
    const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buffer[i])); };
    const std::uint32_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
    if (buffer.size() < 4 + static_cast<std::size_t>(n))
        return std::nullopt;
    auto body = buffer.substr(4, n);
    buffer.erase(0, 4 + static_cast<std::size_t>(n));
    return body;
}

nlohmann::json make_exec_request(const std::string& code, const Image& input, std::chrono::milliseconds timeout)
{
    return nlohmann::json {
        {"code", code},
        {"input_image", base64_encode(encode_png(input))},
        {"timeout_ms", timeout.count()},
    };
}

ExecOutcome parse_exec_response(std::string_view body)
{
    ExecOutcome out;
    try
    {
        const auto j = nlohmann::json::parse(body);
        out.status = exec_status_from_string(j.at("status").get<std::string>());
        if (j.contains("error_text") && j.at("error_text").is_string())
            out.error_text = j.at("error_text").get<std::string>();
        if (j.contains("stderr_excerpt") && j.at("stderr_excerpt").is_string())
            out.stderr_excerpt = j.at("stderr_excerpt").get<std::string>();
        if (out.status == ExecStatus::ok)
        {
            if (!j.contains("output_image") || !j.at("output_image").is_string())
                throw ParseError("ok response without output_image");
            const auto png = base64_decode(j.at("output_image").get<std::string>());
            out.output = decode_png(std::vector<std::uint8_t>(png.begin(), png.end()));
        }
    }
    catch (const std::exception& e)
    {
        return ExecOutcome {ExecStatus::runtime_error, std::nullopt, std::string("protocol error: ") + e.what(), {}};
    }
    return out;
}

SubprocessExecutor::SubprocessExecutor(SubprocessOptions options): _options(std::move(options))
{
    if (_options.command.empty())
        throw ConfigError("sandbox runner command is empty");
    if (_options.recycle_after < 1)
        throw ConfigError("sandbox recycle_after must be positive");
}

SubprocessExecutor::~SubprocessExecutor()
{
    stop();
}

void SubprocessExecutor::start()
{
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0)
        throw ToolchainDisabled(std::string("pipe: ") + std::strerror(errno));
    if (pipe(out_pipe) != 0)
    {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw ToolchainDisabled(std::string("pipe: ") + std::strerror(errno));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&actions, in_pipe[1]);
    posix_spawn_file_actions_addclose(&actions, out_pipe[0]);

    std::vector<char*> argv;
    for (auto& arg: _options.command)
        argv.push_back(arg.data());
    argv.push_back(nullptr);

    pid_t pid = -1;
    const int rc = posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    close(in_pipe[0]);
    close(out_pipe[1]);
    if (rc != 0)
    {
        close(in_pipe[1]);
        close(out_pipe[0]);
        throw ToolchainDisabled("cannot start sandbox runner '" + _options.command[0] + "': " + std::strerror(rc));
    }
    _pid = pid;
    _to_child = in_pipe[1];
    _from_child = out_pipe[0];
    _served = 0;
}

void SubprocessExecutor::stop()
{
    if (_to_child >= 0)
        close(_to_child);
    if (_from_child >= 0)
        close(_from_child);
    _to_child = _from_child = -1;
    if (_pid > 0)
    {
        kill(_pid, SIGKILL);
        waitpid(_pid, nullptr, 0);
    }
    _pid = -1;
}

ExecOutcome SubprocessExecutor::execute(const std::string& code, const Image& input, std::chrono::milliseconds timeout)
{
    if (_pid > 0 && _served >= _options.recycle_after)
    {
        stop();
        ++_restarts;
    }
    if (_pid <= 0)
        start();

    const auto frame = encode_frame(make_exec_request(code, input, timeout).dump());
    // A runner that died between requests surfaces as EPIPE here.
    const auto old_handler = signal(SIGPIPE, SIG_IGN);
    std::size_t written = 0;
    while (written < frame.size())
    {
        const auto n = write(_to_child, frame.data() + written, frame.size() - written);
        if (n <= 0)
        {
            signal(SIGPIPE, old_handler);
            stop();
            ++_restarts;
            return ExecOutcome {ExecStatus::runtime_error, std::nullopt, "sandbox runner closed its input", {}};
        }
        written += static_cast<std::size_t>(n);
    }
    signal(SIGPIPE, old_handler);
    ++_served;

    const auto deadline = std::chrono::steady_clock::now() + timeout + _options.grace;
    std::string buffer;
    char chunk[65536];
    for (;;)
    {
        if (auto body = decode_frame(buffer))
            return parse_exec_response(*body);
        const auto remaining =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0)
        {
            stop();
            ++_restarts;
            return ExecOutcome {ExecStatus::timeout, std::nullopt, "sandbox runner did not answer in time", {}};
        }
        pollfd pfd {_from_child, POLLIN, 0};
        const int ready = poll(&pfd, 1, static_cast<int>(remaining.count()));
        if (ready < 0 && errno == EINTR)
            continue;
        if (ready <= 0)
            continue;
        const auto n = read(_from_child, chunk, sizeof(chunk));
        if (n <= 0)
        {
            stop();
            ++_restarts;
            return ExecOutcome {ExecStatus::runtime_error, std::nullopt, "sandbox runner exited unexpectedly", {}};
        }
        buffer.append(chunk, static_cast<std::size_t>(n));
    }
}

} // namespace promptevo
