// SPDX-License-Identifier: Apache-2.0
// Stand-in for the sandbox runner: speaks the framed protocol on stdin/stdout and applies
// stub-op directives. A few `# fake:` directives misbehave on purpose:
//   crash    exit without answering
//   sleep    never answer
//   garbage  answer with a frame that is not JSON
//   pid      answer runtime_error with the process id as error text
#include <promptevo/hashing.hpp>
#include <promptevo/toolchain.hpp>

#include <json.hpp>

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <thread>

using namespace promptevo;

namespace
{

bool read_exact(char* out, std::size_t n)
{
    std::size_t got = 0;
    while (got < n)
    {
        const auto r = read(STDIN_FILENO, out + got, n - got);
        if (r <= 0)
            return false;
        got += static_cast<std::size_t>(r);
    }
    return true;
}

void write_frame(std::string_view body)
{
    const auto frame = encode_frame(body);
    std::size_t done = 0;
    while (done < frame.size())
    {
        const auto w = write(STDOUT_FILENO, frame.data() + done, frame.size() - done);
        if (w <= 0)
            std::_Exit(1);
        done += static_cast<std::size_t>(w);
    }
}

} // namespace

int main()
{
    StubExecutor stub;
    for (;;)
    {
        char header[4];
        if (!read_exact(header, 4))
            return 0;
        const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(header[i])); };
        const std::uint32_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
        std::string body(n, '\0');
        if (!read_exact(body.data(), n))
            return 0;

        nlohmann::json reply;
        try
        {
            const auto req = nlohmann::json::parse(body);
            const auto code = req.at("code").get<std::string>();
            if (code.find("# fake: crash") != std::string::npos)
                return 3;
            if (code.find("# fake: sleep") != std::string::npos)
            {
                std::this_thread::sleep_for(std::chrono::hours(1));
                return 0;
            }
            if (code.find("# fake: garbage") != std::string::npos)
            {
                write_frame("this is not json");
                continue;
            }
            if (code.find("# fake: pid") != std::string::npos)
            {
                write_frame(nlohmann::json {{"status", "runtime_error"}, {"error_text", std::to_string(getpid())}}
                                .dump());
                continue;
            }
            const auto png = base64_decode(req.at("input_image").get<std::string>());
            const auto input = decode_png(std::vector<std::uint8_t>(png.begin(), png.end()));
            const auto outcome =
                stub.execute(code, input, std::chrono::milliseconds(req.at("timeout_ms").get<long>()));
            reply["status"] = std::string(to_string(outcome.status));
            if (outcome.output)
                reply["output_image"] = base64_encode(encode_png(*outcome.output));
            if (!outcome.error_text.empty())
                reply["error_text"] = outcome.error_text;
            reply["stderr_excerpt"] = "";
        }
        catch (const std::exception& e)
        {
            reply = {{"status", "runtime_error"}, {"error_text", std::string("protocol error: ") + e.what()}};
        }
        write_frame(reply.dump());
    }
}
