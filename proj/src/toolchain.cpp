// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/toolchain.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <sstream>

namespace promptevo
{

namespace
{

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s)
{
    std::string out(s);
    for (auto& c: out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

} // namespace

TagExtraction extract_tool_tags(std::string_view response)
{
    TagExtraction out;
    const auto text = lower(response);
    static constexpr std::string_view opener = "<tool>";
    static constexpr std::string_view closer = "</tool>";
    std::size_t pos = 0;
    for (;;)
    {
        const auto open = text.find(opener, pos);
        const auto stray = text.find(closer, pos);
        if (stray != std::string::npos && (open == std::string::npos || stray < open))
            out.diagnostics.push_back("stray </tool> at offset " + std::to_string(stray) + " ignored");
        if (open == std::string::npos)
            break;
        const auto content_start = open + opener.size();
        const auto close = text.find(closer, content_start);
        if (close == std::string::npos)
        {
            out.diagnostics.push_back("unclosed <tool> at offset " + std::to_string(open) +
                                      "; remainder ignored");
            break;
        }
        if (text.find(opener, content_start) < close)
            out.diagnostics.push_back("nested <tool> at offset " + std::to_string(open) + " kept as literal text");
        const auto content = trim(response.substr(content_start, close - content_start));
        if (lower(content) == "n/a")
            out.explicit_none = true;
        else if (content.empty())
            out.diagnostics.push_back("empty <tool> tag at offset " + std::to_string(open) + " ignored");
        else
            out.descriptions.emplace_back(content);
        pos = close + closer.size();
    }
    return out;
}

std::string render_tool_tags(const std::vector<std::string>& descriptions)
{
    std::string out;
    for (const auto& d: descriptions)
        out += "<tool>" + d + "</tool>";
    return out;
}

std::optional<std::string> extract_final_answer(std::string_view response)
{
    static const std::regex marker(R"(^\s*\**\s*answer\s*\**\s*:\s*(.*?)\s*$)", std::regex::icase);
    std::optional<std::string> found;
    std::size_t pos = 0;
    while (pos <= response.size())
    {
        auto end = response.find('\n', pos);
        if (end == std::string_view::npos)
            end = response.size();
        const std::string line(response.substr(pos, end - pos));
        std::smatch m;
        if (std::regex_match(line, m, marker) && !trim(m[1].str()).empty())
            found = std::string(trim(m[1].str()));
        pos = end + 1;
    }
    return found;
}

std::string_view to_string(ToolStatus status)
{
    switch (status)
    {
        case ToolStatus::synthesized: return "synthesized";
        case ToolStatus::validated: return "validated";
        case ToolStatus::executed: return "executed";
        case ToolStatus::rejected: return "rejected";
        case ToolStatus::failed: return "failed";
    }
    return "unknown";
}

void ToolInvocation::advance(ToolStatus next)
{
    const auto terminal = [](ToolStatus s) {
        return s == ToolStatus::executed || s == ToolStatus::rejected || s == ToolStatus::failed;
    };
    if (terminal(status))
        throw InvariantError("tool invocation already finished as " + std::string(to_string(status)));
    const bool ok = next == ToolStatus::rejected || next == ToolStatus::failed ||
                    (status == ToolStatus::synthesized && next == ToolStatus::validated) ||
                    (status == ToolStatus::validated && next == ToolStatus::executed);
    if (!ok)
        throw InvariantError("illegal tool status transition " + std::string(to_string(status)) + " -> " +
                             std::string(to_string(next)));
    status = next;
}

std::size_t ToolChainResult::executed() const
{
    return static_cast<std::size_t>(std::count_if(invocations.begin(), invocations.end(),
                                                  [](const auto& i) { return i.status == ToolStatus::executed; }));
}

std::string_view to_string(ExecStatus status)
{
    switch (status)
    {
        case ExecStatus::ok: return "ok";
        case ExecStatus::rejected: return "rejected";
        case ExecStatus::timeout: return "timeout";
        case ExecStatus::runtime_error: return "runtime_error";
    }
    return "unknown";
}

ExecStatus exec_status_from_string(std::string_view name)
{
    for (auto s: {ExecStatus::ok, ExecStatus::rejected, ExecStatus::timeout, ExecStatus::runtime_error})
        if (to_string(s) == name)
            return s;
    throw ParseError("unknown exec status '" + std::string(name) + "'");
}

// --- stub transforms ------------------------------------------------------

Image crop_fraction(const Image& image, double x0, double y0, double x1, double y1)
{
    if (!(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0))
        throw InputError("crop fractions must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
    const int left = static_cast<int>(std::floor(x0 * image.width));
    const int top = static_cast<int>(std::floor(y0 * image.height));
    const int right = std::max(left + 1, static_cast<int>(std::floor(x1 * image.width)));
    const int bottom = std::max(top + 1, static_cast<int>(std::floor(y1 * image.height)));
    Image out(right - left, bottom - top);
    for (int y = top; y < bottom; ++y)
        std::copy_n(image.pixel(left, y), 3 * out.width, out.pixel(0, y - top));
    return out;
}

Image invert_colors(const Image& image)
{
    Image out = image;
    for (auto& v: out.rgb)
        v = static_cast<std::uint8_t>(255 - v);
    return out;
}

Image adjust_brightness(const Image& image, double factor)
{
    if (!(factor >= 0.0))
        throw InputError("brightness factor must be non-negative");
    Image out = image;
    for (auto& v: out.rgb)
        v = static_cast<std::uint8_t>(std::clamp(std::lround(v * factor), 0L, 255L));
    return out;
}

Image flip_horizontal(const Image& image)
{
    Image out(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            std::copy_n(image.pixel(x, y), 3, out.pixel(image.width - 1 - x, y));
    return out;
}

Image threshold_image(const Image& image, int level)
{
    Image out(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
        {
            const auto* p = image.pixel(x, y);
            const int gray = (299 * p[0] + 587 * p[1] + 114 * p[2]) / 1000;
            std::fill_n(out.pixel(x, y), 3, static_cast<std::uint8_t>(gray > level ? 255 : 0));
        }
    return out;
}

std::optional<std::string> screen_tool_code(std::string_view code)
{
    static const std::regex forbidden_import(
        R"((?:^|\n)\s*(?:import|from)\s+(os|sys|socket|subprocess|shutil|pathlib|requests|urllib|http|ftplib|ctypes|multiprocessing|threading|importlib|inspect|pickle|builtins)\b)");
    static const std::regex forbidden_call(R"(\b(open|eval|exec|compile|__import__|getattr|setattr|globals|locals|input)\s*\()");
    const std::string text(code);
    std::smatch m;
    if (std::regex_search(text, m, forbidden_import))
        return "forbidden import: " + m[1].str();
    if (std::regex_search(text, m, forbidden_call))
        return "forbidden call: " + m[1].str();
    return std::nullopt;
}

ExecOutcome StubExecutor::execute(const std::string& code, const Image& input, std::chrono::milliseconds)
{
    ++_calls;
    if (auto reason = screen_tool_code(code))
        return ExecOutcome {ExecStatus::rejected, std::nullopt, *reason, {}};
    static const std::regex directive(R"(#\s*stub-op:\s*([^\n]*))");
    Image current = input;
    bool any = false;
    const auto end = std::sregex_iterator();
    try
    {
        for (auto it = std::sregex_iterator(code.begin(), code.end(), directive); it != end; ++it)
        {
            any = true;
            std::istringstream args((*it)[1].str());
            std::string op;
            args >> op;
            if (op == "identity")
                continue;
            if (op == "crop")
            {
                double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
                if (!(args >> x0 >> y0 >> x1 >> y1))
                    throw InputError("crop needs x0 y0 x1 y1");
                current = crop_fraction(current, x0, y0, x1, y1);
            }
            else if (op == "invert")
                current = invert_colors(current);
            else if (op == "brightness")
            {
                double factor = 1.0;
                if (!(args >> factor))
                    throw InputError("brightness needs a factor");
                current = adjust_brightness(current, factor);
            }
            else if (op == "flip_horizontal")
                current = flip_horizontal(current);
            else if (op == "threshold")
            {
                int level = 128;
                args >> level;
                current = threshold_image(current, level);
            }
            else if (op == "fail")
            {
                std::string rest;
                std::getline(args, rest);
                return ExecOutcome {ExecStatus::runtime_error, std::nullopt, std::string(trim(rest)), {}};
            }
            else if (op == "hang")
                return ExecOutcome {ExecStatus::timeout, std::nullopt, "stub tool exceeded its time limit", {}};
            else
                throw InputError("unknown stub op '" + op + "'");
        }
    }
    catch (const Error& e)
    {
        return ExecOutcome {ExecStatus::runtime_error, std::nullopt, e.what(), {}};
    }
    if (!any)
        return ExecOutcome {ExecStatus::runtime_error, std::nullopt, "no stub-op directive in tool code", {}};
    return ExecOutcome {ExecStatus::ok, std::move(current), {}, {}};
}

ExecOutcome DisabledExecutor::execute(const std::string&, const Image&, std::chrono::milliseconds)
{
    throw ToolchainDisabled("tool execution is disabled");
}

// --- synthesis and composition -------------------------------------------

std::string synthesize_tool(Gateway& gateway, std::string_view description, const SynthesisContext& context,
                            TranscriptBuffer* transcript)
{
    if (trim(description).empty())
        throw PreconditionError("tool description must be non-empty");
    std::ostringstream user;
    user << "Operation: " << trim(description) << "\n";
    if (!context.task.empty())
        user << "Task: " << context.task << "\n";
    if (context.image_width > 0)
        user << "Input image: " << context.image_width << "x" << context.image_height << " RGB\n";
    auto request = make_request(Role::tool_synthesizer, std::string(kToolSynthesisFrame), user.str());
    const auto reply = gateway.complete(request, transcript).text;

    std::string code = reply;
    static const std::regex fenced(R"(```[A-Za-z0-9_+-]*[ \t]*\n([\s\S]*?)```)");
    std::smatch m;
    if (std::regex_search(reply, m, fenced))
        code = m[1].str();
    code = std::string(trim(code));
    if (code.find("def tool(") == std::string::npos)
        throw SynthesisError("synthesized code does not define tool(image)");
    return code + "\n";
}

ToolChainResult compose_and_execute(std::vector<ToolInvocation> stages, ImageHandle input, ToolExecutor& executor,
                                    ImageStore& images, std::chrono::milliseconds timeout, std::size_t max_tool_calls)
{
    if (stages.size() > max_tool_calls)
        throw PreconditionError("tool chain longer than max_tool_calls");
    ToolChainResult result {input, {}, input, false, {}};
    auto current = input;
    bool broken = false;
    for (auto& stage: stages)
    {
        if (broken)
        {
            stage.diagnostics = "skipped: an earlier stage failed";
            result.invocations.push_back(std::move(stage));
            continue;
        }
        if (stage.status != ToolStatus::synthesized)
        {
            broken = true;
            result.failed = true;
            result.diagnostics = "stage " + std::to_string(stage.index) + " was not synthesized";
            result.invocations.push_back(std::move(stage));
            continue;
        }
        const auto outcome = executor.execute(stage.code, *images.get(current), timeout);
        switch (outcome.status)
        {
            case ExecStatus::ok:
                if (!outcome.output || outcome.output->empty())
                {
                    stage.advance(ToolStatus::validated);
                    stage.advance(ToolStatus::failed);
                    stage.diagnostics = "executor returned no image";
                    break;
                }
                stage.advance(ToolStatus::validated);
                current = images.put(*outcome.output);
                stage.output_ref = current;
                stage.advance(ToolStatus::executed);
                break;
            case ExecStatus::rejected:
                stage.advance(ToolStatus::rejected);
                stage.diagnostics = "rejected: " + outcome.error_text;
                break;
            case ExecStatus::timeout:
            case ExecStatus::runtime_error:
                stage.advance(ToolStatus::validated);
                stage.advance(ToolStatus::failed);
                stage.diagnostics = std::string(to_string(outcome.status)) + ": " + outcome.error_text;
                if (!outcome.stderr_excerpt.empty())
                    stage.diagnostics += "\n" + outcome.stderr_excerpt;
                break;
        }
        if (stage.status != ToolStatus::executed)
        {
            broken = true;
            result.failed = true;
            result.diagnostics = "stage " + std::to_string(stage.index) + " " + stage.diagnostics;
        }
        result.invocations.push_back(std::move(stage));
    }
    result.final_ref = current;
    return result;
}

ToolChainResult compose_and_execute(const std::vector<std::string>& codes, ImageHandle input, ToolExecutor& executor,
                                    ImageStore& images, std::chrono::milliseconds timeout, std::size_t max_tool_calls)
{
    std::vector<ToolInvocation> stages;
    for (std::size_t i = 0; i < codes.size(); ++i)
        stages.push_back(ToolInvocation {i + 1, {}, codes[i], ToolStatus::synthesized, std::nullopt, {}});
    return compose_and_execute(std::move(stages), input, executor, images, timeout, max_tool_calls);
}

// --- solving --------------------------------------------------------------

std::size_t SolveTrace::executed_tools() const
{
    std::size_t n = 0;
    for (const auto& pass: passes)
        n += static_cast<std::size_t>(std::count_if(pass.invocations.begin(), pass.invocations.end(),
                                                    [](const auto& i) { return i.status == ToolStatus::executed; }));
    return n;
}

std::size_t SolveTrace::total_invocations() const
{
    std::size_t n = 0;
    for (const auto& pass: passes)
        n += pass.invocations.size();
    return n;
}

CompletionRequest make_solver_request(const TaskPrompt& prompt, const TaskInstance& instance,
                                      const std::vector<ImageHandle>& images,
                                      const std::vector<std::string>& image_notes, bool forced_answer)
{
    std::string user = instance.question_text;
    if (!image_notes.empty())
    {
        user += "\n\nDerived images attached after the original input:";
        for (const auto& note: image_notes)
            user += "\n- " + note;
    }
    user += "\n\n";
    user += forced_answer ? kForcedAnswerInstruction : kAnswerInstruction;
    return make_request(Role::solver, prompt.text, std::move(user), images);
}

SolvePipeline::SolvePipeline(Gateway& gateway, std::shared_ptr<ToolExecutor> executor, SolveLimits limits):
    _gateway(gateway), _executor(std::move(executor)), _limits(limits)
{
    if (_limits.max_tool_calls < 1 || _limits.max_reingest_passes < 1)
        throw ConfigError("solve limits must be positive");
}

SolveTrace SolvePipeline::single_pass(const TaskPrompt& prompt, const TaskInstance& instance,
                                      const std::vector<ImageHandle>& images, TranscriptBuffer* transcript) const
{
    SolveTrace trace;
    trace.prompt_id = prompt.id;
    trace.instance_id = instance.id;
    const auto request = make_solver_request(prompt, instance, images, {}, false);
    SolvePass pass;
    pass.response = _gateway.complete(request, transcript).text;
    trace.final_answer = extract_final_answer(pass.response).value_or("");
    trace.passes.push_back(std::move(pass));
    return trace;
}

SolveTrace SolvePipeline::solve(const TaskPrompt& prompt, const TaskInstance& instance,
                                TranscriptBuffer* transcript) const
{
    auto& store = _gateway.images();
    std::vector<ImageHandle> images;
    for (const auto& path: instance.image_paths)
        images.push_back(store.load(path));

    if (!_limits.tools_enabled || !_executor)
        return single_pass(prompt, instance, images, transcript);

    // Work on a private transcript so a fallback does not leave partial records behind.
    TranscriptBuffer local;
    SolveTrace trace;
    trace.prompt_id = prompt.id;
    trace.instance_id = instance.id;
    std::vector<std::string> notes;
    try
    {
        for (std::size_t pass_no = 1; pass_no <= _limits.max_reingest_passes; ++pass_no)
        {
            SolvePass pass;
            const auto request = make_solver_request(prompt, instance, images, notes, false);
            pass.response = _gateway.complete(request, &local).text;
            auto tags = extract_tool_tags(pass.response);
            pass.diagnostics = tags.diagnostics;

            if (tags.descriptions.empty())
            {
                trace.final_answer = extract_final_answer(pass.response).value_or("");
                trace.passes.push_back(std::move(pass));
                break;
            }
            if (pass_no == _limits.max_reingest_passes)
            {
                pass.diagnostics.push_back("pass limit reached; tool requests not executed");
                trace.passes.push_back(std::move(pass));
                const auto forced = make_solver_request(prompt, instance, images, notes, true);
                trace.forced_response = _gateway.complete(forced, &local).text;
                trace.final_answer = extract_final_answer(*trace.forced_response).value_or("");
                break;
            }
            if (tags.descriptions.size() > _limits.max_tool_calls)
            {
                pass.diagnostics.push_back("only the first " + std::to_string(_limits.max_tool_calls) +
                                           " tool requests are executed");
                tags.descriptions.resize(_limits.max_tool_calls);
            }

            const auto input = images.empty() ? std::optional<ImageHandle> {} : std::optional(images.back());
            std::vector<ToolInvocation> stages;
            SynthesisContext context {instance.question_text, 0, 0};
            if (input)
            {
                const auto image = store.get(*input);
                context.image_width = image->width;
                context.image_height = image->height;
            }
            for (std::size_t i = 0; i < tags.descriptions.size(); ++i)
            {
                ToolInvocation inv {i + 1, tags.descriptions[i], {}, ToolStatus::synthesized, std::nullopt, {}};
                try
                {
                    inv.code = synthesize_tool(_gateway, inv.description, context, &local);
                }
                catch (const SynthesisError& e)
                {
                    inv.advance(ToolStatus::failed);
                    inv.diagnostics = e.what();
                }
                stages.push_back(std::move(inv));
            }

            if (!input)
            {
                for (auto& inv: stages)
                    if (inv.status == ToolStatus::synthesized)
                    {
                        inv.advance(ToolStatus::failed);
                        inv.diagnostics = "no input image";
                    }
                pass.invocations = std::move(stages);
            }
            else
            {
                auto chain = compose_and_execute(std::move(stages), *input, *_executor, store, _limits.tool_timeout,
                                                 _limits.max_tool_calls);
                if (chain.final_ref != *input)
                {
                    images.push_back(chain.final_ref);
                    pass.derived_images.push_back(chain.final_ref);
                    std::string applied;
                    for (const auto& inv: chain.invocations)
                        if (inv.status == ToolStatus::executed)
                            applied += (applied.empty() ? "" : ", then ") + inv.description;
                    notes.push_back("Image " + std::to_string(images.size()) + ": result of " + applied);
                }
                if (chain.failed)
                    pass.diagnostics.push_back(chain.diagnostics);
                pass.invocations = std::move(chain.invocations);
            }
            trace.passes.push_back(std::move(pass));
        }
    }
    catch (const ToolchainDisabled&)
    {
        auto fallback = single_pass(prompt, instance,
                                    std::vector<ImageHandle>(images.begin(),
                                                             images.begin() +
                                                                 static_cast<std::ptrdiff_t>(instance.image_paths.size())),
                                    transcript);
        fallback.fell_back_single_pass = true;
        return fallback;
    }
    if (transcript)
        transcript->splice(std::move(local));
    return trace;
}

} // namespace promptevo
