// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/core.hpp>
#include <promptevo/datasets.hpp>
#include <promptevo/gateway.hpp>
#include <promptevo/image.hpp>

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace promptevo
{

// --- tag extraction -------------------------------------------------------

struct TagExtraction
{
    /// Tag contents in order of appearance, trimmed, "n/a" entries removed.
    std::vector<std::string> descriptions;
    std::vector<std::string> diagnostics;
    /// At least one explicit "n/a" tag was present.
    bool explicit_none = false;
};

/// Flat, case-insensitive `<tool>...</tool>` parser. Never throws.
TagExtraction extract_tool_tags(std::string_view response);
/// Inverse representation: concatenated `<tool>d</tool>` elements.
std::string render_tool_tags(const std::vector<std::string>& descriptions);

/// The `ANSWER:` line convention for solver replies.
inline constexpr std::string_view kAnswerInstruction = "End your reply with a final line of the form 'ANSWER: <answer>'.";
inline constexpr std::string_view kForcedAnswerInstruction =
    "Tool use is no longer available. Using only the images provided, reply with a final line of the form "
    "'ANSWER: <answer>'.";

/// Text after the last `ANSWER:` marker line, trimmed; nullopt if absent.
std::optional<std::string> extract_final_answer(std::string_view response);

// --- invocations ----------------------------------------------------------

enum class ToolStatus
{
    synthesized,
    validated,
    executed,
    rejected,
    failed,
};

std::string_view to_string(ToolStatus status);

struct ToolInvocation
{
    std::size_t index = 0;
    std::string description;
    std::string code;
    ToolStatus status = ToolStatus::synthesized;
    std::optional<ImageHandle> output_ref;
    std::string diagnostics;

    /// Moves forward along synthesized -> validated -> executed, or into rejected/failed.
    /// Throws InvariantError on a backward transition.
    void advance(ToolStatus next);
};

struct ToolChainResult
{
    ImageHandle input_ref;
    std::vector<ToolInvocation> invocations;
    ImageHandle final_ref;
    bool failed = false;
    std::string diagnostics;

    [[nodiscard]] std::size_t executed() const;
};

// --- executors ------------------------------------------------------------

enum class ExecStatus
{
    ok,
    rejected,
    timeout,
    runtime_error,
};

std::string_view to_string(ExecStatus status);
ExecStatus exec_status_from_string(std::string_view name);

struct ExecOutcome
{
    ExecStatus status = ExecStatus::runtime_error;
    std::optional<Image> output;
    std::string error_text;
    std::string stderr_excerpt;
};

/// Runs one synthesized function (image in, image out).
class ToolExecutor
{
  public:
    virtual ~ToolExecutor() = default;
    /// Throws ToolchainDisabled when the executor cannot be reached at all.
    virtual ExecOutcome execute(const std::string& code, const Image& input, std::chrono::milliseconds timeout) = 0;
};

/// Static screen shared by the in-process stub: rejects file, network, process and
/// reflection facilities. Returns the offending construct.
std::optional<std::string> screen_tool_code(std::string_view code);

/// In-process executor for tests and offline runs. It ignores the Python body and applies the
/// `# stub-op:` directives found in the code, in order:
///   identity | crop x0 y0 x1 y1 (fractions) | invert | brightness factor |
///   flip_horizontal | threshold level | fail message | hang
class StubExecutor: public ToolExecutor
{
  public:
    ExecOutcome execute(const std::string& code, const Image& input, std::chrono::milliseconds timeout) override;
    [[nodiscard]] std::size_t calls() const { return _calls.load(); }

  private:
    std::atomic<std::size_t> _calls {0};
};

/// Executor that always reports itself unavailable.
class DisabledExecutor: public ToolExecutor
{
  public:
    ExecOutcome execute(const std::string&, const Image&, std::chrono::milliseconds) override;
};

// Stub image transforms, exposed for tests.
Image crop_fraction(const Image& image, double x0, double y0, double x1, double y1);
Image invert_colors(const Image& image);
Image adjust_brightness(const Image& image, double factor);
Image flip_horizontal(const Image& image);
Image threshold_image(const Image& image, int level);

// --- sandbox wire protocol ------------------------------------------------

/// 4-byte big-endian length prefix followed by the body.
std::string encode_frame(std::string_view body);
/// Parses one frame from the front of `buffer`; returns nullopt if incomplete.
std::optional<std::string> decode_frame(std::string& buffer);

nlohmann::json make_exec_request(const std::string& code, const Image& input, std::chrono::milliseconds timeout);
/// Malformed responses map to runtime_error with a protocol diagnostic.
ExecOutcome parse_exec_response(std::string_view body);

struct SubprocessOptions
{
    /// argv of the runner process.
    std::vector<std::string> command;
    /// Requests served before the runner is restarted.
    std::size_t recycle_after = 100;
    /// Extra wall-clock allowance on top of the request timeout.
    std::chrono::milliseconds grace {1000};
};

/// Talks to an external runner over its stdin/stdout using the framed protocol.
class SubprocessExecutor: public ToolExecutor
{
  public:
    explicit SubprocessExecutor(SubprocessOptions options);
    ~SubprocessExecutor() override;
    SubprocessExecutor(const SubprocessExecutor&) = delete;
    SubprocessExecutor& operator=(const SubprocessExecutor&) = delete;

    ExecOutcome execute(const std::string& code, const Image& input, std::chrono::milliseconds timeout) override;
    [[nodiscard]] std::size_t restarts() const { return _restarts; }

  private:
    void start();
    void stop();

    SubprocessOptions _options;
    int _pid = -1;
    int _to_child = -1;
    int _from_child = -1;
    std::size_t _served = 0;
    std::size_t _restarts = 0;
};

// --- synthesis and composition -------------------------------------------

inline constexpr std::string_view kToolSynthesisFrame =
    "Translate the described image operation into Python. Write exactly one self-contained function "
    "`def tool(image):` that takes a PIL.Image.Image and returns a PIL.Image.Image. Import only PIL, numpy or "
    "math. Reply with the code only.";

struct SynthesisContext
{
    std::string task;
    int image_width = 0;
    int image_height = 0;
};

/// Asks the tool_synthesizer backend for code; strips markdown fences. Throws SynthesisError
/// when no `def tool(` function is present.
std::string synthesize_tool(Gateway& gateway, std::string_view description, const SynthesisContext& context,
                            TranscriptBuffer* transcript = nullptr);

/// Runs stages in order (the first stage sees `input`). A failed stage leaves the rest
/// skipped and returns the last good intermediate.
ToolChainResult compose_and_execute(std::vector<ToolInvocation> stages, ImageHandle input, ToolExecutor& executor,
                                    ImageStore& images, std::chrono::milliseconds timeout, std::size_t max_tool_calls);
ToolChainResult compose_and_execute(const std::vector<std::string>& codes, ImageHandle input, ToolExecutor& executor,
                                    ImageStore& images, std::chrono::milliseconds timeout, std::size_t max_tool_calls);

// --- solving --------------------------------------------------------------

struct SolveLimits
{
    bool tools_enabled = false;
    std::size_t max_tool_calls = 4;
    std::size_t max_reingest_passes = 3;
    std::chrono::milliseconds tool_timeout {10'000};
};

struct SolvePass
{
    std::string response;
    std::vector<ToolInvocation> invocations;
    std::vector<ImageHandle> derived_images;
    std::vector<std::string> diagnostics;
};

struct SolveTrace
{
    PromptId prompt_id;
    std::string instance_id;
    std::vector<SolvePass> passes;
    /// Reply to the answer-only request sent when the pass limit stopped a tool request.
    std::optional<std::string> forced_response;
    std::string final_answer;
    bool fell_back_single_pass = false;

    [[nodiscard]] std::size_t executed_tools() const;
    [[nodiscard]] std::size_t total_invocations() const;
};

/// Builds the solver request for a prompt, question and image context.
CompletionRequest make_solver_request(const TaskPrompt& prompt, const TaskInstance& instance,
                                      const std::vector<ImageHandle>& images,
                                      const std::vector<std::string>& image_notes, bool forced_answer);

/// Solves one instance: single pass when tools are off or unavailable, otherwise the
/// extract -> synthesize -> execute -> re-ingest loop.
class SolvePipeline
{
  public:
    SolvePipeline(Gateway& gateway, std::shared_ptr<ToolExecutor> executor, SolveLimits limits);

    SolveTrace solve(const TaskPrompt& prompt, const TaskInstance& instance,
                     TranscriptBuffer* transcript = nullptr) const;

    [[nodiscard]] const SolveLimits& limits() const { return _limits; }

  private:
    SolveTrace single_pass(const TaskPrompt& prompt, const TaskInstance& instance,
                           const std::vector<ImageHandle>& images, TranscriptBuffer* transcript) const;

    Gateway& _gateway;
    std::shared_ptr<ToolExecutor> _executor;
    SolveLimits _limits;
};

} // namespace promptevo
