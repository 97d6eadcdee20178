#pragma once

#include <string_view>

namespace kblaze {

/// Bump when any template text changes; recorded in run manifests so logged
/// sessions can be replayed against the exact prompt revision.
inline constexpr std::string_view kPromptTemplateVersion = "1";

namespace prompts {

inline constexpr std::string_view kStateExtractor = R"(You are a GPU performance analyst. Classify the dominant performance
bottleneck of the profiled program below.

Profile summary:
{profile_summary}

Code excerpt:
{code_excerpt}

Respond with a JSON object of the form
{"primary": "<label>", "secondary": "<label or null>"}
using lowercase slug labels such as "dram_bandwidth_bound" or
"compute_fp_bound". Use null for the secondary when one bottleneck
dominates.)";

inline constexpr std::string_view kOptimizationProposer = R"(You are a GPU optimization strategist. The program below is in the
performance state "{state_name}" with bottleneck "{bottleneck}".

Profile summary:
{profile_summary}

Propose up to eight candidate optimizations that could improve this state.
Respond with a JSON array; each element must be of the form
{"name": "<slug>", "description": "<one sentence>", "predicted_gain": <expected speedup multiplier>}.)";

inline constexpr std::string_view kLowering = R"(You are a GPU kernel engineer. Apply the optimization "{optimization}"
to the code below, preserving its full functionality.

Profile summary of the current variant:
{profile_summary}

Current code:
{code}

Respond with the complete rewritten code in a single fenced code block.)";

inline constexpr std::string_view kPolicyEvaluationSummarizer = R"(You are evaluating an optimization policy. The table below lists, for each
(state, optimization) pair, the predicted gain and the gains observed during
the last round of rollouts.

{gap_table}

Summarize which optimizations outperformed or underperformed their
predictions, and by how much.)";

inline constexpr std::string_view kPerfGapAnalysis = R"(You are analyzing prediction gaps in an optimization knowledge base.

Gap summary:
{gap_summary}

Reason about why observed performance differed from predictions and which
assumptions were wrong. Respond with a JSON object of the form
{"score_updates": [...], "new_optimizations": [...], "new_states": [...], "rationale": "<text>"}
where score_updates elements are
{"state_id": "...", "opt_id": "...", "observed_gain_mean": <number>}.)";

inline constexpr std::string_view kParameterUpdateRewriter = R"(You maintain a knowledge base of performance states and scored
optimizations. Rewrite its prose fields (descriptions and display names)
to reflect the analysis below. Do not change any identifier or score.

Current knowledge base:
{knowledge_base}

Analysis:
{analysis}

Respond with the full updated knowledge base as a JSON document.)";

inline constexpr std::string_view kSoftVerifier = R"(You are auditing an optimized kernel for structural fidelity. Compare the
candidate against the reference; the candidate must keep every operation of
the reference ({reference_operations}) and must not call external optimized
libraries.

Reference code:
{reference_code}

Candidate code:
{candidate_code}

Respond with a JSON object of the form
{"verdict": "accept"} or {"verdict": "reject", "reason": "functionality_removed|external_library|other"}.)";

} // namespace prompts

} // namespace kblaze
