//! Prompt templates.
//!
//! The tracker and BATS system prompts carry the budget policy guideline
//! with the registered tool names substituted in.

use crate::ledger::ToolSet;

use super::Mode;

pub const FORCING_MESSAGE: &str = "Wait, you still have remaining tool budget, use more search and browse tools \
to explore different information sources before concluding.";

pub const FINAL_ANSWER_PROMPT: &str = "Tool calls are no longer available. Do not call any tools. Based on \
everything above, give your final answer now inside <answer></answer>. If you cannot determine it, write \
<answer>None</answer>.";

pub const FINAL_ANSWER_REPROMPT: &str = "Tools cannot be used. Reply only with <answer>...</answer>.";

const TOOLS_SECTION: &str = r#"## Tools
You have access to 2 tools: search and browse.
{
  "name": "search",
  "description": "Performs batched web searches: supply an array 'query'; the tool retrieves the top 10 results for each query in one call.",
  "parameters": {
    "type": "object",
    "properties": {
      "query": {
        "type": "array",
        "items": {
          "type": "string"
        },
        "description": "Array of query strings. Include multiple complementary search queries in a single call."
      }
    },
    "required": [
      "query"
    ]
    }
},
{
  "name": "browse",
    "description": "Visit webpage(s) and return the summary of the content.",
    "parameters": {
        "type": "object",
        "properties": {
            "url": {
                "type": "array",
                "items": {"type": "string"},
                "description": "The URL(s) of the webpage(s) to visit. Can be a single URL or an array of URLs."
            },
            "goal": {
                "type": "string",
                "description": "The specific information goal for browsing webpage(s)."
            }
        },
        "required": [
            "url",
            "goal"
        ]
    }
}"#;

const PREAMBLE: &str = "You are an AI reasoner with Google Search and Browsing tools. Solve the question by \
iterating: think, tool_code, tool_response, answer.";

const CYCLE: &str = "You should start with one or more cycles of (thinking about which tool to use -> performing \
tool code -> waiting for tool response), and end with (thinking about the answer -> answer of the question). The \
thinking processes, tool codes, tool responses, and answer are enclosed within their tags. There could be multiple \
thinking processes, tool codes, tool call parameters and tool response parameters.";

const BUDGET_SECTION: &str = "## Budget

You have two independent budgets:
- {Q} Budget (for {search})
- {U} Budget (for {browse})
Each string in 'query' or 'url' consumes 1 unit respectively.

After each <tool_response>, a <budget> tag shows remaining units.
You must ADAPT your strategy dynamically to the current budget state.

### HIGH Budget (>=70%)
- Search: 3-5 diverse queries in one batch.
- Browse: up to 2-3 high-value URLs.
- Goal: Broad exploration, build context fast.

### MEDIUM Budget (30-70%)
- Search: 2-3 precise, refined queries per cycle.
- Browse: 1-2 URLs that close key knowledge gaps.
- Goal: Converge; eliminate uncertainty efficiently.

### LOW Budget (10-30%)
- Search: 1 tightly focused query.
- Browse: at most 1 most promising URL.
- Goal: Verify a single critical fact or finalize answer.

### CRITICAL (<10%)
- Avoid using the depleted tool.
- Only perform 1 minimal-cost query or browse if absolutely essential.
- If uncertainty remains and no tool use is possible, output <answer>None</answer>.";

const STEP_SYNTAX_HEAD: &str = "## Step syntax

<think>
Thinking process. Analyze the query, your internal knowledge, and search results to build your reasoning.{JUSTIFY}
</think>
<tool_code>
{\"name\": \"tool name here\", \"arguments\": {\"parameter name here\": parameter value here, \"another parameter name here\": another parameter value here, ...}}
</tool_code>
<tool_response>
tool_response here
</tool_response>";

const STEP_SYNTAX_BUDGET: &str = "<budget>
{Q} Budget Used: [number], {Q} Budget Remaining: [number], {U} Budget Used: [number], {U} Budget Remaining: [number]
</budget>";

const STEP_SYNTAX_TAIL: &str = "Repeat <think><tool_code> until you have the final answer.
<answer> Final solution only. </answer>

## About answers

* Only write the final answer inside <answer> and </answer>.
* If you cannot find the answer, write <answer>None</answer>.";

pub const QUESTIONS_SECTION: &str = "## About questions

Questions contain two types of constraints: exploration and verification.
* Exploration: Broad, core requirements (e.g., birthday, profession). Use these for initial searches to surface candidates. You may combine 1-2 to form stronger queries.
* Verification: Narrow, specific details. Apply these only after you have candidates, to confirm or filter them. Never begin with verification constraints.
Start with exploration queries, then use verification to validate the results.";

pub const PLANNING_SECTION: &str = "## About planning

Maintain a tree-structured checklist of actionable steps (each may require several tool calls).
- Mark each step with its status: [ ] pending, [x] done, [!] failed, [~] partial.
- Use numbered branches (1.1, 1.2) to represent alternative paths or candidate leads.
- Log resource usage after execution: (Query=#, URL=#).
- Keep all executed steps, never delete them, retain history to avoid repeats.
- Update dynamically as you reason and gather info, adding or revising steps as needed.
- Always consider current and remaining budget when updating the plan.

Write the checklist inside <plan></plan> tags, one step per line, e.g.
<plan>
- [x] 1 find candidate list (Query=4, URL=1)
- [ ] 1.1 verify first candidate
</plan>";

fn display_names(tools: &ToolSet) -> (String, String, String, String) {
    let mut it = tools.iter();
    let a = it.next();
    let b = it.next();
    (
        a.map(|t| t.display_name.clone()).unwrap_or_else(|| "Query".into()),
        b.map(|t| t.display_name.clone()).unwrap_or_else(|| "URL".into()),
        a.map(|t| t.name.clone()).unwrap_or_else(|| "search".into()),
        b.map(|t| t.name.clone()).unwrap_or_else(|| "browse".into()),
    )
}

/// System prompt for the given mode.
pub fn system_prompt(mode: Mode, tools: &ToolSet) -> String {
    let (q, u, s, b) = display_names(tools);
    let fill = |t: &str| t.replace("{Q}", &q).replace("{U}", &u).replace("{search}", &s).replace("{browse}", &b);
    let tracked = mode != Mode::React;
    let justify = if tracked { " Always justify tool choices based on the remaining budgets." } else { "" };
    let mut parts = vec![PREAMBLE.to_string(), TOOLS_SECTION.to_string(), CYCLE.to_string()];
    if tracked {
        parts.push(fill(BUDGET_SECTION));
    }
    if mode == Mode::Bats {
        parts.push(QUESTIONS_SECTION.to_string());
        parts.push(PLANNING_SECTION.to_string());
    }
    let mut syntax = STEP_SYNTAX_HEAD.replace("{JUSTIFY}", justify);
    if tracked {
        syntax.push('\n');
        syntax.push_str(&fill(STEP_SYNTAX_BUDGET));
    }
    syntax.push_str("\n\n");
    syntax.push_str(STEP_SYNTAX_TAIL);
    parts.push(syntax);
    parts.join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_prompt_carries_budget_policy() {
        let p = system_prompt(Mode::ReactTracker, &ToolSet::search_agent());
        assert!(p.contains("- Query Budget (for search)"));
        assert!(p.contains("### HIGH Budget (>=70%)"));
        assert!(p.contains("### CRITICAL (<10%)"));
        assert!(p.contains("Query Budget Used: [number], Query Budget Remaining: [number], URL Budget Used"));
        assert!(!p.contains("About planning"));
    }

    #[test]
    fn react_prompt_has_no_budget() {
        let p = system_prompt(Mode::React, &ToolSet::search_agent());
        assert!(!p.contains("<budget>"));
        assert!(p.contains("<answer>None</answer>"));
    }

    #[test]
    fn bats_prompt_adds_planning() {
        let p = system_prompt(Mode::Bats, &ToolSet::search_agent());
        assert!(p.contains("[ ] pending, [x] done, [!] failed, [~] partial"));
        assert!(p.contains("Start with exploration queries"));
        assert!(p.contains("<budget>"));
    }
}
