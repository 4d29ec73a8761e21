use super::{PromptBundle, PromptKey, PromptKind, ResponseContract};
use crate::sandbox::{Termination, TestOutcome};
use crate::taskmodel::{ClassTask, MethodSpec};
use std::fmt::Write;

/// Bumped whenever template wording changes; recorded with every run.
pub const TEMPLATE_VERSION: &str = "1";

const ARCHITECT_ROLE: &str = "You are a senior software architect. You read Python class skeletons and plan the order in which their methods should be implemented.";

const DEVELOPER_ROLE: &str = "You are an expert Python developer who works test-first: every method you write must satisfy its unit tests.";

pub const HELPER_GUIDANCE: &str = "A method that depends on no other target method is standalone. Place standalone methods early in the schedule, especially protected helper methods whose names start with an underscore: they are reusable utilities that later methods build on.";

pub const CONSTRUCTOR_NOTE: &str = "The constructor `__init__` is already implemented in the skeleton. Leave it out of the analysis entirely: it must not appear as a key, as a dependency or in the order. Fields it initializes are available to every method, so only method-to-method dependencies matter.";

const DEP_CRITERIA: &str = "A target method A depends on another target method B when at least one of these holds:
1. Direct call: the docstring of A says that it calls B (for example \"uses B to ...\" or `self.B(...)`).
2. Documented logical prerequisite: the description of A states that the behaviour of B must happen as a step before or inside A (for example \"normalizes the text with B, then ...\"). Only count relations that the specification states clearly; do not guess from undocumented assumptions.";

const DEP_OUTPUT: &str = "Respond with one JSON object and nothing else:
{\"dep_map\": {\"<method>\": [\"<prerequisite>\", ...]}, \"order\": [\"<method>\", ...]}
- `dep_map` has exactly one key per target method; use [] for a method without dependencies.
- `order` lists every target method exactly once, and every prerequisite comes before the methods that depend on it.";

pub const REFLECTION_STEPS: &str = "Work through these four steps in order, each under its own heading:
1. Failure analysis: identify the most likely cause of the failure, such as a syntax error, a logic error or a dependency issue.
2. Code region identification: point to the lines or blocks of the implementation responsible for the failure.
3. Repair suggestion: state how the code should change to fix the problem.
4. Patch generation: write a minimal patch implementing that fix while keeping to the method specification.";

fn python_block(out: &mut String, code: &str) {
    out.push_str("```python\n");
    out.push_str(code.trim_end_matches('\n'));
    out.push_str("\n```\n");
}

fn method_stub(method: &MethodSpec) -> String {
    let sig = method.signature.trim();
    let header = if sig.starts_with("def ") || sig.starts_with("async def ") {
        sig.trim_end_matches(':').to_string()
    } else {
        format!("def {}{}", method.name, sig)
    };
    let mut out = format!("{header}:\n    \"\"\"\n");
    for line in method.docstring.trim_matches('\n').lines() {
        if line.trim().is_empty() {
            out.push('\n');
        } else {
            let _ = writeln!(out, "    {}", line.trim_end());
        }
    }
    out.push_str("    \"\"\"\n");
    out
}

fn bundle(key: PromptKey, role: &str, body: String, contract: ResponseContract) -> PromptBundle {
    PromptBundle {
        key,
        role_preamble: role.to_string(),
        body,
        response_contract: contract,
    }
}

pub fn render_dep_prompt(task: &ClassTask) -> PromptBundle {
    let mut body = format!(
        "Analyze the dependencies between the target methods of the class `{}` and produce a generation schedule.\n\n## Class skeleton\n",
        task.class_name
    );
    let mut skeleton = String::new();
    if !task.preamble.trim().is_empty() {
        skeleton.push_str(task.preamble.trim_end());
        skeleton.push_str("\n\n");
    }
    skeleton.push_str(&task.skeleton);
    python_block(&mut body, &skeleton);
    body.push_str("\n## Target methods\n");
    for m in &task.methods {
        let _ = writeln!(body, "- {}", m.name);
    }
    let _ = write!(
        body,
        "\n## Dependency criteria\n{DEP_CRITERIA}\n\n## Scheduling guidance\n{HELPER_GUIDANCE}\n{CONSTRUCTOR_NOTE}\n\n## Output format\n{DEP_OUTPUT}\n"
    );
    bundle(
        PromptKey::new(&task.task_id, PromptKey::CLASS_WIDE, PromptKind::Deps, 0),
        ARCHITECT_ROLE,
        body,
        ResponseContract::DependencyJson,
    )
}

fn code_instruction(method: &str) -> String {
    format!(
        "Return the complete definition of `{method}` (its `def` line and body) in a single ```python code block. Do not include any other method."
    )
}

/// Context for implementing `method`: partial class, method
/// specification, its public tests, then the instruction.
pub fn render_generation_prompt(
    task: &ClassTask,
    partial_class: &str,
    method: &MethodSpec,
) -> PromptBundle {
    let mut body = format!(
        "Implement the method `{}` of the class `{}`.\n\n## Current partial class\nMethods that are already implemented are shown with their bodies; the others are still stubs.\n",
        method.name, task.class_name
    );
    python_block(&mut body, partial_class);
    body.push_str("\n## Method to implement\n");
    python_block(&mut body, &method_stub(method));
    let _ = writeln!(body, "\n## Public tests for `{}`", method.name);
    python_block(&mut body, &method.public_suite.source);
    let _ = write!(
        body,
        "\n## Instructions\nImplement only `{}` according to its specification so that every public test above passes. {}\n",
        method.name,
        code_instruction(&method.name)
    );
    bundle(
        PromptKey::new(&task.task_id, &method.name, PromptKind::Generate, 0),
        DEVELOPER_ROLE,
        body,
        ResponseContract::SingleMethodCode,
    )
}

/// Why the previous attempt of a method was rejected.
#[derive(Debug, Clone, Copy)]
pub enum RepairFeedback<'a> {
    Tests(&'a TestOutcome),
    /// The response or its code could not be used (extraction or assembly failed).
    Unusable(&'a str),
}

fn render_feedback(out: &mut String, feedback: RepairFeedback<'_>) {
    match feedback {
        RepairFeedback::Unusable(reason) => {
            let _ = writeln!(out, "The previous response could not be used: {reason}");
        }
        RepairFeedback::Tests(outcome) => {
            let failed = outcome.failures().count();
            let _ = writeln!(
                out,
                "{} of {} public test cases passed; {failed} did not.",
                outcome.pass_count(),
                outcome.cases.len()
            );
            match outcome.terminated {
                Termination::Timeout => {
                    out.push_str("The test run exceeded its time limit and was stopped.\n")
                }
                Termination::Crash => out.push_str("The test process crashed.\n"),
                Termination::Clean => {}
            }
            for case in outcome.failures() {
                let status = format!("{:?}", case.status).to_lowercase();
                let _ = writeln!(out, "\n### {} ({status})", case.name);
                if !case.message.trim().is_empty() {
                    let _ = writeln!(out, "{}", case.message.trim_end());
                }
                if !case.trace.trim().is_empty() {
                    out.push_str("```\n");
                    out.push_str(case.trace.trim_end());
                    out.push_str("\n```\n");
                }
            }
        }
    }
}

/// Repair context for a failing method. With `reflection` the model is
/// asked for the four-step diagnosis before the patch; without it the
/// prompt asks for a fix straight from the failure output.
#[allow(clippy::too_many_arguments)]
pub fn render_repair_prompt(
    task: &ClassTask,
    partial_class: &str,
    method: &MethodSpec,
    failing_body: &str,
    feedback: RepairFeedback<'_>,
    history: &[String],
    round: u32,
    reflection: bool,
) -> PromptBundle {
    let mut body = format!(
        "The implementation of `{}` in the class `{}` does not pass its public tests yet.\n\n## Current partial class\n",
        method.name, task.class_name
    );
    python_block(&mut body, partial_class);
    body.push_str("\n## Method specification\n");
    python_block(&mut body, &method_stub(method));
    body.push_str("\n## Current implementation\n");
    if failing_body.trim().is_empty() {
        body.push_str("(no usable implementation was produced)\n");
    } else {
        python_block(&mut body, failing_body);
    }
    let _ = writeln!(body, "\n## Public tests for `{}`", method.name);
    python_block(&mut body, &method.public_suite.source);
    body.push_str("\n## Test failures\n");
    render_feedback(&mut body, feedback);
    if reflection && !history.is_empty() {
        body.push_str("\n## Earlier reflections\n");
        for (i, note) in history.iter().enumerate() {
            let _ = writeln!(body, "### Round {}\n{}", i + 1, note.trim());
        }
    }
    body.push_str("\n## Instructions\n");
    if reflection {
        let _ = write!(
            body,
            "{REFLECTION_STEPS}\nEnd with the corrected method. {}\n",
            code_instruction(&method.name)
        );
    } else {
        let _ = writeln!(
            body,
            "Fix `{}` so that every public test passes. {}",
            method.name,
            code_instruction(&method.name)
        );
    }
    bundle(
        PromptKey::new(&task.task_id, &method.name, PromptKind::Repair, round),
        DEVELOPER_ROLE,
        body,
        if reflection {
            ResponseContract::ReflectionThenCode
        } else {
            ResponseContract::SingleMethodCode
        },
    )
}

/// Whole class in one pass, no tests.
pub fn render_holistic_prompt(task: &ClassTask, skeleton_class: &str) -> PromptBundle {
    let mut body = format!(
        "Implement every unimplemented method of the class `{}` below according to its docstring.\n\n## Class skeleton\n",
        task.class_name
    );
    python_block(&mut body, skeleton_class);
    body.push_str("\n## Target methods\n");
    for m in &task.methods {
        let _ = writeln!(body, "- {}", m.name);
    }
    body.push_str(
        "\n## Instructions\nReturn the complete class, including the constructor and every target method, in a single ```python code block.\n",
    );
    bundle(
        PromptKey::new(
            &task.task_id,
            PromptKey::CLASS_WIDE,
            PromptKind::Holistic,
            0,
        ),
        DEVELOPER_ROLE,
        body,
        ResponseContract::ClassCode,
    )
}

fn method_only_prompt(
    task: &ClassTask,
    class_text: &str,
    heading: &str,
    method: &MethodSpec,
) -> PromptBundle {
    let mut body = format!(
        "Implement the method `{}` of the class `{}`.\n\n## {heading}\n",
        method.name, task.class_name
    );
    python_block(&mut body, class_text);
    body.push_str("\n## Method to implement\n");
    python_block(&mut body, &method_stub(method));
    let _ = write!(
        body,
        "\n## Instructions\nImplement only `{}` according to its docstring. {}\n",
        method.name,
        code_instruction(&method.name)
    );
    bundle(
        PromptKey::new(&task.task_id, &method.name, PromptKind::Generate, 0),
        DEVELOPER_ROLE,
        body,
        ResponseContract::SingleMethodCode,
    )
}

/// One method at a time with previously generated methods as context, no tests.
pub fn render_incremental_prompt(
    task: &ClassTask,
    partial_class: &str,
    method: &MethodSpec,
) -> PromptBundle {
    method_only_prompt(task, partial_class, "Current partial class", method)
}

/// One method from the bare skeleton and its own docstring, no tests.
pub fn render_compositional_prompt(
    task: &ClassTask,
    skeleton_class: &str,
    method: &MethodSpec,
) -> PromptBundle {
    method_only_prompt(task, skeleton_class, "Class skeleton", method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{CaseResult, CaseStatus};
    use crate::taskmodel::{assemble_class_source, fixtures::timer_task};

    fn failing_outcome(message: &str) -> TestOutcome {
        TestOutcome {
            suite_id: "TimerTest_start".into(),
            cases: vec![
                CaseResult {
                    name: "test_a".into(),
                    status: CaseStatus::Fail,
                    message: message.into(),
                    trace: "Traceback (most recent call last):\n  File \"suite.py\", line 5".into(),
                },
                CaseResult {
                    name: "test_b".into(),
                    status: CaseStatus::Pass,
                    message: String::new(),
                    trace: String::new(),
                },
            ],
            wall_time: 0.1,
            terminated: Termination::Clean,
        }
    }

    #[test]
    fn dep_prompt_lists_exactly_the_targets() {
        let task = timer_task();
        let p = render_dep_prompt(&task);
        let section = p.body.split("## Target methods\n").nth(1).unwrap();
        let listed: Vec<&str> = section
            .lines()
            .take_while(|l| l.starts_with("- "))
            .map(|l| &l[2..])
            .collect();
        assert_eq!(listed, ["start", "stop", "restart"]);
        assert!(p.body.contains(HELPER_GUIDANCE));
        assert!(p.body.contains(CONSTRUCTOR_NOTE));
        assert!(
            p.body.contains("Direct call") && p.body.contains("Documented logical prerequisite")
        );
        assert!(p.body.contains("\"dep_map\"") && p.body.contains("\"order\""));
        assert!(p.role_preamble.contains("senior software architect"));
        assert_eq!(p, render_dep_prompt(&task));
    }

    #[test]
    fn generation_prompt_sections_in_order() {
        let task = timer_task();
        let partial = assemble_class_source(&task, &Default::default())
            .unwrap()
            .module_source();
        let m = &task.methods[0];
        let p = render_generation_prompt(&task, &partial, m);
        let body = &p.body;
        let i_partial = body.find(&partial.trim_end().to_string()).unwrap();
        let i_spec = body
            .find("def start(self):\n    \"\"\"\n    start the timer")
            .unwrap();
        let i_tests = body.find(m.public_suite.source.trim_end()).unwrap();
        let i_instr = body.find("Implement only `start`").unwrap();
        assert!(i_partial < i_spec && i_spec < i_tests && i_tests < i_instr);
        let case_mentions = m
            .public_suite
            .case_names
            .iter()
            .filter(|c| body.contains(&format!("def {c}(")))
            .count();
        assert_eq!(case_mentions, m.public_suite.case_names.len());
        assert!(!body.contains(&m.private_suite.source));
    }

    #[test]
    fn repair_prompt_contains_failure_and_single_step_block() {
        let task = timer_task();
        let m = &task.methods[0];
        let outcome = failing_outcome("AssertionError: False is not true");
        let p = render_repair_prompt(
            &task,
            "class Timer: ...",
            m,
            "def start(self):\n    pass\n",
            RepairFeedback::Tests(&outcome),
            &[],
            1,
            true,
        );
        assert!(p.body.contains("AssertionError: False is not true"));
        assert!(p.body.contains("File \"suite.py\", line 5"));
        assert!(p.body.contains("def start(self):\n    pass"));
        assert!(p.body.contains(m.public_suite.source.trim_end()));
        assert_eq!(p.body.matches(REFLECTION_STEPS).count(), 1);
        assert_eq!(p.key.to_string(), "Timer_1/start/repair/1");
    }

    #[test]
    fn repair_prompt_threads_history() {
        let task = timer_task();
        let outcome = failing_outcome("boom");
        let p = render_repair_prompt(
            &task,
            "",
            &task.methods[0],
            "def start(self):\n    pass\n",
            RepairFeedback::Tests(&outcome),
            &["The flag was never set.".to_string()],
            2,
            true,
        );
        assert!(p.body.contains("### Round 1\nThe flag was never set."));
    }

    #[test]
    fn repair_without_reflection_has_no_step_block() {
        let task = timer_task();
        let outcome = failing_outcome("AssertionError: nope");
        let p = render_repair_prompt(
            &task,
            "",
            &task.methods[0],
            "def start(self):\n    pass\n",
            RepairFeedback::Tests(&outcome),
            &["ignored".to_string()],
            1,
            false,
        );
        assert!(p.body.contains("AssertionError: nope"));
        assert!(!p.body.contains("Failure analysis"));
        assert!(!p.body.contains("Earlier reflections"));
    }

    #[test]
    fn baseline_prompts_have_no_tests() {
        let task = timer_task();
        let skel = assemble_class_source(&task, &Default::default())
            .unwrap()
            .module_source();
        let prompts = [
            render_holistic_prompt(&task, &skel),
            render_incremental_prompt(&task, &skel, &task.methods[1]),
            render_compositional_prompt(&task, &skel, &task.methods[2]),
        ];
        for p in &prompts {
            for m in &task.methods {
                assert!(!p.body.contains(m.public_suite.source.trim_end()));
                assert!(!p.body.contains(m.private_suite.source.trim_end()));
            }
            assert!(!p.body.contains("unittest"));
        }
    }

    #[test]
    fn full_def_signatures_are_kept() {
        let mut task = timer_task();
        task.methods[0].signature = "def start(self, delay: int = 0) -> None:".into();
        let p = render_generation_prompt(&task, "", &task.methods[0]);
        assert!(p
            .body
            .contains("def start(self, delay: int = 0) -> None:\n    \"\"\""));
    }
}
