use crate::depgraph::Schedule;
use crate::pysrc;
use crate::taskmodel::{ClassTask, CONSTRUCTOR};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Predicted `method -> prerequisites` map and generation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepAnalysisResult {
    pub dep_map: BTreeMap<String, Vec<String>>,
    #[serde(flatten)]
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DepParseError {
    #[error("no JSON object found in the response")]
    NoJson,
    #[error("invalid dependency JSON: {0}")]
    InvalidJson(String),
    #[error("the constructor __init__ must not appear in the analysis")]
    Constructor,
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("dep_map is missing method '{0}'")]
    MissingKey(String),
    #[error("method '{0}' lists itself as a dependency")]
    SelfDependency(String),
    #[error("order must list every target method exactly once (missing: {missing:?}, extra: {extra:?}, repeated: {repeated:?})")]
    Order {
        missing: Vec<String>,
        extra: Vec<String>,
        repeated: Vec<String>,
    },
}

#[derive(Deserialize)]
struct RawAnalysis {
    dep_map: BTreeMap<String, Vec<String>>,
    order: Vec<String>,
}

/// Contents of every fenced block, with the info string (language tag).
fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut current: Option<(String, String)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match current.take() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    current = Some((info.trim().to_lowercase(), String::new()));
                }
            }
            Some((info, mut body)) => {
                if trimmed.starts_with("```") {
                    blocks.push((info, body));
                } else {
                    body.push_str(line);
                    body.push('\n');
                    current = Some((info, body));
                }
            }
        }
    }
    // an unterminated fence still counts
    if let Some(open) = current {
        blocks.push(open);
    }
    blocks
}

fn json_candidates(text: &str) -> Vec<serde_json::Value> {
    let mut sources: Vec<String> = fenced_blocks(text)
        .into_iter()
        .filter(|(_, body)| body.contains('{'))
        .map(|(_, body)| body)
        .collect();
    sources.push(text.to_string());
    let mut out = Vec::new();
    for src in sources {
        for (i, _) in src.match_indices('{') {
            let mut stream =
                serde_json::Deserializer::from_str(&src[i..]).into_iter::<serde_json::Value>();
            if let Some(Ok(v @ serde_json::Value::Object(_))) = stream.next() {
                out.push(v);
                break;
            }
        }
        if !out.is_empty() {
            break;
        }
    }
    out
}

/// Extracts and validates a dependency analysis (optionally fenced JSON).
pub fn parse_dep_response(
    text: &str,
    task: &ClassTask,
) -> Result<DepAnalysisResult, DepParseError> {
    let value = json_candidates(text)
        .into_iter()
        .next()
        .ok_or(DepParseError::NoJson)?;
    let raw: RawAnalysis =
        serde_json::from_value(value).map_err(|e| DepParseError::InvalidJson(e.to_string()))?;
    let targets: BTreeSet<&str> = task.methods.iter().map(|m| m.name.as_str()).collect();

    let all_names = raw
        .dep_map
        .iter()
        .flat_map(|(k, v)| std::iter::once(k).chain(v.iter()))
        .chain(raw.order.iter());
    for name in all_names {
        if name == CONSTRUCTOR {
            return Err(DepParseError::Constructor);
        }
        if !targets.contains(name.as_str()) {
            return Err(DepParseError::UnknownMethod(name.clone()));
        }
    }
    if let Some(missing) = task
        .methods
        .iter()
        .find(|m| !raw.dep_map.contains_key(&m.name))
    {
        return Err(DepParseError::MissingKey(missing.name.clone()));
    }
    let mut dep_map = BTreeMap::new();
    for (method, deps) in raw.dep_map {
        if deps.contains(&method) {
            return Err(DepParseError::SelfDependency(method));
        }
        let mut seen = BTreeSet::new();
        let deps: Vec<String> = deps
            .into_iter()
            .filter(|d| seen.insert(d.clone()))
            .collect();
        dep_map.insert(method, deps);
    }

    let mut seen = BTreeSet::new();
    let repeated: Vec<String> = raw
        .order
        .iter()
        .filter(|n| !seen.insert(n.as_str()))
        .cloned()
        .collect();
    let missing: Vec<String> = task
        .methods
        .iter()
        .filter(|m| !seen.contains(m.name.as_str()))
        .map(|m| m.name.clone())
        .collect();
    if !missing.is_empty() || !repeated.is_empty() {
        return Err(DepParseError::Order {
            missing,
            extra: Vec::new(),
            repeated,
        });
    }
    Ok(DepAnalysisResult {
        dep_map,
        schedule: Schedule::new(raw.order),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("no definition of '{method}' found in the response{}", found_note(.found))]
    NotFound { method: String, found: Vec<String> },
    #[error("{count} conflicting definitions of '{method}' in the response")]
    Conflicting { method: String, count: usize },
}

fn found_note(found: &[String]) -> String {
    if found.is_empty() {
        String::new()
    } else {
        format!(" (it defines {})", found.join(", "))
    }
}

fn defined_functions(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let t = l.trim_start();
            t.strip_prefix("def ")
                .or_else(|| t.strip_prefix("async def "))
        })
        .filter_map(|rest| rest.split('(').next())
        .map(|n| n.trim().to_string())
        .collect()
}

/// Line-based fallback: the `def` of `method` plus following lines that are
/// blank or indented deeper, and decorators directly above it.
fn scan_definitions(text: &str, method: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let prefixes = [format!("def {method}("), format!("async def {method}(")];
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let trimmed = line.trim_start();
        if !prefixes.iter().any(|p| trimmed.starts_with(p.as_str())) {
            continue;
        }
        let indent = line.len() - trimmed.len();
        let mut start = i;
        while start > 0 {
            let prev = lines[start - 1];
            if prev.trim_start().starts_with('@') && prev.len() - prev.trim_start().len() == indent
            {
                start -= 1;
            } else {
                break;
            }
        }
        let mut end = i + 1;
        while end < lines.len() {
            let l = lines[end];
            if l.trim().is_empty() || l.len() - l.trim_start().len() > indent {
                end += 1;
            } else {
                break;
            }
        }
        let candidate = lines[start..end].join("\n");
        if let Ok((name, text)) = pysrc::parse_single_function(&candidate) {
            if name == method {
                out.push(text);
            }
        }
    }
    out
}

fn defs_in(code: &str, method: &str) -> Vec<String> {
    match pysrc::find_function_defs(code, method) {
        Ok(defs) => defs,
        Err(_) => scan_definitions(code, method),
    }
}

/// Extracts the definition of `method_name` from a model response.
/// Fenced code is preferred; plain text is scanned when no fenced block
/// defines the method.
pub fn extract_method_code(text: &str, method_name: &str) -> Result<String, ExtractError> {
    let blocks = fenced_blocks(text);
    let mut defs: Vec<String> = blocks
        .iter()
        .flat_map(|(_, code)| defs_in(code, method_name))
        .collect();
    if defs.is_empty() {
        defs = defs_in(text, method_name);
    }
    let mut distinct: Vec<String> = Vec::new();
    for d in defs {
        let d = pysrc::normalize_ws(&d);
        if !distinct.contains(&d) {
            distinct.push(d);
        }
    }
    match distinct.len() {
        1 => Ok(distinct.remove(0)),
        0 => {
            let mut found: Vec<String> = if blocks.is_empty() {
                defined_functions(text)
            } else {
                blocks
                    .iter()
                    .flat_map(|(_, c)| defined_functions(c))
                    .collect()
            };
            found.dedup();
            Err(ExtractError::NotFound {
                method: method_name.to_string(),
                found,
            })
        }
        count => Err(ExtractError::Conflicting {
            method: method_name.to_string(),
            count,
        }),
    }
}

/// Definitions of every target method found in a whole-class response.
pub fn extract_class_methods(text: &str, task: &ClassTask) -> BTreeMap<String, String> {
    task.methods
        .iter()
        .filter_map(|m| {
            extract_method_code(text, &m.name)
                .ok()
                .map(|d| (m.name.clone(), d))
        })
        .collect()
}

/// Prose of a repair response with fenced code removed.
pub fn extract_reflection(text: &str) -> String {
    let mut out = String::new();
    let mut in_fence = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if !in_fence {
            out.push_str(line);
            out.push('\n');
        }
    }
    out.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskmodel::fixtures::timer_task;
    use proptest::prelude::*;

    #[test]
    fn fenced_json_is_parsed() {
        let text = "Here is the analysis.\n```json\n{\"dep_map\": {\"start\": [], \"stop\": [], \"restart\": [\"stop\", \"start\", \"stop\"]},\n \"order\": [\"start\", \"stop\", \"restart\"]}\n```\n";
        let r = parse_dep_response(text, &timer_task()).unwrap();
        assert_eq!(r.dep_map["restart"], ["stop", "start"]);
        assert_eq!(r.schedule.order, ["start", "stop", "restart"]);
    }

    #[test]
    fn bare_json_with_prose() {
        let text = "Sure! {\"dep_map\": {\"start\": [], \"stop\": [], \"restart\": []}, \"order\": [\"restart\", \"stop\", \"start\"]} Done.";
        assert!(parse_dep_response(text, &timer_task()).is_ok());
    }

    #[test]
    fn omitted_method_in_order_is_named() {
        let text =
            r#"{"dep_map": {"start": [], "stop": [], "restart": []}, "order": ["start", "stop"]}"#;
        match parse_dep_response(text, &timer_task()).unwrap_err() {
            DepParseError::Order { missing, .. } => assert_eq!(missing, ["restart"]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn constructor_is_a_schema_error() {
        let text = r#"{"dep_map": {"__init__": [], "start": [], "stop": [], "restart": []}, "order": ["start", "stop", "restart"]}"#;
        assert_eq!(
            parse_dep_response(text, &timer_task()).unwrap_err(),
            DepParseError::Constructor
        );
    }

    #[test]
    fn other_schema_errors() {
        let task = timer_task();
        assert_eq!(
            parse_dep_response("no json here", &task).unwrap_err(),
            DepParseError::NoJson
        );
        let unknown = r#"{"dep_map": {"start": ["tick"], "stop": [], "restart": []}, "order": ["start", "stop", "restart"]}"#;
        assert_eq!(
            parse_dep_response(unknown, &task).unwrap_err(),
            DepParseError::UnknownMethod("tick".into())
        );
        let missing =
            r#"{"dep_map": {"start": [], "stop": []}, "order": ["start", "stop", "restart"]}"#;
        assert_eq!(
            parse_dep_response(missing, &task).unwrap_err(),
            DepParseError::MissingKey("restart".into())
        );
        let selfdep = r#"{"dep_map": {"start": ["start"], "stop": [], "restart": []}, "order": ["start", "stop", "restart"]}"#;
        assert_eq!(
            parse_dep_response(selfdep, &task).unwrap_err(),
            DepParseError::SelfDependency("start".into())
        );
        assert!(matches!(
            parse_dep_response(r#"{"dep_map": 3, "order": []}"#, &task).unwrap_err(),
            DepParseError::InvalidJson(_)
        ));
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            deps in proptest::collection::vec(proptest::collection::btree_set(0usize..3, 0..3), 3),
            order in Just(vec![0usize, 1, 2]).prop_shuffle(),
        ) {
            let task = timer_task();
            let names = task.method_names();
            let dep_map: BTreeMap<String, Vec<String>> = deps.iter().enumerate().map(|(i, set)| {
                (names[i].to_string(), set.iter().filter(|&&j| j != i).map(|&j| names[j].to_string()).collect())
            }).collect();
            let value = DepAnalysisResult {
                dep_map,
                schedule: Schedule::new(order.iter().map(|&i| names[i].to_string()).collect()),
            };
            let text = serde_json::to_string(&value).unwrap();
            prop_assert_eq!(parse_dep_response(&text, &task).unwrap(), value);
        }
    }

    #[test]
    fn fenced_single_def() {
        let text = "```python\ndef start(self):\n    self.running = True\n```";
        assert_eq!(
            extract_method_code(text, "start").unwrap(),
            "def start(self):\n    self.running = True\n"
        );
    }

    #[test]
    fn prose_then_unfenced_code() {
        let text = "The bug was the flag.\n\n    def start(self):\n        self.running = True\n        return None\n\nThat should fix it.";
        assert_eq!(
            extract_method_code(text, "start").unwrap(),
            "def start(self):\n    self.running = True\n    return None\n"
        );
    }

    #[test]
    fn method_inside_returned_class() {
        let text = "```python\nclass Timer:\n    def __init__(self):\n        self.running = False\n\n    @property\n    def start(self):\n        return 1\n```";
        assert_eq!(
            extract_method_code(text, "start").unwrap(),
            "@property\ndef start(self):\n    return 1\n"
        );
    }

    #[test]
    fn other_name_is_an_error() {
        let text = "```python\ndef begin(self):\n    pass\n```";
        match extract_method_code(text, "start").unwrap_err() {
            ExtractError::NotFound { found, .. } => assert_eq!(found, ["begin"]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn conflicting_defs_are_an_error() {
        let text = "```python\ndef start(self):\n    return 1\n```\nor\n```python\ndef start(self):\n    return 2\n```";
        assert!(matches!(
            extract_method_code(text, "start"),
            Err(ExtractError::Conflicting { count: 2, .. })
        ));
        let same = "```python\ndef start(self):\n    return 1\n```\n```python\n    def start(self):\n        return 1\n```";
        assert!(extract_method_code(same, "start").is_ok());
    }

    #[test]
    fn reflection_strips_code() {
        let text =
            "1. Failure analysis: flag unset.\n```python\ndef start(self):\n    pass\n```\nDone.";
        assert_eq!(
            extract_reflection(text),
            "1. Failure analysis: flag unset.\nDone."
        );
    }

    #[test]
    fn class_response_yields_all_found_methods() {
        let text = "```python\nclass Timer:\n    def start(self):\n        self.running = True\n    def restart(self):\n        self.stop()\n        self.start()\n```";
        let got = extract_class_methods(text, &timer_task());
        assert_eq!(got.keys().collect::<Vec<_>>(), ["restart", "start"]);
    }
}
