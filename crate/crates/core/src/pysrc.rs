//! Thin layer over the Python parser: syntax checks with line/column
//! locations, method-region discovery inside a class, and indentation
//! helpers used when splicing generated code into a skeleton.

use rustpython_ast::Ranged;
use rustpython_parser::{ast, Parse};
use std::fmt;

/// A syntax error located in the parsed text (1-based line and column).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub message: String,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at line {}, column {}",
            self.message, self.line, self.column
        )
    }
}

impl std::error::Error for SyntaxError {}

/// Byte offsets of the start of every line.
#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<usize>,
}

impl LineIndex {
    pub fn new(text: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
        Self { starts }
    }

    /// 0-based line containing `offset`.
    pub fn line_of(&self, offset: usize) -> usize {
        match self.starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    pub fn line_start(&self, line: usize) -> usize {
        self.starts[line]
    }

    /// 1-based (line, column) of a byte offset.
    pub fn location(&self, text: &str, offset: usize) -> (usize, usize) {
        let offset = offset.min(text.len());
        let line = self.line_of(offset);
        let col = text[self.starts[line]..offset].chars().count();
        (line + 1, col + 1)
    }
}

pub fn parse_module(source: &str) -> Result<ast::Suite, SyntaxError> {
    ast::Suite::parse(source, "<module>").map_err(|e| {
        let index = LineIndex::new(source);
        let (line, column) = index.location(source, e.offset.to_usize());
        SyntaxError {
            message: e.error.to_string(),
            line,
            column,
        }
    })
}

pub fn find_class<'a>(suite: &'a [ast::Stmt], name: &str) -> Option<&'a ast::StmtClassDef> {
    suite.iter().find_map(|stmt| match stmt {
        ast::Stmt::ClassDef(c) if c.name.as_str() == name => Some(c),
        _ => None,
    })
}

/// Location of one method definition inside a class body, in lines of
/// the source it was discovered in.
#[derive(Debug, Clone)]
pub struct MethodRegion {
    pub name: String,
    /// First line (decorators included), 0-based.
    pub start_line: usize,
    /// One past the last line that belongs to the method.
    pub end_line: usize,
    /// Leading whitespace of the `def` line.
    pub indent: String,
    /// Text from the start of the first decorator/def line up to the first
    /// body statement, always ending with a newline.
    pub header: String,
    /// Full lines of a leading docstring statement, if the body has one.
    pub docstring: Option<String>,
    /// Indentation used by the body statements.
    pub body_indent: String,
}

fn leading_ws(line: &str) -> &str {
    let trimmed = line.trim_start_matches([' ', '\t']);
    &line[..line.len() - trimmed.len()]
}

fn is_docstring(stmt: &ast::Stmt) -> bool {
    matches!(
        stmt,
        ast::Stmt::Expr(e) if matches!(
            e.value.as_ref(),
            ast::Expr::Constant(c) if matches!(c.value, ast::Constant::Str(_))
        )
    )
}

struct FnParts<'a> {
    name: &'a str,
    start: usize,
    end: usize,
    decorators: &'a [ast::Expr],
    body: &'a [ast::Stmt],
}

fn fn_parts(stmt: &ast::Stmt) -> Option<FnParts<'_>> {
    match stmt {
        ast::Stmt::FunctionDef(f) => Some(FnParts {
            name: f.name.as_str(),
            start: f.range().start().to_usize(),
            end: f.range().end().to_usize(),
            decorators: &f.decorator_list,
            body: &f.body,
        }),
        ast::Stmt::AsyncFunctionDef(f) => Some(FnParts {
            name: f.name.as_str(),
            start: f.range().start().to_usize(),
            end: f.range().end().to_usize(),
            decorators: &f.decorator_list,
            body: &f.body,
        }),
        _ => None,
    }
}

/// Regions for every function defined directly in `class` (source order).
pub fn method_regions(source: &str, class: &ast::StmtClassDef) -> Vec<MethodRegion> {
    let index = LineIndex::new(source);
    let lines: Vec<&str> = source.split('\n').collect();
    let mut out = Vec::new();
    for stmt in &class.body {
        let Some(parts) = fn_parts(stmt) else {
            continue;
        };
        let first = parts
            .decorators
            .iter()
            .map(|d| d.range().start().to_usize())
            .chain(std::iter::once(parts.start))
            .min()
            .unwrap_or(parts.start);
        let start_line = index.line_of(first);
        let def_line = index.line_of(parts.start);
        let indent = leading_ws(lines[def_line]).to_string();

        // Extend past the last statement over deeper-indented or blank lines
        // (trailing comments), then drop trailing blanks.
        let mut end_line = index.line_of(parts.end.saturating_sub(1).max(parts.start)) + 1;
        while end_line < lines.len() {
            let l = lines[end_line];
            if l.trim().is_empty() || leading_ws(l).len() > indent.len() {
                end_line += 1;
            } else {
                break;
            }
        }
        while end_line > def_line + 1 && lines[end_line - 1].trim().is_empty() {
            end_line -= 1;
        }

        let first_body = &parts.body[0];
        let body_start = first_body.range().start().to_usize();
        let body_line = index.line_of(body_start);
        let region_start = index.line_start(start_line);
        let (header, body_indent) = if body_line > def_line {
            (
                source[region_start..index.line_start(body_line)].to_string(),
                leading_ws(lines[body_line]).to_string(),
            )
        } else {
            // One-line form `def f(self): ...`
            let mut h = source[region_start..body_start].trim_end().to_string();
            h.push('\n');
            (h, format!("{indent}    "))
        };
        let docstring = if is_docstring(first_body) && body_line > def_line {
            let doc_end = index.line_of(first_body.range().end().to_usize().saturating_sub(1)) + 1;
            Some(lines[body_line..doc_end].join("\n") + "\n")
        } else {
            None
        };
        out.push(MethodRegion {
            name: parts.name.to_string(),
            start_line,
            end_line,
            indent,
            header,
            docstring,
            body_indent,
        });
    }
    out
}

/// Names of functions defined directly in `class`.
pub fn class_method_names(class: &ast::StmtClassDef) -> Vec<String> {
    class
        .body
        .iter()
        .filter_map(fn_parts)
        .map(|p| p.name.to_string())
        .collect()
}

/// Remove the indentation of the first non-blank line from every line.
/// Lines indented less than that (continuation of a multi-line string)
/// lose only their leading whitespace up to that width.
pub fn dedent(text: &str) -> String {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let width = leading_ws(first).len();
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let ws = leading_ws(line).len().min(width);
        out.push_str(&line[ws..]);
        out.push('\n');
    }
    out
}

/// Prefix every non-blank line with `indent`.
pub fn indent(text: &str, indent: &str) -> String {
    let mut out = String::with_capacity(text.len() + indent.len() * 8);
    for line in text.lines() {
        if !line.trim().is_empty() {
            out.push_str(indent);
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

/// Strip trailing whitespace on every line and normalize newlines to LF.
pub fn normalize_ws(text: &str) -> String {
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut out: String = text
        .split('\n')
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n");
    let trimmed = out.trim_end_matches('\n').len();
    out.truncate(trimmed);
    out.push('\n');
    out
}

/// Checks that `text` is exactly one function definition (decorators
/// allowed) and returns its name together with the dedented text.
pub fn parse_single_function(text: &str) -> Result<(String, String), SingleFunctionError> {
    let dedented = dedent(text);
    let suite = parse_module(&dedented).map_err(SingleFunctionError::Syntax)?;
    match suite.as_slice() {
        [stmt] => match fn_parts(stmt) {
            Some(p) => Ok((p.name.to_string(), dedented)),
            None => Err(SingleFunctionError::NotAFunction),
        },
        [] => Err(SingleFunctionError::Empty),
        _ => Err(SingleFunctionError::MultipleStatements(suite.len())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SingleFunctionError {
    #[error("syntax error: {0}")]
    Syntax(SyntaxError),
    #[error("text is empty")]
    Empty,
    #[error("text is not a function definition")]
    NotAFunction,
    #[error("expected a single function definition, found {0} top-level statements")]
    MultipleStatements(usize),
}

/// Every function definition with the given name anywhere in `source`
/// (top level or inside a top-level class), as dedented text.
pub fn find_function_defs(source: &str, name: &str) -> Result<Vec<String>, SyntaxError> {
    let suite = parse_module(source)?;
    let lines: Vec<&str> = source.split('\n').collect();
    let index = LineIndex::new(source);
    let mut found = Vec::new();
    let mut take = |stmt: &ast::Stmt| {
        if let Some(p) = fn_parts(stmt) {
            if p.name == name {
                let first = p
                    .decorators
                    .iter()
                    .map(|d| d.range().start().to_usize())
                    .chain(std::iter::once(p.start))
                    .min()
                    .unwrap_or(p.start);
                let start_line = index.line_of(first);
                let def_line = index.line_of(p.start);
                let own_indent = leading_ws(lines[def_line]).len();
                let mut end_line = index.line_of(p.end.saturating_sub(1).max(p.start)) + 1;
                while end_line < lines.len()
                    && !lines[end_line].trim().is_empty()
                    && leading_ws(lines[end_line]).len() > own_indent
                {
                    end_line += 1;
                }
                found.push(dedent(&lines[start_line..end_line].join("\n")));
            }
        }
    };
    for stmt in &suite {
        take(stmt);
        if let ast::Stmt::ClassDef(c) = stmt {
            c.body.iter().for_each(&mut take);
        }
    }
    Ok(found)
}
