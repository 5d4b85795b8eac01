use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use super::{request_hash, BackendError, ChatRequest, LlmBackend};

type Responder = Box<dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync>;

/// Deterministic in-process backend that logs every request it receives.
pub struct MockBackend {
    responder: Responder,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        MockBackend { responder: Box::new(f), log: Mutex::new(Vec::new()) }
    }

    /// Replies with the last user message verbatim.
    pub fn echo() -> Self {
        MockBackend::from_fn(|req| {
            req.last_user_message()
                .map(str::to_string)
                .ok_or_else(|| BackendError::MalformedResponse("no user message".into()))
        })
    }

    /// Replies from a table keyed by [`request_hash`].
    pub fn scripted(table: HashMap<String, String>) -> Self {
        MockBackend::from_fn(move |req| {
            let hash = request_hash(req);
            table.get(&hash).cloned().ok_or_else(|| {
                BackendError::MalformedResponse(format!("mock has no scripted reply for {hash}"))
            })
        })
    }

    /// Replies with the given texts in call order, then fails.
    pub fn sequence<I: IntoIterator<Item = String>>(replies: I) -> Self {
        let queue = Mutex::new(replies.into_iter().collect::<VecDeque<_>>());
        MockBackend::from_fn(move |_| {
            queue
                .lock()
                .unwrap()
                .pop_front()
                .ok_or_else(|| BackendError::MalformedResponse("mock reply sequence exhausted".into()))
        })
    }

    /// Replies shaped like real outputs, built from the prompt itself. See
    /// [`structured_reply`].
    pub fn structured() -> Self {
        MockBackend::from_fn(|req| Ok(structured_reply(req)))
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.log.lock().unwrap().push(request.clone());
        (self.responder)(request)
    }
}

/// Builds a plausible reply from the prompt text alone.
///
/// Step prompts get their template filled with the goal text and premise
/// names; summary prompts get their numbered inputs joined into a paragraph;
/// statement and premise prompts get a one-sentence restatement. Anything
/// else gets a short reply tagged with the request hash.
pub fn structured_reply(request: &ChatRequest) -> String {
    let user = request.last_user_message().unwrap_or_default();
    if let Some(body) = field_after(user, "**Template**:") {
        return fill_template(user, body);
    }
    if let Some(section) = section(user, "# Proof Steps") {
        let items: Vec<&str> = section
            .lines()
            .filter_map(|l| l.split_once(". ").map(|(_, t)| t.trim()))
            .filter(|t| !t.is_empty())
            .collect();
        let joined = items.join(" ");
        return match section_first_line(user, "# Intermediate Goal") {
            Some(_) => joined,
            None => {
                let stmt = section_first_line(user, "# Theorem").unwrap_or("the theorem holds");
                let stmt = stmt.trim_end_matches('.');
                if joined.is_empty() {
                    format!("We show that {stmt}. This is immediate, so the proof is trivial.")
                } else {
                    format!("We show that {stmt}. {joined} This completes the proof.")
                }
            }
        };
    }
    if let Some(stmt) = field_after(user, "**Theorem Statement**:") {
        return format!("The theorem states that {}.", stmt.trim());
    }
    if let Some(name) = field_after(user, "**Name**:") {
        let ty = field_after(user, "**Type**:").unwrap_or("").trim();
        return format!("This result, {}, asserts that {}.", name.trim(), ty);
    }
    format!("Mock reply {}.", &request_hash(request)[..12])
}

/// Text following the last occurrence of `label`, on the same line if any,
/// otherwise on the next line.
fn field_after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let at = text.rfind(label)?;
    let rest = &text[at + label.len()..];
    let same_line = rest.lines().next().unwrap_or("").trim();
    if !same_line.is_empty() {
        return Some(same_line);
    }
    rest.lines().nth(1).map(str::trim)
}

fn section<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    let at = text.rfind(&format!("{header}\n"))?;
    let rest = &text[at + header.len() + 1..];
    let end = rest.find("\n# ").map(|i| i + 1).unwrap_or(rest.len());
    Some(&rest[..end])
}

fn section_first_line<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    section(text, header).and_then(|s| s.lines().next()).map(str::trim)
}

fn fill_template(user: &str, body: &str) -> String {
    let input = &user[user.rfind("**Input Information**:").unwrap_or(0)..];
    let first_goal = |label: &str| -> Option<String> {
        let at = input.find(label)?;
        input[at..]
            .lines()
            .skip(1)
            .take_while(|l| l.starts_with("  "))
            .find_map(|l| l.trim().strip_prefix("⊢ ").map(|g| format!("${g}$")))
    };
    let before = first_goal("Before Tactic Application").unwrap_or_else(|| "the goal".into());
    let after = first_goal("After Tactic Application").unwrap_or_else(|| "no remaining goal".into());
    let theorems: Vec<&str> = input
        .find("**Using Definitions and Theorems**:")
        .map(|at| {
            input[at..]
                .lines()
                .skip(1)
                .take_while(|l| l.starts_with("- "))
                .filter_map(|l| l[2..].split(':').next())
                .collect()
        })
        .unwrap_or_default();
    let theorems = if theorems.is_empty() { "the cited results".to_string() } else { theorems.join(" and ") };
    let mut out = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('[') {
        out.push_str(&rest[..open]);
        let Some(close) = rest[open..].find(']') else { break };
        let slot = &rest[open + 1..open + close];
        out.push_str(&match slot {
            "goalsBefore" => before.clone(),
            "goalsAfter" | "newGoal" => after.clone(),
            "theorems" => theorems.clone(),
            "assumptions" => "the hypotheses introduced earlier".to_string(),
            "introduced" => "the new variables and hypotheses".to_string(),
            "witness" => "the given witness".to_string(),
            "tacticText" => "the applied tactic".to_string(),
            other => format!("the {other}"),
        });
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out
}
