//! Prompt construction, chat transport and reply validation for profile
//! advice.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, Semaphore};

use crate::catalog::{normalize_network, Catalog, Location, NetworkType};
use crate::records::{HeaderList, UserProfile};

pub const SYSTEM_TEMPLATE: &str = include_str!("../prompts/profile_system.txt");
pub const USER_TEMPLATE: &str = include_str!("../prompts/profile_user.txt");

/// Appended to the user message on the repair attempt.
pub const REPAIR_SUFFIX: &str = "\n\nReturn ONLY the JSON object.";

/// Rendered in place of an empty example list.
pub const NO_EXAMPLES: &str = "None available.";

pub const REQUIRED_KEYS: [&str; 5] = ["target_victim", "http_header", "ip_location", "network_provider", "reason"];

const SUCCESS_HEADING: &str = "1. Successful Crawling Example (examples of successful accesses):";
const FAILURE_HEADING: &str = "2. Failed Crawling Example (examples of sites using cloaking techniques):";
const CLOSING_LINE: &str = "Based on this information and the reference examples, provide recommendations for:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
}

fn render_examples(views: &[String]) -> String {
    if views.is_empty() {
        return NO_EXAMPLES.to_string();
    }
    views
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{}. {}", i + 1, v))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fills the advice template. Views are expected to be single-line.
pub fn build_prompt(url: &str, success_views: &[String], failure_views: &[String]) -> PromptBundle {
    let user_text = USER_TEMPLATE
        .replace("{url}", url)
        .replace("{successful_examples}", &render_examples(success_views))
        .replace("{failed_examples}", &render_examples(failure_views));
    PromptBundle {
        system_text: SYSTEM_TEMPLATE.to_string(),
        user_text,
    }
}

/// Recovers the example views from a rendered user message.
pub fn parse_prompt_examples(user_text: &str) -> (Vec<String>, Vec<String>) {
    fn section(lines: &[&str]) -> Vec<String> {
        lines
            .iter()
            .filter_map(|l| {
                let (num, rest) = l.split_once(". ")?;
                num.chars().all(|c| c.is_ascii_digit()).then(|| rest.to_string())
            })
            .filter(|v| v != NO_EXAMPLES)
            .collect()
    }
    let lines: Vec<&str> = user_text.lines().collect();
    let pos = |needle: &str| lines.iter().position(|l| *l == needle);
    match (pos(SUCCESS_HEADING), pos(FAILURE_HEADING), pos(CLOSING_LINE)) {
        (Some(s), Some(f), Some(c)) if s < f && f < c => (section(&lines[s + 1..f]), section(&lines[f + 1..c])),
        _ => (Vec::new(), Vec::new()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecommendation {
    pub target_victim: String,
    pub http_header: HeaderList,
    pub ip_location: String,
    pub network_provider: String,
    pub reason: String,
}

impl ProfileRecommendation {
    pub fn profile(&self) -> UserProfile {
        UserProfile {
            http_header: self.http_header.clone(),
            ip_location: self.ip_location.clone(),
            network_provider: self.network_provider.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplyError {
    #[error("no JSON object in reply")]
    NoObject,
    #[error("missing key {0}")]
    MissingKey(&'static str),
    #[error("key {0} has the wrong type")]
    WrongType(&'static str),
    #[error("http_header has no User-Agent")]
    MissingUserAgent,
}

/// Returns the first balanced `{...}` span that parses as a JSON object.
/// Braces inside string literals are ignored.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let bytes = text.as_bytes();
    for (start, _) in text.match_indices('{') {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(end) = end else { continue };
        if let Ok(Value::Object(map)) = serde_json::from_str(&text[start..=end]) {
            return Some(map);
        }
    }
    None
}

fn string_field(map: &serde_json::Map<String, Value>, key: &'static str) -> Result<String, ReplyError> {
    match map.get(key) {
        None => Err(ReplyError::MissingKey(key)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(ReplyError::WrongType(key)),
    }
}

/// Parses a model reply into a recommendation. Prose or code fences around
/// the object are tolerated.
pub fn parse_reply(raw: &str) -> Result<ProfileRecommendation, ReplyError> {
    let map = extract_json_object(raw).ok_or(ReplyError::NoObject)?;
    for key in REQUIRED_KEYS {
        if !map.contains_key(key) {
            return Err(ReplyError::MissingKey(key));
        }
    }
    let Some(Value::Object(header_map)) = map.get("http_header") else {
        return Err(ReplyError::WrongType("http_header"));
    };
    let mut headers = HeaderList::new();
    for (k, v) in header_map {
        match v {
            Value::String(s) => headers.set(k.clone(), s.clone()),
            Value::Number(n) => headers.set(k.clone(), n.to_string()),
            Value::Bool(b) => headers.set(k.clone(), b.to_string()),
            _ => return Err(ReplyError::WrongType("http_header")),
        }
    }
    let rec = ProfileRecommendation {
        target_victim: string_field(&map, "target_victim")?,
        http_header: headers,
        ip_location: string_field(&map, "ip_location")?,
        network_provider: string_field(&map, "network_provider")?,
        reason: string_field(&map, "reason")?,
    };
    if rec.profile().user_agent().is_none() {
        return Err(ReplyError::MissingUserAgent);
    }
    Ok(rec)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ChatError {
    #[error("chat backend misconfigured: {0}")]
    Config(String),
    #[error("chat transport failed: {0}")]
    Transport(String),
    #[error("chat endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("chat response malformed: {0}")]
    Malformed(String),
}

impl ChatError {
    fn is_retryable(&self) -> bool {
        match self {
            ChatError::Transport(_) => true,
            ChatError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync + fmt::Debug {
    async fn complete(&self, bundle: &PromptBundle) -> Result<ChatReply, ChatError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// `openai` for an OpenAI-compatible endpoint, `mock` for the
    /// deterministic offline backend.
    pub backend: String,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub api_key_env: String,
    pub transport_retries: u32,
    pub backoff_ms: u64,
    pub repair_retries: u32,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: "openai".into(),
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            api_key_env: "OPENAI_API_KEY".into(),
            transport_retries: 2,
            backoff_ms: 500,
            repair_retries: 1,
            max_in_flight: 4,
            timeout_secs: 60,
        }
    }
}

impl LlmConfig {
    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, ChatError> {
        match self.backend.as_str() {
            "openai" => Ok(Arc::new(OpenAiChat::new(self.clone())?)),
            "mock" => Ok(Arc::new(MockChat::new())),
            other => Err(ChatError::Config(format!("unknown llm backend {other:?}"))),
        }
    }
}

/// Client for `POST {endpoint}/chat/completions`. The API key is read from
/// the configured environment variable on every request.
pub struct OpenAiChat {
    cfg: LlmConfig,
    client: reqwest::Client,
    gate: Semaphore,
}

impl fmt::Debug for OpenAiChat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiChat")
            .field("endpoint", &self.cfg.endpoint)
            .field("model", &self.cfg.model)
            .field("api_key_env", &self.cfg.api_key_env)
            .finish()
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    #[serde(default)]
    content: Option<String>,
}

impl OpenAiChat {
    pub fn new(cfg: LlmConfig) -> Result<Self, ChatError> {
        if cfg.max_in_flight == 0 {
            return Err(ChatError::Config("max_in_flight must be positive".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build()
            .map_err(|e| ChatError::Config(e.to_string()))?;
        let gate = Semaphore::new(cfg.max_in_flight);
        Ok(Self { cfg, client, gate })
    }

    async fn attempt(&self, bundle: &PromptBundle) -> Result<ChatReply, ChatError> {
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
        });
        let mut req = self.client.post(url).json(&body);
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| ChatError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ChatError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let parsed: CompletionResponse = serde_json::from_str(&text).map_err(|e| ChatError::Malformed(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ChatError::Malformed("no choices".into()))?;
        Ok(ChatReply {
            content,
            usage: parsed.usage,
        })
    }
}

#[async_trait]
impl ChatBackend for OpenAiChat {
    async fn complete(&self, bundle: &PromptBundle) -> Result<ChatReply, ChatError> {
        let _permit = self.gate.acquire().await.expect("semaphore never closed");
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(bundle).await {
                Err(e) if e.is_retryable() && attempt < self.cfg.transport_retries => {
                    tracing::warn!(error = %e, attempt, "chat request failed, retrying");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Returns canned replies in order, then repeats the last one.
#[derive(Debug)]
pub struct ScriptedChat {
    replies: Mutex<Vec<Result<String, ChatError>>>,
    last: Mutex<Option<Result<String, ChatError>>>,
    calls: std::sync::atomic::AtomicUsize,
}

impl ScriptedChat {
    pub fn new(replies: Vec<Result<String, ChatError>>) -> Self {
        let mut replies = replies;
        replies.reverse();
        Self {
            replies: Mutex::new(replies),
            last: Mutex::new(None),
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for ScriptedChat {
    async fn complete(&self, _bundle: &PromptBundle) -> Result<ChatReply, ChatError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let next = self.replies.lock().await.pop();
        let mut last = self.last.lock().await;
        let reply = match next {
            Some(r) => {
                *last = Some(r.clone());
                r
            }
            None => last.clone().unwrap_or_else(|| Err(ChatError::Transport("no scripted reply".into()))),
        };
        reply.map(|content| ChatReply { content, usage: None })
    }
}

/// Deterministic offline advisor. Recommends the most common
/// (country, network) among the successful examples, with the first
/// success's User-Agent.
#[derive(Debug, Default)]
pub struct MockChat;

impl MockChat {
    pub fn new() -> Self {
        Self
    }
}

#[async_trait]
impl ChatBackend for MockChat {
    async fn complete(&self, bundle: &PromptBundle) -> Result<ChatReply, ChatError> {
        Ok(ChatReply {
            content: mock_llm(bundle),
            usage: None,
        })
    }
}

struct ViewFacts {
    country: Option<String>,
    network: Option<NetworkType>,
    user_agent: Option<String>,
}

fn view_facts(view: &str) -> ViewFacts {
    let value: Value = serde_json::from_str(view)
        .ok()
        .or_else(|| {
            // A truncated view still has the environment block first.
            let end = view.find(",\"main_communications\"")?;
            serde_json::from_str(&format!("{}}}", &view[..end])).ok()
        })
        .unwrap_or(Value::Null);
    let env = &value["environment"];
    let country = env["ip_geolocation"]["country"]
        .as_str()
        .filter(|s| !s.is_empty())
        .map(|c| Location::from_iso2(c).map(|l| l.name().to_string()).unwrap_or_else(|| c.to_string()));
    let network = env["asn"]["name"].as_str().and_then(normalize_network);
    let user_agent = value["main_communications"]["request"]["headers"]
        .as_object()
        .and_then(|h| h.iter().find(|(k, _)| k.eq_ignore_ascii_case("user-agent")))
        .and_then(|(_, v)| v.as_str())
        .map(str::to_string);
    ViewFacts {
        country,
        network,
        user_agent,
    }
}

/// The reply [`MockChat`] gives for a prompt. With no usable successful
/// examples it recommends the Standard crawler profile.
pub fn mock_llm(bundle: &PromptBundle) -> String {
    let (successes, _) = parse_prompt_examples(&bundle.user_text);
    let facts: Vec<ViewFacts> = successes.iter().map(|v| view_facts(v)).collect();
    let mut counts: std::collections::BTreeMap<(String, &'static str), usize> = Default::default();
    for f in &facts {
        if let (Some(c), Some(n)) = (&f.country, f.network) {
            *counts.entry((c.clone(), n.name())).or_default() += 1;
        }
    }
    // BTreeMap iteration is ascending, so the first maximum is the
    // lexicographically smallest pair.
    let best = counts.iter().fold(None::<(&(String, &str), usize)>, |acc, (k, &n)| match acc {
        Some((_, m)) if m >= n => acc,
        _ => Some((k, n)),
    });
    let user_agent = facts.iter().find_map(|f| f.user_agent.clone());
    let reply = match (best, user_agent) {
        (Some(((country, network), n)), Some(ua)) => json!({
            "target_victim": format!("Users browsing from {country} on {network} networks"),
            "http_header": {"User-Agent": ua},
            "ip_location": country,
            "network_provider": network,
            "reason": format!("{n} of {} successful reference crawls came from {country} over {network} egress", successes.len()),
        }),
        _ => {
            let standard = Catalog::builtin().standard_entry();
            json!({
                "target_victim": "Unknown",
                "http_header": {"User-Agent": standard.user_agent},
                "ip_location": standard.location.name(),
                "network_provider": standard.network.name(),
                "reason": "No successful reference crawls to generalize from",
            })
        }
    };
    reply.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Advice {
    pub recommendation: ProfileRecommendation,
    pub raw_replies: Vec<String>,
    pub usage: Vec<TokenUsage>,
    /// True when the accepted reply came from a repair attempt.
    pub repaired: bool,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum AdviceError {
    #[error("advice unavailable after {} replies: {}", raw_replies.len(), reasons.join("; "))]
    Unavailable { raw_replies: Vec<String>, reasons: Vec<String> },
    #[error("chat transport failed: {error}")]
    Transport { error: ChatError, raw_replies: Vec<String> },
}

impl AdviceError {
    pub fn raw_replies(&self) -> &[String] {
        match self {
            AdviceError::Unavailable { raw_replies, .. } | AdviceError::Transport { raw_replies, .. } => raw_replies,
        }
    }
}

/// Asks the backend for a profile. A reply that fails validation is
/// retried `repair_retries` times with a stricter instruction appended.
pub async fn request_profile(
    backend: &dyn ChatBackend,
    bundle: &PromptBundle,
    repair_retries: u32,
) -> Result<Advice, AdviceError> {
    let mut raw_replies = Vec::new();
    let mut usage = Vec::new();
    let mut reasons = Vec::new();
    let mut current = bundle.clone();
    for attempt in 0..=repair_retries {
        if attempt == 1 {
            current.user_text.push_str(REPAIR_SUFFIX);
        }
        let reply = match backend.complete(&current).await {
            Ok(r) => r,
            Err(error) => return Err(AdviceError::Transport { error, raw_replies }),
        };
        raw_replies.push(reply.content.clone());
        usage.extend(reply.usage);
        match parse_reply(&reply.content) {
            Ok(recommendation) => {
                return Ok(Advice {
                    recommendation,
                    raw_replies,
                    usage,
                    repaired: attempt > 0,
                })
            }
            Err(e) => reasons.push(e.to_string()),
        }
    }
    Err(AdviceError::Unavailable { raw_replies, reasons })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{fixtures, prompt_view};

    const GOOD: &str = r#"{"target_victim":"Japanese users","http_header":{"User-Agent":"Mozilla/5.0 (Windows NT 10.0; Win64; x64) Chrome/131.0"},"ip_location":"Japan","network_provider":"Residential","reason":"r"}"#;

    #[test]
    fn prompt_contains_url_and_numbered_examples() {
        let b = build_prompt("http://a.test/", &["{\"x\":1}".into(), "{\"y\":2}".into()], &[]);
        assert!(b.user_text.contains("URL: http://a.test/\n"));
        assert!(b.user_text.contains("1. {\"x\":1}\n2. {\"y\":2}\n2. Failed Crawling Example"));
        assert!(b.user_text.contains("techniques):\nNone available.\nBased on"));
        assert!(!b.user_text.contains("{url}") && !b.user_text.contains("{failed_examples}"));
        assert!(b.system_text.ends_with("outside the JSON."));
    }

    #[test]
    fn examples_parse_back_out_of_prompt() {
        let s = vec!["{\"a\":1}".to_string(), "{\"b\":\"2. x\"}".to_string()];
        let f = vec!["{\"c\":3}".to_string()];
        let b = build_prompt("u", &s, &f);
        assert_eq!(parse_prompt_examples(&b.user_text), (s, f));
        let empty = build_prompt("u", &[], &[]);
        assert_eq!(parse_prompt_examples(&empty.user_text), (vec![], vec![]));
    }

    #[test]
    fn parses_fenced_and_prose_wrapped_replies() {
        assert!(parse_reply(GOOD).is_ok());
        assert!(parse_reply(&format!("```json\n{GOOD}\n```")).is_ok());
        assert!(parse_reply(&format!("Sure {{not json}} here: {GOOD} hope it helps")).is_ok());
    }

    #[test]
    fn rejects_incomplete_replies() {
        assert_eq!(parse_reply("no json"), Err(ReplyError::NoObject));
        // Outer object unterminated; the first balanced object is the header map.
        assert_eq!(parse_reply(&GOOD[..GOOD.len() - 1]), Err(ReplyError::MissingKey("target_victim")));
        assert_eq!(parse_reply(&GOOD[..40]), Err(ReplyError::NoObject));
        let no_reason = GOOD.replace(",\"reason\":\"r\"", "");
        assert_eq!(parse_reply(&no_reason), Err(ReplyError::MissingKey("reason")));
        let no_ua = GOOD.replace("User-Agent", "Accept");
        assert_eq!(parse_reply(&no_ua), Err(ReplyError::MissingUserAgent));
        let empty_ua = r#"{"target_victim":"x","http_header":{"User-Agent":"  "},"ip_location":"JP","network_provider":"ISP","reason":"r"}"#;
        assert_eq!(parse_reply(empty_ua), Err(ReplyError::MissingUserAgent));
        let header_string = r#"{"target_victim":"x","http_header":"UA","ip_location":"JP","network_provider":"ISP","reason":"r"}"#;
        assert_eq!(parse_reply(header_string), Err(ReplyError::WrongType("http_header")));
    }

    #[test]
    fn braces_in_strings_do_not_confuse_extraction() {
        let s = r#"{"reason":"uses } and { freely","k":1}"#;
        assert_eq!(extract_json_object(s).unwrap()["k"], 1);
    }

    #[tokio::test]
    async fn repair_attempt_recovers() {
        let chat = ScriptedChat::new(vec![Ok("I think Japan.".into()), Ok(GOOD.into())]);
        let advice = request_profile(&chat, &build_prompt("u", &[], &[]), 1).await.unwrap();
        assert!(advice.repaired);
        assert_eq!(advice.raw_replies.len(), 2);
        assert_eq!(chat.calls(), 2);
    }

    #[tokio::test]
    async fn two_bad_replies_are_unavailable() {
        let chat = ScriptedChat::new(vec![Ok("nope".into()), Ok("still nope".into()), Ok(GOOD.into())]);
        let err = request_profile(&chat, &build_prompt("u", &[], &[]), 1).await.unwrap_err();
        assert!(matches!(&err, AdviceError::Unavailable { raw_replies, .. } if raw_replies.len() == 2));
        assert_eq!(chat.calls(), 2);
    }

    #[tokio::test]
    async fn transport_error_is_distinct() {
        let chat = ScriptedChat::new(vec![Err(ChatError::Transport("down".into()))]);
        let err = request_profile(&chat, &build_prompt("u", &[], &[]), 1).await.unwrap_err();
        assert!(matches!(err, AdviceError::Transport { .. }));
    }

    fn view(country: &str, asn_name: &str, ua: &str) -> String {
        let mut r = fixtures::record(1);
        r.environment.ip_geolocation.country = country.into();
        r.environment.asn.name = asn_name.into();
        r.network.requests[0].headers.insert("User-Agent".into(), ua.into());
        prompt_view(&r)
    }

    #[test]
    fn mock_picks_majority_pair_and_first_ua() {
        let s = vec![
            view("KR", "Korea Mobile Carrier", "UA-1 Chrome"),
            view("JP", "Japan Residential Broadband", "UA-2 Chrome"),
            view("JP", "Japan Residential Broadband", "UA-3 Chrome"),
        ];
        let reply = parse_reply(&mock_llm(&build_prompt("u", &s, &[]))).unwrap();
        assert_eq!(reply.ip_location, "Japan");
        assert_eq!(reply.network_provider, "Residential");
        assert_eq!(reply.http_header.get("User-Agent"), Some("UA-1 Chrome"));
    }

    #[test]
    fn mock_tie_goes_to_smaller_pair() {
        let s = vec![
            view("JP", "Japan Residential Broadband", "UA"),
            view("DE", "Germany Mobile Carrier", "UA"),
        ];
        let reply = parse_reply(&mock_llm(&build_prompt("u", &s, &[]))).unwrap();
        assert_eq!((reply.ip_location.as_str(), reply.network_provider.as_str()), ("Germany", "Mobile"));
    }

    #[test]
    fn mock_without_successes_recommends_standard() {
        let reply = parse_reply(&mock_llm(&build_prompt("u", &[], &[view("JP", "x", "y")]))).unwrap();
        let standard = Catalog::builtin().standard_entry();
        assert_eq!(reply.http_header.get("User-Agent"), Some(standard.user_agent.as_str()));
        assert_eq!(reply.ip_location, "United States");
        assert_eq!(reply.network_provider, "Datacenter");
    }

    #[test]
    fn mock_reads_truncated_views() {
        let full = view("JP", "Japan Residential Broadband", "UA");
        let cut = format!("{}{}", &full[..full.len() - 20], crate::records::TRUNCATION_MARKER);
        let facts = view_facts(&cut);
        assert_eq!(facts.country.as_deref(), Some("Japan"));
        assert_eq!(facts.network, Some(NetworkType::Residential));
    }

    #[test]
    fn debug_does_not_leak_key_value() {
        let chat = OpenAiChat::new(LlmConfig::default()).unwrap();
        let dbg = format!("{chat:?}");
        assert!(dbg.contains("OPENAI_API_KEY"));
        assert!(!dbg.contains("Bearer"));
    }
}
