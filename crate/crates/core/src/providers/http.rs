//! Chat-API adapters and the retrying HTTP provider.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::rate_limit::{Clock, RateLimiter};
use super::transport::{HttpRequest, HttpResponse, HttpTransport};
use super::{CompletionResult, Provider, ProviderError, ProviderKind, ProviderProfile};
use crate::metrics::TokenUsage;
use crate::prompting::{DecodingParams, Prompt};

const ANTHROPIC_VERSION: &str = "2023-06-01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on each further attempt.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay_before(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(2))
    }
}

pub struct HttpProvider {
    profile: ProviderProfile,
    transport: Arc<dyn HttpTransport>,
    limiter: Arc<RateLimiter>,
    clock: Arc<dyn Clock>,
    retry: RetryPolicy,
    require_auth: bool,
}

impl HttpProvider {
    pub fn new(
        profile: ProviderProfile,
        transport: Arc<dyn HttpTransport>,
        clock: Arc<dyn Clock>,
        retry: RetryPolicy,
    ) -> Result<Self, ProviderError> {
        if profile.kind == ProviderKind::Mock {
            return Err(ProviderError::Config(format!(
                "`{}` is a mock profile, not an HTTP provider",
                profile.name
            )));
        }
        let limiter = Arc::new(RateLimiter::new(profile.limits, clock.clone()));
        Ok(Self {
            profile,
            transport,
            limiter,
            clock,
            retry,
            require_auth: true,
        })
    }

    /// Skips the credential check; for replaying recorded sessions offline.
    pub fn without_auth(mut self) -> Self {
        self.require_auth = false;
        self
    }

    /// Fails early when the credential variable is required but unset.
    pub fn check_auth(&self) -> Result<(), ProviderError> {
        self.api_key().map(|_| ())
    }

    fn api_key(&self) -> Result<String, ProviderError> {
        let Some(var) = &self.profile.auth_env_var else {
            return Ok(String::new());
        };
        match std::env::var(var) {
            Ok(k) if !k.is_empty() => Ok(k),
            _ if !self.require_auth => Ok(String::new()),
            _ => Err(ProviderError::AuthMissing { var: var.clone() }),
        }
    }
}

impl Provider for HttpProvider {
    fn profile(&self) -> &ProviderProfile {
        &self.profile
    }

    fn complete(
        &self,
        prompt: &Prompt,
        params: &DecodingParams,
    ) -> Result<CompletionResult, ProviderError> {
        self.profile.validate_params(params)?;
        let key = self.api_key()?;
        let request = build_request(&self.profile, &key, prompt, params);
        let started = self.clock.now();

        let mut attempt = 0;
        loop {
            attempt += 1;
            if attempt > 1 {
                self.clock.sleep(self.retry.delay_before(attempt));
            }
            let last = attempt >= self.retry.max_attempts;
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.send(&request)
            };
            match outcome {
                Ok(HttpResponse { status, body }) if (200..300).contains(&status) => {
                    let (text, usage) = parse_payload(self.profile.kind, &body)?;
                    return Ok(CompletionResult {
                        text,
                        usage,
                        latency: self.clock.now().saturating_sub(started),
                        attempt_count: attempt,
                    });
                }
                Ok(HttpResponse { status, .. }) if status == 401 || status == 403 => {
                    return Err(ProviderError::AuthRejected { status });
                }
                Ok(HttpResponse { status: 429, .. }) => {
                    if last {
                        return Err(ProviderError::RateLimited { attempts: attempt });
                    }
                }
                Ok(HttpResponse { status, body }) => {
                    if last || status < 500 {
                        return Err(ProviderError::Http {
                            status,
                            attempts: attempt,
                            body,
                        });
                    }
                }
                Err(e) => {
                    if last || !e.is_retryable() {
                        return Err(ProviderError::Transport {
                            attempts: attempt,
                            message: e.to_string(),
                        });
                    }
                }
            }
            tracing::debug!(provider = %self.profile.name, attempt, "retrying request");
        }
    }
}

/// Shapes one prompt into the provider's wire request.
pub fn build_request(
    profile: &ProviderProfile,
    api_key: &str,
    prompt: &Prompt,
    params: &DecodingParams,
) -> HttpRequest {
    match profile.kind {
        ProviderKind::OpenaiChat | ProviderKind::Mock => {
            let body = json!({
                "model": profile.model_id,
                "messages": [
                    {"role": "system", "content": prompt.instructions},
                    {"role": "user", "content": prompt.text},
                ],
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
            });
            HttpRequest::post_json(&profile.endpoint, body.to_string())
                .header("authorization", format!("Bearer {api_key}"))
        }
        ProviderKind::Anthropic => {
            let mut body = json!({
                "model": profile.model_id,
                "system": prompt.instructions,
                "messages": [{"role": "user", "content": prompt.text}],
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
            });
            if let Some(k) = params.top_k {
                body["top_k"] = json!(k);
            }
            HttpRequest::post_json(&profile.endpoint, body.to_string())
                .header("x-api-key", api_key)
                .header("anthropic-version", ANTHROPIC_VERSION)
        }
        ProviderKind::Gemini => {
            let mut config = json!({
                "temperature": params.temperature,
                "maxOutputTokens": params.max_tokens,
            });
            if let Some(k) = params.top_k {
                config["topK"] = json!(k);
            }
            let body = json!({
                "systemInstruction": {"parts": [{"text": prompt.instructions}]},
                "contents": [{"role": "user", "parts": [{"text": prompt.text}]}],
                "generationConfig": config,
            });
            let url = format!(
                "{}/{}:generateContent",
                profile.endpoint.trim_end_matches('/'),
                profile.model_id
            );
            HttpRequest::post_json(url, body.to_string()).header("x-goog-api-key", api_key)
        }
    }
}

fn malformed(m: impl Into<String>) -> ProviderError {
    ProviderError::MalformedPayload(m.into())
}

fn count(v: &Value, key: &str) -> Option<u64> {
    v.get(key).and_then(Value::as_u64)
}

/// Extracts completion text and reported usage from a response body.
pub fn parse_payload(
    kind: ProviderKind,
    body: &str,
) -> Result<(String, Option<TokenUsage>), ProviderError> {
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
    match kind {
        ProviderKind::OpenaiChat | ProviderKind::Mock => {
            let text = v
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed("missing choices[0].message.content"))?;
            let usage = v.get("usage").and_then(|u| {
                Some(TokenUsage::new(
                    count(u, "prompt_tokens")?,
                    count(u, "completion_tokens")?,
                ))
            });
            Ok((text.to_string(), usage))
        }
        ProviderKind::Anthropic => {
            let blocks = v
                .get("content")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("missing content array"))?;
            let text: String = blocks
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect();
            let usage = v.get("usage").and_then(|u| {
                Some(TokenUsage::new(
                    count(u, "input_tokens")?,
                    count(u, "output_tokens")?,
                ))
            });
            Ok((text, usage))
        }
        ProviderKind::Gemini => {
            let parts = v
                .pointer("/candidates/0/content/parts")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("missing candidates[0].content.parts"))?;
            let text: String = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            let usage = v.get("usageMetadata").and_then(|u| {
                Some(TokenUsage::new(
                    count(u, "promptTokenCount")?,
                    count(u, "candidatesTokenCount").unwrap_or(0),
                ))
            });
            Ok((text, usage))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::rate_limit::{RateLimits, VirtualClock};
    use crate::providers::transport::{FixtureEntry, ReplayTransport, TransportError};
    use std::sync::Mutex;

    fn profile(kind: ProviderKind) -> ProviderProfile {
        ProviderProfile {
            name: "test".into(),
            kind,
            endpoint: "https://api.example.test/v1/chat/completions".into(),
            model_id: "m-1".into(),
            pricing: None,
            auth_env_var: None,
            limits: RateLimits::default(),
        }
    }

    struct Scripted(Mutex<Vec<Result<HttpResponse, TransportError>>>);

    impl HttpTransport for Scripted {
        fn send(&self, _req: &HttpRequest) -> Result<HttpResponse, TransportError> {
            self.0.lock().unwrap().remove(0)
        }
    }

    fn ok_body() -> String {
        r#"{"choices":[{"message":{"role":"assistant","content":"Sports"}}],"usage":{"prompt_tokens":1000,"completion_tokens":12}}"#.into()
    }

    fn provider(kind: ProviderKind, responses: Vec<Result<HttpResponse, TransportError>>) -> HttpProvider {
        HttpProvider::new(
            profile(kind),
            Arc::new(Scripted(Mutex::new(responses))),
            Arc::new(VirtualClock::default()),
            RetryPolicy::default(),
        )
        .unwrap()
    }

    fn prompt() -> Prompt {
        Prompt::new("Categories: Sports", "a text about basketball")
    }

    #[test]
    fn missing_auth_names_variable() {
        let mut p = profile(ProviderKind::OpenaiChat);
        p.auth_env_var = Some("TAXOCAT_TEST_SURELY_UNSET_KEY".into());
        let prov = HttpProvider::new(
            p,
            Arc::new(Scripted(Mutex::new(vec![]))),
            Arc::new(VirtualClock::default()),
            RetryPolicy::default(),
        )
        .unwrap();
        let err = prov.complete(&prompt(), &DecodingParams::default()).unwrap_err();
        assert_eq!(
            err,
            ProviderError::AuthMissing {
                var: "TAXOCAT_TEST_SURELY_UNSET_KEY".into()
            }
        );
        assert!(err.to_string().contains("TAXOCAT_TEST_SURELY_UNSET_KEY"));
    }

    #[test]
    fn usage_passes_through_from_replayed_fixture() {
        let prof = profile(ProviderKind::OpenaiChat);
        let req = build_request(&prof, "", &prompt(), &DecodingParams::default());
        let replay = ReplayTransport::from_entries([FixtureEntry {
            fingerprint: req.fingerprint(),
            request: req,
            response: HttpResponse {
                status: 200,
                body: ok_body(),
            },
        }]);
        let prov = HttpProvider::new(
            prof,
            Arc::new(replay),
            Arc::new(VirtualClock::default()),
            RetryPolicy::default(),
        )
        .unwrap();
        let first = prov.complete(&prompt(), &DecodingParams::default()).unwrap();
        assert_eq!(first.text, "Sports");
        assert_eq!(first.usage, Some(TokenUsage::new(1000, 12)));
        assert_eq!(first.attempt_count, 1);
        let again = prov.complete(&prompt(), &DecodingParams::default()).unwrap();
        assert_eq!(first, again);
    }

    #[test]
    fn retries_transient_failures_with_backoff() {
        let clock = Arc::new(VirtualClock::default());
        let prov = HttpProvider::new(
            profile(ProviderKind::OpenaiChat),
            Arc::new(Scripted(Mutex::new(vec![
                Err(TransportError::Network("reset".into())),
                Ok(HttpResponse { status: 503, body: "busy".into() }),
                Ok(HttpResponse { status: 200, body: ok_body() }),
            ]))),
            clock.clone(),
            RetryPolicy::default(),
        )
        .unwrap();
        let out = prov.complete(&prompt(), &DecodingParams::default()).unwrap();
        assert_eq!(out.attempt_count, 3);
        // 500 ms + 1000 ms of backoff
        assert_eq!(clock.now(), Duration::from_millis(1500));
        assert_eq!(out.latency, Duration::from_millis(1500));
    }

    #[test]
    fn failure_kinds_are_distinct() {
        let rl = provider(
            ProviderKind::OpenaiChat,
            vec![Ok(HttpResponse { status: 429, body: String::new() }); 3],
        );
        assert_eq!(
            rl.complete(&prompt(), &DecodingParams::default()),
            Err(ProviderError::RateLimited { attempts: 3 })
        );

        let down = provider(
            ProviderKind::OpenaiChat,
            vec![Err(TransportError::Network("refused".into())); 3],
        );
        assert!(matches!(
            down.complete(&prompt(), &DecodingParams::default()),
            Err(ProviderError::Transport { attempts: 3, .. })
        ));

        let bad = provider(
            ProviderKind::OpenaiChat,
            vec![Ok(HttpResponse { status: 400, body: "nope".into() })],
        );
        assert!(matches!(
            bad.complete(&prompt(), &DecodingParams::default()),
            Err(ProviderError::Http { status: 400, attempts: 1, .. })
        ));

        let denied = provider(
            ProviderKind::OpenaiChat,
            vec![Ok(HttpResponse { status: 401, body: String::new() })],
        );
        assert_eq!(
            denied.complete(&prompt(), &DecodingParams::default()),
            Err(ProviderError::AuthRejected { status: 401 })
        );

        let garbage = provider(
            ProviderKind::OpenaiChat,
            vec![Ok(HttpResponse { status: 200, body: "{\"foo\":1}".into() })],
        );
        assert!(matches!(
            garbage.complete(&prompt(), &DecodingParams::default()),
            Err(ProviderError::MalformedPayload(_))
        ));
    }

    #[test]
    fn anthropic_and_gemini_payloads() {
        let (text, usage) = parse_payload(
            ProviderKind::Anthropic,
            r#"{"content":[{"type":"text","text":"Sports, "},{"type":"text","text":"Travel"}],"usage":{"input_tokens":42,"output_tokens":3}}"#,
        )
        .unwrap();
        assert_eq!(text, "Sports, Travel");
        assert_eq!(usage, Some(TokenUsage::new(42, 3)));

        let (text, usage) = parse_payload(
            ProviderKind::Gemini,
            r#"{"candidates":[{"content":{"parts":[{"text":"None"}]}}],"usageMetadata":{"promptTokenCount":17,"candidatesTokenCount":1}}"#,
        )
        .unwrap();
        assert_eq!(text, "None");
        assert_eq!(usage, Some(TokenUsage::new(17, 1)));

        let (_, usage) = parse_payload(
            ProviderKind::OpenaiChat,
            r#"{"choices":[{"message":{"content":"x"}}]}"#,
        )
        .unwrap();
        assert_eq!(usage, None);
    }

    #[test]
    fn request_shapes() {
        let params = DecodingParams {
            temperature: 0.5,
            top_k: Some(7),
            max_tokens: 64,
        };
        let mut g = profile(ProviderKind::Gemini);
        g.endpoint = "https://g.test/v1beta/models/".into();
        let req = build_request(&g, "k", &prompt(), &params);
        assert_eq!(req.url, "https://g.test/v1beta/models/m-1:generateContent");
        let body: Value = serde_json::from_str(&req.body).unwrap();
        assert_eq!(body["generationConfig"]["topK"], 7);
        assert_eq!(body["generationConfig"]["maxOutputTokens"], 64);

        let a = build_request(&profile(ProviderKind::Anthropic), "k", &prompt(), &params);
        let body: Value = serde_json::from_str(&a.body).unwrap();
        assert_eq!(body["system"], "Categories: Sports");
        assert_eq!(body["top_k"], 7);
        assert!(a.headers.iter().any(|(k, v)| k == "x-api-key" && v == "k"));
    }
}
