//! Chat-completion client over blocking HTTP.

use std::time::Duration;

use serde_json::json;

use super::prompt::{build_bundle, TaskBackground};
use super::{
    parse_directive, Exchange, PreferenceProvider, ProviderConfig, ProviderError, ProviderReply, RoundContext,
    ENDPOINT_ENV,
};

#[derive(Debug, Clone)]
pub struct LlmProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    max_retries: u32,
    background: TaskBackground,
}

enum Attempt {
    Retry(String),
    Fatal(String),
    Text(String),
}

impl LlmProvider {
    /// Reads the key from `config.api_key_env` and honours the endpoint
    /// override variable.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ProviderError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        let mut cfg = config.clone();
        if let Ok(ep) = std::env::var(ENDPOINT_ENV) {
            if !ep.trim().is_empty() {
                cfg.endpoint = ep;
            }
        }
        Self::new(&cfg, key)
    }

    pub fn new(config: &ProviderConfig, api_key: String) -> Result<Self, ProviderError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout))
            .build()
            .map_err(|e| ProviderError::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            endpoint: config.endpoint.clone(),
            api_key,
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            max_retries: config.max_retries,
            background: config.background.clone(),
        })
    }

    fn send(&self, body: &serde_json::Value) -> (Attempt, String) {
        let resp = match self.client.post(&self.endpoint).bearer_auth(&self.api_key).json(body).send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return (Attempt::Retry(format!("timeout: {e}")), String::new()),
            Err(e) => return (Attempt::Retry(format!("transport: {e}")), String::new()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return (Attempt::Retry(format!("reading body: {e}")), String::new()),
        };
        if status.is_server_error() || status.as_u16() == 429 {
            return (Attempt::Retry(format!("http {status}")), text);
        }
        if !status.is_success() {
            return (Attempt::Fatal(format!("http {status}")), text);
        }
        let content = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_owned));
        match content {
            Some(c) => (Attempt::Text(c), text),
            None => (Attempt::Retry("response has no choices[0].message.content".into()), text),
        }
    }
}

fn reask(reason: &str) -> String {
    format!(
        "Your previous reply was rejected ({reason}). Reply again with the Thinking and Final Answer blocks, \
         following the output protocol exactly."
    )
}

impl PreferenceProvider for LlmProvider {
    fn propose(&self, ctx: &RoundContext<'_>) -> Result<ProviderReply, ProviderError> {
        let bundle = build_bundle(&self.background, ctx.space, ctx.history, ctx.previous_thinking);
        let mut messages = vec![
            json!({"role": "system", "content": bundle.system}),
            json!({"role": "user", "content": bundle.user}),
        ];
        let mut exchanges = Vec::new();
        let mut last = String::from("no attempt made");
        let attempts = self.max_retries + 1;
        for attempt in 0..attempts {
            let body = json!({
                "model": self.model,
                "messages": messages,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            });
            let (outcome, raw) = self.send(&body);
            exchanges.push(Exchange {
                request: body,
                response: raw,
            });
            match outcome {
                Attempt::Fatal(msg) => {
                    return Err(ProviderError::Unavailable {
                        attempts: attempt + 1,
                        last: msg,
                        exchanges,
                    })
                }
                Attempt::Retry(msg) => {
                    log::warn!("round {}: LLM attempt {} failed: {msg}", ctx.round, attempt + 1);
                    last = msg;
                }
                Attempt::Text(content) => match parse_directive(&content, ctx.space) {
                    Ok(directive) => {
                        return Ok(ProviderReply {
                            directive,
                            retries: attempt,
                            exchanges,
                        })
                    }
                    Err(e) => {
                        log::warn!("round {}: LLM reply rejected: {e}", ctx.round);
                        last = format!("parse failure {e}");
                        messages.push(json!({"role": "assistant", "content": content}));
                        messages.push(json!({"role": "user", "content": reask(&format!("{}: {}", e.reason.code(), e.detail))}));
                    }
                },
            }
        }
        Err(ProviderError::Unavailable {
            attempts,
            last,
            exchanges,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use axum::extract::State;
    use axum::http::StatusCode;
    use axum::routing::post;
    use axum::{Json, Router};

    use super::*;
    use crate::lift::DirectiveMode;
    use crate::provider::Phase;
    use crate::space::{SearchSpace, VariableSpec};

    #[derive(Clone, Copy)]
    enum Reply {
        Valid,
        Garbage,
        Slow,
        Error,
    }

    struct Mock {
        plan: Vec<Reply>,
        hits: AtomicUsize,
        bodies: std::sync::Mutex<Vec<serde_json::Value>>,
    }

    async fn handler(State(m): State<Arc<Mock>>, Json(body): Json<serde_json::Value>) -> (StatusCode, String) {
        let i = m.hits.fetch_add(1, Ordering::SeqCst);
        m.bodies.lock().unwrap().push(body);
        let r = m.plan[i.min(m.plan.len() - 1)];
        let chat = |content: &str| json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
        match r {
            Reply::Valid => (
                StatusCode::OK,
                chat("Thinking:\n(a) higher a helps.\nFinal Answer:\n[point, [1.5, 2.5], 0.9]"),
            ),
            Reply::Garbage => (StatusCode::OK, chat("I would try something around the middle.")),
            Reply::Slow => {
                tokio::time::sleep(Duration::from_millis(1500)).await;
                (StatusCode::OK, chat("[point, [1, 1], 0.5]"))
            }
            Reply::Error => (StatusCode::INTERNAL_SERVER_ERROR, "boom".into()),
        }
    }

    fn serve(plan: Vec<Reply>) -> (String, Arc<Mock>) {
        let mock = Arc::new(Mock {
            plan,
            hits: AtomicUsize::new(0),
            bodies: Default::default(),
        });
        let state = mock.clone();
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                let app = Router::new().route("/v1/chat/completions", post(handler)).with_state(state);
                axum::serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        (format!("http://{addr}/v1/chat/completions"), mock)
    }

    fn provider(endpoint: String, retries: u32, timeout: f64) -> LlmProvider {
        let cfg = ProviderConfig {
            endpoint,
            max_retries: retries,
            timeout,
            ..Default::default()
        };
        LlmProvider::new(&cfg, "test-key".into()).unwrap()
    }

    fn space() -> SearchSpace {
        SearchSpace::new(vec![
            VariableSpec::continuous("a", 0.0, 5.0),
            VariableSpec::continuous("b", 0.0, 5.0),
        ])
        .unwrap()
    }

    fn ctx(space: &SearchSpace) -> RoundContext<'_> {
        RoundContext {
            round: 3,
            phase: Phase::Optimize,
            seed: 1,
            space,
            history: &[],
            previous_thinking: "",
        }
    }

    #[test]
    fn happy_path() {
        let (url, mock) = serve(vec![Reply::Valid]);
        let s = space();
        let r = provider(url, 2, 5.0).propose(&ctx(&s)).unwrap();
        assert_eq!(r.directive.mode, DirectiveMode::Point);
        assert_eq!(r.directive.confidence, 0.9);
        assert_eq!(r.retries, 0);
        assert_eq!(r.directive.thinking, "(a) higher a helps.");
        let body = &mock.bodies.lock().unwrap()[0];
        assert_eq!(body["messages"][0]["role"], "system");
        assert!(body["messages"][1]["content"].as_str().unwrap().contains("[Review]"));
    }

    #[test]
    fn garbage_twice_then_valid() {
        let (url, mock) = serve(vec![Reply::Garbage, Reply::Garbage, Reply::Valid]);
        let s = space();
        let r = provider(url, 2, 5.0).propose(&ctx(&s)).unwrap();
        assert_eq!(r.retries, 2);
        assert_eq!(r.exchanges.len(), 3);
        assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
        let last = &mock.bodies.lock().unwrap()[2];
        let msgs = last["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 6);
        assert!(msgs[5]["content"].as_str().unwrap().contains("no_structure"));
    }

    #[test]
    fn timeouts_exhaust_retries() {
        let (url, mock) = serve(vec![Reply::Slow]);
        let s = space();
        let err = provider(url, 1, 0.2).propose(&ctx(&s)).unwrap_err();
        match err {
            ProviderError::Unavailable { attempts, ref last, .. } => {
                assert_eq!(attempts, 2);
                assert!(last.contains("timeout"), "{last}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(mock.hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn server_errors_are_retried() {
        let (url, _) = serve(vec![Reply::Error, Reply::Valid]);
        let s = space();
        assert_eq!(provider(url, 1, 5.0).propose(&ctx(&s)).unwrap().retries, 1);
    }

    #[test]
    fn missing_key_is_config_error() {
        let cfg = ProviderConfig {
            api_key_env: "LGBO_TEST_KEY_THAT_IS_NEVER_SET".into(),
            ..Default::default()
        };
        assert!(matches!(LlmProvider::from_config(&cfg), Err(ProviderError::Config(_))));
    }
}
