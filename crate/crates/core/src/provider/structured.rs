use serde::de::DeserializeOwned;
use tracing::debug;

use super::{ChatRequest, LlmProvider, ProviderError};

/// Variable carrying the corrective note on re-requests.
pub const CORRECTION_VAR: &str = "correction";

/// A typed model response with a named schema and semantic validation.
pub trait StructuredOutput: DeserializeOwned {
    const SCHEMA_ID: &'static str;

    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Issue `request`, parse the completion as `T`, and re-request with a
/// corrective note on parse or validation failure. At most
/// `1 + max_retries` requests are issued.
pub async fn complete_structured<T, P>(
    provider: &P,
    request: &ChatRequest,
    max_retries: u32,
) -> Result<T, ProviderError>
where
    T: StructuredOutput,
    P: LlmProvider + ?Sized,
{
    complete_structured_with(provider, request, max_retries, |_| Ok(())).await
}

/// Like [`complete_structured`], with an extra caller-side check that needs
/// context the schema type does not carry.
pub async fn complete_structured_with<T, P, F>(
    provider: &P,
    request: &ChatRequest,
    max_retries: u32,
    check: F,
) -> Result<T, ProviderError>
where
    T: StructuredOutput,
    P: LlmProvider + ?Sized,
    F: Fn(&T) -> Result<(), String>,
{
    if !request.expects_structure {
        return Err(ProviderError::InvalidRequest(format!(
            "template `{}` does not expect structured output",
            request.template_id
        )));
    }
    if request.schema_id.as_deref() != Some(T::SCHEMA_ID) {
        return Err(ProviderError::InvalidRequest(format!(
            "request schema {:?} does not match `{}`",
            request.schema_id,
            T::SCHEMA_ID
        )));
    }
    request.validate()?;

    let mut current = request.clone();
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let raw = provider.complete(&current).await?;
        let error = match parse_json_payload::<T>(&raw) {
            Ok(value) => match value.validate().and_then(|()| check(&value)) {
                Ok(()) => return Ok(value),
                Err(e) => e,
            },
            Err(e) => e,
        };
        debug!(template = %request.template_id, attempt = attempts, %error, "structured output rejected");
        if attempts > max_retries {
            return Err(ProviderError::Structure {
                schema: T::SCHEMA_ID.to_string(),
                attempts,
                last_error: error,
            });
        }
        current = request.clone().var(
            CORRECTION_VAR,
            format!(
                "Attempt {attempts} was rejected: {error}. Reply with a single JSON value that matches the `{}` schema and nothing else.",
                T::SCHEMA_ID
            ),
        );
    }
}

/// Extract and decode the first JSON value in a completion, tolerating code
/// fences and leading prose.
pub fn parse_json_payload<T: DeserializeOwned>(raw: &str) -> Result<T, String> {
    let start = raw
        .find(['{', '['])
        .ok_or_else(|| "no JSON value in completion".to_string())?;
    let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<T>();
    match stream.next() {
        Some(Ok(value)) => Ok(value),
        Some(Err(e)) => Err(format!("malformed JSON: {e}")),
        None => Err("no JSON value in completion".to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::EmbedRequest;
    use async_trait::async_trait;
    use serde::Deserialize;
    use std::sync::Mutex;

    #[derive(Debug, Deserialize)]
    struct Pair {
        a: String,
    }

    impl StructuredOutput for Pair {
        const SCHEMA_ID: &'static str = "pair";

        fn validate(&self) -> Result<(), String> {
            if self.a.is_empty() {
                return Err("field `a` is empty".into());
            }
            Ok(())
        }
    }

    /// Returns canned completions in order and counts requests.
    struct Sequence {
        replies: Mutex<Vec<&'static str>>,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl Sequence {
        fn new(replies: &[&'static str]) -> Self {
            let mut replies = replies.to_vec();
            replies.reverse();
            Sequence {
                replies: Mutex::new(replies),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    #[async_trait]
    impl LlmProvider for Sequence {
        async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
            self.seen.lock().unwrap().push(request.clone());
            Ok(self.replies.lock().unwrap().pop().unwrap_or("{}").to_string())
        }

        async fn embed(&self, _: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
            unreachable!()
        }
    }

    fn request() -> ChatRequest {
        ChatRequest::structured("t", "pair", 0.0)
    }

    #[tokio::test]
    async fn valid_first_try_issues_one_request() {
        let p = Sequence::new(&[r#"{"a":"x"}"#]);
        let v: Pair = complete_structured(&p, &request(), 2).await.unwrap();
        assert_eq!(v.a, "x");
        assert_eq!(p.seen.lock().unwrap().len(), 1);
    }

    #[tokio::test]
    async fn malformed_then_valid_issues_two_requests() {
        let p = Sequence::new(&["not json", "```json\n{\"a\":\"y\"}\n```"]);
        let v: Pair = complete_structured(&p, &request(), 2).await.unwrap();
        assert_eq!(v.a, "y");
        let seen = p.seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert!(seen[1].variables.contains_key(CORRECTION_VAR));
        assert_ne!(seen[0].fingerprint(), seen[1].fingerprint());
    }

    #[tokio::test]
    async fn zero_retries_fails_on_malformed() {
        let p = Sequence::new(&["{oops"]);
        let err = complete_structured::<Pair, _>(&p, &request(), 0).await.unwrap_err();
        assert!(matches!(err, ProviderError::Structure { attempts: 1, .. }));
        assert_eq!(p.seen.lock().unwrap().len(), 1);
    }

    #[tokio::test]
    async fn semantic_validation_counts_against_retries() {
        let p = Sequence::new(&[r#"{"a":""}"#, r#"{"a":""}"#, r#"{"a":""}"#, r#"{"a":"z"}"#]);
        let err = complete_structured::<Pair, _>(&p, &request(), 2).await.unwrap_err();
        assert!(matches!(err, ProviderError::Structure { attempts: 3, .. }));
        assert_eq!(p.seen.lock().unwrap().len(), 3);
    }

    #[tokio::test]
    async fn schema_mismatch_is_rejected_before_any_call() {
        let p = Sequence::new(&[]);
        let req = ChatRequest::structured("t", "other", 0.0);
        assert!(complete_structured::<Pair, _>(&p, &req, 2).await.is_err());
        assert!(p.seen.lock().unwrap().is_empty());
    }

    #[test]
    fn payload_after_prose() {
        let v: Pair = parse_json_payload("Sure! {\"a\":\"q\"} trailing").unwrap();
        assert_eq!(v.a, "q");
    }
}
