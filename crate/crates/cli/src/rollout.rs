//! Rollout-group JSON input for the sentence-level objective, plus the
//! report schema it emits.
//!
//! ```json
//! {
//!   "responses": [
//!     {
//!       "old_logprobs": [-1.2, -0.8],
//!       "new_logprobs": [-1.1, -0.9],
//!       "text": "Yes. No.",
//!       "reward": 1.5,
//!       "correct": true,
//!       "tokens": ["Yes. ", "No."]
//!     }
//!   ]
//! }
//! ```
//!
//! Sentence spans come from one of two optional fields: explicit `spans`
//! (token ranges), or `tokens` (the detokenized pieces, concatenating to
//! `text`), which are segmented at pause punctuation. One of the two must be
//! present — log-probs alone cannot be aligned to the text.

use serde::{Deserialize, Serialize};
use sparse_forge_core::rewards::{
    segment_sentences, Response, RolloutGroup, SentenceSpan, TokenizedText,
};

use crate::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutFile {
    pub responses: Vec<ResponseEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseEntry {
    pub old_logprobs: Vec<f64>,
    pub new_logprobs: Vec<f64>,
    pub text: String,
    pub reward: f64,
    pub correct: bool,
    #[serde(default)]
    pub tokens: Option<Vec<String>>,
    #[serde(default)]
    pub spans: Option<Vec<(usize, usize)>>,
}

impl RolloutFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("rollout: {e}")))
    }

    pub fn build(&self) -> Result<RolloutGroup> {
        let mut responses = Vec::with_capacity(self.responses.len());
        for (i, entry) in self.responses.iter().enumerate() {
            let spans: Vec<SentenceSpan> = if let Some(spans) = &entry.spans {
                spans
                    .iter()
                    .map(|&(start, end)| SentenceSpan { start, end })
                    .collect()
            } else if let Some(tokens) = &entry.tokens {
                let mut offsets = Vec::with_capacity(tokens.len());
                let mut cursor = 0usize;
                for t in tokens {
                    offsets.push((cursor, cursor + t.len()));
                    cursor += t.len();
                }
                let joined: String = tokens.concat();
                if joined != entry.text {
                    return Err(CliError::Validation(format!(
                        "response {i}: tokens do not concatenate to text"
                    )));
                }
                if tokens.len() != entry.old_logprobs.len() {
                    return Err(CliError::Validation(format!(
                        "response {i}: {} tokens but {} log-probs",
                        tokens.len(),
                        entry.old_logprobs.len()
                    )));
                }
                let tokenized = TokenizedText::new(entry.text.clone(), offsets)
                    .map_err(CliError::validation)?;
                segment_sentences(&tokenized).map_err(CliError::validation)?
            } else {
                return Err(CliError::Validation(format!(
                    "response {i}: provide either `tokens` or `spans` to place sentence boundaries"
                )));
            };
            responses.push(Response {
                old_logprobs: entry.old_logprobs.clone(),
                new_logprobs: entry.new_logprobs.clone(),
                sentence_spans: spans,
                reward: entry.reward,
                correct: entry.correct,
            });
        }
        Ok(RolloutGroup { responses })
    }
}

/// JSON shape of the objective report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpoReportFile {
    pub objective: f64,
    pub advantages: Vec<f64>,
    pub per_sentence: Vec<SentenceTermFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceTermFile {
    pub response: usize,
    pub span: (usize, usize),
    pub ratio: f64,
    pub clipped: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_drive_segmentation() {
        let text = r#"{
            "responses": [
                {
                    "old_logprobs": [-1.0, -1.0, -1.0],
                    "new_logprobs": [-1.0, -0.9, -1.1],
                    "text": "Yes. No go.",
                    "reward": 1.0,
                    "correct": true,
                    "tokens": ["Yes. ", "No ", "go."]
                },
                {
                    "old_logprobs": [-0.5],
                    "new_logprobs": [-0.5],
                    "text": "Hi.",
                    "reward": 0.0,
                    "correct": false,
                    "tokens": ["Hi."]
                }
            ]
        }"#;
        let group = RolloutFile::parse(text).unwrap().build().unwrap();
        assert_eq!(group.responses[0].sentence_spans.len(), 2);
        assert_eq!(
            group.responses[0].sentence_spans[0],
            SentenceSpan { start: 0, end: 1 }
        );
        assert_eq!(group.responses[1].sentence_spans.len(), 1);
    }

    #[test]
    fn explicit_spans_win() {
        let text = r#"{
            "responses": [
                {
                    "old_logprobs": [-1.0, -1.0],
                    "new_logprobs": [-1.0, -1.0],
                    "text": "ab",
                    "reward": 1.0,
                    "correct": true,
                    "spans": [[0, 2]]
                }
            ]
        }"#;
        let group = RolloutFile::parse(text).unwrap().build().unwrap();
        assert_eq!(
            group.responses[0].sentence_spans,
            vec![SentenceSpan { start: 0, end: 2 }]
        );
    }

    #[test]
    fn missing_alignment_is_an_error() {
        let text = r#"{
            "responses": [
                {
                    "old_logprobs": [-1.0],
                    "new_logprobs": [-1.0],
                    "text": "Hi.",
                    "reward": 1.0,
                    "correct": true
                }
            ]
        }"#;
        let err = RolloutFile::parse(text).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("tokens"));
    }
}
