//! Post-training reward and objective math.
//!
//! The centerpiece is the sentence-level policy objective: responses are
//! segmented into sentences, each sentence gets an importance ratio
//!
//! ```text
//! r_{i,k} = exp( mean over the sentence's tokens of (log π_new − log π_old) )
//! ```
//!
//! and the objective sums `|s_{i,k}| · min(r·Â_i, clip(r, 1−ε, 1+ε)·Â_i)`
//! over all sentences, normalized by the total token count of the group.
//! Group advantages are reward z-scores. Degenerate segmentations recover
//! the familiar baselines: one span per response gives sequence-level
//! ratios, one span per token gives token-level ratios.
//!
//! Also here: the group length-preference reward, the composite reward with
//! its format penalty, round-robin arena scoring, and the unbiased pass@k
//! estimator.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Default sentence-level clip width.
pub const DEFAULT_LPO_EPSILON: f64 = 0.03;

/// Format penalty applied when explicit reasoning markers appear.
pub const FORMAT_PENALTY: f64 = -0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum RewardError {
    EmptyInput,
    /// Token byte offsets do not tile the text; carries the failing offset.
    TokenAlignment {
        offset: usize,
    },
    EmptySpan,
    NonFiniteLogProb {
        response: usize,
        token: usize,
    },
    LogProbLengthMismatch {
        response: usize,
    },
    /// Spans do not partition the response's tokens.
    SpanCoverage {
        response: usize,
    },
    GroupTooSmall {
        got: usize,
    },
    IndexOutOfRange {
        index: usize,
        len: usize,
    },
    InvalidEpsilon(f64),
    InvalidAlpha(f64),
    /// Pass@k argument violation (`c ≤ n`, `1 ≤ k ≤ n`).
    InvalidPassAtK {
        n: u64,
        c: u64,
        k: u64,
    },
    /// A round-robin outcome is missing the named ordered pair.
    MissingPair {
        first: usize,
        second: usize,
    },
}

impl core::fmt::Display for RewardError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::EmptyInput => write!(f, "input must be non-empty"),
            Self::TokenAlignment { offset } => {
                write!(f, "token offsets misaligned with text at byte {offset}")
            }
            Self::EmptySpan => write!(f, "sentence span is empty"),
            Self::NonFiniteLogProb { response, token } => {
                write!(
                    f,
                    "non-finite log-prob at response {response}, token {token}"
                )
            }
            Self::LogProbLengthMismatch { response } => {
                write!(f, "old/new log-prob lengths differ in response {response}")
            }
            Self::SpanCoverage { response } => {
                write!(f, "sentence spans do not partition response {response}")
            }
            Self::GroupTooSmall { got } => {
                write!(f, "group advantages need G >= 2 responses, got {got}")
            }
            Self::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for {len} entries")
            }
            Self::InvalidEpsilon(e) => write!(f, "epsilon {e} outside (0, 1)"),
            Self::InvalidAlpha(a) => write!(f, "alpha {a} must be positive"),
            Self::InvalidPassAtK { n, c, k } => {
                write!(f, "invalid pass@k arguments: n={n}, c={c}, k={k}")
            }
            Self::MissingPair { first, second } => {
                write!(
                    f,
                    "missing arena outcome for ordered pair ({first}, {second})"
                )
            }
        }
    }
}

impl core::error::Error for RewardError {}

/// Half-open token range of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

impl SentenceSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// A detokenized response with per-token byte offsets into its text.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedText {
    text: String,
    /// Byte ranges, contiguous and tiling the whole string.
    token_offsets: Vec<(usize, usize)>,
}

impl TokenizedText {
    pub fn new(text: String, token_offsets: Vec<(usize, usize)>) -> Result<Self, RewardError> {
        if text.is_empty() || token_offsets.is_empty() {
            return Err(RewardError::EmptyInput);
        }
        let mut cursor = 0usize;
        for &(start, end) in &token_offsets {
            if start != cursor || end <= start || end > text.len() {
                return Err(RewardError::TokenAlignment { offset: start });
            }
            if !text.is_char_boundary(start) || !text.is_char_boundary(end) {
                return Err(RewardError::TokenAlignment { offset: start });
            }
            cursor = end;
        }
        if cursor != text.len() {
            return Err(RewardError::TokenAlignment { offset: cursor });
        }
        Ok(Self {
            text,
            token_offsets,
        })
    }

    /// Splits `text` at whitespace boundaries, keeping separators attached
    /// to the preceding token. Convenient for tests and CLI input that has
    /// no tokenizer of its own.
    pub fn from_whitespace(text: &str) -> Result<Self, RewardError> {
        let mut offsets = Vec::new();
        let bytes = text.as_bytes();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < bytes.len() {
            // A token ends after a run of whitespace.
            if !text.is_char_boundary(i) {
                i += 1;
                continue;
            }
            let rest = &text[i..];
            let ch = rest.chars().next().unwrap();
            if ch.is_whitespace() {
                let mut j = i;
                for c in text[i..].chars() {
                    if c.is_whitespace() {
                        j += c.len_utf8();
                    } else {
                        break;
                    }
                }
                offsets.push((start, j));
                start = j;
                i = j;
            } else {
                i += ch.len_utf8();
            }
        }
        if start < text.len() {
            offsets.push((start, text.len()));
        }
        Self::new(String::from(text), offsets)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn token_count(&self) -> usize {
        self.token_offsets.len()
    }
}

/// Pause punctuation that closes a sentence when followed by whitespace or
/// the end of the text.
const PAUSE_NEEDS_BREAK: &[char] = &['.', '!', '?', ';', ':', ',', '…'];
/// Full-width counterparts; these close a sentence unconditionally.
const PAUSE_ALWAYS: &[char] = &['。', '！', '？', '；', '：', '，', '、'];

/// Splits a tokenized response into sentence spans (token ranges).
///
/// A sentence ends after any pause punctuation mark: half-width marks need
/// trailing whitespace or end-of-text (so "3.14" stays whole), full-width
/// marks always split. Trailing text without terminal punctuation forms the
/// final sentence. Tokens map to sentences by the byte offset of their first
/// character; every token lands in exactly one span.
pub fn segment_sentences(input: &TokenizedText) -> Result<Vec<SentenceSpan>, RewardError> {
    let text = input.text();
    // Byte positions at which a new sentence starts.
    let mut boundaries: Vec<usize> = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = i + c.len_utf8();
        if PAUSE_ALWAYS.contains(&c) {
            boundaries.push(end);
        } else if PAUSE_NEEDS_BREAK.contains(&c) {
            match chars.peek() {
                None => boundaries.push(end),
                Some(&(_, next)) if next.is_whitespace() => boundaries.push(end),
                _ => {}
            }
        }
    }
    if boundaries.last() != Some(&text.len()) {
        boundaries.push(text.len());
    }

    // Assign tokens to the sentence containing their first byte.
    let mut spans = Vec::new();
    let mut token = 0usize;
    let mut sentence_start_token = 0usize;
    for &boundary in &boundaries {
        while token < input.token_offsets.len() && input.token_offsets[token].0 < boundary {
            token += 1;
        }
        if token > sentence_start_token {
            spans.push(SentenceSpan {
                start: sentence_start_token,
                end: token,
            });
            sentence_start_token = token;
        }
        // A boundary with no tokens starting inside it folds into the
        // neighbouring sentence.
    }
    if spans.is_empty() {
        return Err(RewardError::EmptyInput);
    }
    Ok(spans)
}

/// Geometric-mean importance ratio of one sentence:
/// `exp(mean(new − old))` over the span's tokens.
pub fn sentence_ratio(
    old_logprobs: &[f64],
    new_logprobs: &[f64],
    span: SentenceSpan,
) -> Result<f64, RewardError> {
    if span.is_empty() || span.end > old_logprobs.len() || span.end > new_logprobs.len() {
        return Err(RewardError::EmptySpan);
    }
    let mut total = 0.0;
    for t in span.start..span.end {
        let (old, new) = (old_logprobs[t], new_logprobs[t]);
        if !old.is_finite() || !new.is_finite() {
            return Err(RewardError::NonFiniteLogProb {
                response: 0,
                token: t,
            });
        }
        total += new - old;
    }
    Ok(math::exp(total / span.len() as f64))
}

/// Reward z-scores within a group: `(R_i − mean) / max(std, 1e-8)` with the
/// population standard deviation. Identical rewards give all-zero
/// advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall { got: rewards.len() });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = math::sqrt(variance);
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    let denom = std.max(1e-8);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// One response of a rollout group: per-token log-probs under the old and
/// new policies, its sentence segmentation, and its scalar reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub old_logprobs: Vec<f64>,
    pub new_logprobs: Vec<f64>,
    pub sentence_spans: Vec<SentenceSpan>,
    pub reward: f64,
    pub correct: bool,
}

impl Response {
    pub fn token_count(&self) -> usize {
        self.old_logprobs.len()
    }

    /// Single sentence covering the whole response (sequence-level view).
    pub fn whole_span(token_count: usize) -> Vec<SentenceSpan> {
        vec![SentenceSpan {
            start: 0,
            end: token_count,
        }]
    }

    /// One sentence per token (token-level view).
    pub fn per_token_spans(token_count: usize) -> Vec<SentenceSpan> {
        (0..token_count)
            .map(|t| SentenceSpan {
                start: t,
                end: t + 1,
            })
            .collect()
    }
}

/// A group of candidate responses sampled for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub responses: Vec<Response>,
}

impl RolloutGroup {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.responses.len() < 2 {
            return Err(RewardError::GroupTooSmall {
                got: self.responses.len(),
            });
        }
        for (i, r) in self.responses.iter().enumerate() {
            if r.old_logprobs.is_empty() {
                return Err(RewardError::EmptyInput);
            }
            if r.new_logprobs.len() != r.old_logprobs.len() {
                return Err(RewardError::LogProbLengthMismatch { response: i });
            }
            for (t, (&a, &b)) in r.old_logprobs.iter().zip(&r.new_logprobs).enumerate() {
                if !a.is_finite() || !b.is_finite() {
                    return Err(RewardError::NonFiniteLogProb {
                        response: i,
                        token: t,
                    });
                }
            }
            let mut cursor = 0usize;
            for span in &r.sentence_spans {
                if span.start != cursor || span.is_empty() {
                    return Err(RewardError::SpanCoverage { response: i });
                }
                cursor = span.end;
            }
            if cursor != r.token_count() {
                return Err(RewardError::SpanCoverage { response: i });
            }
        }
        Ok(())
    }
}

/// Clip width for the sentence-level objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpoConfig {
    pub epsilon: f64,
}

impl Default for LpoConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_LPO_EPSILON,
        }
    }
}

/// One sentence's term in the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceTerm {
    pub response: usize,
    pub span: SentenceSpan,
    pub ratio: f64,
    /// True when the clipped branch was the binding (smaller) one.
    pub clipped: bool,
    /// `|s| · min(r·Â, clip(r)·Â)`, before token-count normalization.
    pub weighted_term: f64,
}

/// Objective value plus its per-sentence breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct LpoReport {
    pub objective: f64,
    pub advantages: Vec<f64>,
    pub per_sentence: Vec<SentenceTerm>,
}

/// Sentence-level clipped surrogate objective over one rollout group,
/// normalized by the group's total token count. Advantages come from the
/// stored rewards.
pub fn lpo_objective(group: &RolloutGroup, cfg: &LpoConfig) -> Result<LpoReport, RewardError> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(RewardError::InvalidEpsilon(cfg.epsilon));
    }
    group.validate()?;
    let rewards: Vec<f64> = group.responses.iter().map(|r| r.reward).collect();
    let advantages = group_advantages(&rewards)?;
    let total_tokens: usize = group.responses.iter().map(Response::token_count).sum();

    let mut per_sentence = Vec::new();
    let mut objective = 0.0;
    for (i, response) in group.responses.iter().enumerate() {
        let advantage = advantages[i];
        for &span in &response.sentence_spans {
            let ratio = sentence_ratio(&response.old_logprobs, &response.new_logprobs, span)?;
            let unclipped = ratio * advantage;
            let clipped_ratio = ratio.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
            let clipped_value = clipped_ratio * advantage;
            let used = unclipped.min(clipped_value);
            let weighted_term = span.len() as f64 * used;
            objective += weighted_term;
            per_sentence.push(SentenceTerm {
                response: i,
                span,
                ratio,
                clipped: used < unclipped,
                weighted_term,
            });
        }
    }
    Ok(LpoReport {
        objective: objective / total_tokens as f64,
        advantages,
        per_sentence,
    })
}

/// Group-relative length preference: affine in the length, +0.5 at the
/// group's shortest response, −0.5 (up to the tiny guard) at the longest.
/// Incorrect responses never earn a positive length reward. Returns
/// `alpha · R̂`.
pub fn length_reward(
    lengths: &[usize],
    index: usize,
    correct: bool,
    alpha: f64,
) -> Result<f64, RewardError> {
    if lengths.is_empty() {
        return Err(RewardError::EmptyInput);
    }
    if index >= lengths.len() {
        return Err(RewardError::IndexOutOfRange {
            index,
            len: lengths.len(),
        });
    }
    if !(alpha > 0.0) {
        return Err(RewardError::InvalidAlpha(alpha));
    }
    let min = *lengths.iter().min().unwrap() as f64;
    let max = *lengths.iter().max().unwrap() as f64;
    let l = lengths[index] as f64;
    let preference = 0.5 - (l - min) / (max - min + 1e-9);
    let shaped = if correct {
        preference
    } else {
        preference.min(0.0)
    };
    Ok(alpha * shaped)
}

/// Composite reward: correctness, length preference, format penalty, and
/// task-specific extras, with the total as their plain sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    pub correctness: f64,
    pub length: f64,
    pub format: f64,
    pub task_specific: Vec<f64>,
    pub total: f64,
}

pub fn composite_reward(
    correct: bool,
    lengths: &[usize],
    index: usize,
    alpha: f64,
    has_think_marker: bool,
    task_rewards: &[f64],
) -> Result<RewardBreakdown, RewardError> {
    let correctness = if correct { 1.0 } else { 0.0 };
    let length = length_reward(lengths, index, correct, alpha)?;
    let format = if has_think_marker {
        FORMAT_PENALTY
    } else {
        0.0
    };
    let total = correctness + length + format + task_rewards.iter().sum::<f64>();
    Ok(RewardBreakdown {
        correctness,
        length,
        format,
        task_specific: task_rewards.to_vec(),
        total,
    })
}

/// One adjudicated match from the first-listed side's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchResult {
    Win,
    Loss,
    Tie,
}

impl MatchResult {
    fn points(self) -> f64 {
        match self {
            Self::Win => 1.0,
            Self::Tie => 0.5,
            Self::Loss => 0.0,
        }
    }

    pub fn inverted(self) -> Self {
        match self {
            Self::Win => Self::Loss,
            Self::Loss => Self::Win,
            Self::Tie => Self::Tie,
        }
    }
}

/// Round-robin arena results over a group: every ordered pair `(i, j)`,
/// `i ≠ j`, is judged once (both presentation orders, which mitigates judge
/// position bias), stored from the first-listed side's perspective.
#[derive(Debug, Clone, PartialEq)]
pub struct ArenaOutcome {
    group_size: usize,
    results: Vec<Option<MatchResult>>,
}

impl ArenaOutcome {
    pub fn empty(group_size: usize) -> Self {
        Self {
            group_size,
            results: vec![None; group_size * group_size],
        }
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn record(&mut self, first: usize, second: usize, result: MatchResult) {
        assert!(first != second, "a response cannot play itself");
        self.results[first * self.group_size + second] = Some(result);
    }

    /// Result of the ordered match `(first, second)` from `first`'s side.
    pub fn get(&self, first: usize, second: usize) -> Option<MatchResult> {
        self.results[first * self.group_size + second]
    }
}

/// Judges every ordered pair by comparing quality scores: a simple stand-in
/// adjudicator for tests and offline evaluation.
pub fn adjudicate_by_scores(scores: &[f64]) -> ArenaOutcome {
    let g = scores.len();
    let mut outcome = ArenaOutcome::empty(g);
    for i in 0..g {
        for j in 0..g {
            if i == j {
                continue;
            }
            let result = if scores[i] > scores[j] {
                MatchResult::Win
            } else if scores[i] < scores[j] {
                MatchResult::Loss
            } else {
                MatchResult::Tie
            };
            outcome.record(i, j, result);
        }
    }
    outcome
}

/// Cumulative arena reward per response: 1 per win, 0.5 per tie, over each
/// response's `2(G−1)` matches. The rewards sum to `G(G−1)` — one point per
/// judged ordered pair.
pub fn gar_scores(outcome: &ArenaOutcome) -> Result<Vec<f64>, RewardError> {
    let g = outcome.group_size();
    let mut scores = vec![0.0; g];
    for i in 0..g {
        for j in 0..g {
            if i == j {
                continue;
            }
            let Some(result) = outcome.get(i, j) else {
                return Err(RewardError::MissingPair {
                    first: i,
                    second: j,
                });
            };
            scores[i] += result.points();
            scores[j] += result.inverted().points();
        }
    }
    Ok(scores)
}

/// Unbiased estimator of the probability that at least one of `k` samples
/// drawn (without replacement) from `n` attempts with `c` correct ones is
/// correct: `1 − C(n−c, k)/C(n, k)`, computed as a stable product.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, RewardError> {
    if c > n || k == 0 || k > n {
        return Err(RewardError::InvalidPassAtK { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut product = 1.0f64;
    for i in 1..=k {
        product *= (n - c - k + i) as f64 / (n - k + i) as f64;
    }
    Ok(1.0 - product)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokenize_chars(text: &str) -> TokenizedText {
        let mut offsets = Vec::new();
        let mut start = 0usize;
        for c in text.chars() {
            offsets.push((start, start + c.len_utf8()));
            start += c.len_utf8();
        }
        TokenizedText::new(String::from(text), offsets).unwrap()
    }

    #[test]
    fn single_sentence_single_span() {
        let text =
            TokenizedText::new(String::from("Hello."), vec![(0, 2), (2, 5), (5, 6)]).unwrap();
        let spans = segment_sentences(&text).unwrap();
        assert_eq!(spans, vec![SentenceSpan { start: 0, end: 3 }]);
    }

    #[test]
    fn three_ascii_sentences() {
        let spans = segment_sentences(&tokenize_chars("A. B. C.")).unwrap();
        assert_eq!(spans.len(), 3);
        // Every token in exactly one span.
        assert_eq!(spans[0].start, 0);
        assert_eq!(spans.last().unwrap().end, 8);
        for w in spans.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn mixed_cjk_and_ascii_sentences() {
        let spans = segment_sentences(&tokenize_chars("先算面积，再求和。Done.")).unwrap();
        assert_eq!(spans.len(), 3);
    }

    #[test]
    fn decimal_point_does_not_split() {
        let spans = segment_sentences(&tokenize_chars("pi is 3.14 ok.")).unwrap();
        assert_eq!(spans.len(), 1);
    }

    #[test]
    fn trailing_text_forms_final_sentence() {
        let spans = segment_sentences(&tokenize_chars("Yes. and then")).unwrap();
        assert_eq!(spans.len(), 2);
    }

    #[test]
    fn alignment_failure_carries_offset() {
        let err = TokenizedText::new(String::from("abcd"), vec![(0, 2), (3, 4)]).unwrap_err();
        assert_eq!(err, RewardError::TokenAlignment { offset: 3 });
    }

    #[test]
    fn identical_policies_unit_ratio() {
        let lp = vec![-1.5, -0.25, -3.0];
        let span = SentenceSpan { start: 0, end: 3 };
        assert_eq!(sentence_ratio(&lp, &lp, span).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_log_ratios_cancel() {
        let old = vec![0.0, 0.0];
        let new = vec![0.2, -0.2];
        let span = SentenceSpan { start: 0, end: 2 };
        assert!((sentence_ratio(&old, &new, span).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_log_ratio_exponentiates() {
        let old = vec![-1.0, -1.0, -1.0];
        let new = vec![-0.9, -0.9, -0.9];
        let span = SentenceSpan { start: 0, end: 3 };
        let r = sentence_ratio(&old, &new, span).unwrap();
        assert!((r - math::exp(0.1)).abs() < 1e-12);
        assert!((r - 1.10517).abs() < 1e-5);
    }

    #[test]
    fn advantages_binary_rewards() {
        let adv = group_advantages(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(adv, vec![1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn advantages_all_equal_are_zero() {
        let adv = group_advantages(&[0.7; 5]).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn advantages_two_point_group() {
        let adv = group_advantages(&[3.0, 1.0]).unwrap();
        assert_eq!(adv, vec![1.0, -1.0]);
    }

    #[test]
    fn advantages_require_two() {
        assert!(matches!(
            group_advantages(&[1.0]),
            Err(RewardError::GroupTooSmall { got: 1 })
        ));
    }

    fn flat_response(tokens: usize, log_ratio: f64, reward: f64) -> Response {
        Response {
            old_logprobs: vec![-1.0; tokens],
            new_logprobs: vec![-1.0 + log_ratio; tokens],
            sentence_spans: Response::whole_span(tokens),
            reward,
            correct: reward > 0.0,
        }
    }

    #[test]
    fn equal_policy_equal_length_objective_is_zero() {
        let group = RolloutGroup {
            responses: vec![
                flat_response(4, 0.0, 2.0),
                flat_response(4, 0.0, 1.0),
                flat_response(4, 0.0, 0.0),
            ],
        };
        let report = lpo_objective(&group, &LpoConfig::default()).unwrap();
        assert!(report.objective.abs() < 1e-12, "{}", report.objective);
    }

    #[test]
    fn clip_binds_above_range() {
        // Â = [1, −1] exactly; response 0 has ratio 1.1 > 1 + ε.
        let group = RolloutGroup {
            responses: vec![
                flat_response(1, math::ln(1.1), 3.0),
                flat_response(1, 0.0, 1.0),
            ],
        };
        let report = lpo_objective(&group, &LpoConfig { epsilon: 0.03 }).unwrap();
        let term = &report.per_sentence[0];
        assert!(term.clipped);
        assert!((term.weighted_term - 1.03).abs() < 1e-12);
    }

    #[test]
    fn below_range_positive_advantage_stays_unclipped() {
        let group = RolloutGroup {
            responses: vec![
                flat_response(1, math::ln(0.9), 3.0),
                flat_response(1, 0.0, 1.0),
            ],
        };
        let report = lpo_objective(&group, &LpoConfig { epsilon: 0.03 }).unwrap();
        let term = &report.per_sentence[0];
        assert!(!term.clipped);
        assert!((term.weighted_term - 0.9).abs() < 1e-12);
    }

    #[test]
    fn objective_rejects_bad_epsilon() {
        let group = RolloutGroup {
            responses: vec![flat_response(1, 0.0, 1.0), flat_response(1, 0.0, 0.0)],
        };
        assert!(lpo_objective(&group, &LpoConfig { epsilon: 0.0 }).is_err());
        assert!(lpo_objective(&group, &LpoConfig { epsilon: 1.0 }).is_err());
    }

    #[test]
    fn span_coverage_enforced() {
        let mut r = flat_response(3, 0.0, 1.0);
        r.sentence_spans = vec![SentenceSpan { start: 0, end: 2 }];
        let group = RolloutGroup {
            responses: vec![r, flat_response(3, 0.0, 0.0)],
        };
        assert!(matches!(
            lpo_objective(&group, &LpoConfig::default()),
            Err(RewardError::SpanCoverage { response: 0 })
        ));
    }

    #[test]
    fn shortest_correct_gets_half() {
        let r = length_reward(&[10, 20, 30], 0, true, 1.0).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn longest_correct_near_minus_half() {
        let r = length_reward(&[10, 20, 30], 2, true, 1.0).unwrap();
        assert!((-0.5..=-0.5 + 1e-6).contains(&r), "{r}");
    }

    #[test]
    fn incorrect_shortest_suppressed_to_zero() {
        let r = length_reward(&[10, 20, 30], 0, false, 1.0).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn equal_lengths_give_half_point() {
        // Degenerate group: l = min = max, preference pins at +0.5.
        let r = length_reward(&[7, 7], 1, true, 2.0).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn composite_correct_short_no_marker() {
        let b = composite_reward(true, &[10, 20, 30], 0, 0.5, false, &[]).unwrap();
        assert_eq!(b.correctness, 1.0);
        assert_eq!(b.length, 0.25);
        assert_eq!(b.format, 0.0);
        assert_eq!(b.total, 1.25);
    }

    #[test]
    fn composite_incorrect_long_with_marker() {
        let alpha = 0.5;
        let b = composite_reward(false, &[10, 20, 30], 2, alpha, true, &[]).unwrap();
        assert_eq!(b.correctness, 0.0);
        assert!((b.length - alpha * (-0.5 + 1e-9 / 20.0)).abs() < 1e-9);
        assert_eq!(b.format, -0.5);
        assert!((b.total - (b.length - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn composite_noop_case() {
        // Incorrect, below the midpoint (positive preference suppressed),
        // no marker, no task rewards: total is exactly zero.
        let b = composite_reward(false, &[10, 20, 30], 0, 1.0, false, &[]).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn two_player_sweep() {
        let outcome = adjudicate_by_scores(&[2.0, 1.0]);
        assert_eq!(gar_scores(&outcome).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn all_ties_three_players() {
        let outcome = adjudicate_by_scores(&[1.0, 1.0, 1.0]);
        assert_eq!(gar_scores(&outcome).unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn strict_order_three_players() {
        let outcome = adjudicate_by_scores(&[3.0, 2.0, 1.0]);
        assert_eq!(gar_scores(&outcome).unwrap(), vec![4.0, 2.0, 0.0]);
    }

    #[test]
    fn total_points_conserved() {
        let outcome = adjudicate_by_scores(&[0.4, 0.9, 0.1, 0.9, 0.2]);
        let scores = gar_scores(&outcome).unwrap();
        let g = 5.0;
        assert!((scores.iter().sum::<f64>() - g * (g - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn missing_pair_is_named() {
        let mut outcome = ArenaOutcome::empty(3);
        outcome.record(0, 1, MatchResult::Win);
        let err = gar_scores(&outcome).unwrap_err();
        assert!(matches!(err, RewardError::MissingPair { .. }));
    }

    #[test]
    fn pass_at_k_quarter() {
        assert!((pass_at_k(4, 1, 1).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pass_at_k_all_correct() {
        for k in 1..=6 {
            assert_eq!(pass_at_k(6, 6, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn pass_at_k_none_correct() {
        for k in 1..=6 {
            assert_eq!(pass_at_k(6, 0, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn pass_at_k_rejects_bad_arguments() {
        assert!(pass_at_k(4, 5, 1).is_err());
        assert!(pass_at_k(4, 1, 5).is_err());
        assert!(pass_at_k(4, 1, 0).is_err());
    }

    #[test]
    fn pass_at_k_monotone() {
        for n in 2..=10u64 {
            for c in 0..=n {
                let mut last = 0.0;
                for k in 1..=n {
                    let p = pass_at_k(n, c, k).unwrap();
                    assert!(p >= last - 1e-15);
                    last = p;
                }
            }
        }
    }
}
