//! The four directional agents, their summarizer, prompt construction,
//! backend plumbing, and verdict parsing.
//!
//! Each directional agent judges the target triple from one subgraph
//! view. Backends are pluggable: scripted policies and replay fixtures
//! for tests, an HTTP chat endpoint for real models. Replies follow a
//! fixed machine-parsable format; anything unparsable becomes an
//! abstention rather than a fabricated judgment.

mod backends;
mod prompts;

pub use backends::{
    format_reply, RemoteChatBackend, RemoteChatConfig, ReplayBackend, ReplayRecord,
    ScriptedBackend,
};
pub use prompts::{build_analysis_prompt, build_discussion_prompt, build_summarizer_prompt};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::subgraph::SubgraphKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    HeadForwardAgent,
    HeadBackwardAgent,
    TailForwardAgent,
    TailBackwardAgent,
    Summarizer,
}

impl AgentRole {
    /// The four subgraph-bound roles, in [`SubgraphKind::ALL`] order.
    pub const DIRECTIONAL: [AgentRole; 4] = [
        AgentRole::HeadForwardAgent,
        AgentRole::HeadBackwardAgent,
        AgentRole::TailForwardAgent,
        AgentRole::TailBackwardAgent,
    ];

    pub fn for_kind(kind: SubgraphKind) -> AgentRole {
        match kind {
            SubgraphKind::HeadForward => AgentRole::HeadForwardAgent,
            SubgraphKind::HeadBackward => AgentRole::HeadBackwardAgent,
            SubgraphKind::TailForward => AgentRole::TailForwardAgent,
            SubgraphKind::TailBackward => AgentRole::TailBackwardAgent,
        }
    }

    /// The subgraph view this role argues from; `None` for the summarizer.
    pub fn subgraph_kind(self) -> Option<SubgraphKind> {
        match self {
            AgentRole::HeadForwardAgent => Some(SubgraphKind::HeadForward),
            AgentRole::HeadBackwardAgent => Some(SubgraphKind::HeadBackward),
            AgentRole::TailForwardAgent => Some(SubgraphKind::TailForward),
            AgentRole::TailBackwardAgent => Some(SubgraphKind::TailBackward),
            AgentRole::Summarizer => None,
        }
    }

    pub fn is_directional(self) -> bool {
        self.subgraph_kind().is_some()
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::HeadForwardAgent => "Head_Forward_Agent",
            AgentRole::HeadBackwardAgent => "Head_Backward_Agent",
            AgentRole::TailForwardAgent => "Tail_Forward_Agent",
            AgentRole::TailBackwardAgent => "Tail_Backward_Agent",
            AgentRole::Summarizer => "Summarizer",
        })
    }
}

/// An agent's stance on the target triple. `Abstain` only ever comes from
/// the parse-failure policy, never from a well-formed reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
    Abstain,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
            Verdict::Abstain => "abstain",
        })
    }
}

/// One reply in a discussion, round 0 being the independent analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTurn {
    pub role: AgentRole,
    pub round: u32,
    pub verdict: Verdict,
    pub rationale: String,
    pub raw_reply: String,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("role/subgraph mismatch: {0}")]
    RoleMismatch(String),
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("transcript incomplete: {0}")]
    IncompleteTranscript(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("replay fixture: {0}")]
    Fixture(String),
}

/// One completion request. Besides the prompt it carries the structured
/// coordinates of the query so that stateless backends (scripted
/// policies, replay fixtures) can answer without tracking call order.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub prompt: String,
    pub role: AgentRole,
    pub round: u32,
    pub triple_key: String,
}

/// A reply source. Implementations must be callable from several threads
/// at once and must not depend on the order of calls.
pub trait AgentBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, AgentError>;
}

/// Outcome of [`query_and_parse`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReply {
    pub verdict: Verdict,
    pub rationale: String,
    pub raw_reply: String,
}

/// Extract a verdict and rationale from a reply.
///
/// The scan is case-insensitive and skips echoes of the format
/// instruction itself (a verdict word immediately followed by `|`). The
/// rationale is the text after the first `REASON:` marker following the
/// verdict, or the whole reply if the marker is absent.
pub fn parse_reply(reply: &str) -> Option<(Verdict, String)> {
    let lower = reply.to_ascii_lowercase();
    let mut from = 0;
    while let Some(found) = lower[from..].find("verdict:") {
        let after = from + found + "verdict:".len();
        let rest = &lower[after..];
        let word_start = after + (rest.len() - rest.trim_start().len());
        let word_end = lower[word_start..]
            .find(|c: char| !c.is_ascii_alphabetic())
            .map_or(lower.len(), |i| word_start + i);
        let echoed = lower[word_end..].starts_with('|');
        if !echoed {
            let verdict = match &lower[word_start..word_end] {
                "correct" => Some(Verdict::Correct),
                "incorrect" => Some(Verdict::Incorrect),
                _ => None,
            };
            if let Some(verdict) = verdict {
                let rationale = match lower[word_end..].find("reason:") {
                    Some(at) => reply[word_end + at + "reason:".len()..].trim().to_owned(),
                    None => reply.trim().to_owned(),
                };
                return Some((verdict, rationale));
            }
        }
        from = after;
    }
    None
}

/// Query a backend and parse its reply, retrying on failure.
///
/// A reply that still fails to parse after `retry` additional attempts
/// yields an abstention carrying the raw reply; a transport failure that
/// persists through the retry budget is an error.
pub fn query_and_parse(
    backend: &dyn AgentBackend,
    request: &CompletionRequest,
    retry: u32,
) -> Result<ParsedReply, AgentError> {
    let mut attempt = 0;
    loop {
        match backend.complete(request) {
            Ok(reply) => match parse_reply(&reply) {
                Some((verdict, rationale)) => {
                    return Ok(ParsedReply { verdict, rationale, raw_reply: reply })
                }
                None if attempt >= retry => {
                    return Ok(ParsedReply {
                        verdict: Verdict::Abstain,
                        rationale: reply.clone(),
                        raw_reply: reply,
                    })
                }
                None => {}
            },
            Err(e) if attempt >= retry => return Err(e),
            Err(_) => {}
        }
        attempt += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.to_owned(),
            role: AgentRole::HeadForwardAgent,
            round: 0,
            triple_key: "(a, r, b)".to_owned(),
        }
    }

    #[test]
    fn well_formed_reply_parses() {
        let (verdict, rationale) =
            parse_reply("VERDICT: incorrect\nREASON: tail entity mismatch").unwrap();
        assert_eq!(verdict, Verdict::Incorrect);
        assert_eq!(rationale, "tail entity mismatch");
    }

    #[test]
    fn parsing_is_case_insensitive() {
        for v in ["VERDICT", "verdict", "Verdict", "vErDiCt"] {
            for (w, expected) in [
                ("CORRECT", Verdict::Correct),
                ("correct", Verdict::Correct),
                ("Correct", Verdict::Correct),
                ("INCORRECT", Verdict::Incorrect),
                ("InCoRrEcT", Verdict::Incorrect),
            ] {
                let reply = format!("{v}: {w} because of the graph");
                let (verdict, _) = parse_reply(&reply)
                    .unwrap_or_else(|| panic!("failed to parse {reply:?}"));
                assert_eq!(verdict, expected);
            }
        }
    }

    #[test]
    fn echoed_format_instruction_is_skipped() {
        let reply = "Reply in exactly this format:\nVERDICT: correct|incorrect\nVERDICT: incorrect\nREASON: broken link";
        let (verdict, rationale) = parse_reply(reply).unwrap();
        assert_eq!(verdict, Verdict::Incorrect);
        assert_eq!(rationale, "broken link");
    }

    #[test]
    fn missing_reason_falls_back_to_the_whole_reply() {
        let (verdict, rationale) = parse_reply("verdict: correct, the edge exists").unwrap();
        assert_eq!(verdict, Verdict::Correct);
        assert_eq!(rationale, "verdict: correct, the edge exists");
    }

    #[test]
    fn near_miss_words_do_not_parse() {
        assert!(parse_reply("VERDICT: correctness unclear").is_none());
        assert!(parse_reply("VERDICT: maybe").is_none());
        assert!(parse_reply("no verdict here").is_none());
        assert!(parse_reply("").is_none());
    }

    #[test]
    fn parser_is_total_over_arbitrary_strings() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let len = rng.gen_range(0..80);
            let s: String = (0..len)
                .map(|_| {
                    let choices = b"VERDICTverdict: |corInCt\n\t reason";
                    choices[rng.gen_range(0..choices.len())] as char
                })
                .collect();
            let _ = parse_reply(&s);
        }
    }

    #[test]
    fn unparsable_reply_becomes_abstention_after_retries() {
        let calls = AtomicUsize::new(0);
        let backend = ScriptedBackend::with_policy(move |_| {
            calls.fetch_add(1, Ordering::SeqCst);
            "I think it is fine.".to_owned()
        });
        let parsed = query_and_parse(&backend, &request("p"), 1).unwrap();
        assert_eq!(parsed.verdict, Verdict::Abstain);
        assert_eq!(parsed.rationale, "I think it is fine.");
        assert_eq!(parsed.raw_reply, "I think it is fine.");
    }

    #[test]
    fn retry_budget_is_respected() {
        struct Counting(AtomicUsize);
        impl AgentBackend for Counting {
            fn complete(&self, _: &CompletionRequest) -> Result<String, AgentError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok("mumble".to_owned())
            }
        }
        let backend = Counting(AtomicUsize::new(0));
        let parsed = query_and_parse(&backend, &request("p"), 2).unwrap();
        assert_eq!(parsed.verdict, Verdict::Abstain);
        assert_eq!(backend.0.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_transport_failure_is_an_error() {
        struct Failing;
        impl AgentBackend for Failing {
            fn complete(&self, _: &CompletionRequest) -> Result<String, AgentError> {
                Err(AgentError::Transport("connection refused".to_owned()))
            }
        }
        let err = query_and_parse(&Failing, &request("p"), 1).unwrap_err();
        assert!(matches!(err, AgentError::Transport(_)));
    }

    #[test]
    fn transient_transport_failure_recovers() {
        struct Flaky(AtomicUsize);
        impl AgentBackend for Flaky {
            fn complete(&self, _: &CompletionRequest) -> Result<String, AgentError> {
                if self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                    Err(AgentError::Transport("blip".to_owned()))
                } else {
                    Ok("VERDICT: correct\nREASON: fine".to_owned())
                }
            }
        }
        let parsed = query_and_parse(&Flaky(AtomicUsize::new(0)), &request("p"), 1).unwrap();
        assert_eq!(parsed.verdict, Verdict::Correct);
    }

    #[test]
    fn roles_and_kinds_are_bound_one_to_one() {
        for kind in SubgraphKind::ALL {
            let role = AgentRole::for_kind(kind);
            assert_eq!(role.subgraph_kind(), Some(kind));
            assert!(role.is_directional());
        }
        assert_eq!(AgentRole::Summarizer.subgraph_kind(), None);
        assert_eq!(AgentRole::DIRECTIONAL.len(), 4);
    }

    #[test]
    fn role_names_serialize_in_snake_case() {
        let json = serde_json::to_string(&AgentRole::HeadForwardAgent).unwrap();
        assert_eq!(json, "\"head_forward_agent\"");
        assert_eq!(AgentRole::TailBackwardAgent.to_string(), "Tail_Backward_Agent");
        let back: AgentRole = serde_json::from_str("\"summarizer\"").unwrap();
        assert_eq!(back, AgentRole::Summarizer);
    }
}
