//! Per-triple decision orchestration: independent analysis, consensus
//! check, cooperation rounds under majority rule, and a summarizer
//! tie-break, plus batch execution with run statistics.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    build_analysis_prompt, build_discussion_prompt, build_summarizer_prompt, query_and_parse,
    AgentBackend, AgentError, AgentRole, AgentTurn, CompletionRequest, Verdict,
};
use crate::dataset::{Label, TripleRecord};
use crate::kg::{KnowledgeGraph, Triple};
use crate::subgraph::{extract_all_four, DirectionalSubgraph, ExtractError, SubgraphKind};

/// Standing of the debate given the latest verdict of each directional
/// agent. Abstentions never count toward either side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusState {
    Consensus(Label),
    Majority(Label),
    Tie,
}

/// How the final label was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMethod {
    Consensus,
    Majority,
    Summarizer,
}

/// All directional turns of one debate, in query order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscussionTranscript {
    pub turns: Vec<AgentTurn>,
    pub rounds_used: u32,
}

fn latest_verdicts(turns: &[AgentTurn]) -> [Verdict; 4] {
    AgentRole::DIRECTIONAL.map(|role| {
        turns
            .iter()
            .rev()
            .find(|t| t.role == role)
            .map(|t| t.verdict)
            .expect("transcript covers all four directional agents")
    })
}

impl DiscussionTranscript {
    /// Latest verdict per directional agent, in [`AgentRole::DIRECTIONAL`]
    /// order. Panics on a transcript missing an agent entirely.
    pub fn latest_verdicts(&self) -> [Verdict; 4] {
        latest_verdicts(&self.turns)
    }

    pub fn turns_in_round(&self, round: u32) -> impl Iterator<Item = &AgentTurn> {
        self.turns.iter().filter(move |t| t.round == round)
    }
}

/// Final ruling on one triple together with the full debate record.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub triple: Triple,
    pub label: Label,
    pub method: DecisionMethod,
    pub rounds_used: u32,
    pub transcript: DiscussionTranscript,
    pub summarizer_turn: Option<AgentTurn>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Cooperation rounds after the independent analysis, 1 to 3.
    pub max_rounds: u32,
    /// Largest subgraph shown to an agent.
    pub cap: usize,
    pub seed: u64,
    /// Extra attempts per query before giving up on a backend.
    pub retry: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { max_rounds: 3, cap: 25, seed: 0, retry: 1 }
    }
}

/// The five reply sources of one run.
pub struct AgentBackends {
    pub head_forward: Box<dyn AgentBackend>,
    pub head_backward: Box<dyn AgentBackend>,
    pub tail_forward: Box<dyn AgentBackend>,
    pub tail_backward: Box<dyn AgentBackend>,
    pub summarizer: Box<dyn AgentBackend>,
}

impl std::fmt::Debug for AgentBackends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AgentBackends")
    }
}

impl AgentBackends {
    /// Builds all five backends from the same factory.
    pub fn uniform<F>(mut make: F) -> Self
    where
        F: FnMut() -> Box<dyn AgentBackend>,
    {
        Self {
            head_forward: make(),
            head_backward: make(),
            tail_forward: make(),
            tail_backward: make(),
            summarizer: make(),
        }
    }

    fn for_role(&self, role: AgentRole) -> &dyn AgentBackend {
        match role {
            AgentRole::HeadForwardAgent => self.head_forward.as_ref(),
            AgentRole::HeadBackwardAgent => self.head_backward.as_ref(),
            AgentRole::TailForwardAgent => self.tail_forward.as_ref(),
            AgentRole::TailBackwardAgent => self.tail_backward.as_ref(),
            AgentRole::Summarizer => self.summarizer.as_ref(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("max_rounds must be between 1 and 3, got {0}")]
    InvalidMaxRounds(u32),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("agent failure on {triple}: {source}")]
    AgentFailure { triple: String, source: AgentError },
    #[error("summarizer abstained on {triple}")]
    SummarizerFailure { triple: String },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Counts the latest verdicts. Consensus demands four identical
/// non-abstaining votes; a strict plurality of the counted votes gives a
/// majority; everything else, all-abstain included, is a tie.
pub fn tally(verdicts: &[Verdict; 4]) -> ConsensusState {
    let correct = verdicts.iter().filter(|v| **v == Verdict::Correct).count();
    let incorrect = verdicts.iter().filter(|v| **v == Verdict::Incorrect).count();
    if correct == 4 {
        ConsensusState::Consensus(Label::Correct)
    } else if incorrect == 4 {
        ConsensusState::Consensus(Label::Incorrect)
    } else if correct > incorrect {
        ConsensusState::Majority(Label::Correct)
    } else if incorrect > correct {
        ConsensusState::Majority(Label::Incorrect)
    } else {
        ConsensusState::Tie
    }
}

fn label_for(verdict: Verdict) -> Option<Label> {
    match verdict {
        Verdict::Correct => Some(Label::Correct),
        Verdict::Incorrect => Some(Label::Incorrect),
        Verdict::Abstain => None,
    }
}

/// Queries the four directional agents concurrently and returns their
/// turns in [`AgentRole::DIRECTIONAL`] order. Every agent sees the
/// transcript as it stood when the round began.
fn run_round(
    g: &KnowledgeGraph,
    target: &Triple,
    views: &BTreeMap<SubgraphKind, DirectionalSubgraph>,
    backends: &AgentBackends,
    transcript: &[AgentTurn],
    round: u32,
    config: &ProtocolConfig,
    triple_key: &str,
) -> Result<Vec<AgentTurn>, ProtocolError> {
    let fail = |source: AgentError| ProtocolError::AgentFailure {
        triple: triple_key.to_owned(),
        source,
    };
    let mut requests = Vec::with_capacity(4);
    for role in AgentRole::DIRECTIONAL {
        let sg = &views[&role.subgraph_kind().expect("directional role")];
        let prompt = if round == 0 {
            build_analysis_prompt(g, target, sg, role)
        } else {
            build_discussion_prompt(g, target, sg, role, transcript)
        }
        .map_err(fail)?;
        requests.push(CompletionRequest {
            prompt,
            role,
            round,
            triple_key: triple_key.to_owned(),
        });
    }
    let replies = std::thread::scope(|scope| {
        let handles: Vec<_> = requests
            .iter()
            .map(|request| {
                let backend = backends.for_role(request.role);
                scope.spawn(move || query_and_parse(backend, request, config.retry))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("agent query thread panicked"))
            .collect::<Vec<_>>()
    });
    let mut turns = Vec::with_capacity(4);
    for (request, reply) in requests.into_iter().zip(replies) {
        let reply = reply.map_err(fail)?;
        turns.push(AgentTurn {
            role: request.role,
            round,
            verdict: reply.verdict,
            rationale: reply.rationale,
            raw_reply: reply.raw_reply,
        });
    }
    Ok(turns)
}

/// Runs the full debate for one triple.
///
/// Round 0 is the independent analysis; a unanimous bench stops there.
/// Otherwise up to `max_rounds` cooperation rounds follow, stopping
/// early only on consensus. After the last round a strict majority
/// settles the label, and a tie goes to the summarizer.
pub fn decide(
    target: &Triple,
    g: &KnowledgeGraph,
    backends: &AgentBackends,
    config: &ProtocolConfig,
) -> Result<Decision, ProtocolError> {
    if !(1..=3).contains(&config.max_rounds) {
        return Err(ProtocolError::InvalidMaxRounds(config.max_rounds));
    }
    let views = extract_all_four(g, target, config.cap, config.seed)?;
    let triple_key = g.render_triple(target);
    let mut turns: Vec<AgentTurn> = Vec::new();
    for round in 0..=config.max_rounds {
        let round_turns =
            run_round(g, target, &views, backends, &turns, round, config, &triple_key)?;
        turns.extend(round_turns);
        if let ConsensusState::Consensus(label) = tally(&latest_verdicts(&turns)) {
            return Ok(Decision {
                triple: *target,
                label,
                method: DecisionMethod::Consensus,
                rounds_used: round,
                transcript: DiscussionTranscript { turns, rounds_used: round },
                summarizer_turn: None,
            });
        }
    }
    let transcript = DiscussionTranscript { turns, rounds_used: config.max_rounds };
    match tally(&transcript.latest_verdicts()) {
        ConsensusState::Consensus(_) => unreachable!("consensus returns inside the loop"),
        ConsensusState::Majority(label) => Ok(Decision {
            triple: *target,
            label,
            method: DecisionMethod::Majority,
            rounds_used: config.max_rounds,
            transcript,
            summarizer_turn: None,
        }),
        ConsensusState::Tie => {
            let prompt = build_summarizer_prompt(g, target, &transcript.turns).map_err(|e| {
                ProtocolError::AgentFailure { triple: triple_key.clone(), source: e }
            })?;
            let request = CompletionRequest {
                prompt,
                role: AgentRole::Summarizer,
                round: config.max_rounds,
                triple_key: triple_key.clone(),
            };
            let reply = query_and_parse(backends.summarizer.as_ref(), &request, config.retry)
                .map_err(|e| ProtocolError::AgentFailure {
                    triple: triple_key.clone(),
                    source: e,
                })?;
            let label = label_for(reply.verdict)
                .ok_or(ProtocolError::SummarizerFailure { triple: triple_key })?;
            Ok(Decision {
                triple: *target,
                label,
                method: DecisionMethod::Summarizer,
                rounds_used: config.max_rounds,
                transcript,
                summarizer_turn: Some(AgentTurn {
                    role: AgentRole::Summarizer,
                    round: config.max_rounds,
                    verdict: reply.verdict,
                    rationale: reply.rationale,
                    raw_reply: reply.raw_reply,
                }),
            })
        }
    }
}

/// Aggregate statistics over the decided triples of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub decided: usize,
    pub failed: usize,
    pub mean_rounds: f64,
    pub tie_fraction: f64,
    pub consensus: usize,
    pub majority: usize,
    pub summarizer: usize,
}

impl RunStats {
    fn collect<I>(outcomes: I, failed: usize) -> Self
    where
        I: IntoIterator<Item = (DecisionMethod, u32)>,
    {
        let mut stats = RunStats {
            decided: 0,
            failed,
            mean_rounds: 0.0,
            tie_fraction: 0.0,
            consensus: 0,
            majority: 0,
            summarizer: 0,
        };
        let mut round_sum = 0u64;
        for (method, rounds) in outcomes {
            stats.decided += 1;
            round_sum += u64::from(rounds);
            match method {
                DecisionMethod::Consensus => stats.consensus += 1,
                DecisionMethod::Majority => stats.majority += 1,
                DecisionMethod::Summarizer => stats.summarizer += 1,
            }
        }
        if stats.decided > 0 {
            stats.mean_rounds = round_sum as f64 / stats.decided as f64;
            stats.tie_fraction = stats.summarizer as f64 / stats.decided as f64;
        }
        stats
    }

    pub fn from_results(results: &[Result<Decision, ProtocolError>]) -> Self {
        let failed = results.iter().filter(|r| r.is_err()).count();
        Self::collect(
            results.iter().filter_map(|r| r.as_ref().ok()).map(|d| (d.method, d.rounds_used)),
            failed,
        )
    }

    pub fn from_records(records: &[DecisionRecord]) -> Self {
        Self::collect(records.iter().map(|r| (r.method, r.rounds_used)), 0)
    }
}

/// Decides every target, preserving input order. Triples are distributed
/// over `parallelism` worker threads; failures occupy their slot without
/// sinking the rest of the batch.
pub fn detect_batch(
    targets: &[Triple],
    g: &KnowledgeGraph,
    backends: &AgentBackends,
    config: &ProtocolConfig,
    parallelism: usize,
) -> (Vec<Result<Decision, ProtocolError>>, RunStats) {
    let workers = parallelism.max(1).min(targets.len().max(1));
    let mut slots: Vec<Option<Result<Decision, ProtocolError>>> =
        (0..targets.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|worker| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for idx in (worker..targets.len()).step_by(workers) {
                        out.push((idx, decide(&targets[idx], g, backends, config)));
                    }
                    out
                })
            })
            .collect();
        for handle in handles {
            for (idx, result) in handle.join().expect("batch worker panicked") {
                slots[idx] = Some(result);
            }
        }
    });
    let results: Vec<_> =
        slots.into_iter().map(|s| s.expect("every target gets a slot")).collect();
    let stats = RunStats::from_results(&results);
    (results, stats)
}

/// One transcript entry on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub role: AgentRole,
    pub round: u32,
    pub verdict: Verdict,
    pub rationale: String,
}

/// One decision on the wire: the directional turns in query order, with
/// the summarizer's turn appended when one was consulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub triple: TripleRecord,
    pub label: Label,
    pub method: DecisionMethod,
    pub rounds_used: u32,
    pub turns: Vec<TurnRecord>,
}

impl DecisionRecord {
    pub fn from_decision(g: &KnowledgeGraph, decision: &Decision) -> Self {
        let mut turns: Vec<TurnRecord> = decision
            .transcript
            .turns
            .iter()
            .chain(decision.summarizer_turn.iter())
            .map(|t| TurnRecord {
                role: t.role,
                round: t.round,
                verdict: t.verdict,
                rationale: t.rationale.clone(),
            })
            .collect();
        turns.shrink_to_fit();
        Self {
            triple: TripleRecord::from_triple(g, &decision.triple),
            label: decision.label,
            method: decision.method,
            rounds_used: decision.rounds_used,
            turns,
        }
    }

    /// The `(head, relation, tail)` form used to address transcripts.
    pub fn triple_display(&self) -> String {
        format!("({}, {}, {})", self.triple.head, self.triple.relation, self.triple.tail)
    }
}

/// Writes decisions as JSON lines in input order.
pub fn write_decisions<W: Write>(
    mut writer: W,
    g: &KnowledgeGraph,
    decisions: &[Decision],
) -> Result<(), ProtocolError> {
    for decision in decisions {
        let record = DecisionRecord::from_decision(g, decision);
        let line = serde_json::to_string(&record)
            .map_err(|source| ProtocolError::Json { line: 0, source })?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Reads JSON-lines decisions, skipping blank lines.
pub fn read_decisions<R: BufRead>(reader: R) -> Result<Vec<DecisionRecord>, ProtocolError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|source| ProtocolError::Json { line: idx + 1, source })?;
        records.push(record);
    }
    Ok(records)
}
