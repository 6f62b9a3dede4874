//! Deterministic prompt templates for analysis, discussion, and
//! summarization. Identical inputs always produce byte-identical text.

use super::{AgentError, AgentRole, AgentTurn};
use crate::kg::{KnowledgeGraph, Triple};
use crate::subgraph::DirectionalSubgraph;

const FORMAT_INSTRUCTION: &str =
    "Reply in exactly this format:\nVERDICT: correct|incorrect\nREASON: <text>";
const SUMMARY_INSTRUCTION: &str = "Reply with a single line:\nVERDICT: correct|incorrect";

fn perspective(role: AgentRole) -> &'static str {
    match role {
        AgentRole::HeadForwardAgent => "You see the head entity's other outgoing links.",
        AgentRole::HeadBackwardAgent => "You see the links pointing into the head entity.",
        AgentRole::TailForwardAgent => "You see the links going out of the tail entity.",
        AgentRole::TailBackwardAgent => "You see the other links pointing into the tail entity.",
        AgentRole::Summarizer => "",
    }
}

fn check_binding(
    target: &Triple,
    sg: &DirectionalSubgraph,
    role: AgentRole,
) -> Result<(), AgentError> {
    let kind = role
        .subgraph_kind()
        .ok_or_else(|| AgentError::RoleMismatch(format!("{role} takes no subgraph prompt")))?;
    if sg.kind != kind {
        return Err(AgentError::RoleMismatch(format!(
            "{role} argues from {kind:?} but was given a {:?} subgraph",
            sg.kind
        )));
    }
    if sg.target != *target {
        return Err(AgentError::RoleMismatch(
            "subgraph was extracted for a different triple".to_owned(),
        ));
    }
    Ok(())
}

fn subgraph_section(g: &KnowledgeGraph, sg: &DirectionalSubgraph) -> String {
    if sg.is_empty() {
        "SUBGRAPH: (none)".to_owned()
    } else {
        format!("SUBGRAPH:\n{}", sg.render(g))
    }
}

/// Latest turn of each role, by round then transcript position.
fn latest_turn(transcript: &[AgentTurn], role: AgentRole) -> Option<&AgentTurn> {
    transcript
        .iter()
        .enumerate()
        .filter(|(_, t)| t.role == role)
        .max_by_key(|(i, t)| (t.round, *i))
        .map(|(_, t)| t)
}

/// Round-0 prompt: the agent judges the triple from its subgraph alone.
pub fn build_analysis_prompt(
    g: &KnowledgeGraph,
    target: &Triple,
    sg: &DirectionalSubgraph,
    role: AgentRole,
) -> Result<String, AgentError> {
    check_binding(target, sg, role)?;
    Ok(format!(
        "You are {role}, one of four inspectors debating whether a candidate fact belongs in a knowledge graph.\n\
         TARGET: {target}\n\
         PERSPECTIVE: {perspective}\n\
         {subgraph}\n\
         Judge the target on your subgraph evidence alone.\n\
         {FORMAT_INSTRUCTION}",
        target = g.render_triple(target),
        perspective = perspective(role),
        subgraph = subgraph_section(g, sg),
    ))
}

/// Cooperation-round prompt: the agent sees its own last position and the
/// latest position of each peer.
pub fn build_discussion_prompt(
    g: &KnowledgeGraph,
    target: &Triple,
    sg: &DirectionalSubgraph,
    role: AgentRole,
    transcript: &[AgentTurn],
) -> Result<String, AgentError> {
    check_binding(target, sg, role)?;
    if transcript.is_empty() {
        return Err(AgentError::EmptyTranscript);
    }
    let own = latest_turn(transcript, role)
        .ok_or_else(|| AgentError::IncompleteTranscript(format!("{role} has no previous turn")))?;
    let mut peers = String::new();
    for peer in AgentRole::DIRECTIONAL {
        if peer == role {
            continue;
        }
        let turn = latest_turn(transcript, peer).ok_or_else(|| {
            AgentError::IncompleteTranscript(format!("{peer} has no turn to discuss"))
        })?;
        peers.push_str(&format!("{peer} {}: {}\n", turn.verdict, turn.rationale));
    }
    Ok(format!(
        "You are {role}, revisiting your judgment of a candidate fact after hearing your peers.\n\
         TARGET: {target}\n\
         PERSPECTIVE: {perspective}\n\
         {subgraph}\n\
         YOUR PREVIOUS POSITION:\n\
         {own_verdict}: {own_rationale}\n\
         PEER POSITIONS:\n\
         {peers}\
         Keep or revise your verdict in light of the discussion.\n\
         {FORMAT_INSTRUCTION}",
        target = g.render_triple(target),
        perspective = perspective(role),
        subgraph = subgraph_section(g, sg),
        own_verdict = own.verdict,
        own_rationale = own.rationale,
    ))
}

/// Tie-break prompt carrying every round of the discussion.
///
/// The transcript must contain exactly one turn per directional agent for
/// every round from 0 through the last, and at least one cooperation
/// round.
pub fn build_summarizer_prompt(
    g: &KnowledgeGraph,
    target: &Triple,
    transcript: &[AgentTurn],
) -> Result<String, AgentError> {
    if transcript.is_empty() {
        return Err(AgentError::EmptyTranscript);
    }
    if let Some(turn) = transcript.iter().find(|t| !t.role.is_directional()) {
        return Err(AgentError::IncompleteTranscript(format!(
            "unexpected {} turn in a directional transcript",
            turn.role
        )));
    }
    let max_round = transcript.iter().map(|t| t.round).max().unwrap_or(0);
    if max_round == 0 {
        return Err(AgentError::IncompleteTranscript(
            "no cooperation rounds to summarize".to_owned(),
        ));
    }
    let mut rounds = String::new();
    for round in 0..=max_round {
        rounds.push_str(&format!("ROUND {round}:\n"));
        for role in AgentRole::DIRECTIONAL {
            let matches: Vec<&AgentTurn> =
                transcript.iter().filter(|t| t.round == round && t.role == role).collect();
            let turn = match matches.as_slice() {
                [turn] => turn,
                [] => {
                    return Err(AgentError::IncompleteTranscript(format!(
                        "{role} missing in round {round}"
                    )))
                }
                _ => {
                    return Err(AgentError::IncompleteTranscript(format!(
                        "{role} appears more than once in round {round}"
                    )))
                }
            };
            rounds.push_str(&format!("{role} {}: {}\n", turn.verdict, turn.rationale));
        }
    }
    Ok(format!(
        "You are the summarizer. Four inspectors debated a candidate fact and split evenly; you issue the final ruling.\n\
         TARGET: {target}\n\
         {rounds}\
         Weigh the arguments on both sides and decide.\n\
         {SUMMARY_INSTRUCTION}",
        target = g.render_triple(target),
    ))
}
