//! Run configuration: one TOML document covering corruption, encoder
//! training, protocol settings, and the backend wired to each agent.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::agents::{
    AgentBackend, RemoteChatBackend, RemoteChatConfig, ReplayBackend, ScriptedBackend, Verdict,
};
use crate::encoder::EncoderTrainConfig;
use crate::protocol::{AgentBackends, ProtocolConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_owned(), message: message.into() }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSection {
    pub rate: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for CorruptionSection {
    fn default() -> Self {
        Self { rate: 0.3, top_k: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub max_rounds: u32,
    pub cap: usize,
    pub parallelism: usize,
    pub seed: u64,
    pub retry: u32,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self { max_rounds: p.max_rounds, cap: p.cap, parallelism: 1, seed: p.seed, retry: p.retry }
    }
}

impl ProtocolSection {
    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            max_rounds: self.max_rounds,
            cap: self.cap,
            seed: self.seed,
            retry: self.retry,
        }
    }
}

/// How one agent gets its replies.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BackendSpec {
    /// Canned replies: either one fixed verdict or a per-round script.
    Scripted {
        verdict: Option<Verdict>,
        by_round: Option<Vec<Verdict>>,
        rationale: Option<String>,
    },
    /// Replies recorded in a JSON fixture file.
    Replay { path: PathBuf },
    /// A live chat-completion endpoint.
    Remote(RemoteChatConfig),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsSection {
    /// Fallback for any role without its own entry.
    pub default: Option<BackendSpec>,
    pub head_forward_agent: Option<BackendSpec>,
    pub head_backward_agent: Option<BackendSpec>,
    pub tail_forward_agent: Option<BackendSpec>,
    pub tail_backward_agent: Option<BackendSpec>,
    pub summarizer: Option<BackendSpec>,
}

impl BackendsSection {
    fn entries(&self) -> [(&'static str, &Option<BackendSpec>); 6] {
        [
            ("default", &self.default),
            ("head_forward_agent", &self.head_forward_agent),
            ("head_backward_agent", &self.head_backward_agent),
            ("tail_forward_agent", &self.tail_forward_agent),
            ("tail_backward_agent", &self.tail_backward_agent),
            ("summarizer", &self.summarizer),
        ]
    }
}

/// Everything a run needs beyond its input and output paths, which may
/// also be stated here as fallbacks for the command-line flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kg: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub corruption: CorruptionSection,
    pub encoder: EncoderTrainConfig,
    pub protocol: ProtocolSection,
    pub backends: BackendsSection,
}

fn validate_backend_spec(field: &str, spec: &BackendSpec) -> Result<(), ConfigError> {
    match spec {
        BackendSpec::Scripted { verdict, by_round, .. } => match (verdict, by_round) {
            (Some(_), Some(_)) => {
                Err(invalid(field, "give either verdict or by_round, not both"))
            }
            (None, None) => Err(invalid(field, "scripted backend needs verdict or by_round")),
            (None, Some(rounds)) if rounds.is_empty() => {
                Err(invalid(field, "by_round must list at least one verdict"))
            }
            _ => Ok(()),
        },
        BackendSpec::Replay { path } => {
            if !path.exists() {
                return Err(invalid(field, format!("replay fixture {} not found", path.display())));
            }
            Ok(())
        }
        BackendSpec::Remote(remote) => {
            if remote.url.is_empty() {
                return Err(invalid(field, "remote backend needs a url"));
            }
            if remote.model.is_empty() {
                return Err(invalid(field, "remote backend needs a model"));
            }
            Ok(())
        }
    }
}

fn validate(config: &RunConfig) -> Result<(), ConfigError> {
    if !(config.corruption.rate > 0.0 && config.corruption.rate < 1.0) {
        return Err(invalid(
            "corruption.rate",
            format!("must be strictly between 0 and 1, got {}", config.corruption.rate),
        ));
    }
    if config.corruption.top_k == 0 {
        return Err(invalid("corruption.top_k", "must be at least 1"));
    }
    if config.encoder.dim < 2 {
        return Err(invalid("encoder.dim", "must be at least 2"));
    }
    if config.encoder.hidden == 0 {
        return Err(invalid("encoder.hidden", "must be at least 1"));
    }
    if config.encoder.batch == 0 {
        return Err(invalid("encoder.batch", "must be at least 1"));
    }
    if config.encoder.cap == 0 {
        return Err(invalid("encoder.cap", "must be at least 1"));
    }
    if !(config.encoder.lr.is_finite() && config.encoder.lr >= 0.0) {
        return Err(invalid("encoder.lr", "must be a finite non-negative number"));
    }
    if !(1..=3).contains(&config.protocol.max_rounds) {
        return Err(invalid(
            "protocol.max_rounds",
            format!("must be between 1 and 3, got {}", config.protocol.max_rounds),
        ));
    }
    if config.protocol.cap == 0 {
        return Err(invalid("protocol.cap", "must be at least 1"));
    }
    if config.protocol.parallelism == 0 {
        return Err(invalid("protocol.parallelism", "must be at least 1"));
    }
    for (name, path) in [
        ("kg", &config.kg),
        ("dataset_dir", &config.dataset_dir),
    ] {
        if let Some(path) = path {
            if !path.exists() {
                return Err(invalid(name, format!("{} does not exist", path.display())));
            }
        }
    }
    for (name, spec) in config.backends.entries() {
        if let Some(spec) = spec {
            validate_backend_spec(&format!("backends.{name}"), spec)?;
        }
    }
    Ok(())
}

/// Parses and range-checks a config document. An empty document is valid
/// and yields all defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text)?;
    validate(&config)?;
    Ok(config)
}

pub fn validate_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn build_backend(field: &str, spec: &BackendSpec) -> Result<Box<dyn AgentBackend>, ConfigError> {
    validate_backend_spec(field, spec)?;
    match spec {
        BackendSpec::Scripted { verdict, by_round, rationale } => {
            let rationale = rationale.as_deref().unwrap_or("scripted reply");
            Ok(match (verdict, by_round) {
                (Some(v), None) => Box::new(ScriptedBackend::fixed(*v, rationale)),
                (None, Some(rounds)) => {
                    Box::new(ScriptedBackend::by_round(rounds.clone(), rationale))
                }
                _ => unreachable!("validated above"),
            })
        }
        BackendSpec::Replay { path } => Ok(Box::new(
            ReplayBackend::from_path(path)
                .map_err(|e| invalid(field, e.to_string()))?,
        )),
        BackendSpec::Remote(remote) => Ok(Box::new(
            RemoteChatBackend::new(remote.clone())
                .map_err(|e| invalid(field, e.to_string()))?,
        )),
    }
}

/// Builds the five agent backends, falling back to `backends.default`
/// for roles without their own entry.
pub fn build_backends(config: &RunConfig) -> Result<AgentBackends, ConfigError> {
    let section = &config.backends;
    let resolve = |name: &str,
                   own: &Option<BackendSpec>|
     -> Result<Box<dyn AgentBackend>, ConfigError> {
        let field = format!("backends.{name}");
        match own.as_ref().or(section.default.as_ref()) {
            Some(spec) => build_backend(&field, spec),
            None => Err(invalid(&field, "no backend configured and no default given")),
        }
    };
    Ok(AgentBackends {
        head_forward: resolve("head_forward_agent", &section.head_forward_agent)?,
        head_backward: resolve("head_backward_agent", &section.head_backward_agent)?,
        tail_forward: resolve("tail_forward_agent", &section.tail_forward_agent)?,
        tail_backward: resolve("tail_backward_agent", &section.tail_backward_agent)?,
        summarizer: resolve("summarizer", &section.summarizer)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{parse_reply, AgentRole, CompletionRequest};
    use std::io::Write as _;

    fn field_of(err: ConfigError) -> String {
        match err {
            ConfigError::Invalid { field, .. } => field,
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_yields_all_defaults() {
        let config = parse_config("").unwrap();
        assert_eq!(config.corruption.rate, 0.3);
        assert_eq!(config.corruption.top_k, 10);
        assert_eq!(config.encoder, EncoderTrainConfig::default());
        assert_eq!(config.protocol.max_rounds, 3);
        assert_eq!(config.protocol.cap, 25);
        assert_eq!(config.protocol.parallelism, 1);
        assert!(config.backends.default.is_none());
        assert!(config.kg.is_none());
    }

    #[test]
    fn partial_sections_keep_their_defaults() {
        let config = parse_config("[encoder]\nepochs = 5\n").unwrap();
        assert_eq!(config.encoder.epochs, 5);
        assert_eq!(config.encoder.hidden, 128);
        assert_eq!(config.encoder.dim, 64);
        assert_eq!(config.encoder.batch, 64);
        assert!((config.encoder.lr - 0.001).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_rounds_are_rejected_with_the_field_path() {
        let err = parse_config("[protocol]\nmax_rounds = 5\n").unwrap_err();
        assert_eq!(field_of(err), "protocol.max_rounds");
        let err = parse_config("[protocol]\nmax_rounds = 0\n").unwrap_err();
        assert_eq!(field_of(err), "protocol.max_rounds");
    }

    #[test]
    fn corruption_rate_must_be_a_proper_fraction() {
        for bad in ["0.0", "1.0", "1.5", "-0.2"] {
            let err = parse_config(&format!("[corruption]\nrate = {bad}\n")).unwrap_err();
            assert_eq!(field_of(err), "corruption.rate", "rate {bad}");
        }
        assert!(parse_config("[corruption]\nrate = 0.5\n").is_ok());
    }

    #[test]
    fn zero_counts_are_rejected() {
        for (text, field) in [
            ("[protocol]\nparallelism = 0\n", "protocol.parallelism"),
            ("[protocol]\ncap = 0\n", "protocol.cap"),
            ("[encoder]\nbatch = 0\n", "encoder.batch"),
            ("[encoder]\ndim = 1\n", "encoder.dim"),
            ("[corruption]\ntop_k = 0\n", "corruption.top_k"),
        ] {
            assert_eq!(field_of(parse_config(text).unwrap_err()), field, "{text}");
        }
    }

    #[test]
    fn unknown_keys_fail_to_parse() {
        assert!(matches!(parse_config("zzz = 1\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            parse_config("[corruption]\nrtae = 0.3\n"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn scripted_backend_needs_exactly_one_reply_source() {
        let neither = "[backends.default]\ntype = \"scripted\"\n";
        assert_eq!(field_of(parse_config(neither).unwrap_err()), "backends.default");
        let both = "[backends.default]\ntype = \"scripted\"\nverdict = \"correct\"\nby_round = [\"correct\"]\n";
        assert_eq!(field_of(parse_config(both).unwrap_err()), "backends.default");
        let empty = "[backends.default]\ntype = \"scripted\"\nby_round = []\n";
        assert_eq!(field_of(parse_config(empty).unwrap_err()), "backends.default");
        let fine = "[backends.default]\ntype = \"scripted\"\nverdict = \"incorrect\"\n";
        assert!(parse_config(fine).is_ok());
    }

    #[test]
    fn remote_backend_needs_url_and_model() {
        let no_model =
            "[backends.summarizer]\ntype = \"remote\"\nurl = \"http://localhost:1\"\nmodel = \"\"\n";
        assert_eq!(field_of(parse_config(no_model).unwrap_err()), "backends.summarizer");
        let fine = "[backends.summarizer]\ntype = \"remote\"\nurl = \"http://localhost:1\"\nmodel = \"m\"\n";
        let config = parse_config(fine).unwrap();
        match config.backends.summarizer.unwrap() {
            BackendSpec::Remote(remote) => {
                assert_eq!(remote.timeout_seconds, 30);
                assert_eq!(remote.api_key_env, "MAKGED_API_KEY");
            }
            other => panic!("expected remote, got {other:?}"),
        }
    }

    #[test]
    fn stated_paths_must_exist() {
        let err = parse_config("kg = \"/definitely/not/here.tsv\"\n").unwrap_err();
        assert_eq!(field_of(err), "kg");
        let missing_fixture =
            "[backends.default]\ntype = \"replay\"\npath = \"/definitely/not/here.json\"\n";
        assert_eq!(field_of(parse_config(missing_fixture).unwrap_err()), "backends.default");
    }

    #[test]
    fn validate_config_reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[protocol]\nparallelism = 4\n").unwrap();
        let config = validate_config(&path).unwrap();
        assert_eq!(config.protocol.parallelism, 4);
        assert!(validate_config(&dir.path().join("absent.toml")).is_err());
    }

    #[test]
    fn role_specific_backends_override_the_default() {
        let text = "\
[backends.default]
type = \"scripted\"
verdict = \"correct\"
rationale = \"looks fine\"

[backends.summarizer]
type = \"scripted\"
by_round = [\"incorrect\"]
rationale = \"tie broken\"
";
        let config = parse_config(text).unwrap();
        let backends = build_backends(&config).unwrap();
        let request = |role| CompletionRequest {
            prompt: String::new(),
            role,
            round: 0,
            triple_key: "(a, r, b)".to_owned(),
        };
        let reply =
            backends.head_forward.complete(&request(AgentRole::HeadForwardAgent)).unwrap();
        assert_eq!(parse_reply(&reply).unwrap(), (Verdict::Correct, "looks fine".to_owned()));
        let summary = backends.summarizer.complete(&request(AgentRole::Summarizer)).unwrap();
        assert_eq!(parse_reply(&summary).unwrap().0, Verdict::Incorrect);
    }

    #[test]
    fn missing_backend_without_default_names_the_role() {
        let text = "[backends.head_forward_agent]\ntype = \"scripted\"\nverdict = \"correct\"\n";
        let config = parse_config(text).unwrap();
        let err = build_backends(&config).unwrap_err();
        assert_eq!(field_of(err), "backends.head_backward_agent");
    }

    #[test]
    fn replay_backends_load_their_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = dir.path().join("replies.json");
        let mut file = std::fs::File::create(&fixture).unwrap();
        write!(
            file,
            r#"[{{"role": "head_forward_agent", "round": 0, "triple": "(a, r, b)",
                "reply": "VERDICT: correct\nREASON: recorded"}}]"#
        )
        .unwrap();
        let text = format!(
            "[backends.default]\ntype = \"replay\"\npath = {:?}\n",
            fixture.to_str().unwrap()
        );
        let config = parse_config(&text).unwrap();
        let backends = build_backends(&config).unwrap();
        let reply = backends
            .head_forward
            .complete(&CompletionRequest {
                prompt: String::new(),
                role: AgentRole::HeadForwardAgent,
                round: 0,
                triple_key: "(a, r, b)".to_owned(),
            })
            .unwrap();
        assert_eq!(parse_reply(&reply).unwrap().1, "recorded");
    }
}
