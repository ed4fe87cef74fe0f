//! `name[:key=value,...]` policy specifications.

use fier_core::baselines::QuestVariant;
use fier_core::PolicyKind;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyParseError {
    #[error("unknown policy {0:?}; valid policies: {names}", names = PolicyKind::NAMES.join(", "))]
    UnknownPolicy(String),
    #[error("policy {policy}: unknown option {key:?}")]
    UnknownOption { policy: &'static str, key: String },
    #[error("policy {policy}: bad value {value:?} for {key}")]
    BadValue { policy: &'static str, key: String, value: String },
    #[error("policy {0}: {1}")]
    Invalid(&'static str, fier_core::Error),
}

fn count(policy: &'static str, key: &str, value: &str) -> Result<usize, PolicyParseError> {
    value.parse().map_err(|_| PolicyParseError::BadValue { policy, key: key.into(), value: value.into() })
}

/// Parses `fier:g=32`, `quest:L=16,variant=max`, `quest_quant:p=16,g=32`,
/// `streaming_llm:sink=4`, `h2o:recent=0`, `oracle` or `full`.
pub fn parse_policy(text: &str) -> Result<PolicyKind, PolicyParseError> {
    let (name, opts) = match text.split_once(':') {
        Some((n, o)) => (n.trim(), o),
        None => (text.trim(), ""),
    };
    let Some(&name) = PolicyKind::NAMES.iter().find(|&&n| n == name) else {
        return Err(PolicyParseError::UnknownPolicy(name.to_string()));
    };
    let mut kind = match name {
        "fier" => PolicyKind::Fier { group_size: 32 },
        "quest" => PolicyKind::Quest { page_size: 16, variant: QuestVariant::SumOverChannels },
        "quest_quant" => PolicyKind::QuestQuantized { page_size: 16, group_size: 32 },
        "streaming_llm" => PolicyKind::StreamingLlm { sink: 4 },
        "h2o" => PolicyKind::H2o { recent: 0 },
        "oracle" => PolicyKind::Oracle,
        _ => PolicyKind::Full,
    };
    for opt in opts.split(',').map(str::trim).filter(|o| !o.is_empty()) {
        let (key, value) = opt.split_once('=').unwrap_or((opt, ""));
        let (key, value) = (key.trim(), value.trim());
        match (&mut kind, key) {
            (PolicyKind::Fier { group_size }, "g") | (PolicyKind::QuestQuantized { group_size, .. }, "g") => {
                *group_size = count(name, key, value)?
            }
            (PolicyKind::Quest { page_size, .. }, "L" | "p") | (PolicyKind::QuestQuantized { page_size, .. }, "L" | "p") => {
                *page_size = count(name, key, value)?
            }
            (PolicyKind::Quest { variant, .. }, "variant") => {
                *variant = match value {
                    "sum" => QuestVariant::SumOverChannels,
                    "max" => QuestVariant::MaxOverChannels,
                    _ => return Err(PolicyParseError::BadValue { policy: name, key: key.into(), value: value.into() }),
                }
            }
            (PolicyKind::StreamingLlm { sink }, "sink") => *sink = count(name, key, value)?,
            (PolicyKind::H2o { recent }, "recent") => *recent = count(name, key, value)?,
            _ => return Err(PolicyParseError::UnknownOption { policy: name, key: key.into() }),
        }
    }
    kind.validate().map_err(|e| PolicyParseError::Invalid(name, e))?;
    Ok(kind)
}

/// Canonical text form accepted by [`parse_policy`].
pub fn format_policy(kind: &PolicyKind) -> String {
    match *kind {
        PolicyKind::Fier { group_size } => format!("fier:g={group_size}"),
        PolicyKind::Quest { page_size, variant } => format!("quest:L={page_size},variant={}", variant.name()),
        PolicyKind::QuestQuantized { page_size, group_size } => format!("quest_quant:p={page_size},g={group_size}"),
        PolicyKind::StreamingLlm { sink } => format!("streaming_llm:sink={sink}"),
        PolicyKind::H2o { recent } => format!("h2o:recent={recent}"),
        PolicyKind::Oracle => "oracle".into(),
        PolicyKind::Full => "full".into(),
    }
}
