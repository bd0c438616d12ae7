use std::collections::BTreeSet;

use crate::error::{Error, Result};

use super::clean_utterance;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub source_id: String,
    pub utterances: Vec<Utterance>,
}

impl Transcript {
    /// All utterance texts joined by single spaces.
    pub fn joined_text(&self) -> String {
        let parts: Vec<&str> = self
            .utterances
            .iter()
            .map(|u| u.text.as_str())
            .filter(|t| !t.is_empty())
            .collect();
        parts.join(" ")
    }
}

enum Tier {
    Main { speaker: String, raw: String },
    Other,
}

/// Parse a CHAT transcript, keeping main-tier utterances of `speakers` in
/// file order. Headers (`@`) and dependent tiers (`%`) are dropped; lines
/// starting with a tab continue the previous tier. Blank lines are skipped.
pub fn parse_chat(raw: &str, speakers: &BTreeSet<String>, source_id: &str) -> Result<Transcript> {
    let mut utterances = Vec::new();
    let mut current: Option<Tier> = None;

    let mut flush = |tier: Option<Tier>| {
        if let Some(Tier::Main { speaker, raw }) = tier {
            if speakers.contains(&speaker) {
                utterances.push(Utterance {
                    speaker,
                    text: clean_utterance(&raw),
                });
            }
        }
    };

    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        let line = if lineno == 1 {
            line.trim_start_matches('\u{feff}')
        } else {
            line
        };

        if line.starts_with('\t') {
            match current.as_mut() {
                Some(Tier::Main { raw, .. }) => {
                    raw.push(' ');
                    raw.push_str(line.trim());
                }
                Some(Tier::Other) => {}
                None => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "continuation line with no preceding tier".into(),
                    })
                }
            }
        } else if line.trim().is_empty() {
            continue;
        } else if line.starts_with('@') || line.starts_with('%') {
            flush(current.take());
            current = Some(Tier::Other);
        } else if let Some(rest) = line.strip_prefix('*') {
            flush(current.take());
            let (code, payload) = rest.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "main tier without ':' after speaker code".into(),
            })?;
            if code.is_empty() || !code.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("invalid speaker code {code:?}"),
                });
            }
            current = Some(Tier::Main {
                speaker: code.to_string(),
                raw: payload.trim().to_string(),
            });
        } else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("not a header, tier or continuation: {line:?}"),
            });
        }
    }
    flush(current.take());

    Ok(Transcript {
        source_id: source_id.to_string(),
        utterances,
    })
}
