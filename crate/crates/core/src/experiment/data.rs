use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::audio::{read_fimg, write_fimg, FeatureImage, FeatureKind};
use crate::autodiff::init::rng;
use crate::chat::{TokenRecord, TokenSequence, Vocab};
use crate::error::{invalid, Error, Result};

/// `id,label` rows with a header line.
pub const LABELS_FILE: &str = "labels.csv";
/// One [`TokenRecord`] JSON object per line.
pub const TOKENS_FILE: &str = "tokens.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
/// Holds `<id>.<mel|mfcc>.fimg`.
pub const FEATURES_DIR: &str = "features";

/// One subject: feature image, token sequence and label (1 = AD).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: FeatureImage,
    pub tokens: TokenSequence,
    pub label: u8,
}

fn parse_labels(path: &Path) -> Result<Vec<(String, u8)>> {
    let file = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `id,label` in {}", path.display()),
        })?;
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("label {other:?} is not 0 or 1"),
                })
            }
        };
        out.push((id.trim().to_string(), label));
    }
    Ok(out)
}

/// Read a dataset directory: `labels.csv`, `tokens.jsonl`, `vocab.json` and
/// `features/<id>.<kind>.fimg` for every labelled id.
pub fn load_dataset(dir: &Path, kind: FeatureKind) -> Result<Vec<Sample>> {
    let labels = parse_labels(&dir.join(LABELS_FILE))?;
    let vocab: Vocab = serde_json::from_str(&fs::read_to_string(dir.join(VOCAB_FILE))?)?;

    let mut tokens = BTreeMap::new();
    for line in BufReader::new(File::open(dir.join(TOKENS_FILE))?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord = serde_json::from_str(&line)?;
        let seq = TokenSequence {
            ids: rec.ids,
            attention_mask: rec.mask,
            vocab_size: vocab.size(),
        };
        seq.validate()?;
        tokens.insert(rec.id, seq);
    }

    labels
        .into_iter()
        .map(|(id, label)| {
            let path = dir.join(FEATURES_DIR).join(format!("{id}.{}.fimg", kind.as_str()));
            let image = read_fimg(BufReader::new(File::open(&path).map_err(|e| {
                invalid(format!("missing features for {id} ({}): {e}", path.display()))
            })?))?;
            let tokens = tokens
                .remove(&id)
                .ok_or_else(|| invalid(format!("no token record for {id}")))?;
            Ok(Sample {
                id,
                image,
                tokens,
                label,
            })
        })
        .collect()
}

/// Write `samples` in the layout [`load_dataset`] reads. Token records carry
/// no source text.
pub fn save_dataset(dir: &Path, samples: &[Sample], kind: FeatureKind, vocab: &Vocab) -> Result<()> {
    fs::create_dir_all(dir.join(FEATURES_DIR))?;
    let mut labels = BufWriter::new(File::create(dir.join(LABELS_FILE))?);
    let mut tokens = BufWriter::new(File::create(dir.join(TOKENS_FILE))?);
    writeln!(labels, "id,label")?;
    for s in samples {
        writeln!(labels, "{},{}", s.id, s.label)?;
        let rec = TokenRecord {
            id: s.id.clone(),
            text: String::new(),
            ids: s.tokens.ids.clone(),
            mask: s.tokens.attention_mask.clone(),
        };
        serde_json::to_writer(&mut tokens, &rec)?;
        writeln!(tokens)?;
        let path = dir.join(FEATURES_DIR).join(format!("{}.{}.fimg", s.id, kind.as_str()));
        let mut w = BufWriter::new(File::create(path)?);
        write_fimg(&mut w, &s.image)?;
        w.flush()?;
    }
    labels.flush()?;
    tokens.flush()?;
    fs::write(dir.join(VOCAB_FILE), serde_json::to_string(vocab)?)?;
    Ok(())
}

/// Per-class train counts summing to `round((1 − val_fraction)·n)`: each
/// class gets the floor of its share, leftovers go to the largest
/// remainders (lower label first on ties).
fn train_counts(class_sizes: &[usize], val_fraction: f64) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    let keep = 1.0 - val_fraction;
    let total = (keep * n as f64).round() as usize;
    let shares: Vec<f64> = class_sizes.iter().map(|&c| keep * c as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (shares[a] - shares[a].floor(), shares[b] - shares[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if counts[c] < class_sizes[c] {
            counts[c] += 1;
            missing -= 1;
        }
    }
    counts
}

/// Stratified, seeded train/validation partition.
pub fn split_train_val(
    samples: &[Sample],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(invalid(format!("val_fraction {val_fraction} is not in (0, 1)")));
    }
    let classes: BTreeSet<u8> = samples.iter().map(|s| s.label).collect();
    if classes.len() < 2 {
        return Err(invalid("split needs samples of both classes"));
    }
    let mut by_class: Vec<Vec<&Sample>> = classes
        .iter()
        .map(|&c| samples.iter().filter(|s| s.label == c).collect())
        .collect();
    let counts = train_counts(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), val_fraction);

    let mut r = rng(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (members, &k) in by_class.iter_mut().zip(&counts) {
        members.shuffle(&mut r);
        train.extend(members[..k].iter().map(|s| (*s).clone()));
        val.extend(members[k..].iter().map(|s| (*s).clone()));
    }
    train.shuffle(&mut r);
    val.shuffle(&mut r);
    Ok((train, val))
}
