use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::audio::FeatureImage;
use crate::autodiff::init::{rng, SeededRng};
use crate::chat::{TokenSequence, Vocab, CLS, PAD, SEP};
use crate::error::{invalid, Result};
use crate::fusion::ModelConfig;

use super::Sample;

/// Geometry of generated samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub image_side: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Content words per utterance are drawn from `min_words..=max_len-2`.
    pub min_words: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_side: 16,
            max_len: 24,
            vocab_size: 32,
            min_words: 8,
        }
    }
}

impl SynthSpec {
    /// Shapes matching `cfg`'s encoders.
    pub fn for_model(cfg: &ModelConfig) -> Self {
        Self {
            image_side: cfg.vision.image_side,
            max_len: cfg.text.max_len,
            vocab_size: cfg.text.vocab_size,
            min_words: (cfg.text.max_len.saturating_sub(2) / 3).max(1),
        }
    }

    /// Word list naming every non-reserved id.
    pub fn vocab(&self) -> Vocab {
        Vocab::from_words((4..self.vocab_size).map(|i| format!("w{i}")))
    }
}

/// Two-class dataset with tunable signal in each modality.
///
/// Images carry a class-specific low-frequency cosine pattern (vertical for
/// class 0, horizontal for class 1) scaled by `snr_audio`, plus unit
/// Gaussian noise. Each content word prefers one class; a class draws its
/// preferred words with weight `e^{snr_text}` and the others with
/// `e^{−snr_text}`. With both SNRs at 0 the classes are indistinguishable.
pub fn synth_dataset(n: usize, snr_text: f64, snr_audio: f64, seed: u64) -> Result<Vec<Sample>> {
    synth_dataset_with(&SynthSpec::default(), n, snr_text, snr_audio, seed)
}

pub fn synth_dataset_with(
    spec: &SynthSpec,
    n: usize,
    snr_text: f64,
    snr_audio: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(invalid(format!("synthetic dataset size {n} must be even and positive")));
    }
    if spec.vocab_size < 6 || spec.max_len < 3 || spec.min_words > spec.max_len - 2 {
        return Err(invalid(format!("unusable synthetic geometry {spec:?}")));
    }
    if !snr_text.is_finite() || !snr_audio.is_finite() || snr_text < 0.0 || snr_audio < 0.0 {
        return Err(invalid("signal-to-noise ratios must be finite and non-negative"));
    }
    let mut r = rng(seed);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    labels.shuffle(&mut r);

    let words: Vec<u32> = (4..spec.vocab_size as u32).collect();
    // Word w prefers class w % 2.
    let weights = |label: u8| -> Vec<f64> {
        words
            .iter()
            .map(|&w| if (w % 2) as u8 == label { snr_text.exp() } else { (-snr_text).exp() })
            .collect()
    };
    let table = [cumulative(&weights(0)), cumulative(&weights(1))];

    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| Sample {
            id: format!("syn{i:04}"),
            image: image(&mut r, spec.image_side, label, snr_audio),
            tokens: tokens(&mut r, spec, &words, &table[label as usize]),
            label,
        })
        .collect())
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter()
        .scan(0.0, |acc, v| {
            *acc += v / total;
            Some(*acc)
        })
        .collect()
}

fn image(r: &mut SeededRng, side: usize, label: u8, snr: f64) -> FeatureImage {
    let mut data = Vec::with_capacity(3 * side * side);
    for _ in 0..3 {
        for row in 0..side {
            for col in 0..side {
                let axis = if label == 0 { row } else { col };
                let pattern = (PI * (axis as f64 + 0.5) / side as f64).cos();
                let noise: f64 = r.sample(StandardNormal);
                data.push((snr * pattern + noise) as f32);
            }
        }
    }
    FeatureImage::from_vec(side, data).expect("sized to side")
}

fn tokens(r: &mut SeededRng, spec: &SynthSpec, words: &[u32], cdf: &[f64]) -> TokenSequence {
    let count = r.random_range(spec.min_words..=spec.max_len - 2);
    let mut ids = Vec::with_capacity(spec.max_len);
    ids.push(CLS);
    for _ in 0..count {
        let u: f64 = r.random();
        let k = cdf.partition_point(|&c| c < u).min(words.len() - 1);
        ids.push(words[k]);
    }
    ids.push(SEP);
    let real = ids.len();
    ids.resize(spec.max_len, PAD);
    TokenSequence {
        attention_mask: (0..spec.max_len).map(|i| u8::from(i < real)).collect(),
        ids,
        vocab_size: spec.vocab_size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_balanced_and_shapes_match() {
        let data = synth_dataset(100, 1.0, 1.0, 3).unwrap();
        assert_eq!(data.iter().filter(|s| s.label == 1).count(), 50);
        let spec = SynthSpec::default();
        for s in &data {
            assert_eq!(s.image.side(), spec.image_side);
            assert_eq!(s.tokens.len(), spec.max_len);
            s.tokens.validate().unwrap();
        }
    }

    #[test]
    fn odd_size_is_rejected() {
        assert!(synth_dataset(7, 1.0, 1.0, 0).is_err());
        assert!(synth_dataset(0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_dataset(10, 2.0, 0.5, 9).unwrap(), synth_dataset(10, 2.0, 0.5, 9).unwrap());
        assert_ne!(synth_dataset(10, 2.0, 0.5, 9).unwrap(), synth_dataset(10, 2.0, 0.5, 10).unwrap());
    }

    #[test]
    fn zero_snr_text_has_identical_word_distributions() {
        let data = synth_dataset(2000, 0.0, 0.0, 1).unwrap();
        let share = |label: u8| {
            let (mut even, mut all) = (0usize, 0usize);
            for s in data.iter().filter(|s| s.label == label) {
                for &id in s.tokens.ids.iter().filter(|&&id| id >= 4) {
                    all += 1;
                    even += usize::from(id % 2 == 0);
                }
            }
            even as f64 / all as f64
        };
        assert!((share(0) - share(1)).abs() < 0.02);
    }
}
