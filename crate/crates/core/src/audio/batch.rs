use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::parallel::Execution;

use super::{
    build_feature_image, log_mel_spectrogram, mfcc, read_wav, write_fimg, FeatureImage,
    FeatureKind, MelConfig, MfccConfig,
};

/// Outcome of extracting one WAV file.
#[derive(Debug)]
pub struct ExtractedFile {
    pub stem: String,
    pub output: PathBuf,
    pub result: Result<FeatureImage>,
}

/// WAV → feature image with the default extraction settings for `kind`.
pub fn extract_file(path: &Path, kind: FeatureKind, side: usize) -> Result<FeatureImage> {
    let signal = read_wav(path)?;
    // frame-level parallelism would fight the file-level pool
    let spec = match kind {
        FeatureKind::Mel => log_mel_spectrogram(
            &signal,
            &MelConfig {
                exec: Execution::Sequential,
                ..MelConfig::default()
            },
        )?,
        FeatureKind::Mfcc => mfcc(
            &signal,
            &MfccConfig {
                exec: Execution::Sequential,
                ..MfccConfig::default()
            },
        )?,
    };
    build_feature_image(&spec, side)
}

/// Extract every `*.wav` in `input` into `out/<stem>.<kind>.fimg`.
///
/// Results are sorted by stem; a failure on one file does not stop the rest.
pub fn extract_dir(
    input: &Path,
    kind: FeatureKind,
    side: usize,
    out: &Path,
    exec: Execution,
) -> Result<Vec<ExtractedFile>> {
    fs::create_dir_all(out)?;
    let mut wavs: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    wavs.sort();

    Ok(exec.map(&wavs, |path| {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let output = out.join(format!("{stem}.{}.fimg", kind.as_str()));
        let result = extract_file(path, kind, side).and_then(|img| {
            let mut w = BufWriter::new(File::create(&output)?);
            write_fimg(&mut w, &img)?;
            Ok(img)
        });
        ExtractedFile {
            stem,
            output,
            result,
        }
    }))
}
