#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fluency::audio::write_wav;
use fluency::io::{self, FeatureRow, ManifestRow};
use fluency::models::{Dataset, Group};
use fluency::synth::{burst_train, rating_records, BurstTrainConfig, SENTENCE_SYLLABLES};

/// Writes `speakers × sentences` synthetic burst-train WAVs and their manifest.
pub fn write_wav_corpus(dir: &Path, speakers: usize, sentences: usize, seed: u64) -> PathBuf {
    let mut rows = Vec::new();
    for s in 0..speakers {
        for k in 0..sentences {
            let id = format!("spk{s:02}_s{k}");
            let train = burst_train(&BurstTrainConfig::default(), seed * 1000 + (s * sentences + k) as u64);
            let wav = dir.join(format!("{id}.wav"));
            write_wav(&wav, &train.audio).unwrap();
            rows.push(ManifestRow {
                stimulus_id: id.clone(),
                speaker_id: format!("spk{s:02}"),
                group: Some(if s % 3 == 2 { Group::Control } else { Group::Pwa }),
                sentence_id: Some(format!("sentence{k}")),
                expected_syllables: Some(SENTENCE_SYLLABLES[k % 3]),
                wav_path: PathBuf::from(format!("{id}.wav")),
            });
        }
    }
    let manifest = dir.join("manifest.csv");
    io::write_manifest(&manifest, &rows).unwrap();
    manifest
}

/// Writes a dataset's features and simulated two-pass ratings of three raters.
pub fn write_tables(dir: &Path, data: &Dataset, seed: u64) -> (PathBuf, PathBuf) {
    let features: Vec<FeatureRow> = data
        .rows()
        .iter()
        .map(|r| FeatureRow {
            stimulus_id: r.stimulus_id.clone(),
            speaker_id: r.speaker_id.clone(),
            features: r.features.clone(),
        })
        .collect();
    let features_path = dir.join("features.csv");
    io::write_features(&features_path, &features).unwrap();
    let ratings_path = dir.join("ratings.csv");
    io::write_ratings(&ratings_path, &rating_records(data, 3, 0.3, seed)).unwrap();
    (features_path, ratings_path)
}
