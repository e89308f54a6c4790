use std::path::Path;

use fluency::audio::{self, load_wav, write_wav, AudioError};
use fluency::AudioBuffer;

fn write<S: hound::Sample + Copy>(path: &Path, channels: u16, bits: u16, format: hound::SampleFormat, samples: &[S]) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: 8_000,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn sixteen_bit_full_scale() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    write(&p, 1, 16, hound::SampleFormat::Int, &[-32768i16, 0, 16384, 32767]);
    let buf = load_wav(&p).unwrap();
    assert_eq!(buf.sample_rate(), 8_000);
    assert_eq!(buf.samples(), &[-1.0, 0.0, 0.5, 32767.0 / 32768.0]);
}

#[test]
fn other_depths_share_the_scale() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("24.wav");
    write(&p, 1, 24, hound::SampleFormat::Int, &[-8_388_608i32, 4_194_304]);
    assert_eq!(load_wav(&p).unwrap().samples(), &[-1.0, 0.5]);

    let p = dir.path().join("8.wav");
    write(&p, 1, 8, hound::SampleFormat::Int, &[-128i8, 64]);
    assert_eq!(load_wav(&p).unwrap().samples(), &[-1.0, 0.5]);

    let p = dir.path().join("f.wav");
    write(&p, 1, 32, hound::SampleFormat::Float, &[-0.25f32, 1.5]);
    // float input beyond full scale is clipped
    assert_eq!(load_wav(&p).unwrap().samples(), &[-0.25, 1.0]);
}

#[test]
fn stereo_is_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    write(&p, 2, 16, hound::SampleFormat::Int, &[16384i16, 0, -32768, -16384]);
    assert_eq!(load_wav(&p).unwrap().samples(), &[0.25, -0.75]);
}

#[test]
fn unreadable_and_empty_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_wav(dir.path().join("missing.wav")), Err(AudioError::Unreadable { .. })));

    let p = dir.path().join("empty.wav");
    write::<i16>(&p, 1, 16, hound::SampleFormat::Int, &[]);
    assert!(matches!(load_wav(&p), Err(AudioError::Empty { .. })));

    assert!(audio::decode_wav_bytes(b"not a wav file", "junk").is_err());
}

#[test]
fn write_then_read_is_within_half_a_quantum() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rt.wav");
    let samples: Vec<f64> = (0..400).map(|i| (i as f64 * 0.05).sin() * 0.9).collect();
    write_wav(&p, &AudioBuffer::new(samples.clone(), 16_000).unwrap()).unwrap();
    let back = load_wav(&p).unwrap();
    assert_eq!(back.sample_rate(), 16_000);
    for (a, b) in samples.iter().zip(back.samples()) {
        assert!((a - b).abs() <= 0.5 / 32768.0);
    }
}
