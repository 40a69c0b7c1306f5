use lowlight_core::frameio::{read_sequence, write_sequence, Sequence, SequenceFormat};
use lowlight_core::Frame;
use proptest::prelude::*;

fn sequence(w: usize, h: usize, c: usize, data: &[f64]) -> Sequence {
    let n = w * h * c;
    let frames = data.chunks(n).map(|d| Frame::new(w, h, c, d.to_vec()).unwrap()).collect();
    Sequence::new(frames, 30.0).unwrap()
}

fn max_error(a: &Sequence, b: &Sequence) -> f64 {
    a.frames()
        .iter()
        .zip(b.frames())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn round_trip(seq: &Sequence, format: SequenceFormat) -> Sequence {
    let dir = tempfile::tempdir().unwrap();
    let path = match format {
        SequenceFormat::Y4m => dir.path().join("seq.y4m"),
        _ => dir.path().join("frames"),
    };
    write_sequence(seq, &path, format).unwrap();
    read_sequence(&path, format).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn container_round_trip(
        w in 1usize..9,
        h in 1usize..9,
        rgb in any::<bool>(),
        frames in 1usize..4,
        seed in proptest::collection::vec(0.0f64..1.0, 8 * 8 * 3 * 3),
    ) {
        let c = if rgb { 3 } else { 1 };
        let seq = sequence(w, h, c, &seed[..w * h * c * frames]);
        for format in [SequenceFormat::PngSeq, SequenceFormat::PpmSeq] {
            let back = round_trip(&seq, format);
            prop_assert_eq!(back.len(), frames);
            prop_assert!(max_error(&seq, &back) <= 1.0 / 510.0 + 1e-12);
        }
        if c == 1 {
            let back = round_trip(&seq, SequenceFormat::Y4m);
            prop_assert!(max_error(&seq, &back) <= 1.0 / 510.0 + 1e-12);
        }
    }
}

#[test]
fn quantization_examples() {
    let seq = sequence(2, 2, 1, &[0.5, 1.2, -0.3, 0.0]);
    let back = round_trip(&seq, SequenceFormat::PngSeq);
    assert_eq!(back.frames()[0].data(), &[128.0 / 255.0, 1.0, 0.0, 0.0]);
}

#[test]
fn sixteen_ppm_frames() {
    let data: Vec<f64> = (0..64 * 64 * 3 * 16).map(|i| (i % 255) as f64 / 255.0).collect();
    let back = round_trip(&sequence(64, 64, 3, &data), SequenceFormat::PpmSeq);
    assert_eq!((back.len(), back.channels()), (16, 3));
}
