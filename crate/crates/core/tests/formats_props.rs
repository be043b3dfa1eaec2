mod common;

use common::fixture;
use facebench_core::formats::{
    parse_csv_annotations, parse_csv_detections, parse_fddb_annotations, parse_fddb_detections, write_annotations,
    write_detections,
};
use facebench_core::{
    AnnotationCorpus, BoundingBox, Corpus, Detection, DetectionCorpus, DetectionFormat, FormatError, FrameAnnotation,
    FrameDetections, FrameId,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn frame_id() -> impl Strategy<Value = FrameId> {
    "[A-Za-z0-9_./é\",-][A-Za-z0-9_./é\", -]{0,12}[A-Za-z0-9_.é\"-]|[A-Za-z0-9]"
        .prop_filter_map("valid id", |s| FrameId::new(s).ok())
}

fn real() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e4..1e4f64,
        (-1000i32..1000).prop_map(f64::from),
        (1u32..1_000_000).prop_map(|n| n as f64 / 7.0),
        Just(1e-7),
        Just(123456789.125),
    ]
}

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (real(), real(), 1e-3..5e3f64, 1e-3..5e3f64).prop_filter_map("valid box", |(x, y, w, h)| BoundingBox::new(x, y, w, h).ok())
}

fn unique<T, F: Fn(&T) -> &FrameId>(mut frames: Vec<T>, key: F) -> Vec<T> {
    let mut seen = std::collections::HashSet::new();
    frames.retain(|f| seen.insert(key(f).clone()));
    frames
}

fn det_corpus() -> impl Strategy<Value = DetectionCorpus> {
    prop::collection::vec(
        (frame_id(), prop::collection::vec((bbox(), real()), 0..5)).prop_map(|(frame_id, ds)| FrameDetections {
            frame_id,
            detections: ds.into_iter().map(|(b, s)| Detection::new(b, s).unwrap()).collect(),
        }),
        0..8,
    )
    .prop_map(|fs| Corpus::new(unique(fs, |f| &f.frame_id), "").unwrap())
}

fn ann_corpus() -> impl Strategy<Value = AnnotationCorpus> {
    prop::collection::vec(
        (frame_id(), prop::collection::vec(bbox(), 0..5))
            .prop_map(|(frame_id, ground_truth)| FrameAnnotation { frame_id, ground_truth }),
        0..8,
    )
    .prop_map(|fs| Corpus::new(unique(fs, |f| &f.frame_id), "").unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn fddb_detection_round_trip(c in det_corpus()) {
        let text = write_detections(&c, DetectionFormat::Fddb);
        prop_assert_eq!(parse_fddb_detections(text.as_bytes()).unwrap(), c);
    }

    #[test]
    fn csv_detection_round_trip(c in det_corpus()) {
        let text = write_detections(&c, DetectionFormat::Csv);
        let back = parse_csv_detections(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(write_detections(&back, DetectionFormat::Csv), text);
    }

    #[test]
    fn csv_annotation_round_trip(c in ann_corpus()) {
        let text = write_annotations(&c);
        prop_assert_eq!(parse_csv_annotations(text.as_bytes()).unwrap(), c);
    }
}

fn mutate(rng: &mut StdRng, line: &[u8]) -> Vec<u8> {
    let mut l = line.to_vec();
    for _ in 0..rng.gen_range(1..4) {
        let pos = if l.is_empty() { 0 } else { rng.gen_range(0..=l.len()) };
        match rng.gen_range(0..7) {
            0 if pos < l.len() => {
                l.remove(pos);
            }
            1 => l.insert(pos, rng.gen()),
            2 => {
                let alphabet = b",. -e+\"\t0129";
                l.insert(pos, alphabet[rng.gen_range(0..alphabet.len())])
            }
            3 => l.splice(pos..pos, b"NaN".iter().copied()).for_each(drop),
            4 => l.truncate(pos),
            5 => l.splice(pos..pos, b"1e400".iter().copied()).for_each(drop),
            _ if pos < l.len() => l[pos] = rng.gen(),
            _ => l.push(b'\r'),
        }
    }
    l
}

fn check(result: Result<usize, FormatError>, input: &[u8]) {
    if let Err(e) = result {
        let lines = input.split(|&b| b == b'\n').count();
        assert!(e.line() >= 1 && e.line() <= lines + 1, "line {} out of range for {:?}: {e}", e.line(), String::from_utf8_lossy(input));
    }
}

#[test]
fn mutated_inputs_yield_corpus_or_located_error() {
    let sources: Vec<Vec<u8>> = ["ten_frame_gt.csv", "ten_frame_det.csv", "sample_fddb_ann.txt", "sample_fddb_det.txt"]
        .iter()
        .map(|n| std::fs::read(fixture(n)).unwrap())
        .collect();
    let mut rng = StdRng::seed_from_u64(23);
    let mut mutated_lines = 0;
    while mutated_lines < 12_000 {
        let src = &sources[rng.gen_range(0..sources.len())];
        let mut lines: Vec<Vec<u8>> = src.split(|&b| b == b'\n').map(<[u8]>::to_vec).collect();
        for _ in 0..rng.gen_range(1..4) {
            let i = rng.gen_range(0..lines.len());
            match rng.gen_range(0..5) {
                0 => {
                    let dup = lines[i].clone();
                    lines.insert(i, dup);
                }
                1 if lines.len() > 1 => {
                    lines.remove(i);
                }
                _ => lines[i] = mutate(&mut rng, &lines[i]),
            }
            mutated_lines += 1;
        }
        let input = lines.join(&b'\n');
        check(parse_csv_annotations(&input[..]).map(|c| c.len()), &input);
        check(parse_csv_detections(&input[..]).map(|c| c.len()), &input);
        check(parse_fddb_annotations(&input[..]).map(|c| c.len()), &input);
        check(parse_fddb_detections(&input[..]).map(|c| c.len()), &input);
    }
}

#[test]
fn random_bytes_never_panic() {
    let mut rng = StdRng::seed_from_u64(29);
    for _ in 0..2000 {
        let n = rng.gen_range(0..200);
        let input: Vec<u8> = (0..n).map(|_| rng.gen_range(0..128u8)).collect();
        check(parse_csv_annotations(&input[..]).map(|c| c.len()), &input);
        check(parse_csv_detections(&input[..]).map(|c| c.len()), &input);
        check(parse_fddb_annotations(&input[..]).map(|c| c.len()), &input);
        check(parse_fddb_detections(&input[..]).map(|c| c.len()), &input);
    }
}
