use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{LandmarkSet, ReferenceFrame};
use crate::{Error, FrameMatrix};

fn random_traj(rng: &mut ChaCha8Rng, set: LandmarkSet, frames: usize) -> Trajectory {
    let data = (0..frames * set.width()).map(|_| rng.gen_range(-80.0..80.0)).collect();
    Trajectory::from_set(set, FrameMatrix::new(set.width(), data).unwrap()).unwrap()
}

fn lips(rows: Vec<Vec<f64>>) -> Trajectory {
    Trajectory::from_set(LandmarkSet::Lips, FrameMatrix::from_rows(60, &rows).unwrap()).unwrap()
}

/// Brute force over (frame, landmark, axis) with its own indexing.
fn oracle(p: &Trajectory, q: &Trajectory) -> (f64, Vec<f64>) {
    let n = p.num_frames().min(q.num_frames());
    let l = p.num_landmarks();
    let mut total = 0.0;
    let mut per = vec![0.0; l];
    for t in 0..n {
        for j in 0..l {
            let (a, b) = (p.point(t, j), q.point(t, j));
            for axis in 0..3 {
                total += (a[axis] - b[axis]).abs();
                per[j] += (a[axis] - b[axis]).abs();
            }
        }
    }
    (
        total / n as f64,
        per.into_iter().map(|s| s / (3.0 * n as f64)).collect(),
    )
}

#[test]
fn identical_trajectories_have_zero_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = random_traj(&mut rng, LandmarkSet::Lips, 4);
    let r = manhattan_error(&t, &t).unwrap();
    assert_eq!(r.mean_manhattan_mm, 0.0);
    assert!(r.per_landmark_mm.iter().all(|&v| v == 0.0));
    assert_eq!(r.per_axis_mm, [0.0; 3]);
    assert_eq!(r.per_landmark_mm.len(), 20);
    assert_eq!(r.note, None);
}

#[test]
fn single_landmark_diff_123_is_6mm() {
    let p = Trajectory::new(vec![50], FrameMatrix::new(3, vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let q = Trajectory::new(vec![50], FrameMatrix::new(3, vec![0.0; 3]).unwrap()).unwrap();
    let r = manhattan_error(&p, &q).unwrap();
    assert_eq!(r.mean_manhattan_mm, 6.0);
    assert_eq!(r.mean_landmark_l1_mm, 6.0);
    assert_eq!(r.mean_abs_mm, 2.0);
    assert_eq!(r.per_landmark_mm, vec![2.0]);
    assert_eq!(r.per_axis_mm, [1.0, 2.0, 3.0]);
}

#[test]
fn matches_direct_summation_on_100_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let set = if rng.gen_bool(0.5) {
            LandmarkSet::Lips
        } else {
            LandmarkSet::All
        };
        let (n, m) = (rng.gen_range(1..30), rng.gen_range(1..30));
        let p = random_traj(&mut rng, set, n);
        let q = random_traj(&mut rng, set, m);
        let r = manhattan_error(&p, &q).unwrap();
        let (mean, per) = oracle(&p, &q);
        assert!((r.mean_manhattan_mm - mean).abs() <= 1e-9);
        for (a, b) in r.per_landmark_mm.iter().zip(&per) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert_eq!(r.frames_compared, n.min(m));
        assert_eq!(r.note.is_some(), n != m);
    }
}

#[test]
fn length_mismatch_truncates_with_note() {
    let p = lips(vec![vec![1.0; 60], vec![5.0; 60], vec![9.0; 60]]);
    let q = lips(vec![vec![0.0; 60], vec![5.0; 60]]);
    let r = manhattan_error(&p, &q).unwrap();
    assert_eq!(r.frames_compared, 2);
    assert_eq!(r.mean_manhattan_mm, 30.0);
    assert!(r.note.unwrap().contains("first 2 frames"));
}

#[test]
fn zero_overlap_and_landmark_mismatch_are_errors() {
    let empty = lips(vec![]);
    let one = lips(vec![vec![0.0; 60]]);
    assert!(matches!(manhattan_error(&empty, &one), Err(Error::Contract(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let all = random_traj(&mut rng, LandmarkSet::All, 1);
    assert!(matches!(manhattan_error(&all, &one), Err(Error::Shape { .. })));
}

#[test]
fn trajectory_validation() {
    assert!(Trajectory::new(vec![], FrameMatrix::zeros(1, 3)).is_err());
    assert!(Trajectory::new(vec![68], FrameMatrix::zeros(1, 3)).is_err());
    assert!(Trajectory::new(vec![3, 3], FrameMatrix::zeros(1, 6)).is_err());
    assert!(matches!(
        Trajectory::new(vec![3], FrameMatrix::zeros(1, 6)),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn lips_slice_of_full_face_is_columns_144_to_204() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let all = random_traj(&mut rng, LandmarkSet::All, 3);
    let sliced = all.lips().unwrap();
    assert_eq!(sliced.landmarks(), (48..68).collect::<Vec<_>>().as_slice());
    for t in 0..3 {
        assert_eq!(sliced.frames().row(t), &all.frames().row(t)[144..204]);
    }
}

#[test]
fn compare_report_slices_to_shared_landmarks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = random_traj(&mut rng, LandmarkSet::All, 6);
    let model_a = random_traj(&mut rng, LandmarkSet::All, 6);
    let model_b = random_traj(&mut rng, LandmarkSet::Lips, 5);
    let report = compare_report(&[("A", &model_a), ("B", &model_b), ("truth", &truth)], &truth).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.landmarks, (48..68).collect::<Vec<_>>());
    let direct_a = manhattan_error(&model_a.lips().unwrap(), &truth.lips().unwrap()).unwrap();
    assert_eq!(report.rows[0].1, direct_a);
    assert_eq!(report.rows[1].1.landmarks.len(), 20);
    assert_eq!(report.rows[2].1.mean_manhattan_mm, 0.0);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with(COMPARISON_HEADER));
    assert!(compare_report(&[], &truth).is_err());
}

#[test]
fn csv_export_counts_rows_and_round_trips_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<f64> = (0..180).map(|_| rng.gen::<f64>() * 1e3 - 500.0).collect();
    let t = Trajectory::from_set(LandmarkSet::Lips, FrameMatrix::new(60, data).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/t.csv");
    let written = export_trajectory(&t, ExportFormat::Csv, &path).unwrap();
    assert_eq!(written, vec![path.clone()]);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 60);
    let back = import_csv(&path).unwrap();
    assert_eq!(back.landmarks(), t.landmarks());
    for (a, b) in back.frames().as_slice().iter().zip(t.frames().as_slice()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn csv_import_rejects_bad_input() {
    let bad_header = "frame,lm,x,y,z\n0,48,1,2,3\n";
    assert!(matches!(read_csv(bad_header.as_bytes()), Err(Error::Format(_))));
    let skipped = format!("{CSV_HEADER}\n0,48,1,2,3\n2,48,1,2,3\n");
    assert!(matches!(read_csv(skipped.as_bytes()), Err(Error::Consistency(_))));
    let ragged = format!("{CSV_HEADER}\n0,48,1,2,3\n0,49,1,2,3\n1,48,1,2,3\n");
    assert!(matches!(read_csv(ragged.as_bytes()), Err(Error::Consistency(_))));
    let junk = format!("{CSV_HEADER}\n0,48,1,two,3\n");
    assert!(matches!(read_csv(junk.as_bytes()), Err(Error::Parse { row: 1, .. })));
    assert!(matches!(read_csv(CSV_HEADER.as_bytes()), Err(Error::EmptyInput(_))));
}

#[test]
fn svg_export_writes_one_file_per_frame_with_red_lips() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = random_traj(&mut rng, LandmarkSet::All, 4);
    let dir = tempfile::tempdir().unwrap();
    let files = export_trajectory(&t, ExportFormat::SvgFrames, &dir.path().join("svg")).unwrap();
    assert_eq!(files.len(), 4);
    let svg = std::fs::read_to_string(&files[2]).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<circle").count(), 68);
    assert_eq!(svg.matches(r#"fill="red""#).count(), 20);
    assert_eq!(svg.matches("<polygon").count(), 2);
    assert!(write_svg(&t, 4).is_err());
}

#[test]
fn unknown_export_format_is_usage_error() {
    assert!(matches!("mp4".parse::<ExportFormat>(), Err(Error::Usage(_))));
    assert_eq!("svg-frames".parse::<ExportFormat>().unwrap(), ExportFormat::SvgFrames);
    assert_eq!(ExportFormat::Csv.to_string(), "csv");
}

#[test]
fn displacements_are_denormalized_before_export() {
    let reference = ReferenceFrame {
        speaker_id: "s".into(),
        points: (0..68).map(|k| [k as f64, 0.0, 500.0]).collect(),
    };
    let t = Trajectory::from_displacements(&FrameMatrix::zeros(1, 60), &reference, LandmarkSet::Lips).unwrap();
    assert_eq!(t.point(0, 0), [48.0, 0.0, 500.0]);
    assert_eq!(t.point(0, 19), [67.0, 0.0, 500.0]);
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..6).prop_flat_map(|n| {
        let v = || proptest::collection::vec(-100.0f64..100.0, n * 60);
        (v(), v(), v())
    })
}

fn from_flat(v: Vec<f64>) -> Trajectory {
    Trajectory::from_set(LandmarkSet::Lips, FrameMatrix::new(60, v).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn manhattan_error_is_a_metric((a, b, c) in triple()) {
        let (a, b, c) = (from_flat(a), from_flat(b), from_flat(c));
        let d = |x: &Trajectory, y: &Trajectory| manhattan_error(x, y).unwrap().mean_manhattan_mm;
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-9);
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        if a != b {
            prop_assert!(d(&a, &b) > 0.0);
        }
        prop_assert!(d(&a, &b) >= 0.0);
    }

    #[test]
    fn scaling_coordinates_scales_every_error((a, b, _) in triple(), k in -4i32..5, s in 0.1f64..10.0) {
        let (a, b) = (from_flat(a), from_flat(b));
        let base = manhattan_error(&a, &b).unwrap();
        // Powers of two scale exactly; arbitrary factors to rounding.
        let p = 2f64.powi(k);
        let exact = manhattan_error(&a.scaled(p), &b.scaled(p)).unwrap();
        prop_assert_eq!(exact.mean_manhattan_mm, base.mean_manhattan_mm * p);
        prop_assert_eq!(exact.per_axis_mm, base.per_axis_mm.map(|v| v * p));
        for (x, y) in exact.per_landmark_mm.iter().zip(&base.per_landmark_mm) {
            prop_assert_eq!(*x, y * p);
        }
        let scaled = manhattan_error(&a.scaled(s), &b.scaled(s)).unwrap();
        prop_assert!((scaled.mean_manhattan_mm - s * base.mean_manhattan_mm).abs() <= 1e-12 * s * base.mean_manhattan_mm.max(1.0));
        prop_assert!((scaled.mean_abs_mm - s * base.mean_abs_mm).abs() <= 1e-12 * s * base.mean_abs_mm.max(1.0));
    }

    #[test]
    fn csv_round_trip_is_lossless(v in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 60..=180)) {
        let n = v.len() / 60 * 60;
        let t = from_flat(v[..n].to_vec());
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, t);
    }
}
