use std::path::PathBuf;

use latentcf::datasets::{generate_nonlinear, generate_toy, ingest_csv, CsvSchema, Dataset, Split};

fn pima_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/pima_indians_diabetes.csv")
}

fn column(ds: &Dataset, j: usize) -> Vec<f64> {
    (0..ds.n_rows()).map(|i| ds.raw_row(i)[j]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn pima_missing_rows_dropped_to_336() {
    let ds = ingest_csv(&pima_path(), &CsvSchema::pima(), 0).unwrap();
    assert_eq!(ds.n_rows(), 336);
    assert_eq!(ds.n_features(), 7);
    assert!(ds.split().is_leave_one_out());
    assert_eq!(ds.constraints().len(), 1);
    assert_eq!((ds.constraints()[0].attr_a, ds.constraints()[0].attr_b), (2, 5));
}

#[test]
fn toy_anticorrelation_and_slope() {
    let ds = generate_toy(20000, 11).unwrap();
    let (x3, x4) = (column(&ds, 2), column(&ds, 3));
    assert!(correlation(&x3, &x4) < -0.9);
    let (m3, m4) = (mean(&x3), mean(&x4));
    let slope = x3.iter().zip(&x4).map(|(a, b)| (a - m3) * (b - m4)).sum::<f64>()
        / x3.iter().map(|a| (a - m3).powi(2)).sum::<f64>();
    assert!((-2.1..=-1.9).contains(&slope), "slope {slope}");
}

#[test]
fn nonlinear_monotone_pair_and_finite() {
    let ds = generate_nonlinear(20000, 12).unwrap();
    assert!(correlation(&column(&ds, 3), &column(&ds, 4)) > 0.5);
    assert!((0..ds.n_rows()).all(|i| ds.raw_row(i).iter().all(|v| v.is_finite())));
}

#[test]
fn class_balance_is_not_degenerate() {
    for ds in [generate_toy(20000, 5).unwrap(), generate_nonlinear(20000, 5).unwrap()] {
        let pos = ds.labels().iter().filter(|&&y| y == 1).count() as f64 / ds.n_rows() as f64;
        assert!((0.05..=0.95).contains(&pos), "positive rate {pos}");
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let a = generate_toy(500, 99).unwrap();
    let b = generate_toy(500, 99).unwrap();
    assert_eq!(a, b);
    let c = generate_toy(500, 100).unwrap();
    assert_ne!(a, c);
}

#[test]
fn training_split_is_standardized() {
    let ds = generate_nonlinear(5000, 3).unwrap();
    let train = ds.train_indices();
    for j in 0..ds.n_features() {
        let col: Vec<f64> = train.iter().map(|&i| ds.row(i)[j]).collect();
        let m = mean(&col);
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!(m.abs() < 1e-9, "mean {m}");
        assert!((sd - 1.0).abs() < 1e-9, "std {sd}");
    }
}

#[test]
fn split_partitions_rows() {
    let ds = generate_toy(1234, 1).unwrap();
    let Split::Holdout { train, val, test } = ds.split() else {
        panic!("holdout expected")
    };
    assert_eq!(test.len(), 123);
    assert_eq!(val.len(), 123);
    let mut all: Vec<usize> = train.iter().chain(val).chain(test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..1234).collect::<Vec<_>>());
}

#[test]
fn export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_nonlinear(300, 8).unwrap();
    let (c, j) = (dir.path().join("d.csv"), dir.path().join("d.json"));
    ds.export(&c, &j).unwrap();
    let back = Dataset::load(&c, &j).unwrap();
    assert_eq!(ds, back);
    let header = std::fs::read_to_string(&c).unwrap();
    assert!(header.starts_with("X1,X2,X3,X4,X5,label\n"));
}
