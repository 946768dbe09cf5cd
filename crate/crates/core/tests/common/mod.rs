#![allow(dead_code)]

use latentcf::autodiff::{acyclicity_penalty, acyclicity_value, Axis, Reduce, Tape, Tensor, Unary, Var};
use latentcf::datasets::RelationConstraint;
use latentcf::engine::CounterfactualResult;
use latentcf::metrics;
use latentcf::rng::{rng_from_seed, StageRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
pub const FD_ATOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn summarize(outcomes: &[Outcome]) -> (bool, String) {
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    if failed.is_empty() {
        (true, format!("{} checks", outcomes.len()))
    } else {
        (false, failed.join("; "))
    }
}

// ---------------------------------------------------------------- gradcheck

type Gen = fn(&mut StageRng) -> Vec<Tensor>;
type Build = fn(&mut Tape, &[Var]) -> latentcf::Result<Var>;

pub struct OpCase {
    pub name: &'static str,
    gen: Gen,
    build: Build,
}

fn uniform(rng: &mut StageRng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dense(rng: &mut StageRng, r: usize, c: usize) -> Tensor {
    uniform(rng, r, c, -1.0, 1.0)
}

/// Uniform draws kept at least `gap` away from every kink.
fn avoiding(rng: &mut StageRng, r: usize, c: usize, kinks: &[f64], gap: f64) -> Tensor {
    let d = (0..r * c)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::matrix(r, c, d).unwrap()
}

fn unary(tape: &mut Tape, v: &[Var], f: Unary) -> latentcf::Result<Var> {
    tape.elementwise(v[0], f)
}

pub fn op_cases() -> Vec<OpCase> {
    macro_rules! case {
        ($name:expr, $gen:expr, $build:expr) => {
            OpCase {
                name: $name,
                gen: $gen,
                build: $build,
            }
        };
    }
    vec![
        case!("matmul", |r| vec![dense(r, 3, 4), dense(r, 4, 2)], |t, v| t.matmul(v[0], v[1])),
        case!("add", |r| vec![dense(r, 3, 3), dense(r, 3, 3)], |t, v| t.add(v[0], v[1])),
        case!("sub", |r| vec![dense(r, 3, 3), dense(r, 3, 3)], |t, v| t.sub(v[0], v[1])),
        case!("hadamard", |r| vec![dense(r, 3, 3), dense(r, 3, 3)], |t, v| t.hadamard(v[0], v[1])),
        case!("add_row", |r| vec![dense(r, 4, 3), dense(r, 1, 3)], |t, v| t.add_row(v[0], v[1])),
        case!("scale", |r| vec![dense(r, 3, 3)], |t, v| t.scale(v[0], -1.7)),
        case!("add_scalar", |r| vec![dense(r, 3, 3)], |t, v| t.add_scalar(v[0], 0.3)),
        case!("relu", |r| vec![avoiding(r, 3, 4, &[0.0], 0.05)], |t, v| unary(t, v, Unary::Relu)),
        case!("sigmoid", |r| vec![uniform(r, 3, 4, -3.0, 3.0)], |t, v| unary(t, v, Unary::Sigmoid)),
        case!("tanh", |r| vec![uniform(r, 3, 4, -2.0, 2.0)], |t, v| unary(t, v, Unary::Tanh)),
        case!("sin", |r| vec![uniform(r, 3, 4, -3.0, 3.0)], |t, v| unary(t, v, Unary::Sin)),
        case!("exp", |r| vec![dense(r, 3, 4)], |t, v| unary(t, v, Unary::Exp)),
        case!("log", |r| vec![uniform(r, 3, 4, 0.2, 2.0)], |t, v| unary(t, v, Unary::Log)),
        case!("square", |r| vec![dense(r, 3, 4)], |t, v| unary(t, v, Unary::Square)),
        case!("negate", |r| vec![dense(r, 3, 4)], |t, v| unary(t, v, Unary::Negate)),
        case!(
            "clamp",
            |r| vec![avoiding(r, 3, 4, &[-0.5, 0.5], 0.05)],
            |t, v| t.clamp(v[0], -0.5, 0.5)
        ),
        case!("sum", |r| vec![dense(r, 3, 4)], |t, v| t.reduce(v[0], Reduce::Sum)),
        case!("mean", |r| vec![dense(r, 3, 4)], |t, v| t.reduce(v[0], Reduce::Mean)),
        case!("trace", |r| vec![dense(r, 4, 4)], |t, v| t.reduce(v[0], Reduce::Trace)),
        case!("l2_norm_sq", |r| vec![dense(r, 3, 4)], |t, v| t.reduce(v[0], Reduce::L2NormSq)),
        case!(
            "max",
            |r| loop {
                let x = dense(r, 3, 4);
                let mut s = x.data().to_vec();
                s.sort_by(|a, b| b.total_cmp(a));
                if s[0] - s[1] > 0.05 {
                    break vec![x];
                }
            },
            |t, v| t.reduce(v[0], Reduce::Max)
        ),
        case!("sum_rows", |r| vec![dense(r, 4, 3)], |t, v| t.sum_rows(v[0])),
        case!("transpose", |r| vec![dense(r, 3, 4)], |t, v| t.transpose(v[0])),
        case!(
            "concat_rows",
            |r| vec![dense(r, 2, 3), dense(r, 3, 3)],
            |t, v| t.concat(v[0], v[1], Axis::Rows)
        ),
        case!(
            "concat_cols",
            |r| vec![dense(r, 3, 2), dense(r, 3, 4)],
            |t, v| t.concat(v[0], v[1], Axis::Cols)
        ),
        case!("softmax", |r| vec![uniform(r, 3, 4, -2.0, 2.0)], |t, v| t.softmax(v[0])),
        case!("log_softmax", |r| vec![uniform(r, 3, 4, -2.0, 2.0)], |t, v| t.log_softmax(v[0])),
        case!(
            "inverse",
            |r| {
                let mut m = uniform(r, 3, 3, -0.3, 0.3);
                for i in 0..3 {
                    m.data_mut()[i * 3 + i] += 2.0;
                }
                vec![m]
            },
            |t, v| t.inverse(v[0])
        ),
        case!(
            "block_left_matmul",
            |r| vec![dense(r, 3, 3), dense(r, 6, 2)],
            |t, v| t.block_left_matmul(v[0], v[1])
        ),
        case!("reshape", |r| vec![dense(r, 3, 4)], |t, v| t.reshape(v[0], vec![2, 6])),
        case!("slice_cols", |r| vec![dense(r, 3, 5)], |t, v| t.slice_cols(v[0], 1, 4)),
        case!(
            "select_per_row",
            |r| vec![dense(r, 4, 3)],
            |t, v| t.select_per_row(v[0], &[2, 0, 1, 2])
        ),
        case!(
            "acyclicity_penalty",
            |r| vec![dense(r, 4, 4)],
            |t, v| acyclicity_penalty(t, v[0], 0.25)
        ),
        case!(
            "mlp_composite",
            |r| vec![dense(r, 5, 3), dense(r, 3, 4), dense(r, 1, 4)],
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add_row(h, v[2])?;
                let h = t.elementwise(h, Unary::Tanh)?;
                t.log_softmax(h)
            }
        ),
    ]
}

/// `Σ w ∘ f(inputs)` without gradient tracking.
fn projected(case: &OpCase, inputs: &[Tensor], w: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = (case.build)(&mut tape, &vars).unwrap();
    tape.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Worst violation ratio `|a − n| / (rtol·max(|a|,|n|) + atol)` over every
/// input coordinate; the check passes when it is at most 1.
pub fn gradcheck_case(case: &OpCase, seed: u64) -> latentcf::Result<f64> {
    let mut rng = rng_from_seed(seed);
    let inputs = (case.gen)(&mut rng);
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = (case.build)(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let n: usize = out_shape.iter().product();
    let w = Tensor::new(out_shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| tape.leaf(&x.clone().with_requires_grad(true)))
        .collect();
    let out = (case.build)(&mut tape, &vars)?;
    let wv = tape.constant(w.clone());
    let prod = tape.hadamard(out, wv)?;
    let loss = tape.sum(prod)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            let numeric = (projected(case, &plus, &w) - projected(case, &minus, &w)) / (2.0 * FD_STEP);
            let ratio = (a - numeric).abs() / (FD_RTOL * a.abs().max(numeric.abs()) + FD_ATOL);
            worst = worst.max(ratio);
        }
    }
    Ok(worst)
}

pub fn gradcheck_all(n_seeds: u64) -> Vec<Outcome> {
    op_cases()
        .iter()
        .map(|case| {
            let mut worst: f64 = 0.0;
            let mut error = None;
            for seed in 0..n_seeds {
                match gradcheck_case(case, 1000 + seed) {
                    Ok(r) => worst = worst.max(r),
                    Err(e) => {
                        error = Some(format!("seed {seed}: {e}"));
                        break;
                    }
                }
            }
            match error {
                Some(e) => Outcome::new(case.name, false, e),
                None => Outcome::new(case.name, worst <= 1.0, format!("worst ratio {worst:.3}")),
            }
        })
        .collect()
}

// --------------------------------------------------------------- acyclicity

pub fn has_cycle(adj: &[bool], n: usize) -> bool {
    fn visit(u: usize, adj: &[bool], n: usize, state: &mut [u8]) -> bool {
        state[u] = 1;
        for v in 0..n {
            if adj[u * n + v] && (state[v] == 1 || (state[v] == 0 && visit(v, adj, n, state))) {
                return true;
            }
        }
        state[u] = 2;
        false
    }
    let mut state = vec![0u8; n];
    (0..n).any(|u| state[u] == 0 && visit(u, adj, n, &mut state))
}

/// Every 0/1 off-diagonal pattern on `n` nodes, with unit and with random
/// signed weights on the present edges.
pub fn acyclicity_brute_force(n: usize, alpha: f64, seed: u64) -> Outcome {
    let off: Vec<usize> = (0..n * n).filter(|k| k / n != k % n).collect();
    let mut rng = rng_from_seed(seed);
    let (mut acyclic, mut cyclic, mut bad) = (0usize, 0usize, Vec::new());
    let mut worst_zero: f64 = 0.0;
    for mask in 0u64..(1 << off.len()) {
        let mut adj = vec![false; n * n];
        for (bit, &k) in off.iter().enumerate() {
            adj[k] = mask >> bit & 1 == 1;
        }
        let cycle = has_cycle(&adj, n);
        for weighted in [false, true] {
            let data: Vec<f64> = adj
                .iter()
                .map(|&e| match (e, weighted) {
                    (false, _) => 0.0,
                    (true, false) => 1.0,
                    (true, true) => {
                        let m: f64 = rng.random_range(0.1..2.0);
                        if rng.random_bool(0.5) { m } else { -m }
                    }
                })
                .collect();
            let h = acyclicity_value(&Tensor::matrix(n, n, data).unwrap(), alpha).unwrap();
            if cycle {
                cyclic += 1;
                if h <= 0.0 {
                    bad.push(format!("mask {mask:#b} cyclic but h = {h:e}"));
                }
            } else {
                acyclic += 1;
                worst_zero = worst_zero.max(h.abs());
                if h.abs() > 1e-12 {
                    bad.push(format!("mask {mask:#b} acyclic but h = {h:e}"));
                }
            }
        }
    }
    let name = format!("n={n} alpha={alpha}");
    if bad.is_empty() {
        Outcome::new(
            name,
            true,
            format!("{acyclic} acyclic (max |h| {worst_zero:e}), {cyclic} cyclic"),
        )
    } else {
        Outcome::new(name, false, bad.into_iter().take(3).collect::<Vec<_>>().join(", "))
    }
}

// ------------------------------------------------------------ metric oracles

pub const METRIC_TOL: f64 = 1e-10;

fn result(o: Vec<f64>, c: Vec<f64>) -> CounterfactualResult {
    CounterfactualResult {
        original: o,
        counterfactual: c,
        original_label: 0,
        target_label: 1,
        predicted_cf_label: 1,
        delta_norm: 0.0,
        latent: vec![],
        latent_cf: vec![],
    }
}

fn close(name: &str, got: f64, want: f64, worst: &mut f64, bad: &mut Vec<String>) {
    let e = (got - want).abs();
    *worst = worst.max(e);
    if e > METRIC_TOL || !got.is_finite() {
        bad.push(format!("{name}: {got} vs {want}"));
    }
}

fn finish(name: &str, worst: f64, bad: Vec<String>) -> Outcome {
    if bad.is_empty() {
        Outcome::new(name, true, format!("max error {worst:e}"))
    } else {
        Outcome::new(name, false, bad.into_iter().take(3).collect::<Vec<_>>().join(", "))
    }
}

pub fn harmonic_mean_oracle(seed: u64) -> Outcome {
    let (mut worst, mut bad) = (0.0, Vec::new());
    close("[0.9, 0.9]", metrics::harmonic_mean(&[0.9, 0.9]).unwrap(), 0.9, &mut worst, &mut bad);
    close("[1, 0.5]", metrics::harmonic_mean(&[1.0, 0.5]).unwrap(), 2.0 / 3.0, &mut worst, &mut bad);
    close("[0.93, 0]", metrics::harmonic_mean(&[0.93, 0.0]).unwrap(), 0.0, &mut worst, &mut bad);
    let mut rng = rng_from_seed(seed);
    for _ in 0..1000 {
        let (s1, s2): (f64, f64) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        let got = metrics::harmonic_mean(&[s1, s2]).unwrap();
        close("pair", got, 2.0 * s1 * s2 / (s1 + s2), &mut worst, &mut bad);
    }
    finish("harmonic mean", worst, bad)
}

pub fn mahalanobis_diagonal_oracle(seed: u64) -> Outcome {
    let (mut worst, mut bad) = (0.0, Vec::new());
    let rs = [result(vec![0.0, 0.0], vec![2.0, 0.0])];
    close(
        "diag(4, 1), d = (2, 0)",
        metrics::mahalanobis_with(&rs, &[4.0, 0.0, 0.0, 1.0]).unwrap(),
        1.0,
        &mut worst,
        &mut bad,
    );
    let mut rng = rng_from_seed(seed);
    for _ in 0..200 {
        let l = rng.random_range(2..7);
        let var: Vec<f64> = (0..l).map(|_| rng.random_range(0.2..4.0)).collect();
        let rs: Vec<CounterfactualResult> = (0..5)
            .map(|_| {
                let o: Vec<f64> = (0..l).map(|_| rng.random_range(-2.0..2.0)).collect();
                let c: Vec<f64> = (0..l).map(|_| rng.random_range(-2.0..2.0)).collect();
                result(o, c)
            })
            .collect();
        let cov = DMatrix::from_diagonal(&DVector::from_vec(var.clone()));
        let want = rs
            .iter()
            .map(|r| {
                r.original
                    .iter()
                    .zip(&r.counterfactual)
                    .zip(&var)
                    .map(|((a, b), s)| (a - b).powi(2) / s)
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / rs.len() as f64;
        let got = metrics::mahalanobis_with(&rs, cov.transpose().as_slice()).unwrap();
        close("random diagonal", got, want, &mut worst, &mut bad);
    }
    finish("mahalanobis (diagonal)", worst, bad)
}

/// Covariance from centered data and distances from a Cholesky solve.
pub fn mahalanobis_full_oracle(seed: u64) -> Outcome {
    let (mut worst, mut bad) = (0.0, Vec::new());
    let mut rng = rng_from_seed(seed);
    for _ in 0..50 {
        let (n, l) = (rng.random_range(10..40), rng.random_range(2..6));
        let mix = DMatrix::identity(l, l) + DMatrix::from_fn(l, l, |_, _| rng.random_range(-0.4..0.4));
        let reference: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let z = DVector::from_fn(l, |_, _| rng.random_range(-1.0..1.0));
                (&mix * z).iter().copied().collect()
            })
            .collect();
        let x = DMatrix::from_fn(n, l, |i, j| reference[i][j]);
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(n, l, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        cov += DMatrix::identity(l, l) * metrics::COVARIANCE_RIDGE;
        let got_cov = metrics::covariance(&reference, metrics::COVARIANCE_RIDGE).unwrap();
        for i in 0..l {
            for j in 0..l {
                close("covariance entry", got_cov[i * l + j], cov[(i, j)], &mut worst, &mut bad);
            }
        }
        let chol = cov.clone().cholesky().unwrap();
        let rs: Vec<CounterfactualResult> = (0..4)
            .map(|_| {
                let o: Vec<f64> = (0..l).map(|_| rng.random_range(-0.5..0.5)).collect();
                let c: Vec<f64> = o.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
                result(o, c)
            })
            .collect();
        let want = rs
            .iter()
            .map(|r| {
                let d = DVector::from_iterator(l, r.original.iter().zip(&r.counterfactual).map(|(a, b)| a - b));
                d.dot(&chol.solve(&d)).sqrt()
            })
            .sum::<f64>()
            / rs.len() as f64;
        let got = metrics::mahalanobis_mean(&rs, &reference).unwrap();
        close("full covariance", got, want, &mut worst, &mut bad);
    }
    finish("mahalanobis (full)", worst, bad)
}

pub fn diameter_oracle(seed: u64) -> Outcome {
    let (mut worst, mut bad) = (0.0, Vec::new());
    let reference = vec![vec![0.0, 0.0], vec![10.0, 0.0]];
    let rs = [result(vec![0.0, 0.0], vec![3.0, 4.0])];
    close(
        "half diameter",
        metrics::euclidean_normalized(&rs, &reference).unwrap(),
        0.5,
        &mut worst,
        &mut bad,
    );
    let mut rng = rng_from_seed(seed);
    for _ in 0..100 {
        let (n, l) = (rng.random_range(2..30), rng.random_range(1..6));
        let pts: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(l, |_, _| rng.random_range(-3.0..3.0)))
            .collect();
        let mut diam: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                diam = diam.max((a - b).norm());
            }
        }
        let reference: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().copied().collect()).collect();
        close("diameter", metrics::diameter(&reference), diam, &mut worst, &mut bad);
        let rs: Vec<CounterfactualResult> = (0..6)
            .map(|_| {
                let o: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
                result(o, c)
            })
            .collect();
        let want = rs
            .iter()
            .map(|r| (DVector::from_column_slice(&r.original) - DVector::from_column_slice(&r.counterfactual)).norm())
            .sum::<f64>()
            / rs.len() as f64
            / diam;
        close("normalized distance", metrics::euclidean_normalized(&rs, &reference).unwrap(), want, &mut worst, &mut bad);
    }
    finish("diameter normalization", worst, bad)
}

/// Sign-table count per constraint, then the harmonic mean.
pub fn constraint_score_oracle(seed: u64) -> Outcome {
    let (mut worst, mut bad) = (0.0, Vec::new());
    let mut rng = rng_from_seed(seed);
    let eps = metrics::NO_CHANGE_EPSILON;
    for _ in 0..200 {
        let l = 4;
        let constraints = vec![
            RelationConstraint::new(0, 1, 1, "").unwrap(),
            RelationConstraint::new(2, 3, -1, "").unwrap(),
        ];
        let rs: Vec<CounterfactualResult> = (0..rng.random_range(1..20))
            .map(|_| {
                let o: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c: Vec<f64> = o
                    .iter()
                    .map(|v| if rng.random_bool(0.15) { *v } else { v + rng.random_range(-1.0..1.0) })
                    .collect();
                result(o, c)
            })
            .collect();
        let rate = |c: &RelationConstraint| {
            let ok = rs
                .iter()
                .filter(|r| {
                    let step = |j: usize| {
                        let d = r.counterfactual[j] - r.original[j];
                        if d.abs() < eps { 0 } else if d > 0.0 { 1 } else { -1 }
                    };
                    let (a, b) = (step(c.attr_a), step(c.attr_b));
                    a == 0 || b == 0 || a * b == c.sign as i32
                })
                .count();
            ok as f64 / rs.len() as f64
        };
        let (s1, s2) = (rate(&constraints[0]), rate(&constraints[1]));
        let want = if s1 == 0.0 || s2 == 0.0 { 0.0 } else { 2.0 * s1 * s2 / (s1 + s2) };
        let got = metrics::constraint_score(&rs, &constraints, eps).unwrap();
        close("per-constraint 1", got.per_constraint[0], s1, &mut worst, &mut bad);
        close("per-constraint 2", got.per_constraint[1], s2, &mut worst, &mut bad);
        close("overall", got.overall, want, &mut worst, &mut bad);
    }
    finish("constraint score", worst, bad)
}

pub fn metric_oracles(seed: u64) -> Vec<Outcome> {
    vec![
        harmonic_mean_oracle(seed),
        mahalanobis_diagonal_oracle(seed + 1),
        mahalanobis_full_oracle(seed + 2),
        diameter_oracle(seed + 3),
        constraint_score_oracle(seed + 4),
    ]
}
