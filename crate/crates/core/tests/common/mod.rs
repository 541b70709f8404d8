#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use winodds::{Arm, Dataset, Outcome, SubjectRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// How outcome times are drawn.
#[derive(Clone, Copy, Debug)]
pub enum Times {
    /// Continuous times; ties have probability zero.
    Continuous,
    /// Integer times on `1..=k`, so exact ties are common.
    Grid(u32),
}

/// Random dataset with prognostic covariates, a treatment effect, both
/// event types and administrative censoring. The first two subjects are
/// control and the next two treated, so both arms are always large enough.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, times: Times) -> Dataset {
    assert!(n >= 4);
    let effect: f64 = rng.random_range(-0.5..0.5);
    let gamma: Vec<f64> = (0..p).map(|_| rng.random_range(-0.8..0.8)).collect();
    let fatal_rate: f64 = rng.random_range(0.1..0.9);
    let nonfatal_rate: f64 = rng.random_range(0.1..0.9);
    let records = (0..n)
        .map(|i| {
            let arm = match i {
                0 | 1 => Arm::Control,
                2 | 3 => Arm::Treated,
                _ if rng.random_bool(0.5) => Arm::Treated,
                _ => Arm::Control,
            };
            let x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
            let lin: f64 = effect * arm.indicator() + gamma.iter().zip(&x).map(|(g, x)| g * x).sum::<f64>();
            let speed = (-lin).exp();
            let e1: f64 = Exp1.sample(rng);
            let t1 = e1 / (fatal_rate * speed);
            let e2: f64 = Exp1.sample(rng);
            let t2 = e2 / (nonfatal_rate * speed);
            let cens: f64 = rng.random_range(0.2..3.0);
            let (t1, t2, cens) = match times {
                Times::Continuous => (t1, t2, cens),
                Times::Grid(k) => {
                    let snap = |t: f64| (t * k as f64 / 3.0).ceil().clamp(1.0, k as f64);
                    (snap(t1), snap(t2), snap(cens))
                }
            };
            let outcome = Outcome {
                u1: t1.min(cens),
                d1: t1 < cens,
                u2: t2.min(t1).min(cens),
                d2: t2 < t1.min(cens),
            };
            SubjectRecord {
                id: format!("r{i}"),
                arm,
                covariates: x,
                outcome,
            }
        })
        .collect();
    Dataset::new(records, Dataset::default_names(p)).unwrap()
}

/// Dataset where no pair is tied: every subject has a fatal event at a
/// distinct time.
pub fn untied_dataset(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let records = (0..n)
        .map(|i| {
            let u1 = i as f64 + rng.random_range(0.1..0.9);
            SubjectRecord {
                id: format!("r{i}"),
                arm: if i % 2 == 0 || rng.random_bool(0.3) { Arm::Control } else { Arm::Treated },
                covariates: vec![rng.random_range(-1.0..1.0)],
                outcome: Outcome {
                    u1,
                    d1: true,
                    u2: u1,
                    d2: false,
                },
            }
        })
        .collect();
    Dataset::new(records, Dataset::default_names(1)).unwrap()
}

/// +1 if `b` beats `a`, −1 if `a` beats `b`, 0 for a tie: the levels are
/// consulted in priority order and a level decides only through an event
/// strictly earlier than the other subject's time on that level.
pub fn oracle_compare(a: &Outcome, b: &Outcome) -> i32 {
    let levels = [(a.u1, a.d1, b.u1, b.d1), (a.u2, a.d2, b.u2, b.d2)];
    for (ua, da, ub, db) in levels {
        if da && ua < ub {
            return 1;
        }
        if db && ub < ua {
            return -1;
        }
    }
    0
}

/// `I(Y_a ⪯ Y_b)`.
pub fn oracle_score(a: &Outcome, b: &Outcome) -> f64 {
    match oracle_compare(a, b) {
        1 => 1.0,
        0 => 0.5,
        _ => 0.0,
    }
}

pub fn a(ds: &Dataset, i: usize) -> f64 {
    ds.records()[i].arm.indicator()
}

pub struct OracleTally {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub treated_winfrac: Vec<f64>,
    pub control_winfrac: Vec<f64>,
}

pub fn oracle_tally(ds: &Dataset) -> OracleTally {
    let r = ds.records();
    let n = r.len();
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    let mut treated_winfrac = Vec::new();
    let mut control_winfrac = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if a(ds, i) == 0.0 && a(ds, j) == 1.0 {
                match oracle_compare(&r[i].outcome, &r[j].outcome) {
                    1 => wins += 1,
                    -1 => losses += 1,
                    _ => ties += 1,
                }
            }
        }
    }
    let n0 = ds.n_control() as f64;
    let n1 = ds.n_treated() as f64;
    for l in 0..n {
        let mut sum = 0.0;
        for m in 0..n {
            if a(ds, l) == 1.0 && a(ds, m) == 0.0 {
                sum += oracle_score(&r[m].outcome, &r[l].outcome);
            }
            if a(ds, l) == 0.0 && a(ds, m) == 1.0 {
                sum += oracle_score(&r[l].outcome, &r[m].outcome);
            }
        }
        if a(ds, l) == 1.0 {
            treated_winfrac.push(sum / n0);
        } else {
            control_winfrac.push(sum / n1);
        }
    }
    OracleTally {
        wins,
        losses,
        ties,
        treated_winfrac,
        control_winfrac,
    }
}

/// `Σ (1 − A_i) A_j s_ij / (N0 N1)`.
pub fn oracle_direct(ds: &Dataset) -> f64 {
    let r = ds.records();
    let mut sum = 0.0;
    for i in 0..r.len() {
        for j in 0..r.len() {
            sum += (1.0 - a(ds, i)) * a(ds, j) * oracle_score(&r[i].outcome, &r[j].outcome);
        }
    }
    sum / (ds.n_control() * ds.n_treated()) as f64
}

pub fn naive_expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `expit(τ_A + τ_Xᵀ(x_j − x_i))`.
pub fn oracle_h(tau_a: f64, tau_x: &[f64], xi: &[f64], xj: &[f64]) -> f64 {
    let mut lin = tau_a;
    for k in 0..tau_x.len() {
        lin += tau_x[k] * (xj[k] - xi[k]);
    }
    naive_expit(lin)
}

pub fn oracle_stand(ds: &Dataset, tau_a: f64, tau_x: &[f64]) -> f64 {
    let r = ds.records();
    let n = r.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += oracle_h(tau_a, tau_x, &r[i].covariates, &r[j].covariates);
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

pub fn oracle_aug(ds: &Dataset, tau_a: f64, tau_x: &[f64]) -> f64 {
    let r = ds.records();
    let n = r.len();
    let pairs = (n * (n - 1)) as f64;
    let comparisons = (ds.n_control() * ds.n_treated()) as f64;
    let mut sum = oracle_direct(ds);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = 1.0 / pairs - (1.0 - a(ds, i)) * a(ds, j) / comparisons;
                sum += w * oracle_h(tau_a, tau_x, &r[i].covariates, &r[j].covariates);
            }
        }
    }
    sum
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn oracle_unadjusted_variance(ds: &Dataset) -> f64 {
    let t = oracle_tally(ds);
    sample_var(&t.treated_winfrac) / ds.n_treated() as f64
        + sample_var(&t.control_winfrac) / ds.n_control() as f64
}

/// Influence-function variance of the augmented estimator, term by term.
pub fn oracle_adjusted_variance(ds: &Dataset, tau_a: f64, tau_x: &[f64]) -> f64 {
    let r = ds.records();
    let n = r.len();
    let n0 = ds.n_control() as f64;
    let n1 = ds.n_treated() as f64;
    let h = |i: usize, j: usize| oracle_h(tau_a, tau_x, &r[i].covariates, &r[j].covariates);
    let k = |i: usize, j: usize| oracle_score(&r[i].outcome, &r[j].outcome) - h(i, j);

    let mut k_bar = 0.0;
    for i in 0..n {
        for j in 0..n {
            if a(ds, i) == 0.0 && a(ds, j) == 1.0 {
                k_bar += k(i, j);
            }
        }
    }
    k_bar /= n0 * n1;

    let mut hl = vec![0.0; n];
    for l in 0..n {
        for m in 0..n {
            if m != l {
                hl[l] += 0.5 * (h(l, m) + h(m, l));
            }
        }
        hl[l] /= (n - 1) as f64;
    }
    let h_bar = hl.iter().sum::<f64>() / n as f64;

    let nf = n as f64;
    let mut total = 0.0;
    for l in 0..n {
        let mut g = 0.0;
        for m in 0..n {
            if a(ds, l) == 1.0 && a(ds, m) == 0.0 {
                g += k(m, l) / n0;
            }
            if a(ds, l) == 0.0 && a(ds, m) == 1.0 {
                g += k(l, m) / n1;
            }
        }
        let phi = a(ds, l) * (nf / n1) * (g - k_bar)
            + (1.0 - a(ds, l)) * (nf / n0) * (g - k_bar)
            + 2.0 * (hl[l] - h_bar);
        total += phi * phi;
    }
    total / (nf * nf)
}

/// Literal ordered-pair score of the PIM estimating equations, as
/// `(arm component, covariate components)`.
pub fn oracle_score_equations(ds: &Dataset, tau_a: f64, tau_x: &[f64]) -> Vec<f64> {
    let r = ds.records();
    let n = r.len();
    let p = tau_x.len();
    let mut u = vec![0.0; p + 1];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let da = a(ds, j) - a(ds, i);
            let mut lin = tau_a * da;
            for k in 0..p {
                lin += tau_x[k] * (r[j].covariates[k] - r[i].covariates[k]);
            }
            let res = oracle_score(&r[i].outcome, &r[j].outcome) - naive_expit(lin);
            u[0] += da * res;
            for k in 0..p {
                u[k + 1] += (r[j].covariates[k] - r[i].covariates[k]) * res;
            }
        }
    }
    u
}

pub fn rel_diff(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(1e-300)
}
