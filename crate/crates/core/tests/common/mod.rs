//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{dmatrix, DMatrix};
use posnet::gpsolve::{GeometricProgram, Monomial, Posynomial};
use posnet::model::{FiniteMatrixDistribution, NetworkModel};
use rand::Rng;

pub const GP_LO: f64 = 0.1;
pub const GP_HI: f64 = 10.0;

/// Random 2–3 variable program with every variable boxed in
/// `[GP_LO, GP_HI]` and `x = 1` strictly feasible.
pub fn random_gp<R: Rng>(rng: &mut R) -> GeometricProgram {
    let nv = rng.gen_range(2..=3);
    let names: Vec<String> = (0..nv).map(|k| format!("x{k}")).collect();
    let term = |rng: &mut R, lo: f64, hi: f64| {
        let mut m = Monomial::constant(rng.gen_range(lo..hi));
        for n in &names {
            if rng.gen_bool(0.7) {
                m = m.with(n, (rng.gen_range(-2.0f64..2.0) * 4.0).round() / 4.0);
            }
        }
        m
    };
    let objective = Posynomial::new((0..rng.gen_range(1..=3)).map(|_| term(rng, 0.1, 2.0)).collect());
    let mut gp = GeometricProgram::new(objective);
    for n in &names {
        gp.add_var(n, Some(GP_LO), Some(GP_HI));
    }
    for k in 0..rng.gen_range(1..=3) {
        let f = Posynomial::new((0..rng.gen_range(1..=3)).map(|_| term(rng, 0.05, 1.0)).collect());
        let at_one: f64 = f.terms.iter().map(|t| t.coeff).sum();
        let target = rng.gen_range(0.3..0.9);
        gp.add_ineq(format!("c{k}"), f.scale(target / at_one));
    }
    gp
}

/// Value and gradient of `log f(e^y)`.
fn log_posy_grad(f: &Posynomial, names: &[String], y: &[f64]) -> (f64, Vec<f64>) {
    let terms: Vec<(f64, Vec<f64>)> = f
        .terms
        .iter()
        .map(|t| {
            let mut a = vec![0.0; names.len()];
            for (k, e) in &t.exponents {
                a[names.iter().position(|n| n == k).unwrap()] += e;
            }
            let z = t.coeff.ln() + a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
            (z, a)
        })
        .collect();
    let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = terms.iter().map(|t| (t.0 - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut grad = vec![0.0; names.len()];
    for (w, (_, a)) in weights.iter().zip(&terms) {
        for (g, ai) in grad.iter_mut().zip(a) {
            *g += w / total * ai;
        }
    }
    (top + total.ln(), grad)
}

/// Optimal value of a boxed program (at least two variables, no
/// equalities) by the central-cut ellipsoid method in `y = log x`. Stops
/// once the objective cut width, an upper bound on the optimality gap of
/// `log f_0`, is below `1e−10`.
pub fn ellipsoid_optimum(gp: &GeometricProgram) -> f64 {
    assert!(gp.eqs.is_empty());
    let names: Vec<String> = gp.variables.iter().map(|v| v.name.clone()).collect();
    let d = names.len();
    assert!(d >= 2);
    let lo: Vec<f64> = gp.variables.iter().map(|v| v.lo.unwrap().ln()).collect();
    let hi: Vec<f64> = gp.variables.iter().map(|v| v.hi.unwrap().ln()).collect();
    let mut c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let r2: f64 = lo.iter().zip(&hi).map(|(a, b)| (0.5 * (b - a)).powi(2)).sum();
    let mut p = DMatrix::<f64>::identity(d, d) * r2;
    let nf = d as f64;
    let mut best = f64::INFINITY;
    for _ in 0..100_000 {
        let mut cut = None;
        for j in 0..d {
            if c[j] < lo[j] || c[j] > hi[j] {
                let mut g = vec![0.0; d];
                g[j] = if c[j] < lo[j] { -1.0 } else { 1.0 };
                cut = Some((g, false));
                break;
            }
        }
        if cut.is_none() {
            let worst = gp
                .ineqs
                .iter()
                .map(|f| log_posy_grad(f, &names, &c))
                .max_by(|a, b| a.0.total_cmp(&b.0));
            cut = match worst {
                Some((v, g)) if v > 0.0 => Some((g, false)),
                _ => {
                    let (v, g) = log_posy_grad(&gp.objective, &names, &c);
                    best = best.min(v.exp());
                    Some((g, true))
                }
            };
        }
        let (g, objective) = cut.unwrap();
        let g = nalgebra::DVector::from_vec(g);
        let pg = &p * &g;
        let width = g.dot(&pg).sqrt();
        if !(width > 0.0) || (objective && width < 1e-10) {
            break;
        }
        let step = &pg / width;
        for j in 0..d {
            c[j] -= step[j] / (nf + 1.0);
        }
        p = (&p - &step * step.transpose() * (2.0 / (nf + 1.0))) * (nf * nf / (nf * nf - 1.0));
    }
    best
}

/// Random positive model with `N ∈ 2..=4`, `n = 1`: a stable diagonal,
/// random edges and at most `max_random` two-point blocks. `noise` scales the
/// spread of the random blocks.
pub fn random_positive_model<R: Rng>(rng: &mut R, max_random: usize, noise: f64) -> NetworkModel {
    let big_n = rng.gen_range(2..=4);
    let mut random = 0;
    let mut blocks = Vec::new();
    let two_point = |r: f64, lo: f64, spread: f64| {
        FiniteMatrixDistribution::two_point(r, dmatrix![lo + spread], dmatrix![lo]).unwrap()
    };
    for i in 0..big_n {
        let d = -rng.gen_range(1.0..3.0);
        let dist = if random < max_random && rng.gen_bool(0.3) {
            random += 1;
            let (r, u, v) = (rng.gen_range(0.05..0.95), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            two_point(r, d - noise * u, noise * v)
        } else {
            FiniteMatrixDistribution::deterministic(dmatrix![d])
        };
        blocks.push(((i, i), dist));
        for j in (0..big_n).filter(|&j| j != i) {
            if !rng.gen_bool(0.6) {
                continue;
            }
            let lo = rng.gen_range(0.0..0.4);
            let dist = if random < max_random && rng.gen_bool(0.7) {
                random += 1;
                let (r, v) = (rng.gen_range(0.05..0.95), rng.gen_range(0.0..1.5));
                two_point(r, lo, noise * v)
            } else {
                FiniteMatrixDistribution::deterministic(dmatrix![lo])
            };
            blocks.push(((i, j), dist));
        }
    }
    NetworkModel::a1(big_n, 1, blocks).unwrap()
}

/// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eig_max(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off.sqrt() <= 1e-15 * a.norm().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).fold(f64::NEG_INFINITY, f64::max)
}

/// `tI − M` is a nonsingular M-matrix, decided by elimination without
/// pivoting (all pivots positive). `M` must be Metzler.
fn m_matrix_at(m: &DMatrix<f64>, t: f64) -> bool {
    let n = m.nrows();
    let mut a = DMatrix::from_fn(n, n, |i, j| if i == j { t - m[(i, j)] } else { -m[(i, j)] });
    for k in 0..n {
        let piv = a[(k, k)];
        if !(piv > 0.0) {
            return false;
        }
        for i in k + 1..n {
            let f = a[(i, k)] / piv;
            if f != 0.0 {
                for j in k..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
    }
    true
}

/// Perron value of a Metzler matrix by bisection on the M-matrix test.
pub fn bisect_perron(m: &DMatrix<f64>) -> f64 {
    let bound = (0..m.nrows()).map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let (mut lo, mut hi) = (-bound - 1.0, bound + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if m_matrix_at(m, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
