//! Log-barrier path following with damped Newton steps. Equalities are
//! eliminated by substitution first; a phase-I problem with a shared slack
//! finds a strictly feasible start.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::convex::{gp_to_convex, ConvexForm, LogSumExp};
use super::{GeometricProgram, GpError, GpSolution, GpStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpOptions {
    /// Target for the duality-gap surrogate `m/t`.
    pub tol: f64,
    /// Newton step cap per phase.
    pub max_newton: usize,
    /// Barrier parameter growth factor.
    pub mu: f64,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_newton: 5000,
            mu: 20.0,
        }
    }
}

/// Phase I stops once every constraint has this much log-slack; stopping
/// on the slack variable alone is not enough because the phase-I barrier
/// may be unbounded below along directions that only enlarge the slack.
const PHASE1_MARGIN: f64 = 1e-2;
/// Objective decrease (as a factor) beyond which a program is declared
/// unbounded.
const UNBOUNDED_RANGE: f64 = 1e12;
const CENTERING_TOL: f64 = 1e-10;
/// Centering also requires `‖∇φ‖∞ ≤ STATIONARITY_TOL·t`, which bounds the
/// reported KKT residual.
const STATIONARITY_TOL: f64 = 1e-9;
/// Newton steps per centering. At large `t` the barrier gradient is only
/// known to about `ε_mach·t/|h|` and exact centering may be unreachable.
const CENTERING_STEPS: usize = 200;

pub fn gp_solve(program: &GeometricProgram, tol: f64) -> Result<GpSolution, GpError> {
    gp_solve_with(program, &GpOptions { tol, ..GpOptions::default() })
}

pub fn gp_solve_with(program: &GeometricProgram, options: &GpOptions) -> Result<GpSolution, GpError> {
    let cf = gp_to_convex(program)?;
    let Some(elim) = eliminate(&cf) else {
        return Ok(failed(GpStatus::Infeasible, 0));
    };
    let objective = elim.reduce(&cf.objective);
    let mut cons = Vec::with_capacity(cf.ineqs.len());
    for h in &cf.ineqs {
        let r = elim.reduce(h);
        if r.terms.iter().all(|(_, a)| a.is_empty()) {
            if r.value(&[]) >= 0.0 {
                return Ok(failed(GpStatus::Infeasible, 0));
            }
        } else {
            cons.push(r);
        }
    }
    let nz = elim.nz;

    // Phase I: minimise s subject to h_i(z) ≤ s and s ≥ −1.
    let mut z = vec![0.0; nz];
    let mut steps = 0;
    let worst = cons.iter().map(|h| h.value(&z)).fold(f64::NEG_INFINITY, f64::max);
    if worst > -1e-6 {
        let s_idx = nz;
        let shifted: Vec<LogSumExp> = cons
            .iter()
            .map(|h| LogSumExp {
                terms: h
                    .terms
                    .iter()
                    .map(|(b, a)| {
                        let mut a = a.clone();
                        a.push((s_idx, -1.0));
                        (*b, a)
                    })
                    .collect(),
            })
            .chain(std::iter::once(LogSumExp {
                terms: vec![(-1.0, vec![(s_idx, -1.0)])],
            }))
            .collect();
        let obj = LogSumExp {
            terms: vec![(0.0, vec![(s_idx, 1.0)])],
        };
        let mut x0 = z.clone();
        x0.push(worst.max(-0.5) + 1.0);
        let barrier = Barrier {
            objective: &obj,
            cons: &shifted,
            dim: nz + 1,
        };
        let margin_reached = |x: &[f64]| cons.iter().all(|h| h.value(&x[..nz]) <= -PHASE1_MARGIN);
        let out = barrier.run(x0, options, margin_reached, None);
        steps += out.steps;
        if out.status == BarrierStatus::MaxIterations {
            return Ok(failed(GpStatus::MaxIterations, steps));
        }
        if !cons.iter().all(|h| h.value(&out.x[..nz]) < 0.0) {
            return Ok(failed(GpStatus::Infeasible, steps));
        }
        z = out.x[..nz].to_vec();
    }

    let floor = objective.value(&z) - UNBOUNDED_RANGE.ln();
    let barrier = Barrier {
        objective: &objective,
        cons: &cons,
        dim: nz,
    };
    let out = barrier.run(z, options, |_| false, Some(floor));
    steps += out.steps;

    let y = elim.expand(&out.x);
    let values: BTreeMap<String, f64> = cf.names.iter().cloned().zip(y.iter().map(|v| v.exp())).collect();
    let max_ineq_residual = cf.ineqs[..cf.program_ineqs]
        .iter()
        .map(|h| h.value(&y).exp() - 1.0)
        .fold(-1.0, f64::max);
    let max_eq_residual = cf
        .eqs
        .iter()
        .map(|(b, a)| (b + a.iter().map(|&(j, x)| x * y[j]).sum::<f64>()).exp_m1().abs())
        .fold(0.0, f64::max);
    let status = match out.status {
        BarrierStatus::Converged => GpStatus::Optimal,
        BarrierStatus::Stopped => GpStatus::Optimal,
        BarrierStatus::MaxIterations => GpStatus::MaxIterations,
        BarrierStatus::Unbounded => GpStatus::Unbounded,
    };
    Ok(GpSolution {
        status,
        values,
        objective_value: cf.objective.value(&y).exp(),
        kkt_residual: out.kkt,
        gap: out.gap,
        newton_steps: steps,
        max_ineq_residual,
        max_eq_residual,
    })
}

fn failed(status: GpStatus, steps: usize) -> GpSolution {
    GpSolution {
        status,
        values: BTreeMap::new(),
        objective_value: 0.0,
        kkt_residual: 0.0,
        gap: 0.0,
        newton_steps: steps,
        max_ineq_residual: 0.0,
        max_eq_residual: 0.0,
    }
}

/// `y = y0 + Z z` with sparse rows of `Z`.
struct Elimination {
    y0: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    nz: usize,
}

impl Elimination {
    fn reduce(&self, f: &LogSumExp) -> LogSumExp {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        LogSumExp {
            terms: f
                .terms
                .iter()
                .map(|(b, a)| {
                    acc.clear();
                    let mut b = *b;
                    for &(j, x) in a {
                        b += x * self.y0[j];
                        for &(k, z) in &self.rows[j] {
                            *acc.entry(k).or_insert(0.0) += x * z;
                        }
                    }
                    (b, acc.iter().filter(|(_, v)| **v != 0.0).map(|(k, v)| (*k, *v)).collect())
                })
                .collect(),
        }
    }

    fn expand(&self, z: &[f64]) -> Vec<f64> {
        self.y0
            .iter()
            .zip(&self.rows)
            .map(|(y, row)| y + row.iter().map(|&(k, x)| x * z[k]).sum::<f64>())
            .collect()
    }
}

/// Reduced row echelon form of `A y = −b`; `None` when inconsistent.
fn eliminate(cf: &ConvexForm) -> Option<Elimination> {
    let n = cf.dim();
    if cf.eqs.is_empty() {
        return Some(Elimination {
            y0: vec![0.0; n],
            rows: (0..n).map(|j| vec![(j, 1.0)]).collect(),
            nz: n,
        });
    }
    let (mut a, b) = cf.eq_system();
    let mut rhs: DVector<f64> = -b;
    let m = a.nrows();
    let scale = a.amax().max(1.0);
    let mut pivots: Vec<usize> = Vec::new();
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let (best, val) = (rank..m).map(|r| (r, a[(r, col)].abs())).fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= 1e-12 * scale {
            continue;
        }
        a.swap_rows(rank, best);
        rhs.swap_rows(rank, best);
        let piv = a[(rank, col)];
        for c in 0..n {
            a[(rank, c)] /= piv;
        }
        rhs[rank] /= piv;
        for r in 0..m {
            if r != rank {
                let f = a[(r, col)];
                if f != 0.0 {
                    for c in 0..n {
                        let v = a[(rank, c)];
                        if v != 0.0 {
                            a[(r, c)] -= f * v;
                        }
                    }
                    rhs[r] -= f * rhs[rank];
                }
            }
        }
        pivots.push(col);
        rank += 1;
    }
    let rscale = rhs.amax().max(1.0);
    if (rank..m).any(|r| rhs[r].abs() > 1e-9 * rscale) {
        return None;
    }
    let mut is_pivot = vec![None; n];
    for (r, &c) in pivots.iter().enumerate() {
        is_pivot[c] = Some(r);
    }
    let free: Vec<usize> = (0..n).filter(|j| is_pivot[*j].is_none()).collect();
    let mut free_pos = vec![usize::MAX; n];
    for (k, &j) in free.iter().enumerate() {
        free_pos[j] = k;
    }
    let mut y0 = vec![0.0; n];
    let mut rows = vec![Vec::new(); n];
    for j in 0..n {
        match is_pivot[j] {
            None => rows[j] = vec![(free_pos[j], 1.0)],
            Some(r) => {
                y0[j] = rhs[r];
                rows[j] = free
                    .iter()
                    .filter(|&&f| a[(r, f)] != 0.0)
                    .map(|&f| (free_pos[f], -a[(r, f)]))
                    .collect();
            }
        }
    }
    Some(Elimination { y0, rows, nz: free.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BarrierStatus {
    Converged,
    Stopped,
    MaxIterations,
    Unbounded,
}

struct BarrierOutcome {
    x: Vec<f64>,
    status: BarrierStatus,
    steps: usize,
    kkt: f64,
    gap: f64,
}

/// Minimise `objective` subject to `cons[i] ≤ 0` from a strictly feasible
/// start.
struct Barrier<'a> {
    objective: &'a LogSumExp,
    cons: &'a [LogSumExp],
    dim: usize,
}

impl Barrier<'_> {
    fn phi(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = t * self.objective.value(x);
        for h in self.cons {
            let hv = h.value(x);
            if !(hv < 0.0) {
                return None;
            }
            v -= (-hv).ln();
        }
        v.is_finite().then_some(v)
    }

    /// Gradient and Hessian of `t·f_0 − Σ log(−h_i)`.
    fn derivs(&self, x: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        let mut scratch = vec![0.0; d];
        let mut sg = Vec::new();
        let add = |f: &LogSumExp, weight: f64, outer: f64, g: &mut DVector<f64>, h: &mut DMatrix<f64>, sg: &mut Vec<(usize, f64)>, pi: &[f64]| {
            f.add_curvature(pi, weight, h);
            for &(j, x) in sg.iter() {
                g[j] += weight * x;
            }
            let outer = if f.is_affine() { outer } else { outer - weight };
            if outer != 0.0 {
                for &(j, x) in sg.iter() {
                    for &(k, z) in sg.iter() {
                        h[(j, k)] += outer * x * z;
                    }
                }
            }
        };
        let (_, pi) = self.objective.derivs(x, &mut scratch, &mut sg);
        add(self.objective, t, 0.0, &mut g, &mut h, &mut sg, &pi);
        for c in self.cons {
            let (v, pi) = c.derivs(x, &mut scratch, &mut sg);
            let s = -v;
            add(c, 1.0 / s, 1.0 / (s * s), &mut g, &mut h, &mut sg, &pi);
        }
        (g, h)
    }

    fn newton_direction(&self, g: &DVector<f64>, mut h: DMatrix<f64>) -> DVector<f64> {
        let d = self.dim;
        let top = (0..d).map(|k| h[(k, k)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut reg = 1e-14 * top + 1e-12;
        for k in 0..d {
            h[(k, k)] += reg;
        }
        loop {
            if let Some(ch) = h.clone().cholesky() {
                return -ch.solve(g);
            }
            let bump = reg * 99.0;
            for k in 0..d {
                h[(k, k)] += bump;
            }
            reg += bump;
        }
    }

    fn run(
        &self,
        mut x: Vec<f64>,
        options: &GpOptions,
        stop: impl Fn(&[f64]) -> bool,
        floor: Option<f64>,
    ) -> BarrierOutcome {
        let m = self.cons.len() as f64;
        let mut t = 1.0;
        let mut steps = 0;
        let finish = |x: Vec<f64>, status, steps, t: f64, this: &Self| {
            let kkt = if this.dim == 0 {
                0.0
            } else {
                let (g, _) = this.derivs(&x, t);
                g.amax() / t
            };
            BarrierOutcome {
                x,
                status,
                steps,
                kkt,
                gap: m / t,
            }
        };
        if stop(&x) {
            return finish(x, BarrierStatus::Stopped, steps, t, self);
        }
        loop {
            // Centering.
            let mut quiet = 0;
            let mut inner = 0;
            loop {
                if self.dim == 0 || inner >= CENTERING_STEPS {
                    break;
                }
                inner += 1;
                if steps >= options.max_newton {
                    return finish(x, BarrierStatus::MaxIterations, steps, t, self);
                }
                let (g, h) = self.derivs(&x, t);
                let dx = self.newton_direction(&g, h);
                let slope = g.dot(&dx);
                let dec2 = -slope;
                let f = self.phi(&x, t).expect("iterate is strictly feasible");
                // Decrease below this is under the rounding level of φ.
                let noise = 64.0 * f64::EPSILON * (f.abs() + 1.0);
                let centered = dec2 <= 2.0 * CENTERING_TOL && g.amax() <= STATIONARITY_TOL * t;
                if centered {
                    break;
                }
                if dec2 <= noise {
                    quiet += 1;
                    if quiet > 8 {
                        break;
                    }
                } else {
                    quiet = 0;
                }
                steps += 1;
                // Inside the quadratic convergence region a feasible full
                // step is taken even when φ cannot resolve the decrease.
                let full_ok = dec2 < 0.04;
                let mut alpha = 1.0;
                let mut accepted = false;
                while alpha > 1e-20 {
                    let xn: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + alpha * b).collect();
                    if let Some(fn_) = self.phi(&xn, t) {
                        if (full_ok && alpha == 1.0) || fn_ <= f + 0.01 * alpha * slope + 0.25 * noise {
                            x = xn;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if stop(&x) {
                    return finish(x, BarrierStatus::Stopped, steps, t, self);
                }
                if let Some(fl) = floor {
                    if self.objective.value(&x) < fl {
                        return finish(x, BarrierStatus::Unbounded, steps, t, self);
                    }
                }
                if !accepted {
                    break;
                }
            }
            if m == 0.0 || m / t <= options.tol {
                return finish(x, BarrierStatus::Converged, steps, t, self);
            }
            // The last increase lands on the target gap rather than past it;
            // gradient noise grows with t.
            t = (t * options.mu).min(m / options.tol * (1.0 + 1e-12));
        }
    }
}
