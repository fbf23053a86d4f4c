//! Search over the Lyapunov scaling `p`.
//!
//! For fixed `p` the best remaining choices are closed-form: `a = a_max(p)`
//! and the tightest `Δ(p)`, `σ(p)`. The tail condition then reads
//! `ρ·g(p) < 3` with `g = 2Δ/a + 6σ²/a²`, which is invariant under scaling
//! of `p` and independent of `ε`; the search minimises `g` over `log p` by
//! coordinate descent with golden-section line searches.

use rayon::prelude::*;
use serde::Serialize;

use super::evaluator::{Evaluator, Workspace};
use super::{check_with, CertResult, CertificateParams, CertifyError};
use crate::bernstein::{eps_of_rho, rho_of_eps};
use crate::model::{Mode, NetworkModel};
use crate::policy::NumericPolicy;

/// Objective assigned to scalings with `a_max(p) ≤ 0`, scaled up further by
/// how negative `a_max` is so that descent still has a direction.
const INFEASIBLE_BASE: f64 = 1e100;
const INITIAL_HALF_WIDTH: f64 = 2.0;
const MIN_HALF_WIDTH: f64 = 1e-3;
const LINE_TOL: f64 = 1e-4;
/// Sweeps given to every start before only the best is continued.
const PROBE_SWEEPS: usize = 3;
/// A sweep improving `g` by less than this fraction counts as stalled.
const SWEEP_REL_GAIN: f64 = 3e-6;
/// Largest multiple of a sweep's displacement tried by the pattern move.
const PATTERN_REACH: f64 = 8.0;
/// Lower bound on `log p_i` after normalisation to `max p_i = 1`. Nodes
/// that only feed others can improve `g` without bound by growing their
/// weight; the gain vanishes while the mean matrix becomes ill-conditioned.
const LOG_P_RANGE: f64 = 20.0;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    /// Additional starting scalings (positive, length `N`).
    pub warm_starts: Vec<Vec<f64>>,
    /// Line-search budget per start; defaults to `200·N`.
    pub max_line_searches: Option<usize>,
    /// Run starts on the rayon pool.
    pub parallel: bool,
}

/// Best scaling found, normalised to `max p_i = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub p: Vec<f64>,
    pub a: f64,
    pub delta: f64,
    pub sigma: f64,
    /// `2Δ/a + 6σ²/a²`, infinite when `a ≤ 0`.
    pub objective: f64,
    pub start_index: usize,
    pub line_searches: usize,
}

impl SearchOutcome {
    /// Infimum of the `ε` at which this scaling certifies:
    /// `nN·exp(−(3 − margin)/g)`.
    pub fn eps_closed_form(&self, n: usize, big_n: usize) -> f64 {
        if !(self.a > 0.0) {
            return f64::INFINITY;
        }
        if self.objective == 0.0 {
            return 0.0;
        }
        let rho = (3.0 - NumericPolicy::DEFAULT.strict_margin) / self.objective;
        eps_of_rho(rho, n, big_n)
    }
}

/// Search state bound to one model, certificate mode and decay rate.
#[derive(Debug, Clone)]
pub struct Searcher {
    ev: Evaluator,
    lambda: f64,
}

impl Searcher {
    pub fn new(model: &NetworkModel, mode: Mode, lambda: f64) -> Result<Self, CertifyError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CertifyError::InvalidParams(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(Self {
            ev: Evaluator::new(model, mode)?,
            lambda,
        })
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.ev
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Multi-start minimisation of `g`. Starts are the uniform scaling, the
    /// in-degree weighting `p_i = (1 + d⁻[i])^{-1/2}`, then any warm starts.
    /// Every start is probed for a few sweeps; the descent then continues
    /// from the best probe (ties to the lowest start index) until it stalls
    /// or the budget runs out.
    pub fn run(&self, options: &SearchOptions) -> Result<SearchOutcome, CertifyError> {
        let big_n = self.ev.subsystems();
        let mut starts: Vec<Vec<f64>> = vec![
            vec![0.0; big_n],
            self.ev.in_degree().iter().map(|&d| -0.5 * (1.0 + d as f64).ln()).collect(),
        ];
        for w in &options.warm_starts {
            if w.len() != big_n || w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(CertifyError::InvalidParams("warm start must be positive with N entries".into()));
            }
            starts.push(w.iter().map(|x| x.ln()).collect());
        }
        let budget = options.max_line_searches.unwrap_or(200 * big_n).max(1);
        let probe = (PROBE_SWEEPS * (big_n + 1)).min(budget);

        let probe_one = |x0: &Vec<f64>| -> Result<(Descent, Workspace), CertifyError> {
            let mut ws = self.ev.workspace();
            let mut d = Descent::new(self, x0.clone(), &mut ws)?;
            d.advance(self, probe, &mut ws)?;
            Ok((d, ws))
        };
        let probes: Vec<Result<(Descent, Workspace), CertifyError>> = if options.parallel {
            starts.par_iter().map(probe_one).collect()
        } else {
            starts.iter().map(probe_one).collect()
        };
        let mut probes: Vec<(Descent, Workspace)> = probes.into_iter().collect::<Result<_, _>>()?;
        let lead = (0..probes.len())
            .min_by(|&i, &j| probes[i].0.f.total_cmp(&probes[j].0.f).then(i.cmp(&j)))
            .expect("at least two starts");
        {
            let (d, ws) = &mut probes[lead];
            d.advance(self, budget, ws)?;
        }

        let mut best: Option<SearchOutcome> = None;
        for (k, (d, _)) in probes.iter().enumerate() {
            let r = self.outcome_at(&d.x, k, d.used)?;
            let better = match &best {
                None => true,
                Some(b) => rank(&r) < rank(b),
            };
            if better {
                best = Some(r);
            }
        }
        Ok(best.expect("at least two starts"))
    }

    /// Witness built from a search outcome at unreliability `eps`.
    pub fn witness(&self, outcome: &SearchOutcome, eps: f64) -> Result<CertificateParams, CertifyError> {
        Ok(CertificateParams {
            p: outcome.p.clone(),
            a: outcome.a,
            delta: outcome.delta,
            sigma: outcome.sigma,
            rho: rho_of_eps(eps, self.ev.state_dim(), self.ev.subsystems())?,
            lambda: self.lambda,
            eps,
            mode: self.ev.mode(),
        })
    }

    pub fn check(&self, params: &CertificateParams) -> Result<CertResult, CertifyError> {
        check_with(&self.ev, params)
    }

    fn objective(&self, p: &[f64], ws: &mut Workspace) -> Result<f64, CertifyError> {
        let a = self.ev.a_max_approx(p, self.lambda, ws)?;
        if !(a > 0.0) {
            return Ok(INFEASIBLE_BASE * (1.0 - a / self.ev.mean_scale()));
        }
        let delta = self.ev.delta(p);
        let sigma2 = self.ev.sigma2(p)?;
        Ok(2.0 * delta / a + 6.0 * sigma2 / (a * a))
    }

    /// Reported values use a fresh workspace, exactly as the certificate
    /// check does, so a witness built from them reproduces bit for bit.
    fn outcome_at(&self, x: &[f64], start: usize, used: usize) -> Result<SearchOutcome, CertifyError> {
        let p: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let a = self.ev.a_witness(&p, self.lambda, &mut self.ev.workspace())?;
        let delta = self.ev.delta(&p);
        let sigma = self.ev.sigma2(&p)?.max(0.0).sqrt();
        let objective = if a > 0.0 {
            2.0 * delta / a + 6.0 * sigma * sigma / (a * a)
        } else {
            f64::INFINITY
        };
        Ok(SearchOutcome {
            p,
            a,
            delta,
            sigma,
            objective,
            start_index: start,
            line_searches: used,
        })
    }
}

/// Coordinate descent in `log p` with pattern moves, resumable so that a
/// probe can be continued.
struct Descent {
    x: Vec<f64>,
    p: Vec<f64>,
    f: f64,
    h: f64,
    used: usize,
    done: bool,
}

impl Descent {
    fn new(s: &Searcher, mut x: Vec<f64>, ws: &mut Workspace) -> Result<Self, CertifyError> {
        clamp_log(&mut x);
        let p: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let f = s.objective(&p, ws)?;
        Ok(Self {
            x,
            p,
            f,
            h: INITIAL_HALF_WIDTH,
            used: 0,
            done: false,
        })
    }

    /// Runs whole sweeps until stalled or `budget` line searches are used.
    fn advance(&mut self, s: &Searcher, budget: usize, ws: &mut Workspace) -> Result<(), CertifyError> {
        let big_n = self.x.len();
        while !self.done && self.used < budget {
            let f_sweep = self.f;
            let x_sweep = self.x.clone();
            for i in 0..big_n {
                if self.used >= budget {
                    return Ok(());
                }
                self.used += 1;
                let p = &mut self.p;
                let mut eval = |t: f64| -> Result<f64, CertifyError> {
                    p[i] = t.exp();
                    s.objective(p, ws)
                };
                let (lo, hi) = line_bounds(&self.x, i, self.h);
                let (t, ft) = line_min(&mut eval, lo, hi)?;
                if ft < self.f {
                    self.x[i] = t;
                    self.f = ft;
                }
                self.p[i] = self.x[i].exp();
            }
            if self.f < f_sweep && self.used < budget {
                // Pattern move along the net displacement of the sweep.
                self.used += 1;
                let d: Vec<f64> = self.x.iter().zip(&x_sweep).map(|(a, b)| a - b).collect();
                let base = self.x.clone();
                let p = &mut self.p;
                let mut eval = |t: f64| -> Result<f64, CertifyError> {
                    for ((pi, b), di) in p.iter_mut().zip(&base).zip(&d) {
                        *pi = (b + t * di).exp();
                    }
                    s.objective(p, ws)
                };
                let (t, ft) = line_min(&mut eval, 0.0, PATTERN_REACH)?;
                if ft < self.f && spread_ok(&base, &d, t) {
                    self.x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += t * di);
                }
            }
            normalize_log(&mut self.x);
            for (pi, xi) in self.p.iter_mut().zip(&self.x) {
                *pi = xi.exp();
            }
            self.f = s.objective(&self.p, ws)?;
            let stalled = !(self.f < f_sweep - SWEEP_REL_GAIN * f_sweep.abs());
            if stalled {
                if self.h <= MIN_HALF_WIDTH {
                    self.done = true;
                } else {
                    self.h = (self.h * 0.25).max(MIN_HALF_WIDTH);
                }
            }
        }
        Ok(())
    }
}

fn rank(o: &SearchOutcome) -> (f64, f64) {
    if o.objective.is_finite() {
        (o.objective, 0.0)
    } else {
        (f64::INFINITY, -o.a)
    }
}

/// Search interval for coordinate `i`: `x_i ± h`, kept within
/// `LOG_P_RANGE` of every other coordinate.
fn line_bounds(x: &[f64], i: usize, h: f64) -> (f64, f64) {
    let others = x.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| *v);
    let (top, bottom) = others.fold((f64::NEG_INFINITY, f64::INFINITY), |(t, b), v| (t.max(v), b.min(v)));
    let lo = (x[i] - h).max(top - LOG_P_RANGE);
    let hi = (x[i] + h).min(bottom + LOG_P_RANGE);
    if lo < hi {
        (lo, hi)
    } else {
        (x[i] - LINE_TOL, x[i] + LINE_TOL)
    }
}

fn spread_ok(base: &[f64], d: &[f64], t: f64) -> bool {
    let moved = base.iter().zip(d).map(|(b, di)| b + t * di);
    let (top, bottom) = moved.fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), v| (a.max(v), b.min(v)));
    top - bottom <= LOG_P_RANGE
}

/// Pulls coordinates into the window `[max − LOG_P_RANGE, max]`.
fn clamp_log(x: &mut [f64]) {
    normalize_log(x);
    x.iter_mut().for_each(|v| *v = v.max(-LOG_P_RANGE));
}

fn normalize_log(x: &mut [f64]) {
    let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top.is_finite() {
        x.iter_mut().for_each(|v| *v -= top);
    }
}

/// Brent's minimiser on `[lo, hi]` (golden sections with parabolic
/// steps), returning the best point evaluated.
fn line_min(
    f: &mut impl FnMut(f64) -> Result<f64, CertifyError>,
    mut lo: f64,
    mut hi: f64,
) -> Result<(f64, f64), CertifyError> {
    const CGOLD: f64 = 1.0 - INV_PHI;
    let mut x = lo + CGOLD * (hi - lo);
    let mut fx = f(x)?;
    let (mut w, mut v, mut fw, mut fv) = (x, x, fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        let tol = LINE_TOL * 0.5;
        if (x - mid).abs() <= 2.0 * tol - 0.5 * (hi - lo) {
            return Ok((x, fx));
        }
        let mut golden = true;
        if e.abs() > tol {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut pn = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                pn = -pn;
            }
            q = q.abs();
            if pn.abs() < (0.5 * q * e).abs() && pn > q * (lo - x) && pn < q * (hi - x) {
                e = d;
                d = pn / q;
                let u = x + d;
                if u - lo < 2.0 * tol || hi - u < 2.0 * tol {
                    d = if x < mid { tol } else { -tol };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { lo - x } else { hi - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol { x + d } else { x + tol.copysign(d) };
        let fu = f(u)?;
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
}

/// Searches for a certificate at `(λ, ε)` under the model's own mode.
pub fn search_certificate(model: &NetworkModel, lambda: f64, eps: f64) -> Result<CertResult, CertifyError> {
    search_certificate_with(model, model.mode(), lambda, eps, &SearchOptions::default())
}

pub fn search_certificate_with(
    model: &NetworkModel,
    mode: Mode,
    lambda: f64,
    eps: f64,
    options: &SearchOptions,
) -> Result<CertResult, CertifyError> {
    let searcher = Searcher::new(model, mode, lambda)?;
    let outcome = searcher.run(options)?;
    if !(outcome.a > 0.0) {
        let mut r = CertResult::infeasible(format!("mean system not certifiable at rate {lambda}"));
        r.binding.push(super::MEAN_DECAY.into());
        return Ok(r);
    }
    let witness = searcher.witness(&outcome, eps)?;
    searcher.check(&witness)
}

/// Minimum unreliability level at decay rate `λ`.
#[derive(Debug, Clone, Serialize)]
pub struct Unreliability {
    /// `ε*` clamped to `[policy.eps_floor, 1]`.
    pub eps_star: f64,
    /// Unclamped closed-form value at the best scaling found.
    pub eps_closed_form: f64,
    /// False when no certificate exists at `ε = 1`.
    pub certifiable: bool,
    /// Witness at the feasible end of the bisection bracket.
    pub witness: Option<CertificateParams>,
    /// Final bisection bracket `(infeasible, feasible)` in `ε`.
    pub bisection: Option<(f64, f64)>,
    pub search: SearchOutcome,
    pub diagnostics: Vec<String>,
}

const BISECTION_REL_TOL: f64 = 1e-3;
const BISECTION_MAX_ITER: usize = 60;

/// Computes `ε*` in closed form at the best scaling found and confirms it by
/// bisection on `ε` with the certificate check as feasibility oracle.
pub fn min_unreliability(
    model: &NetworkModel,
    mode: Mode,
    lambda: f64,
    options: &SearchOptions,
) -> Result<Unreliability, CertifyError> {
    let searcher = Searcher::new(model, mode, lambda)?;
    let outcome = searcher.run(options)?;
    unreliability_from(&searcher, outcome)
}

pub(crate) fn unreliability_from(searcher: &Searcher, outcome: SearchOutcome) -> Result<Unreliability, CertifyError> {
    let policy = NumericPolicy::DEFAULT;
    let ev = searcher.evaluator();
    let (n, big_n) = (ev.state_dim(), ev.subsystems());
    let lambda = searcher.lambda();
    let closed = outcome.eps_closed_form(n, big_n);
    let floor = policy.eps_floor;

    if !(outcome.a > 0.0) {
        return Ok(Unreliability {
            eps_star: 1.0,
            eps_closed_form: closed,
            certifiable: false,
            witness: None,
            bisection: None,
            search: outcome,
            diagnostics: vec![
                format!("mean system not certifiable at rate {lambda}"),
                format!("uncertifiable at rate {lambda}"),
            ],
        });
    }

    let feasible = |eps: f64| -> Result<bool, CertifyError> {
        Ok(searcher.check(&searcher.witness(&outcome, eps)?)?.feasible)
    };

    if !feasible(1.0)? {
        if closed <= 1.0 * (1.0 + BISECTION_REL_TOL) {
            return Err(CertifyError::Disagreement(format!(
                "closed form gives {closed:e} but eps = 1 is infeasible"
            )));
        }
        return Ok(Unreliability {
            eps_star: 1.0,
            eps_closed_form: closed,
            certifiable: false,
            witness: None,
            bisection: None,
            search: outcome,
            diagnostics: vec![format!("uncertifiable at rate {lambda}")],
        });
    }
    if feasible(floor)? {
        if closed > floor * (1.0 + BISECTION_REL_TOL) {
            return Err(CertifyError::Disagreement(format!(
                "closed form gives {closed:e} but the floor {floor:e} is feasible"
            )));
        }
        let witness = searcher.witness(&outcome, floor)?;
        return Ok(Unreliability {
            eps_star: floor,
            eps_closed_form: closed,
            certifiable: true,
            witness: Some(witness),
            bisection: Some((floor, floor)),
            search: outcome,
            diagnostics: Vec::new(),
        });
    }

    let (mut lo, mut hi) = (floor, 1.0f64);
    for _ in 0..BISECTION_MAX_ITER {
        if hi <= lo * (1.0 + BISECTION_REL_TOL) {
            break;
        }
        let mid = (lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp();
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if closed < lo / (1.0 + BISECTION_REL_TOL) || closed > hi * (1.0 + BISECTION_REL_TOL) {
        return Err(CertifyError::Disagreement(format!(
            "closed form {closed:e} outside bisection bracket [{lo:e}, {hi:e}]"
        )));
    }
    let witness = searcher.witness(&outcome, hi)?;
    Ok(Unreliability {
        eps_star: closed.clamp(floor, 1.0),
        eps_closed_form: closed,
        certifiable: true,
        witness: Some(witness),
        bisection: Some((lo, hi)),
        search: outcome,
        diagnostics: Vec::new(),
    })
}
