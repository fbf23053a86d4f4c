use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::build::{build_design_gp, DesignVars};
use super::family::{DesignFamily, PosyEntry, Surrogates};
use super::{DesignError, DesignMode, DesignResult};
use crate::bernstein::rho_of_eps;
use crate::certify::{check_certificate, CertificateParams};
use crate::gpsolve::{gp_solve_with, GpOptions, GpStatus, Posynomial};
use crate::linalg::{sym_eig_min, SymMatrix};
use crate::model::Side;

pub fn solve_design(family: &DesignFamily, mode: DesignMode) -> Result<DesignResult, DesignError> {
    solve_design_with(family, mode, &GpOptions::default())
}

/// Solves the design program and re-checks the certificate on the model
/// realised at `r*`.
pub fn solve_design_with(family: &DesignFamily, mode: DesignMode, options: &GpOptions) -> Result<DesignResult, DesignError> {
    let gp = build_design_gp(family, mode)?;
    let sol = gp_solve_with(&gp, options)?;
    match sol.status {
        GpStatus::Optimal => {}
        GpStatus::Infeasible => return Err(DesignError::Infeasible),
        other => return Err(DesignError::Solver(other)),
    }
    let vars = DesignVars::for_family(family);
    let get = |name: &str| sol.values[name];
    let (n, big_n, dim) = (family.n, family.subsystems, family.dim());

    let r_star: Vec<f64> = vars.params.iter().map(|k| get(k)).collect();
    let rho_star = get("rho");
    let eps_star = ((dim as f64) * (-rho_star).exp()).min(1.0);
    let lambda_star = get("lambda");
    let p_star: Vec<f64> = (0..big_n).map(|i| get(&vars.p(i))).collect();
    let a = get("a");
    let delta = if vars.has_delta { get("delta") } else { 0.0 };
    let sigma = if vars.has_sigma { get("sigma") } else { 0.0 };
    let v: Vec<f64> = (0..dim).map(|k| get(&vars.v(k))).collect();
    let w: Vec<f64> = (0..dim).map(|k| get(&vars.w(k))).collect();

    let mut point: BTreeMap<String, f64> = vars.params.iter().cloned().zip(r_star.iter().copied()).collect();
    point.insert("rho".into(), rho_star);
    let cost = family.cost.eval(&point).map_err(DesignError::InvalidFamily)?;

    let model = family.realize(&r_star)?;
    let params = CertificateParams {
        p: p_star.clone(),
        a,
        delta,
        sigma,
        rho: rho_of_eps(eps_star, n, big_n).map_err(|e| DesignError::InvalidFamily(e.to_string()))?,
        lambda: lambda_star,
        eps: eps_star,
        mode: family.mode,
    };
    let verification = check_certificate(&model, &params)?;
    if !verification.feasible {
        let mut what = verification.binding.join(", ");
        for d in &verification.diagnostics {
            what.push_str(&format!("; {d}"));
        }
        return Err(DesignError::SurrogateViolated(format!("conditions {what} fail")));
    }
    Ok(DesignResult {
        params: vars.params,
        r_star,
        lambda_star,
        rho_star,
        eps_star,
        p_star,
        a,
        delta,
        sigma,
        v,
        w,
        gp_status: sol.status,
        cost,
        verification,
    })
}

/// Samples `samples` parameter vectors uniformly in the box and checks the
/// family's mean and surrogate bounds against the exact moments of the
/// realised model.
pub fn check_surrogates(family: &DesignFamily, samples: usize, seed: u64) -> Result<(), DesignError> {
    family.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let r: Vec<f64> = family.params.iter().map(|p| rng.gen_range(p.lo..=p.hi)).collect();
        check_at(family, &r)?;
    }
    Ok(())
}

fn check_at(family: &DesignFamily, r: &[f64]) -> Result<(), DesignError> {
    let fail = |msg: String| Err(DesignError::SurrogateViolated(format!("{msg} at r = {r:?}")));
    let values: BTreeMap<String, f64> = family.param_names().into_iter().zip(r.iter().copied()).collect();
    let eval = |f: &Posynomial| f.eval(&values).map_err(DesignError::InvalidFamily);
    let model = family.realize(r)?;

    let mean = model.mean_matrix();
    let target = family.mean_at(r)?;
    let scale = mean.amax().max(1.0);
    if (&mean - &target).amax() > 1e-9 * scale {
        return fail("family mean differs from the realised mean".into());
    }

    let dense = |entries: &[PosyEntry], size: usize| -> Result<DMatrix<f64>, DesignError> {
        let mut m = DMatrix::zeros(size, size);
        for e in entries {
            m[(e.row, e.col)] += eval(&e.f)?;
        }
        Ok(m)
    };
    let dominates = |bound: &DMatrix<f64>, actual: &DMatrix<f64>| -> Result<bool, DesignError> {
        let diff = bound - actual;
        let tol = 1e-9 * bound.amax().max(actual.amax()).max(1e-300);
        let sym = SymMatrix::symmetrized(diff);
        Ok(sym_eig_min(&sym).map_err(|e| DesignError::InvalidFamily(e.to_string()))? >= -tol)
    };
    let n = family.n;
    match &family.surrogates {
        Surrogates::A1 { eta, phi, psi } => {
            for (&(i, j), dist) in model.blocks() {
                if dist.is_deterministic() {
                    continue;
                }
                let bound: f64 = eta
                    .iter()
                    .filter(|s| (s.i, s.j) == (i, j))
                    .map(|s| eval(&s.f))
                    .sum::<Result<f64, _>>()?;
                let dev = dist.esssup_dev()?;
                if dev > bound * (1.0 + 1e-9) {
                    return fail(format!("eta ({},{}) = {bound} below the deviation {dev}", i + 1, j + 1));
                }
                for (what, list, side) in [("phi", phi, Side::Normal), ("psi", psi, Side::Transposed)] {
                    let mut b = DMatrix::zeros(n, n);
                    for s in list.iter().filter(|s| (s.i, s.j) == (i, j)) {
                        b += dense(&s.entries, n)?;
                    }
                    if !dominates(&b, &dist.w(side))? {
                        return fail(format!("{what} ({},{}) does not dominate the Gram deviation", i + 1, j + 1));
                    }
                }
            }
        }
        Surrogates::A2 { eta, phi } => {
            let dim = family.dim();
            let cap = crate::policy::NumericPolicy::DEFAULT.support_cap;
            for i in 0..family.subsystems {
                let dist = model.row_distribution(i, cap)?;
                let bound: f64 = eta.iter().filter(|s| s.i == i).map(|s| eval(&s.f)).sum::<Result<f64, _>>()?;
                let dev = dist.esssup_dev()?;
                if dev > bound * (1.0 + 1e-9) {
                    return fail(format!("eta row {} = {bound} below the deviation {dev}", i + 1));
                }
                let mut b = DMatrix::zeros(dim, dim);
                for s in phi.iter().filter(|s| s.i == i) {
                    b += dense(&s.entries, dim)?;
                }
                if !dominates(&b, &model.row_var_s(i)?.to_dense(family.subsystems))? {
                    return fail(format!("phi row {} does not dominate the row variance", i + 1));
                }
            }
        }
    }
    Ok(())
}
