//! Design programs: objective `1/λ` over `(a, Δ, σ, ρ, λ, p, r, v, w)`.

use petgraph::unionfind::UnionFind;

use super::family::{DesignFamily, PosyEntry, Surrogates};
use super::{DesignError, DesignMode};
use crate::bernstein::rho_of_eps;
use crate::gpsolve::{gp_validate, GeometricProgram, Monomial, Posynomial};
use crate::model::Mode;
use crate::policy::NumericPolicy;

/// Relative margin on the mean-decay, deviation and variance constraints so
/// that the realised model re-certifies despite solver and rounding error.
pub const GP_STRICT_MARGIN: f64 = 1e-8;

const AUX_LO: f64 = 1e-12;
const AUX_HI: f64 = 1e12;

/// Variable naming of the design programs.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVars {
    pub subsystems: usize,
    pub n: usize,
    pub params: Vec<String>,
    /// `Δ` is a variable (some deviation bound is nonzero).
    pub has_delta: bool,
    /// `σ` is a variable (some variance bound is nonzero).
    pub has_sigma: bool,
}

impl DesignVars {
    pub fn for_family(family: &DesignFamily) -> Self {
        let (has_delta, has_sigma) = match &family.surrogates {
            Surrogates::A1 { eta, phi, psi } => (
                eta.iter().any(|s| !s.f.is_zero()),
                phi.iter().chain(psi).any(|s| s.entries.iter().any(|e| !e.f.is_zero())),
            ),
            Surrogates::A2 { eta, phi } => (
                eta.iter().any(|s| !s.f.is_zero()),
                phi.iter().any(|s| s.entries.iter().any(|e| !e.f.is_zero())),
            ),
        };
        Self {
            subsystems: family.subsystems,
            n: family.n,
            params: family.param_names(),
            has_delta,
            has_sigma,
        }
    }

    pub fn p(&self, i: usize) -> String {
        format!("p{}", i + 1)
    }

    pub fn v(&self, k: usize) -> String {
        format!("v{}", k + 1)
    }

    pub fn w(&self, k: usize) -> String {
        format!("w{}", k + 1)
    }

    /// Number of program variables.
    pub fn count(&self) -> usize {
        3 + usize::from(self.has_delta) + usize::from(self.has_sigma)
            + self.subsystems
            + self.params.len()
            + 2 * self.n * self.subsystems
    }
}

/// Builds the program matching the family's independence structure.
pub fn build_design_gp(family: &DesignFamily, mode: DesignMode) -> Result<GeometricProgram, DesignError> {
    match family.mode {
        Mode::A1 => build_design_gp_a1(family, mode),
        Mode::A2 => build_design_gp_a2(family, mode),
    }
}

/// Independent-block design program.
pub fn build_design_gp_a1(family: &DesignFamily, mode: DesignMode) -> Result<GeometricProgram, DesignError> {
    let Surrogates::A1 { eta, phi, psi } = &family.surrogates else {
        return Err(DesignError::InvalidFamily("independent-block program needs block surrogates".into()));
    };
    family.validate()?;
    let vars = DesignVars::for_family(family);
    let mut gp = common(family, &vars, mode)?;
    let (n, big_n) = (family.n, family.subsystems);

    if vars.has_delta {
        let mut seen: Vec<Vec<Posynomial>> = vec![Vec::new(); big_n];
        for s in eta.iter().filter(|s| !s.f.is_zero()) {
            // Diagonal blocks enter through A_ii + A_iiᵀ.
            let c = if s.i == s.j { 2.0 } else { 1.0 } * (1.0 + GP_STRICT_MARGIN);
            let f = s
                .f
                .scale(c)
                .mul_monomial(&Monomial::var(&vars.p(s.i)).with("delta", -1.0))
                .simplified();
            if !seen[s.i].contains(&f) {
                seen[s.i].push(f.clone());
                gp.add_ineq(format!("deviation ({},{})", s.i + 1, s.j + 1), f);
            }
        }
    }

    if vars.has_sigma {
        // M_i = p_i² Σ_{j≠i} Ψ_ij + Σ_{j≠i} p_j² Φ_ji + 2p_i²(Φ_ii + Ψ_ii).
        let mut m: Vec<Vec<Vec<Posynomial>>> = vec![vec![vec![Posynomial::zero(); n]; n]; big_n];
        let mut add = |i: usize, entries: &[PosyEntry], weight: Monomial| {
            for e in entries {
                let t = e.f.mul_monomial(&weight);
                m[i][e.row][e.col] = m[i][e.row][e.col].add(&t);
            }
        };
        for s in psi {
            let k = if s.i == s.j { 2.0 } else { 1.0 };
            add(s.i, &s.entries, Monomial::constant(k).with(&vars.p(s.i), 2.0));
        }
        for s in phi {
            if s.i == s.j {
                add(s.i, &s.entries, Monomial::constant(2.0).with(&vars.p(s.i), 2.0));
            } else {
                add(s.j, &s.entries, Monomial::constant(1.0).with(&vars.p(s.i), 2.0));
            }
        }
        for (i, mi) in m.iter().enumerate() {
            let w = |k: usize| vars.w(i * n + k);
            for (k, row) in mi.iter().enumerate() {
                let mut f = Posynomial::zero();
                for (l, entry) in row.iter().enumerate() {
                    f = f.add(&entry.mul_monomial(&Monomial::var(&w(l))));
                }
                if f.is_zero() {
                    continue;
                }
                let div = Monomial::constant(1.0 + GP_STRICT_MARGIN)
                    .with("sigma", -2.0)
                    .with(&w(k), -1.0);
                gp.add_ineq(format!("variance {} row {}", i + 1, k + 1), f.mul_monomial(&div).simplified());
            }
            pin_components(&mut gp, mi, |k| w(k));
        }
    } else {
        for k in 0..n * big_n {
            gp.add_eq(Monomial::var(&vars.w(k)));
        }
    }
    Ok(gp)
}

/// Independent-row design program with a single shared `w`.
pub fn build_design_gp_a2(family: &DesignFamily, mode: DesignMode) -> Result<GeometricProgram, DesignError> {
    let Surrogates::A2 { eta, phi } = &family.surrogates else {
        return Err(DesignError::InvalidFamily("independent-row program needs row surrogates".into()));
    };
    family.validate()?;
    let vars = DesignVars::for_family(family);
    let mut gp = common(family, &vars, mode)?;
    let dim = family.dim();

    if vars.has_delta {
        for s in eta.iter().filter(|s| !s.f.is_zero()) {
            let f = s
                .f
                .scale(2.0 * (1.0 + GP_STRICT_MARGIN))
                .mul_monomial(&Monomial::var(&vars.p(s.i)).with("delta", -1.0))
                .simplified();
            gp.add_ineq(format!("deviation row {}", s.i + 1), f);
        }
    }

    if vars.has_sigma {
        let mut m: Vec<Vec<Posynomial>> = vec![vec![Posynomial::zero(); dim]; dim];
        for s in phi {
            let weight = Monomial::constant(1.0).with(&vars.p(s.i), 2.0);
            for e in &s.entries {
                m[e.row][e.col] = m[e.row][e.col].add(&e.f.mul_monomial(&weight));
            }
        }
        for (k, row) in m.iter().enumerate() {
            let mut f = Posynomial::zero();
            for (l, entry) in row.iter().enumerate() {
                f = f.add(&entry.mul_monomial(&Monomial::var(&vars.w(l))));
            }
            if f.is_zero() {
                continue;
            }
            let div = Monomial::constant(1.0 + GP_STRICT_MARGIN)
                .with("sigma", -2.0)
                .with(&vars.w(k), -1.0);
            gp.add_ineq(format!("variance row {}", k + 1), f.mul_monomial(&div).simplified());
        }
        pin_components(&mut gp, &m, |k| vars.w(k));
    } else {
        for k in 0..dim {
            gp.add_eq(Monomial::var(&vars.w(k)));
        }
    }
    Ok(gp)
}

/// Variables, objective, mean decay, tail, cost, user constraints and the
/// mode-dependent treatment of `ρ`.
fn common(family: &DesignFamily, vars: &DesignVars, mode: DesignMode) -> Result<GeometricProgram, DesignError> {
    let (n, big_n, dim) = (family.n, family.subsystems, family.dim());
    let mut gp = GeometricProgram::new(Monomial::constant(1.0).with("lambda", -1.0).into());
    let aux = |gp: &mut GeometricProgram, name: &str| gp.add_var(name, Some(AUX_LO), Some(AUX_HI));
    aux(&mut gp, "a");
    if vars.has_delta {
        aux(&mut gp, "delta");
    }
    if vars.has_sigma {
        aux(&mut gp, "sigma");
    }
    // ε stays above the policy floor.
    let rho_hi = (dim as f64).ln() - NumericPolicy::DEFAULT.eps_floor.ln();
    gp.add_var("rho", Some(AUX_LO), Some(rho_hi));
    aux(&mut gp, "lambda");
    for i in 0..big_n {
        aux(&mut gp, &vars.p(i));
    }
    for p in &family.params {
        if p.lo == p.hi {
            gp.add_var(&p.name, None, None);
            gp.add_eq(Monomial::constant(1.0 / p.lo).with(&p.name, 1.0));
        } else {
            gp.add_var(&p.name, Some(p.lo), Some(p.hi));
        }
    }
    for k in 0..dim {
        aux(&mut gp, &vars.v(k));
    }
    for k in 0..dim {
        aux(&mut gp, &vars.w(k));
    }
    gp.add_eq(Monomial::var(&vars.p(0)));

    // Mean decay per state k, divided by its monomial right side 2 p_b d_k v_k.
    let mut rows: Vec<Posynomial> = vec![Posynomial::zero(); dim];
    for e in &family.mean_plus {
        let (k, l) = (e.row, e.col);
        // Entry (k,l) of E₊ contributes p_{b(k)} E₊_kl v_l to row k and
        // E₊_kl p_{b(k)} v_k to row l.
        let pk = Monomial::var(&vars.p(k / n));
        rows[k] = rows[k].add(&e.f.mul_monomial(&pk.clone().with(&vars.v(l), 1.0)));
        rows[l] = rows[l].add(&e.f.mul_monomial(&pk.with(&vars.v(k), 1.0)));
    }
    let mut pattern = UnionFind::<usize>::new(dim);
    for e in &family.mean_plus {
        if !e.f.is_zero() {
            pattern.union(e.row, e.col);
        }
    }
    for (k, row) in rows.iter_mut().enumerate() {
        let pb = vars.p(k / n);
        let vk = vars.v(k);
        row.push(Monomial::constant(1.0 + GP_STRICT_MARGIN).with("a", 1.0).with(&vk, 1.0));
        row.push(Monomial::var("lambda").with(&pb, 1.0).with(&vk, 1.0));
        let d = &family.mean_minus[k];
        let div = d.scale(2.0).with(&pb, 1.0).with(&vk, 1.0).pow(-1.0);
        gp.add_ineq(format!("mean decay state {}", k + 1), row.mul_monomial(&div).simplified());
    }
    let mut pinned = vec![false; dim];
    for k in 0..dim {
        let root = pattern.find(k);
        if !pinned[root] {
            pinned[root] = true;
            gp.add_eq(Monomial::var(&vars.v(k)));
        }
    }

    // Tail bound: (2ρΔ/a + 6ρσ²/a²)/3 ≤ 1 − margin.
    let mut tail = Posynomial::zero();
    let scale = 1.0 / (3.0 * (1.0 - NumericPolicy::DEFAULT.strict_margin));
    if vars.has_delta {
        tail.push(Monomial::constant(2.0 * scale).with("rho", 1.0).with("delta", 1.0).with("a", -1.0));
    }
    if vars.has_sigma {
        tail.push(Monomial::constant(6.0 * scale).with("rho", 1.0).with("sigma", 2.0).with("a", -2.0));
    }
    gp.add_ineq("tail bound", tail);

    gp.add_ineq("cost", family.cost.scale(1.0 / family.cost_bound));
    for (k, f) in family.ineq_constraints.iter().enumerate() {
        gp.add_ineq(format!("constraint {}", k + 1), f.clone());
    }
    for g in &family.eq_constraints {
        gp.add_eq(g.clone());
    }
    match mode {
        DesignMode::FreeEps => {
            if dim > 1 {
                gp.add_ineq("eps at most one", Monomial::constant((dim as f64).ln()).with("rho", -1.0).into());
            }
        }
        DesignMode::FixedEps(eps) => {
            let rho = rho_of_eps(eps, n, big_n)
                .map_err(|e| DesignError::InvalidFamily(format!("fixed eps: {e}")))?;
            if rho <= 0.0 {
                return Err(DesignError::InvalidFamily(format!("fixed eps {eps} gives a nonpositive rho")));
            }
            gp.add_eq(Monomial::constant(1.0 / rho).with("rho", 1.0));
        }
    }
    let violations = gp_validate(&gp);
    if !violations.is_empty() {
        return Err(DesignError::InvalidFamily(
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    Ok(gp)
}

/// One equality `w = 1` per connected component of the pattern of `m`.
fn pin_components(gp: &mut GeometricProgram, m: &[Vec<Posynomial>], name: impl Fn(usize) -> String) {
    let size = m.len();
    let mut uf = UnionFind::<usize>::new(size);
    for (k, row) in m.iter().enumerate() {
        for (l, f) in row.iter().enumerate() {
            if !f.is_zero() {
                uf.union(k, l);
            }
        }
    }
    let mut pinned = vec![false; size];
    for k in 0..size {
        let root = uf.find(k);
        if !pinned[root] {
            pinned[root] = true;
            gp.add_eq(Monomial::var(&name(k)));
        }
    }
}
