//! Embedded primal-dual interior-point backend.
//!
//! Infeasible-start path following with Nesterov-Todd scaling and a Mehrotra
//! predictor-corrector step, over a product of second-order cones and one PSD
//! block. The matrix variable is carried as its scaled vectorization
//! (off-diagonals multiplied by √2) so that the Euclidean inner product of two
//! vectors equals the trace inner product of the matrices.
//!
//! Primal:  minimize cᵀx  s.t.  A x = b,  G x = s,  s ∈ K
//! Dual:    maximize bᵀy  s.t.  Aᵀy + Gᵀz = c,  z ∈ K

use std::f64::consts::SQRT_2;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::{vec_len, vec_position, ConicBackend, ConicProblem, Solution, SolverReport, SolverStatus};
use crate::error::Result;

const STEP_FRACTION: f64 = 0.99;
const SIGMA_EXPONENT: i32 = 3;
const REFINEMENT_STEPS: usize = 2;
/// The objective is normalized to unit norm, which can leave the optimum far
/// below `tol`; the absolute gap test is tightened by this factor so that a
/// small optimum is still resolved to relative accuracy.
const ABS_GAP_FACTOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct InteriorPoint {
    pub max_iterations: usize,
    /// Factor applied to the tolerance for the `NearOptimal` fallback.
    pub near_optimal_factor: f64,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            near_optimal_factor: 1e3,
        }
    }
}

impl ConicBackend for InteriorPoint {
    fn name(&self) -> &'static str {
        "ipm"
    }

    fn solve(&self, problem: &ConicProblem, tol: f64) -> Result<Solution> {
        problem.validate()?;
        if !(tol > 0.0) {
            return Err(crate::Error::InvalidInput(format!("tolerance {tol} must be positive")));
        }
        let data = Prepared::new(problem);
        let out = data.run(self, tol);
        let h = data.smat(&out.x);
        let report = SolverReport {
            status: out.status,
            objective_value: problem.objective_value(&h),
            iterations: out.iterations,
            max_equality_residual: problem.max_equality_residual(&h),
        };
        Ok(Solution { h, report })
    }
}

/// A second-order cone block `G_k x ∈ Q^{d}` touching only a few columns.
struct SocBlock {
    offset: usize,
    dim: usize,
    cols: Vec<usize>,
    g: DMatrix<f64>,
}

/// Element of the cone product: stacked SOC coordinates plus the PSD block.
#[derive(Clone, Debug)]
struct ConeVec {
    soc: DVector<f64>,
    psd: DMatrix<f64>,
}

impl ConeVec {
    fn dot(&self, other: &Self) -> f64 {
        self.soc.dot(&other.soc) + self.psd.dot(&other.psd)
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        self.soc.axpy(alpha, &other.soc, 1.0);
        self.psd += &other.psd * alpha;
    }

    fn add(&self, other: &Self) -> Self {
        Self {
            soc: &self.soc + &other.soc,
            psd: &self.psd + &other.psd,
        }
    }

    fn sub(&self, other: &Self) -> Self {
        Self {
            soc: &self.soc - &other.soc,
            psd: &self.psd - &other.psd,
        }
    }

    fn scale(&self, a: f64) -> Self {
        Self {
            soc: &self.soc * a,
            psd: &self.psd * a,
        }
    }
}

struct Prepared {
    m: usize,
    n: usize,
    /// svec scale of each vectorization slot (1 on the diagonal, √2 off it).
    slot_scale: Vec<f64>,
    slot_pos: Vec<(usize, usize)>,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    cones: Vec<SocBlock>,
    soc_len: usize,
}

struct RunOutput {
    x: DVector<f64>,
    status: SolverStatus,
    iterations: usize,
}

impl Prepared {
    fn new(p: &ConicProblem) -> Self {
        let m = p.dim;
        let n = vec_len(m);
        let slot_pos: Vec<_> = (0..n).map(vec_position).collect();
        let slot_scale: Vec<f64> = slot_pos
            .iter()
            .map(|&(i, j)| if i == j { 1.0 } else { SQRT_2 })
            .collect();

        // tr{M H} over the scaled vectorization.
        let trace_form = |mat: &DMatrix<f64>| {
            DVector::from_fn(n, |k, _| {
                let (i, j) = slot_pos[k];
                if i == j {
                    mat[(i, i)]
                } else {
                    SQRT_2 * 0.5 * (mat[(i, j)] + mat[(j, i)])
                }
            })
        };

        let mut c = trace_form(&p.objective);
        let cn = c.norm();
        if cn > 0.0 {
            c /= cn;
        }

        let p_eq = p.equalities.len();
        let mut a = DMatrix::zeros(p_eq, n);
        let mut b = DVector::zeros(p_eq);
        for (k, eq) in p.equalities.iter().enumerate() {
            let row = trace_form(&eq.a);
            let rn = row.norm();
            let s = if rn > 0.0 { 1.0 / rn } else { 1.0 };
            a.row_mut(k).copy_from(&(row * s).transpose());
            b[k] = eq.b * s;
        }

        let mut cones = Vec::with_capacity(p.socs.len());
        let mut offset = 0;
        for row in &p.socs {
            let forms: Vec<_> = std::iter::once(&row.rhs).chain(row.selector.iter()).collect();
            let mut cols: Vec<usize> = forms.iter().flat_map(|f| f.0.iter().map(|&(k, _)| k)).collect();
            cols.sort_unstable();
            cols.dedup();
            let dim = forms.len();
            let mut g = DMatrix::zeros(dim, cols.len());
            for (r, f) in forms.iter().enumerate() {
                for &(k, coef) in &f.0 {
                    let local = cols.binary_search(&k).unwrap();
                    g[(r, local)] += coef / slot_scale[k];
                }
            }
            let gmax = g.amax();
            if gmax > 0.0 {
                g /= gmax;
            }
            cones.push(SocBlock { offset, dim, cols, g });
            offset += dim;
        }

        Self {
            m,
            n,
            slot_scale,
            slot_pos,
            c,
            a,
            b,
            cones,
            soc_len: offset,
        }
    }

    fn smat(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.m, self.m);
        for (k, &(i, j)) in self.slot_pos.iter().enumerate() {
            let v = x[k] / self.slot_scale[k];
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
        h
    }

    fn svec(&self, h: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |k, _| {
            let (i, j) = self.slot_pos[k];
            if i == j {
                h[(i, i)]
            } else {
                SQRT_2 * 0.5 * (h[(i, j)] + h[(j, i)])
            }
        })
    }

    fn g_mul(&self, x: &DVector<f64>) -> ConeVec {
        let mut soc = DVector::zeros(self.soc_len);
        for cone in &self.cones {
            for r in 0..cone.dim {
                let mut acc = 0.0;
                for (l, &col) in cone.cols.iter().enumerate() {
                    acc += cone.g[(r, l)] * x[col];
                }
                soc[cone.offset + r] = acc;
            }
        }
        ConeVec { soc, psd: self.smat(x) }
    }

    fn gt_mul(&self, z: &ConeVec) -> DVector<f64> {
        let mut out = self.svec(&z.psd);
        for cone in &self.cones {
            for (l, &col) in cone.cols.iter().enumerate() {
                let mut acc = 0.0;
                for r in 0..cone.dim {
                    acc += cone.g[(r, l)] * z.soc[cone.offset + r];
                }
                out[col] += acc;
            }
        }
        out
    }

    fn identity_element(&self) -> ConeVec {
        let mut soc = DVector::zeros(self.soc_len);
        for cone in &self.cones {
            soc[cone.offset] = 1.0;
        }
        ConeVec {
            soc,
            psd: DMatrix::identity(self.m, self.m),
        }
    }

    fn degree(&self) -> f64 {
        (self.cones.len() + self.m) as f64
    }

    /// Smallest `t` such that `v + t·e` lies in the cone.
    fn shift_needed(&self, v: &ConeVec) -> f64 {
        let mut t = f64::NEG_INFINITY;
        for cone in &self.cones {
            let seg = v.soc.rows(cone.offset, cone.dim);
            let tail = seg.rows(1, cone.dim - 1).norm();
            t = t.max(tail - seg[0]);
        }
        let eig = SymmetricEigen::new(v.psd.clone()).eigenvalues;
        t.max(-eig.min())
    }

    fn shift_into_cone(&self, v: &mut ConeVec) {
        let t = self.shift_needed(v);
        if t >= 0.0 {
            v.axpy(1.0 + t, &self.identity_element());
        }
    }

    fn run(&self, cfg: &InteriorPoint, tol: f64) -> RunOutput {
        let n = self.n;
        let identity = Scaling::identity(self);
        let Some(kkt) = Kkt::factor(self, &identity) else {
            return RunOutput {
                x: DVector::zeros(n),
                status: SolverStatus::NumericalFailure,
                iterations: 0,
            };
        };
        let p = self.b.len();
        let (mut x, _) = kkt.solve(self, &DVector::zeros(n), &self.b);
        let mut s = self.g_mul(&x);
        let (u, yneg) = kkt.solve(self, &self.c, &DVector::zeros(p));
        let mut y = -yneg;
        let mut z = self.g_mul(&u);
        self.shift_into_cone(&mut s);
        self.shift_into_cone(&mut z);

        let e = self.identity_element();
        let res_y0 = self.b.norm().max(1.0);
        let res_x0 = self.c.norm().max(1.0);
        let near = tol * cfg.near_optimal_factor;
        let mut best: Option<(f64, DVector<f64>)> = None;

        for iter in 0..cfg.max_iterations {
            let gx = self.g_mul(&x);
            let r_p = &self.a * &x - &self.b;
            let r_s = gx.sub(&s);
            let r_d = &self.c - self.a.transpose() * &y - self.gt_mul(&z);
            let gap = s.dot(&z);
            let pcost = self.c.dot(&x);
            let dcost = self.b.dot(&y);
            let pres = (r_p.norm() / res_y0).max(r_s.norm());
            let dres = r_d.norm() / res_x0;
            let relgap = if pcost < 0.0 {
                gap / -pcost
            } else if dcost > 0.0 {
                gap / dcost
            } else {
                f64::INFINITY
            };

            let abs_gap = gap * ABS_GAP_FACTOR.recip();
            if pres <= tol && dres <= tol && (abs_gap <= tol || relgap <= tol) {
                return RunOutput {
                    x,
                    status: SolverStatus::Optimal,
                    iterations: iter,
                };
            }
            let merit = pres.max(dres).max(abs_gap.min(relgap));
            if merit <= near && best.as_ref().is_none_or(|(bm, _)| merit < *bm) {
                best = Some((merit, x.clone()));
            }

            // Infeasibility certificates from the unbounded ray of the other side.
            if dcost > 0.0 {
                let ray = (self.a.transpose() * &y + self.gt_mul(&z)).norm();
                if ray / dcost <= tol && dcost > 1.0 / tol.sqrt() {
                    return self.failed(x, SolverStatus::Infeasible, iter, best);
                }
            }
            if pcost < 0.0 {
                let ray = (&self.a * &x).norm().max(gx.sub(&s).norm());
                let cone_dist = self.shift_needed(&gx).max(0.0);
                if (ray + cone_dist) / -pcost <= tol && -pcost > 1.0 / tol.sqrt() {
                    return self.failed(x, SolverStatus::Infeasible, iter, best);
                }
            }

            let Some(scaling) = Scaling::nesterov_todd(self, &s, &z) else {
                return self.failed(x, SolverStatus::NumericalFailure, iter, best);
            };
            let Some(kkt) = Kkt::factor(self, &scaling) else {
                return self.failed(x, SolverStatus::NumericalFailure, iter, best);
            };
            let mu = gap / self.degree();
            let lambda = scaling.lambda();

            // Predictor.
            let rt_aff = lambda.scale(-1.0);
            let aff = self.newton(&kkt, &scaling, &r_p, &r_s, &r_d, &rt_aff);
            let alpha_aff = scaling
                .max_step(self, &aff.ds_scaled)
                .min(scaling.max_step(self, &aff.dz_scaled))
                .min(1.0);
            let sigma = (1.0 - alpha_aff).powi(SIGMA_EXPONENT);

            // Corrector.
            let mut target = scaling.jordan(self, &lambda, &lambda).scale(-1.0);
            target.axpy(-1.0, &scaling.jordan(self, &aff.ds_scaled, &aff.dz_scaled));
            target.axpy(sigma * mu, &e);
            let rt = scaling.jordan_solve(self, &lambda, &target);
            let step = self.newton(&kkt, &scaling, &r_p, &r_s, &r_d, &rt);
            let alpha_max = scaling
                .max_step(self, &step.ds_scaled)
                .min(scaling.max_step(self, &step.dz_scaled));
            let alpha = (STEP_FRACTION * alpha_max).min(1.0);
            if !(alpha > 1e-12) || !alpha.is_finite() {
                return self.failed(x, SolverStatus::NumericalFailure, iter, best);
            }

            x.axpy(alpha, &step.dx, 1.0);
            y.axpy(alpha, &step.dy, 1.0);
            s.axpy(alpha, &step.ds);
            z.axpy(alpha, &step.dz);
        }
        self.failed(x, SolverStatus::NumericalFailure, cfg.max_iterations, best)
    }

    fn failed(
        &self,
        x: DVector<f64>,
        status: SolverStatus,
        iterations: usize,
        best: Option<(f64, DVector<f64>)>,
    ) -> RunOutput {
        match (status, best) {
            (SolverStatus::NumericalFailure, Some((_, bx))) => RunOutput {
                x: bx,
                status: SolverStatus::NearOptimal,
                iterations,
            },
            _ => RunOutput { x, status, iterations },
        }
    }

    /// Solves the linearized system for right-hand sides `(r_p, r_s, r_d)` and
    /// the scaled complementarity target `rt` (`W⁻ᵀΔs + WΔz = rt`).
    fn newton(
        &self,
        kkt: &Kkt,
        w: &Scaling,
        r_p: &DVector<f64>,
        r_s: &ConeVec,
        r_d: &DVector<f64>,
        rt: &ConeVec,
    ) -> Step {
        let inner = rt.sub(&w.apply_w_inv_t(self, r_s));
        let q = -r_d + self.gt_mul(&w.apply_w_inv(self, &inner));
        let t = -r_p;
        let (dx, dy) = kkt.solve_refined(self, w, &q, &t);
        let ds = self.g_mul(&dx).add(r_s);
        let ds_scaled = w.apply_w_inv_t(self, &ds);
        let dz_scaled = rt.sub(&ds_scaled);
        let dz = w.apply_w_inv(self, &dz_scaled);
        Step {
            dx,
            dy,
            ds,
            dz,
            ds_scaled,
            dz_scaled,
        }
    }
}

struct Step {
    dx: DVector<f64>,
    dy: DVector<f64>,
    ds: ConeVec,
    dz: ConeVec,
    ds_scaled: ConeVec,
    dz_scaled: ConeVec,
}

/// Nesterov-Todd scaling for one second-order cone: `W = η W̄` with the
/// hyperbolic Householder matrix `W̄ = [w₀ w₁ᵀ; w₁ I + w₁w₁ᵀ/(1+w₀)]`.
struct SocScaling {
    eta: f64,
    w: DVector<f64>,
}

impl SocScaling {
    fn identity(dim: usize) -> Self {
        let mut w = DVector::zeros(dim);
        w[0] = 1.0;
        Self { eta: 1.0, w }
    }

    fn new(s: &[f64], z: &[f64]) -> Option<Self> {
        let jnorm2 = |v: &[f64]| v[0] * v[0] - v[1..].iter().map(|t| t * t).sum::<f64>();
        let (ss, zz) = (jnorm2(s), jnorm2(z));
        if !(ss > 0.0 && zz > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
            return None;
        }
        let (sn, zn) = (ss.sqrt(), zz.sqrt());
        let sb: Vec<f64> = s.iter().map(|v| v / sn).collect();
        let zb: Vec<f64> = z.iter().map(|v| v / zn).collect();
        let dot: f64 = sb.iter().zip(&zb).map(|(a, b)| a * b).sum();
        let gamma = ((1.0 + dot) * 0.5).sqrt();
        let mut w = DVector::zeros(s.len());
        w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
        for i in 1..s.len() {
            w[i] = (sb[i] - zb[i]) / (2.0 * gamma);
        }
        Some(Self {
            eta: (ss / zz).sqrt().sqrt(),
            w,
        })
    }

    fn apply_bar(&self, v: &[f64], out: &mut [f64]) {
        let w0 = self.w[0];
        let w1 = self.w.rows(1, self.w.len() - 1);
        let w1v1: f64 = w1.iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
        out[0] = w0 * v[0] + w1v1;
        let coef = v[0] + w1v1 / (1.0 + w0);
        for i in 1..v.len() {
            out[i] = v[i] + coef * self.w[i];
        }
    }

    /// `W v`
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.apply_bar(v, out);
        out.iter_mut().for_each(|o| *o *= self.eta);
    }

    /// `W⁻¹ v = η⁻¹ J W̄ J v`
    fn apply_inv(&self, v: &[f64], out: &mut [f64]) {
        let mut jv = v.to_vec();
        jv[1..].iter_mut().for_each(|t| *t = -*t);
        self.apply_bar(&jv, out);
        out[1..].iter_mut().for_each(|t| *t = -*t);
        out.iter_mut().for_each(|o| *o /= self.eta);
    }

    /// `W⁻² = η⁻² (2 J w wᵀ J − J)`
    fn inv_square(&self) -> DMatrix<f64> {
        let d = self.w.len();
        let mut jw = self.w.clone();
        jw.rows_mut(1, d - 1).neg_mut();
        let mut out = &jw * jw.transpose() * 2.0;
        out[(0, 0)] -= 1.0;
        for i in 1..d {
            out[(i, i)] += 1.0;
        }
        out / (self.eta * self.eta)
    }
}

struct Scaling {
    soc: Vec<SocScaling>,
    #[cfg_attr(not(test), allow(dead_code))]
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda_soc: DVector<f64>,
    lambda_psd: DVector<f64>,
}

impl Scaling {
    fn identity(data: &Prepared) -> Self {
        let m = data.m;
        let mut lambda_soc = DVector::zeros(data.soc_len);
        for c in &data.cones {
            lambda_soc[c.offset] = 1.0;
        }
        Self {
            soc: data.cones.iter().map(|c| SocScaling::identity(c.dim)).collect(),
            r: DMatrix::identity(m, m),
            rinv: DMatrix::identity(m, m),
            lambda_soc,
            lambda_psd: DVector::from_element(m, 1.0),
        }
    }

    fn nesterov_todd(data: &Prepared, s: &ConeVec, z: &ConeVec) -> Option<Self> {
        let mut soc = Vec::with_capacity(data.cones.len());
        let mut lambda_soc = DVector::zeros(data.soc_len);
        for cone in &data.cones {
            let rs = cone.offset..cone.offset + cone.dim;
            let sc = SocScaling::new(&s.soc.as_slice()[rs.clone()], &z.soc.as_slice()[rs.clone()])?;
            sc.apply(&z.soc.as_slice()[rs.clone()], &mut lambda_soc.as_mut_slice()[rs]);
            soc.push(sc);
        }

        // R = L_s V Λ^{-1/2}, where L_zᵀ L_s = U Λ Vᵀ.
        let ls = Cholesky::new(sym(&s.psd))?.l();
        let lz = Cholesky::new(sym(&z.psd))?.l();
        let svd = (lz.transpose() * &ls).svd(false, true);
        let v_t = svd.v_t?;
        let lam = svd.singular_values;
        if lam.iter().any(|&l| !(l > 0.0)) {
            return None;
        }
        let inv_sqrt = DMatrix::from_diagonal(&lam.map(|l| 1.0 / l.sqrt()));
        let sqrt = DMatrix::from_diagonal(&lam.map(f64::sqrt));
        let r = &ls * v_t.transpose() * &inv_sqrt;
        // R⁻¹ = Λ^{1/2} Vᵀ L_s⁻¹
        let ls_inv = ls.clone().solve_lower_triangular(&DMatrix::identity(data.m, data.m))?;
        let rinv = sqrt * v_t * ls_inv;
        Some(Self {
            soc,
            r,
            rinv,
            lambda_soc,
            lambda_psd: lam,
        })
    }

    fn lambda(&self) -> ConeVec {
        ConeVec {
            soc: self.lambda_soc.clone(),
            psd: DMatrix::from_diagonal(&self.lambda_psd),
        }
    }

    fn map_soc(&self, data: &Prepared, v: &ConeVec, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(data.soc_len);
        for (cone, sc) in data.cones.iter().zip(&self.soc) {
            let rs = cone.offset..cone.offset + cone.dim;
            let src = &v.soc.as_slice()[rs.clone()];
            let dst = &mut out.as_mut_slice()[rs];
            if inverse {
                sc.apply_inv(src, dst);
            } else {
                sc.apply(src, dst);
            }
        }
        out
    }

    /// `W⁻ᵀ v`: primal space to scaled space.
    fn apply_w_inv_t(&self, data: &Prepared, v: &ConeVec) -> ConeVec {
        ConeVec {
            soc: self.map_soc(data, v, true),
            psd: sym(&(&self.rinv * &v.psd * self.rinv.transpose())),
        }
    }

    /// `W⁻¹ v`: scaled space to dual space.
    fn apply_w_inv(&self, data: &Prepared, v: &ConeVec) -> ConeVec {
        ConeVec {
            soc: self.map_soc(data, v, true),
            psd: sym(&(self.rinv.transpose() * &v.psd * &self.rinv)),
        }
    }

    #[cfg(test)]
    fn apply_w(&self, data: &Prepared, v: &ConeVec) -> ConeVec {
        ConeVec {
            soc: self.map_soc(data, v, false),
            psd: sym(&(self.r.transpose() * &v.psd * &self.r)),
        }
    }

    /// Jordan product `u ∘ v`.
    fn jordan(&self, data: &Prepared, u: &ConeVec, v: &ConeVec) -> ConeVec {
        let mut soc = DVector::zeros(data.soc_len);
        for cone in &data.cones {
            let (o, d) = (cone.offset, cone.dim);
            let us = u.soc.rows(o, d);
            let vs = v.soc.rows(o, d);
            soc[o] = us.dot(&vs);
            for i in 1..d {
                soc[o + i] = us[0] * vs[i] + vs[0] * us[i];
            }
        }
        let uv = &u.psd * &v.psd;
        ConeVec {
            soc,
            psd: (&uv + uv.transpose()) * 0.5,
        }
    }

    /// Solves `λ ∘ x = w` for `x`, with `λ` the scaled point.
    fn jordan_solve(&self, data: &Prepared, lambda: &ConeVec, w: &ConeVec) -> ConeVec {
        let mut soc = DVector::zeros(data.soc_len);
        for cone in &data.cones {
            let (o, d) = (cone.offset, cone.dim);
            let l = lambda.soc.rows(o, d);
            let ws = w.soc.rows(o, d);
            let l1w1: f64 = (1..d).map(|i| l[i] * ws[i]).sum();
            let l1l1: f64 = (1..d).map(|i| l[i] * l[i]).sum();
            let x0 = (l[0] * ws[0] - l1w1) / (l[0] * l[0] - l1l1);
            soc[o] = x0;
            for i in 1..d {
                soc[o + i] = (ws[i] - l[i] * x0) / l[0];
            }
        }
        let lam = &self.lambda_psd;
        let m = lam.len();
        let psd = DMatrix::from_fn(m, m, |i, j| 2.0 * w.psd[(i, j)] / (lam[i] + lam[j]));
        ConeVec { soc, psd }
    }

    /// Largest `α` with `λ + α d` in the cone (may be infinite).
    fn max_step(&self, data: &Prepared, d: &ConeVec) -> f64 {
        let mut alpha = f64::INFINITY;
        for cone in &data.cones {
            let (o, dim) = (cone.offset, cone.dim);
            let x = self.lambda_soc.rows(o, dim);
            let dv = d.soc.rows(o, dim);
            alpha = alpha.min(soc_max_step(x.as_slice(), dv.as_slice()));
        }
        let m = self.lambda_psd.len();
        let scaled = DMatrix::from_fn(m, m, |i, j| {
            d.psd[(i, j)] / (self.lambda_psd[i] * self.lambda_psd[j]).sqrt()
        });
        let min_eig = SymmetricEigen::new(sym(&scaled)).eigenvalues.min();
        if min_eig < 0.0 {
            alpha = alpha.min(-1.0 / min_eig);
        }
        alpha
    }
}

fn soc_max_step(x: &[f64], d: &[f64]) -> f64 {
    let a = d[0] * d[0] - d[1..].iter().map(|t| t * t).sum::<f64>();
    let b = x[0] * d[0] - x[1..].iter().zip(&d[1..]).map(|(p, q)| p * q).sum::<f64>();
    let c = x[0] * x[0] - x[1..].iter().map(|t| t * t).sum::<f64>();
    // Roots of a α² + 2 b α + c with c > 0.
    if a == 0.0 {
        return if b < 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let q = -(b + b.signum() * disc.sqrt());
    let (r1, r2) = (q / a, c / q);
    if a < 0.0 {
        r1.max(r2)
    } else if b < 0.0 {
        r1.min(r2)
    } else {
        f64::INFINITY
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Factored reduced system `K Δx − AᵀΔy = q`, `A Δx = t` with `K = GᵀW⁻¹W⁻ᵀG`.
struct Kkt {
    #[cfg_attr(not(test), allow(dead_code))]
    k: DMatrix<f64>,
    k_chol: Cholesky<f64, Dyn>,
    k_inv_at: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
}

impl Kkt {
    fn factor(data: &Prepared, w: &Scaling) -> Option<Self> {
        let n = data.n;
        let mut k = DMatrix::zeros(n, n);

        // PSD block: ⟨E_a, V E_b V⟩ with V = R⁻ᵀR⁻¹.
        let v = w.rinv.transpose() * &w.rinv;
        for b in 0..n {
            let (k_, l) = data.slot_pos[b];
            for a in 0..=b {
                let (i, j) = data.slot_pos[a];
                let val = v[(i, k_)] * v[(j, l)] + v[(i, l)] * v[(j, k_)];
                let alpha_a = if i == j { 0.5 } else { 0.5 * SQRT_2 };
                let alpha_b = if k_ == l { 0.5 } else { 0.5 * SQRT_2 };
                let coef = 2.0 * alpha_a * alpha_b;
                k[(a, b)] = val * coef;
            }
        }
        for (cone, sc) in data.cones.iter().zip(&w.soc) {
            let local = cone.g.transpose() * sc.inv_square() * &cone.g;
            for (la, &ca) in cone.cols.iter().enumerate() {
                for (lb, &cb) in cone.cols.iter().enumerate() {
                    if ca <= cb {
                        k[(ca, cb)] += local[(la, lb)];
                    }
                }
            }
        }
        for b in 0..n {
            for a in 0..b {
                k[(b, a)] = k[(a, b)];
            }
        }

        let scale = (0..n).map(|i| k[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let mut reg = 0.0;
        let k_chol = loop {
            let mut kr = k.clone();
            for i in 0..n {
                kr[(i, i)] += reg;
            }
            if let Some(c) = Cholesky::new(kr) {
                break c;
            }
            reg = if reg == 0.0 { scale * 1e-14 } else { reg * 100.0 };
            if reg > scale * 1e-4 {
                return None;
            }
        };

        let p = data.b.len();
        let (k_inv_at, schur) = if p > 0 {
            let kia = k_chol.solve(&data.a.transpose());
            let s = sym(&(&data.a * &kia));
            let sscale = (0..p).map(|i| s[(i, i)]).fold(0.0, f64::max).max(1e-300);
            let mut sreg = 0.0;
            let chol = loop {
                let mut sr = s.clone();
                for i in 0..p {
                    sr[(i, i)] += sreg;
                }
                if let Some(c) = Cholesky::new(sr) {
                    break c;
                }
                sreg = if sreg == 0.0 { sscale * 1e-14 } else { sreg * 100.0 };
                if sreg > sscale * 1e-4 {
                    return None;
                }
            };
            (kia, Some(chol))
        } else {
            (DMatrix::zeros(n, 0), None)
        };
        Some(Self {
            k,
            k_chol,
            k_inv_at,
            schur,
        })
    }

    fn solve(&self, data: &Prepared, q: &DVector<f64>, t: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let kq = self.k_chol.solve(q);
        match &self.schur {
            Some(s) => {
                let dy = s.solve(&(t - &data.a * &kq));
                let dx = kq + &self.k_inv_at * &dy;
                (dx, dy)
            }
            None => (kq, DVector::zeros(0)),
        }
    }

    /// Iterative refinement, with residuals taken through the scaling
    /// operators rather than the formed `K` so the dual residual does not
    /// drift once `K` becomes ill-conditioned.
    fn solve_refined(
        &self,
        data: &Prepared,
        w: &Scaling,
        q: &DVector<f64>,
        t: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy) = self.solve(data, q, t);
        for _ in 0..REFINEMENT_STEPS {
            let kx = data.gt_mul(&w.apply_w_inv(data, &w.apply_w_inv_t(data, &data.g_mul(&dx))));
            let rq = q - (kx - data.a.transpose() * &dy);
            let rt = t - &data.a * &dx;
            let (cx, cy) = self.solve(data, &rq, &rt);
            dx += cx;
            dy += cy;
        }
        (dx, dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{Equality, LinearForm, SocRow};
    use approx::assert_abs_diff_eq;

    #[test]
    fn soc_scaling_maps_both_points_to_lambda() {
        let s = [3.0, 1.0, -1.0, 0.5];
        let z = [2.0, -0.5, 0.3, 1.2];
        let w = SocScaling::new(&s, &z).unwrap();
        let mut wz = [0.0; 4];
        let mut winv_s = [0.0; 4];
        w.apply(&z, &mut wz);
        w.apply_inv(&s, &mut winv_s);
        for i in 0..4 {
            assert_abs_diff_eq!(wz[i], winv_s[i], epsilon = 1e-12);
        }
        let mut back = [0.0; 4];
        w.apply_inv(&wz, &mut back);
        for i in 0..4 {
            assert_abs_diff_eq!(back[i], z[i], epsilon = 1e-12);
        }
        // W⁻² applied to s equals z mapped through W⁻¹W⁻¹ explicitly.
        let phi = w.inv_square() * DVector::from_column_slice(&s);
        let mut t1 = [0.0; 4];
        let mut t2 = [0.0; 4];
        w.apply_inv(&s, &mut t1);
        w.apply_inv(&t1, &mut t2);
        for i in 0..4 {
            assert_abs_diff_eq!(phi[i], t2[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn psd_scaling_maps_both_points_to_lambda() {
        let mut p = ConicProblem::new(DMatrix::identity(3, 3));
        p.socs.push(SocRow {
            rhs: LinearForm::entry(0, 0),
            selector: vec![LinearForm::entry(0, 1)],
        });
        let data = Prepared::new(&p);
        let s = ConeVec {
            soc: DVector::from_column_slice(&[2.0, 0.5]),
            psd: DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.2, 1.0, 3.0, -0.5, 0.2, -0.5, 2.0]),
        };
        let z = ConeVec {
            soc: DVector::from_column_slice(&[1.0, -0.3]),
            psd: DMatrix::from_row_slice(3, 3, &[1.0, -0.2, 0.1, -0.2, 2.0, 0.3, 0.1, 0.3, 0.5]),
        };
        let w = Scaling::nesterov_todd(&data, &s, &z).unwrap();
        let lam = w.lambda();
        let a = w.apply_w_inv_t(&data, &s);
        let b = w.apply_w(&data, &z);
        assert_abs_diff_eq!(a.psd, lam.psd, epsilon = 1e-10);
        assert_abs_diff_eq!(b.psd, lam.psd, epsilon = 1e-10);
        assert_abs_diff_eq!(a.soc, lam.soc, epsilon = 1e-12);
        assert_abs_diff_eq!(b.soc, lam.soc, epsilon = 1e-12);
        let back = w.apply_w_inv(&data, &b);
        assert_abs_diff_eq!(back.psd, z.psd, epsilon = 1e-10);
    }

    #[test]
    fn jordan_solve_inverts_product() {
        let mut p = ConicProblem::new(DMatrix::identity(2, 2));
        p.socs.push(SocRow {
            rhs: LinearForm::entry(0, 0),
            selector: vec![LinearForm::entry(0, 1), LinearForm::entry(1, 1)],
        });
        let data = Prepared::new(&p);
        let w = Scaling {
            soc: vec![SocScaling::identity(3)],
            r: DMatrix::identity(2, 2),
            rinv: DMatrix::identity(2, 2),
            lambda_soc: DVector::from_column_slice(&[2.0, 0.3, -0.4]),
            lambda_psd: DVector::from_column_slice(&[1.5, 0.25]),
        };
        let lam = w.lambda();
        let x = ConeVec {
            soc: DVector::from_column_slice(&[0.7, -1.1, 0.2]),
            psd: DMatrix::from_row_slice(2, 2, &[0.3, -0.8, -0.8, 1.2]),
        };
        let prod = w.jordan(&data, &lam, &x);
        let back = w.jordan_solve(&data, &lam, &prod);
        assert_abs_diff_eq!(back.soc, x.soc, epsilon = 1e-12);
        assert_abs_diff_eq!(back.psd, x.psd, epsilon = 1e-12);
    }

    #[test]
    fn soc_step_to_boundary() {
        let x = [1.0, 0.0, 0.0];
        assert_abs_diff_eq!(soc_max_step(&x, &[0.0, 1.0, 0.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(soc_max_step(&x, &[-1.0, 0.0, 0.0]), 1.0, epsilon = 1e-12);
        assert!(soc_max_step(&x, &[1.0, 0.5, 0.0]).is_infinite());
        let a = soc_max_step(&[2.0, 1.0, 0.0], &[-1.0, 1.0, 0.0]);
        // 2 − a = 1 + a
        assert_abs_diff_eq!(a, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn identity_scaling_kkt_is_gram() {
        let mut p = ConicProblem::new(DMatrix::identity(3, 3));
        p.equalities.push(Equality {
            a: DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0, 0.0])),
            b: 1.0,
        });
        let data = Prepared::new(&p);
        let kkt = Kkt::factor(&data, &Scaling::identity(&data)).unwrap();
        assert_abs_diff_eq!(kkt.k, DMatrix::identity(6, 6), epsilon = 1e-14);
    }
}
