//! Primal-dual interior-point method on the homogeneous self-dual embedding.
//!
//! The program `min cᵀx, Ax = b, x ∈ K` with `K` a product of nonnegative
//! orthants and PSD cones (in svec coordinates) is embedded as
//!
//! ```text
//!   A x − b τ = 0,   Aᵀy + s − c τ = 0,   cᵀx − bᵀy + κ = 0,
//! ```
//!
//! and solved with Nesterov-Todd scaling and Mehrotra predictor-corrector
//! steps. The reduced KKT system `[−H Aᵀ; A 0]` is factored densely with
//! Bunch-Kaufman pivoting and every solve is refined iteratively.

use super::{BlockKind, BlockSdp, BlockValue, SdpSolution, Sense, SolveOutcome, SolveStatus};
use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, norm2, svd_square, sym_eig, LdlFactor, Mat};
use crate::scalar::{Real, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stopping threshold on the relative complementarity gap.
    pub gap: f64,
    /// Additional threshold on the absolute gap. No limit by default.
    pub abs_gap: f64,
    /// Stopping threshold on the relative equality residuals.
    pub feasibility: f64,
    pub max_iter: usize,
    /// Step lengths below this are reported as numerical trouble.
    pub min_step: f64,
    pub refinement_passes: usize,
    /// Arithmetic used by [`solve_f64`].
    pub precision: Precision,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    Double,
    DoubleDouble,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap: 1e-8,
            abs_gap: f64::MAX,
            feasibility: 1e-8,
            max_iter: 200,
            min_step: 1e-14,
            refinement_passes: 2,
            precision: Precision::Double,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum SegKind {
    Lin,
    Psd,
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    kind: SegKind,
    /// Block size (vector length for Lin, matrix order for Psd).
    size: usize,
    offset: usize,
    len: usize,
}

pub(crate) fn svec_len(k: usize) -> usize {
    k * (k + 1) / 2
}

pub(crate) fn svec_index(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * k - i * i.saturating_sub(1) / 2 + (j - i)
}

fn smat<S: Real>(v: &[S], k: usize) -> Mat<S> {
    let r2 = S::lit(2.0).sqrt();
    let mut m = Mat::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in i..k {
            let val = if i == j { v[idx] } else { v[idx] / r2 };
            m[(i, j)] = val;
            m[(j, i)] = val;
            idx += 1;
        }
    }
    m
}

fn svec<S: Real>(m: &Mat<S>) -> Vec<S> {
    let k = m.rows;
    let r2 = S::lit(2.0).sqrt();
    let half = S::lit(0.5);
    let mut v = Vec::with_capacity(svec_len(k));
    for i in 0..k {
        for j in i..k {
            if i == j {
                v.push(m[(i, i)]);
            } else {
                v.push((m[(i, j)] + m[(j, i)]) * half * r2);
            }
        }
    }
    v
}

struct Layout {
    segments: Vec<Segment>,
    n: usize,
    /// Barrier degree.
    nu: usize,
}

fn layout<S: Real>(sdp: &BlockSdp<S>) -> Layout {
    let mut segments = Vec::new();
    let mut offset = 0;
    let mut nu = 0;
    for b in &sdp.blocks {
        let (kind, len) = match b.kind {
            BlockKind::NonnegDiag => (SegKind::Lin, b.size),
            BlockKind::Psd => (SegKind::Psd, svec_len(b.size)),
        };
        segments.push(Segment {
            kind,
            size: b.size,
            offset,
            len,
        });
        offset += len;
        nu += b.size;
    }
    Layout {
        segments,
        n: offset,
        nu,
    }
}

fn column_of<S: Real>(lay: &Layout, block: usize, i: usize, j: usize, value: S) -> (usize, S) {
    let seg = lay.segments[block];
    match seg.kind {
        SegKind::Lin => (seg.offset + i, value),
        SegKind::Psd => {
            if i == j {
                (seg.offset + svec_index(seg.size, i, j), value)
            } else {
                (
                    seg.offset + svec_index(seg.size, i, j),
                    value * S::lit(2.0).sqrt(),
                )
            }
        }
    }
}

enum SegScale<S> {
    Lin { w: Vec<S>, lam: Vec<S> },
    Psd { r: Mat<S>, rti: Mat<S>, lam: Vec<S> },
}

#[derive(Clone)]
enum Scaled<S> {
    Lin(Vec<S>),
    Psd(Mat<S>),
}

fn compute_scaling<S: Real>(lay: &Layout, x: &[S], s: &[S]) -> Option<Vec<SegScale<S>>> {
    let mut out = Vec::with_capacity(lay.segments.len());
    for seg in &lay.segments {
        let xs = &x[seg.offset..seg.offset + seg.len];
        let ss = &s[seg.offset..seg.offset + seg.len];
        match seg.kind {
            SegKind::Lin => {
                let mut w = Vec::with_capacity(seg.len);
                let mut lam = Vec::with_capacity(seg.len);
                for (xi, si) in xs.iter().zip(ss) {
                    if !(*xi > S::zero() && *si > S::zero()) {
                        return None;
                    }
                    w.push((*xi / *si).sqrt());
                    lam.push((*xi * *si).sqrt());
                }
                out.push(SegScale::Lin { w, lam });
            }
            SegKind::Psd => {
                let k = seg.size;
                let xm = smat(xs, k);
                let sm = smat(ss, k);
                let lx = cholesky(&xm)?;
                let ls = cholesky(&sm)?;
                let m = ls.transpose().matmul(&lx);
                let (u, sv, v) = svd_square(&m);
                if sv.iter().any(|l| !(*l > S::zero())) {
                    return None;
                }
                let inv_sqrt: Vec<S> = sv.iter().map(|l| S::one() / l.sqrt()).collect();
                let d = Mat::diag(&inv_sqrt);
                let r = lx.matmul(&v).matmul(&d);
                let rti = ls.matmul(&u).matmul(&d);
                out.push(SegScale::Psd { r, rti, lam: sv });
            }
        }
    }
    Some(out)
}

fn scale_x<S: Real>(sc: &[SegScale<S>], lay: &Layout, dx: &[S]) -> Vec<Scaled<S>> {
    sc.iter()
        .zip(&lay.segments)
        .map(|(s, seg)| {
            let part = &dx[seg.offset..seg.offset + seg.len];
            match s {
                SegScale::Lin { w, .. } => {
                    Scaled::Lin(part.iter().zip(w).map(|(a, b)| *a / *b).collect())
                }
                SegScale::Psd { rti, .. } => {
                    let m = smat(part, seg.size);
                    Scaled::Psd(rti.transpose().matmul(&m).matmul(rti))
                }
            }
        })
        .collect()
}

fn scale_s<S: Real>(sc: &[SegScale<S>], lay: &Layout, ds: &[S]) -> Vec<Scaled<S>> {
    sc.iter()
        .zip(&lay.segments)
        .map(|(s, seg)| {
            let part = &ds[seg.offset..seg.offset + seg.len];
            match s {
                SegScale::Lin { w, .. } => {
                    Scaled::Lin(part.iter().zip(w).map(|(a, b)| *a * *b).collect())
                }
                SegScale::Psd { r, .. } => {
                    let m = smat(part, seg.size);
                    Scaled::Psd(r.transpose().matmul(&m).matmul(r))
                }
            }
        })
        .collect()
}

/// Largest step `α` keeping `λ + α d` in the cone (capped at a large value).
fn max_step<S: Real>(sc: &[SegScale<S>], d: &[Scaled<S>]) -> S {
    let big = S::lit(1e30);
    let mut alpha = big;
    for (s, di) in sc.iter().zip(d) {
        match (s, di) {
            (SegScale::Lin { lam, .. }, Scaled::Lin(v)) => {
                for (l, dv) in lam.iter().zip(v) {
                    if !dv.is_finite() {
                        return S::zero();
                    }
                    if *dv < S::zero() {
                        alpha = alpha.min(-*l / *dv);
                    }
                }
            }
            (SegScale::Psd { lam, .. }, Scaled::Psd(m)) => {
                let k = lam.len();
                let mut t = Mat::zeros(k, k);
                for i in 0..k {
                    for j in 0..k {
                        t[(i, j)] = m[(i, j)] / (lam[i] * lam[j]).sqrt();
                    }
                }
                if t.data.iter().any(|v| !v.is_finite()) {
                    return S::zero();
                }
                let (ev, _) = sym_eig(&t);
                if ev[0] < S::zero() {
                    alpha = alpha.min(-S::one() / ev[0]);
                }
            }
            _ => unreachable!(),
        }
    }
    alpha
}

/// The right-hand side `σμe − λ∘λ − corr` in scaled coordinates.
fn comp_target<S: Real>(
    sc: &[SegScale<S>],
    sigma_mu: S,
    corr: Option<(&[Scaled<S>], &[Scaled<S>])>,
) -> Vec<Scaled<S>> {
    let half = S::lit(0.5);
    sc.iter()
        .enumerate()
        .map(|(idx, s)| match s {
            SegScale::Lin { lam, .. } => {
                let mut v: Vec<S> = lam.iter().map(|l| sigma_mu - *l * *l).collect();
                if let Some((dx, ds)) = corr {
                    if let (Scaled::Lin(a), Scaled::Lin(b)) = (&dx[idx], &ds[idx]) {
                        for i in 0..v.len() {
                            v[i] = v[i] - a[i] * b[i];
                        }
                    }
                }
                Scaled::Lin(v)
            }
            SegScale::Psd { lam, .. } => {
                let k = lam.len();
                let mut m = Mat::zeros(k, k);
                for i in 0..k {
                    m[(i, i)] = sigma_mu - lam[i] * lam[i];
                }
                if let Some((dx, ds)) = corr {
                    if let (Scaled::Psd(a), Scaled::Psd(b)) = (&dx[idx], &ds[idx]) {
                        let p = a.matmul(b).add(&b.matmul(a)).scale(half);
                        m = m.sub(&p);
                    }
                }
                Scaled::Psd(m)
            }
        })
        .collect()
}

/// Solves `λ ∘ Q = R` and maps `Q` back to the unscaled `ds` contribution.
fn comp_rhs_unscaled<S: Real>(sc: &[SegScale<S>], lay: &Layout, r: &[Scaled<S>]) -> Vec<S> {
    let mut out = vec![S::zero(); lay.n];
    let two = S::lit(2.0);
    for ((s, seg), ri) in sc.iter().zip(&lay.segments).zip(r) {
        match (s, ri) {
            (SegScale::Lin { w, lam }, Scaled::Lin(v)) => {
                for i in 0..seg.len {
                    out[seg.offset + i] = v[i] / lam[i] / w[i];
                }
            }
            (SegScale::Psd { rti, lam, .. }, Scaled::Psd(m)) => {
                let k = lam.len();
                let mut q = Mat::zeros(k, k);
                for i in 0..k {
                    for j in 0..k {
                        q[(i, j)] = two * m[(i, j)] / (lam[i] + lam[j]);
                    }
                }
                let un = rti.matmul(&q).matmul(&rti.transpose());
                let v = svec(&un);
                out[seg.offset..seg.offset + seg.len].copy_from_slice(&v);
            }
            _ => unreachable!(),
        }
    }
    out
}

fn hessian_blocks<S: Real>(sc: &[SegScale<S>], lay: &Layout) -> Vec<Mat<S>> {
    sc.iter()
        .zip(&lay.segments)
        .map(|(s, seg)| match s {
            SegScale::Lin { w, .. } => Mat::diag(
                &w.iter()
                    .map(|wi| S::one() / (*wi * *wi))
                    .collect::<Vec<_>>(),
            ),
            SegScale::Psd { rti, .. } => {
                let h = rti.matmul(&rti.transpose());
                let len = seg.len;
                let mut out = Mat::zeros(len, len);
                let mut e = vec![S::zero(); len];
                for col in 0..len {
                    e.iter_mut().for_each(|v| *v = S::zero());
                    e[col] = S::one();
                    let em = smat(&e, seg.size);
                    let img = svec(&h.matmul(&em).matmul(&h));
                    for row in 0..len {
                        out[(row, col)] = img[row];
                    }
                }
                out.symmetrize()
            }
        })
        .collect()
}

fn apply_hessian<S: Real>(hb: &[Mat<S>], lay: &Layout, v: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); lay.n];
    for (h, seg) in hb.iter().zip(&lay.segments) {
        let part = h.matvec(&v[seg.offset..seg.offset + seg.len]);
        out[seg.offset..seg.offset + seg.len].copy_from_slice(&part);
    }
    out
}

fn identity_point<S: Real>(lay: &Layout) -> Vec<S> {
    let mut v = vec![S::zero(); lay.n];
    for seg in &lay.segments {
        match seg.kind {
            SegKind::Lin => v[seg.offset..seg.offset + seg.len]
                .iter_mut()
                .for_each(|x| *x = S::one()),
            SegKind::Psd => {
                for i in 0..seg.size {
                    v[seg.offset + svec_index(seg.size, i, i)] = S::one();
                }
            }
        }
    }
    v
}

fn to_blocks<S: Real>(lay: &Layout, v: &[S]) -> Vec<BlockValue<S>> {
    lay.segments
        .iter()
        .map(|seg| {
            let part = &v[seg.offset..seg.offset + seg.len];
            match seg.kind {
                SegKind::Lin => BlockValue::Diag(part.to_vec()),
                SegKind::Psd => BlockValue::Matrix(smat(part, seg.size)),
            }
        })
        .collect()
}

struct Direction<S> {
    dx: Vec<S>,
    dy: Vec<S>,
    ds: Vec<S>,
    dtau: S,
    dkappa: S,
}

/// Solves a program. Validation problems are reported as errors; numerical
/// outcomes are reported through [`SolveOutcome::status`].
/// Solves an `f64` program in the arithmetic chosen by `opts.precision`.
pub fn solve_f64(sdp: &BlockSdp<f64>, opts: &SolveOptions) -> Result<SdpSolution<f64>> {
    match opts.precision {
        Precision::Double => solve(sdp, opts),
        Precision::DoubleDouble => {
            let sol = solve(&sdp.map(Dd::from_f64), opts)?;
            Ok(sol.map(|v| v.to_f64_lossy()))
        }
    }
}

pub fn solve<S: Real>(sdp: &BlockSdp<S>, opts: &SolveOptions) -> Result<SdpSolution<S>> {
    sdp.validate().map_err(Error::Invalid)?;
    let lay = layout(sdp);
    let n = lay.n;
    let sign = match sdp.sense {
        Sense::Minimize => S::one(),
        Sense::Maximize => -S::one(),
    };
    let mut c = vec![S::zero(); n];
    for e in &sdp.objective {
        let (col, v) = column_of(&lay, e.block, e.i, e.j, e.value);
        c[col] = c[col] + sign * v;
    }
    // Assemble rows, dropping empty ones and flagging inconsistent empty rows.
    let mut rows: Vec<Vec<S>> = Vec::new();
    let mut b = Vec::new();
    let mut kept = Vec::new();
    let mut trivially_infeasible = false;
    for (k, eq) in sdp.equalities.iter().enumerate() {
        let mut row = vec![S::zero(); n];
        for e in &eq.entries {
            let (col, v) = column_of(&lay, e.block, e.i, e.j, e.value);
            row[col] = row[col] + v;
        }
        if row.iter().all(|v| *v == S::zero()) {
            if eq.rhs != S::zero() {
                trivially_infeasible = true;
            }
            continue;
        }
        rows.push(row);
        b.push(eq.rhs);
        kept.push(k);
    }
    let p = rows.len();
    let mut a = Mat::zeros(p, n);
    for (i, row) in rows.iter().enumerate() {
        a.data[i * n..(i + 1) * n].copy_from_slice(row);
    }
    let at = a.transpose();
    let nb = norm2(&b);
    let nc = norm2(&c);

    let zero_outcome = |status, iterations| SolveOutcome {
        status,
        primal_objective: 0.0,
        dual_objective: 0.0,
        gap: 0.0,
        relative_gap: 0.0,
        iterations,
        primal_residual: 0.0,
        dual_residual: 0.0,
    };

    if trivially_infeasible {
        let x = vec![S::zero(); n];
        return Ok(SdpSolution {
            outcome: zero_outcome(SolveStatus::Infeasible, 0),
            primal: to_blocks(&lay, &x),
            slack: to_blocks(&lay, &x),
            multipliers: vec![S::zero(); sdp.equalities.len()],
        });
    }
    if n == 0 {
        return Ok(SdpSolution {
            outcome: zero_outcome(SolveStatus::Optimal, 0),
            primal: to_blocks(&lay, &[]),
            slack: to_blocks(&lay, &[]),
            multipliers: vec![S::zero(); sdp.equalities.len()],
        });
    }

    let mut x = identity_point::<S>(&lay);
    let mut s = identity_point::<S>(&lay);
    let mut y = vec![S::zero(); p];
    let mut tau = S::one();
    let mut kappa = S::one();
    let nu1 = S::from_usize(lay.nu + 1).unwrap();
    let feas = S::lit(opts.feasibility);
    let gap_tol = S::lit(opts.gap);

    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut certificate: Option<SolveStatus> = None;
    // best primal-feasible iterate, returned when the method stops short
    let mut best: Option<(S, Vec<S>, Vec<S>, Vec<S>, S)> = None;

    for it in 0..=opts.max_iter {
        iterations = it;
        // Residuals of the embedding.
        let ax = a.matvec(&x);
        let aty = at.matvec(&y);
        let rp: Vec<S> = (0..p).map(|i| b[i] * tau - ax[i]).collect();
        let rd: Vec<S> = (0..n).map(|i| c[i] * tau - aty[i] - s[i]).collect();
        let ctx = dot(&c, &x);
        let bty = dot(&b, &y);
        let rg = bty - ctx - kappa;
        let xs = dot(&x, &s);
        let mu = (xs + tau * kappa) / nu1;

        let pres = norm2(&rp) / tau / (S::one() + nb);
        let dres = norm2(&rd) / tau / (S::one() + nc);
        let pcost = ctx / tau;
        let gap = xs / (tau * tau);
        let rel_gap = gap / (S::one() + pcost.abs());
        if pres <= feas && dres <= feas && rel_gap <= gap_tol && gap.to_f64_lossy() <= opts.abs_gap
        {
            status = SolveStatus::Optimal;
            break;
        }
        let merit = if pres <= feas {
            let abs_excess = S::lit((gap.to_f64_lossy() / opts.abs_gap).min(f64::MAX));
            (dres / feas).max(rel_gap / gap_tol).max(abs_excess)
        } else {
            S::infinity()
        };
        if merit.is_finite() && best.as_ref().map_or(true, |b| merit < b.0) {
            best = Some((merit, x.clone(), s.clone(), y.clone(), tau));
        }
        if bty > S::zero() {
            let res: Vec<S> = (0..n).map(|i| aty[i] + s[i]).collect();
            if norm2(&res) / bty <= feas {
                certificate = Some(SolveStatus::Infeasible);
                status = SolveStatus::Infeasible;
                break;
            }
        }
        if ctx < S::zero() {
            if norm2(&ax) / (-ctx) <= feas {
                certificate = Some(SolveStatus::Unbounded);
                status = SolveStatus::Unbounded;
                break;
            }
        }
        if it == opts.max_iter {
            status = SolveStatus::MaxIter;
            break;
        }

        let sc = match compute_scaling(&lay, &x, &s) {
            Some(sc) => sc,
            None => {
                status = SolveStatus::NumericalTrouble;
                break;
            }
        };
        let hb = hessian_blocks(&sc, &lay);
        let dim = n + p;
        let mut kkt = Mat::zeros(dim, dim);
        for (h, seg) in hb.iter().zip(&lay.segments) {
            for i in 0..seg.len {
                for j in 0..seg.len {
                    kkt[(seg.offset + i, seg.offset + j)] = -h[(i, j)];
                }
            }
        }
        for i in 0..p {
            for j in 0..n {
                let v = a[(i, j)];
                kkt[(n + i, j)] = v;
                kkt[(j, n + i)] = v;
            }
        }
        let fact = match LdlFactor::new(&kkt) {
            Ok(f) => f,
            Err(_) => {
                status = SolveStatus::NumericalTrouble;
                break;
            }
        };
        let ksolve = |rhs: &[S]| fact.solve_refined(&kkt, rhs, opts.refinement_passes);
        let mut rhs1 = c.clone();
        rhs1.extend_from_slice(&b);
        let z1 = ksolve(&rhs1);
        let (u1, v1) = z1.split_at(n);
        let denom = dot(&c, u1) - dot(&b, v1) - kappa / tau;

        let direction = |eta: S, target: &[Scaled<S>], rtau: S| -> Direction<S> {
            let q = comp_rhs_unscaled(&sc, &lay, target);
            let mut rhs: Vec<S> = (0..n).map(|i| eta * rd[i] - q[i]).collect();
            rhs.extend((0..p).map(|i| eta * rp[i]));
            let z2 = ksolve(&rhs);
            let (u2, v2) = z2.split_at(n);
            let dtau = (eta * rg - dot(&c, u2) + dot(&b, v2) - rtau / tau) / denom;
            let dx: Vec<S> = (0..n).map(|i| u2[i] + dtau * u1[i]).collect();
            let dy: Vec<S> = (0..p).map(|i| v2[i] + dtau * v1[i]).collect();
            let hdx = apply_hessian(&hb, &lay, &dx);
            let ds: Vec<S> = (0..n).map(|i| q[i] - hdx[i]).collect();
            let dkappa = (rtau - kappa * dtau) / tau;
            Direction {
                dx,
                dy,
                ds,
                dtau,
                dkappa,
            }
        };
        let step_len = |d: &Direction<S>| -> (S, Vec<Scaled<S>>, Vec<Scaled<S>>) {
            let dxs = scale_x(&sc, &lay, &d.dx);
            let dss = scale_s(&sc, &lay, &d.ds);
            let mut amax = max_step(&sc, &dxs).min(max_step(&sc, &dss));
            if d.dtau < S::zero() {
                amax = amax.min(-tau / d.dtau);
            }
            if d.dkappa < S::zero() {
                amax = amax.min(-kappa / d.dkappa);
            }
            (amax, dxs, dss)
        };

        let target_aff = comp_target(&sc, S::zero(), None);
        let aff = direction(S::one(), &target_aff, -tau * kappa);
        let (amax_aff, dxs_aff, dss_aff) = step_len(&aff);
        let alpha_aff = amax_aff.min(S::one());
        let sigma = {
            let t = S::one() - alpha_aff;
            (t * t * t).max(S::zero()).min(S::one())
        };
        let target = comp_target(&sc, sigma * mu, Some((&dxs_aff, &dss_aff)));
        let rtau = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
        let dir = direction(S::one() - sigma, &target, rtau);
        let (amax, _, _) = step_len(&dir);
        let alpha = (S::lit(0.99) * amax).min(S::one());
        if !(alpha >= S::lit(opts.min_step)) {
            status = SolveStatus::NumericalTrouble;
            break;
        }
        for i in 0..n {
            x[i] = x[i] + alpha * dir.dx[i];
            s[i] = s[i] + alpha * dir.ds[i];
        }
        for i in 0..p {
            y[i] = y[i] + alpha * dir.dy[i];
        }
        tau = tau + alpha * dir.dtau;
        kappa = kappa + alpha * dir.dkappa;
        if !(tau > S::zero()) || !(kappa > S::zero()) {
            status = SolveStatus::NumericalTrouble;
            break;
        }
    }

    let (xo, so, yo, scale) = match certificate {
        Some(SolveStatus::Infeasible) => {
            let bty = dot(&b, &y);
            (vec![S::zero(); n], s.clone(), y.clone(), S::one() / bty)
        }
        Some(_) => {
            let ctx = dot(&c, &x);
            (
                x.clone(),
                vec![S::zero(); n],
                vec![S::zero(); p],
                -S::one() / ctx,
            )
        }
        None => match best {
            Some((_, bx, bs, by, btau)) if status != SolveStatus::Optimal => {
                (bx, bs, by, S::one() / btau)
            }
            _ => (x.clone(), s.clone(), y.clone(), S::one() / tau),
        },
    };
    let xo: Vec<S> = xo.iter().map(|v| *v * scale).collect();
    let so: Vec<S> = so.iter().map(|v| *v * scale).collect();
    let yo: Vec<S> = yo.iter().map(|v| *v * scale).collect();

    let ax = a.matvec(&xo);
    let aty = at.matvec(&yo);
    let pres: S = norm2(&(0..p).map(|i| ax[i] - b[i]).collect::<Vec<_>>()) / (S::one() + nb);
    let dres: S =
        norm2(&(0..n).map(|i| aty[i] + so[i] - c[i]).collect::<Vec<_>>()) / (S::one() + nc);
    let pobj = dot(&c, &xo) * sign;
    let dobj = dot(&b, &yo) * sign;
    let gap = dot(&xo, &so);
    let mut multipliers = vec![S::zero(); sdp.equalities.len()];
    for (i, k) in kept.iter().enumerate() {
        multipliers[*k] = yo[i] * sign;
    }
    let outcome = SolveOutcome {
        status,
        primal_objective: pobj.to_f64_lossy(),
        dual_objective: dobj.to_f64_lossy(),
        gap: gap.to_f64_lossy(),
        relative_gap: (gap / (S::one() + pobj.abs())).to_f64_lossy(),
        iterations,
        primal_residual: pres.to_f64_lossy(),
        dual_residual: dres.to_f64_lossy(),
    };
    Ok(SdpSolution {
        outcome,
        primal: to_blocks(&lay, &xo),
        slack: to_blocks(&lay, &so),
        multipliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::LinExpr;

    #[test]
    fn svec_index_is_row_major_upper() {
        let k = 3;
        let mut expected = 0;
        for i in 0..k {
            for j in i..k {
                assert_eq!(svec_index(k, i, j), expected);
                expected += 1;
            }
        }
    }

    #[test]
    fn two_by_two_lmi() {
        // minimize x s.t. [[x,1],[1,x]] ⪰ 0
        let mut sdp = BlockSdp::<f64>::new(Sense::Minimize);
        let x = sdp.scalar("x");
        let m = sdp.psd("M", 2);
        sdp.set_objective(LinExpr::new().scalar(x, 1.0));
        sdp.constrain(
            "m00",
            LinExpr::new().matrix_entry(m, 0, 0, 1.0).scalar(x, -1.0),
            0.0,
        );
        sdp.constrain(
            "m11",
            LinExpr::new().matrix_entry(m, 1, 1, 1.0).scalar(x, -1.0),
            0.0,
        );
        sdp.constrain("m01", LinExpr::new().matrix_entry(m, 0, 1, 1.0), 1.0);
        let sol = solve(&sdp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.outcome.status, SolveStatus::Optimal);
        assert!((sol.scalar(x) - 1.0).abs() < 1e-7, "{}", sol.scalar(x));
        assert!(sol.outcome.relative_gap <= 1e-8);
    }

    #[test]
    fn feasibility_problem_with_identity() {
        let mut sdp = BlockSdp::<f64>::new(Sense::Maximize);
        let l = sdp.psd("L", 3);
        for i in 0..3 {
            sdp.constrain(
                &format!("d{i}"),
                LinExpr::new().matrix_entry(l, i, i, 1.0),
                1.0,
            );
        }
        let sol = solve(&sdp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.outcome.status, SolveStatus::Optimal);
        assert!(sol.outcome.gap.abs() < 1e-8);
    }

    #[test]
    fn one_equals_zero_is_infeasible() {
        let mut sdp = BlockSdp::<f64>::new(Sense::Minimize);
        sdp.scalar("x");
        sdp.constrain("bad", LinExpr::new(), 1.0);
        let sol = solve(&sdp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.outcome.status, SolveStatus::Infeasible);
    }

    #[test]
    fn detects_infeasible_lp() {
        // x + y = -1 with x, y ≥ 0
        let mut sdp = BlockSdp::<f64>::new(Sense::Minimize);
        let x = sdp.scalar("x");
        let y = sdp.scalar("y");
        sdp.constrain("sum", LinExpr::new().scalar(x, 1.0).scalar(y, 1.0), -1.0);
        let sol = solve(&sdp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.outcome.status, SolveStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded_lp() {
        // minimize -x with x - y = 0
        let mut sdp = BlockSdp::<f64>::new(Sense::Minimize);
        let x = sdp.scalar("x");
        let y = sdp.scalar("y");
        sdp.set_objective(LinExpr::new().scalar(x, -1.0));
        sdp.constrain("eq", LinExpr::new().scalar(x, 1.0).scalar(y, -1.0), 0.0);
        let sol = solve(&sdp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.outcome.status, SolveStatus::Unbounded);
    }

    #[test]
    fn max_eigenvalue_via_trace_constraint() {
        // maximize ⟨C, X⟩ s.t. tr X = 1, X ⪰ 0 gives λ_max(C)
        let c: Mat<f64> = Mat::from_rows(&[
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ]);
        let mut sdp = BlockSdp::<f64>::new(Sense::Maximize);
        let x = sdp.psd("X", 3);
        sdp.set_objective(LinExpr::new().inner(x, &c));
        sdp.constrain("tr", LinExpr::new().inner(x, &Mat::identity(3)), 1.0);
        let sol = solve(&sdp, &SolveOptions::default()).unwrap();
        let (ev, _) = sym_eig(&c);
        assert_eq!(sol.outcome.status, SolveStatus::Optimal);
        assert!((sol.outcome.primal_objective - ev[2]).abs() < 1e-7);
    }
}
