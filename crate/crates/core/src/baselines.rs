//! Local optimization of the anchored cost over products of unit spheres.
//!
//! Each iteration solves a Gauss-Newton system in the tangent space of the
//! current quaternions (basis `q * i, q * j, q * k`), including the sphere's
//! curvature term `-(q' grad) I`, and maps the step back by renormalizing each
//! quaternion. An Armijo backtracking search (initial step 1, shrink 0.5,
//! sufficient decrease 1e-4) keeps the cost non-increasing. When the reduced
//! Hessian is not positive definite a growing multiple of the identity is
//! added until it is.

use nalgebra::{DMatrix, DVector, Vector4};
use rayon::prelude::*;
use serde::Serialize;

use crate::polycost::QuaternionCost;
use crate::quat::{multiply, random_rotation, UnitQuaternion};
use crate::rng::seeded;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOptions {
    pub max_iter: usize,
    /// Bound on the norm of the Riemannian gradient.
    pub grad_tol: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalResult {
    /// One quaternion per vertex, `quaternions[0]` the identity.
    pub quaternions: Vec<UnitQuaternion>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

/// Tangent basis `q * (0, e_k)` of the sphere at `q`, as columns.
fn tangent_basis(q: &Vector4<f64>) -> [Vector4<f64>; 3] {
    let q = UnitQuaternion::from_raw(*q);
    let units = [
        UnitQuaternion::from_raw(Vector4::new(0.0, 1.0, 0.0, 0.0)),
        UnitQuaternion::from_raw(Vector4::new(0.0, 0.0, 1.0, 0.0)),
        UnitQuaternion::from_raw(Vector4::new(0.0, 0.0, 0.0, 1.0)),
    ];
    units.map(|u| multiply(&q, &u).as_vector())
}

fn retract(z: &DVector<f64>, bases: &[[Vector4<f64>; 3]], delta: &DVector<f64>, step: f64) -> DVector<f64> {
    let mut out = z.clone();
    for (v, basis) in bases.iter().enumerate() {
        let mut q: Vector4<f64> = z.fixed_rows::<4>(4 * v).into_owned();
        for (k, t) in basis.iter().enumerate() {
            q += t * (step * delta[3 * v + k]);
        }
        out.fixed_rows_mut::<4>(4 * v).copy_from(&(q / q.norm()));
    }
    out
}

/// Minimizes the cost from `init`; `init[0]` defines the gauge and is mapped
/// to the identity.
pub fn local_solve(cost: &QuaternionCost, init: &[UnitQuaternion], opts: &LocalOptions) -> Result<LocalResult> {
    let nv = cost.n() - 1;
    let mut z = cost.to_vector(init)?;
    for v in 0..nv {
        let q: Vector4<f64> = z.fixed_rows::<4>(4 * v).into_owned();
        z.fixed_rows_mut::<4>(4 * v).copy_from(&(q / q.norm()));
    }
    let hess = cost.hessian();
    let mut f = cost.evaluate(&z)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;

    while iterations <= opts.max_iter {
        let grad = cost.gradient(&z)?;
        let bases: Vec<[Vector4<f64>; 3]> = (0..nv).map(|v| tangent_basis(&z.fixed_rows::<4>(4 * v).into_owned())).collect();
        let mut t = DMatrix::zeros(4 * nv, 3 * nv);
        for (v, basis) in bases.iter().enumerate() {
            for (k, col) in basis.iter().enumerate() {
                t.fixed_view_mut::<4, 1>(4 * v, 3 * v + k).copy_from(col);
            }
        }
        let rgrad = t.transpose() * &grad;
        grad_norm = rgrad.norm();
        if grad_norm <= opts.grad_tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;

        let mut h = t.transpose() * &hess * &t;
        for v in 0..nv {
            let mu = z.fixed_rows::<4>(4 * v).dot(&grad.fixed_rows::<4>(4 * v));
            for k in 0..3 {
                h[(3 * v + k, 3 * v + k)] -= mu;
            }
        }
        let scale = 1.0 + h.diagonal().amax();
        let mut shift = 0.0;
        let delta = loop {
            let mut hs = h.clone();
            for k in 0..hs.nrows() {
                hs[(k, k)] += shift;
            }
            if let Some(ch) = hs.cholesky() {
                let d = ch.solve(&-&rgrad);
                if d.dot(&rgrad) < 0.0 {
                    break d;
                }
            }
            shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
            if shift > 1e12 * scale {
                break -rgrad.clone();
            }
        };

        let slope = rgrad.dot(&delta);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = retract(&z, &bases, &delta, step);
            let fc = cost.evaluate(&cand)?;
            if fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                z = cand;
                f = fc;
            }
            // no decrease representable in floating point: stationary to
            // working precision
            None => {
                converged = grad_norm <= opts.grad_tol.max(1e-8 * (1.0 + f.abs()));
                break;
            }
        }
    }
    let quaternions = cost.from_vector(&z)?;
    // the residual sum avoids the cancellation of the expanded quadratic
    let f = cost.evaluate_quaternions(&quaternions)?;
    Ok(LocalResult { quaternions, cost: f, iterations, converged, grad_norm })
}

/// Best of `count` local solves: the first from `chained`, the rest from
/// uniform random rotations drawn in order (vertices 1..N per start) from
/// the seeded stream. Ties go to the earlier start.
pub fn multi_start(
    cost: &QuaternionCost,
    chained: &[UnitQuaternion],
    count: usize,
    seed: u64,
    opts: &LocalOptions,
) -> Result<LocalResult> {
    let count = count.max(1);
    let mut rng = seeded(seed);
    let mut inits = vec![chained.to_vec()];
    for _ in 1..count {
        let mut qs = vec![UnitQuaternion::IDENTITY];
        qs.extend((1..cost.n()).map(|_| random_rotation(&mut rng)));
        inits.push(qs);
    }
    let results: Vec<LocalResult> = inits.par_iter().map(|init| local_solve(cost, init, opts)).collect::<Result<_>>()?;
    let mut best = 0;
    for (k, r) in results.iter().enumerate() {
        if r.cost < results[best].cost {
            best = k;
        }
    }
    Ok(results.into_iter().nth(best).unwrap())
}
