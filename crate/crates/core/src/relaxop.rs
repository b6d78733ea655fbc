//! Relaxation and discretization operators over logit vectors.
//!
//! Five operators map logits to a probability vector, each paired with the
//! Jacobian (approximation) used when backpropagating through it:
//!
//! | kind | forward                         | backward                      |
//! |------|----------------------------------|-------------------------------|
//! | SX   | softmax(z)                       | exact softmax Jacobian        |
//! | STL  | onehot(argmax z)                 | identity pass-through         |
//! | SG   | onehot(argmax softmax(z + g))    | Jacobian of softmax(z + g)    |
//! | ST   | onehot(argmax softmax(z))        | Jacobian of softmax(z)        |
//! | GX   | softmax(z + g)                   | exact softmax(z + g) Jacobian |
//!
//! `g` is Gumbel noise, `g_i = -log(-log(u_i))` with `u_i ~ Uniform(0,1)`.
//! ST is identical to SG with `g = 0`. Argmax ties break to the lowest index.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::argmax;

/// Operator kinds; config files accept the exact strings "SX", "STL", "SG",
/// "ST", "GX".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelaxOpKind {
    Sx,
    Stl,
    Sg,
    St,
    Gx,
}

impl RelaxOpKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "SX" => Ok(RelaxOpKind::Sx),
            "STL" => Ok(RelaxOpKind::Stl),
            "SG" => Ok(RelaxOpKind::Sg),
            "ST" => Ok(RelaxOpKind::St),
            "GX" => Ok(RelaxOpKind::Gx),
            other => Err(Error::invalid(format!(
                "unknown operator {other:?}; expected SX, STL, SG, ST or GX"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RelaxOpKind::Sx => "SX",
            RelaxOpKind::Stl => "STL",
            RelaxOpKind::Sg => "SG",
            RelaxOpKind::St => "ST",
            RelaxOpKind::Gx => "GX",
        }
    }

    /// SG and GX draw Gumbel noise; the rest are deterministic.
    pub fn uses_noise(&self) -> bool {
        matches!(self, RelaxOpKind::Sg | RelaxOpKind::Gx)
    }
}

/// Forward result: the probability (or one-hot) vector plus the sampled
/// noise, retained because SG's backward needs the same draw.
#[derive(Clone, Debug)]
pub struct RelaxOutput {
    pub probs: Vec<f64>,
    pub noise: Option<Vec<f64>>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|v| v / sum).collect()
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Sample Gumbel noise; uniforms are clamped to (1e-12, 1 - 1e-12) so the
/// double log stays finite.
pub fn gumbel_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, "gumbel");
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Apply an operator to a logit vector. SG and GX derive their noise from
/// `noise_seed`; fixing the seed makes them deterministic and replayable.
pub fn apply(z: &[f64], kind: RelaxOpKind, noise_seed: u64) -> Result<RelaxOutput> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("operator input logits".into()));
    }
    let n = z.len();
    let out = match kind {
        RelaxOpKind::Sx => RelaxOutput { probs: softmax(z), noise: None },
        RelaxOpKind::Stl => RelaxOutput { probs: one_hot(argmax(z), n), noise: None },
        RelaxOpKind::St => {
            let q = softmax(z);
            RelaxOutput { probs: one_hot(argmax(&q), n), noise: None }
        }
        RelaxOpKind::Sg => {
            let g = gumbel_noise(n, noise_seed);
            let zt: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + b).collect();
            let q = softmax(&zt);
            RelaxOutput { probs: one_hot(argmax(&q), n), noise: Some(g) }
        }
        RelaxOpKind::Gx => {
            let g = gumbel_noise(n, noise_seed);
            let zt: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + b).collect();
            RelaxOutput { probs: softmax(&zt), noise: Some(g) }
        }
    };
    Ok(out)
}

/// Pull an upstream gradient back through the operator applied to `z`.
///
/// For SG the noise stored by [`apply`] must be passed back in; the Jacobian
/// is evaluated at the same draw.
pub fn backward_through(
    z: &[f64],
    kind: RelaxOpKind,
    upstream: &[f64],
    noise: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if z.len() != upstream.len() {
        return Err(Error::invalid(format!(
            "upstream gradient length {} does not match logits length {}",
            upstream.len(),
            z.len()
        )));
    }
    let softmax_jvp = |q: &[f64]| -> Vec<f64> {
        // J^T u for softmax: q .* (u - <u, q>)
        let dot: f64 = q.iter().zip(upstream).map(|(a, b)| a * b).sum();
        q.iter()
            .zip(upstream)
            .map(|(qi, ui)| qi * (ui - dot))
            .collect()
    };
    match kind {
        RelaxOpKind::Stl => Ok(upstream.to_vec()),
        RelaxOpKind::Sx | RelaxOpKind::St => Ok(softmax_jvp(&softmax(z))),
        RelaxOpKind::Sg | RelaxOpKind::Gx => {
            let g = noise.ok_or_else(|| {
                Error::invalid(format!("{} backward requires the stored noise", kind.name()))
            })?;
            let zt: Vec<f64> = z.iter().zip(g).map(|(a, b)| a + b).collect();
            Ok(softmax_jvp(&softmax(&zt)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sx_of_equal_logits_is_uniform() {
        let out = apply(&[0.0, 0.0], RelaxOpKind::Sx, 0).unwrap();
        assert_eq!(out.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn stl_picks_argmax() {
        let out = apply(&[1.2, 3.4, -1.0], RelaxOpKind::Stl, 0).unwrap();
        assert_eq!(out.probs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn st_equals_argmax_of_logits() {
        // softmax is monotone, so ST discretizes to the same index as STL.
        let mut rng = crate::rng::stream(11, "test");
        use rand::Rng as _;
        for _ in 0..100 {
            let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let st = apply(&z, RelaxOpKind::St, 0).unwrap();
            assert_eq!(st.probs, one_hot(argmax(&z), 5));
        }
    }

    #[test]
    fn stl_backward_is_identity() {
        let g = backward_through(&[0.5, -0.5], RelaxOpKind::Stl, &[3.0, -7.0], None).unwrap();
        assert_eq!(g, vec![3.0, -7.0]);
    }

    #[test]
    fn st_backward_matches_sx_backward() {
        let z = [0.4, -1.0, 2.2];
        let up = [1.0, -2.0, 0.5];
        let a = backward_through(&z, RelaxOpKind::St, &up, None).unwrap();
        let b = backward_through(&z, RelaxOpKind::Sx, &up, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sx_backward_matches_finite_differences() {
        let z = [0.3, -0.7, 1.1, 0.0];
        let up = [0.2, -1.0, 0.4, 0.9];
        let analytic = backward_through(&z, RelaxOpKind::Sx, &up, None).unwrap();
        let eps = 1e-6;
        for i in 0..z.len() {
            let mut zp = z;
            zp[i] += eps;
            let fp: f64 = softmax(&zp).iter().zip(&up).map(|(a, b)| a * b).sum();
            zp[i] -= 2.0 * eps;
            let fm: f64 = softmax(&zp).iter().zip(&up).map(|(a, b)| a * b).sum();
            let numeric = (fp - fm) / (2.0 * eps);
            assert!(
                (analytic[i] - numeric).abs() < 1e-5,
                "coordinate {i}: {} vs {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn sg_backward_requires_noise() {
        let err = backward_through(&[0.0, 1.0], RelaxOpKind::Sg, &[1.0, 1.0], None);
        assert!(err.is_err());
    }

    #[test]
    fn sg_replays_with_fixed_seed() {
        let a = apply(&[0.1, 0.2, 0.3], RelaxOpKind::Sg, 42).unwrap();
        let b = apply(&[0.1, 0.2, 0.3], RelaxOpKind::Sg, 42).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.noise, b.noise);
    }

    #[test]
    fn st_equals_sg_with_zero_noise() {
        let z = [0.9, -0.3, 0.4];
        let st = apply(&z, RelaxOpKind::St, 0).unwrap();
        let zeros = vec![0.0; 3];
        // SG with g = 0 reduces to ST on both passes.
        let sg_fwd = one_hot(argmax(&softmax(&z)), 3);
        assert_eq!(st.probs, sg_fwd);
        let up = [1.0, 2.0, 3.0];
        let st_b = backward_through(&z, RelaxOpKind::St, &up, None).unwrap();
        let sg_b = backward_through(&z, RelaxOpKind::Sg, &up, Some(&zeros)).unwrap();
        assert_eq!(st_b, sg_b);
    }
}
