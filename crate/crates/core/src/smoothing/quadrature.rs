//! Deterministic node sets on the unit ball and the unit sphere.
//!
//! * dimension 1: midpoint rule on `[−1, 1]` (sphere: `{−1, +1}`)
//! * dimension 2: sunflower lattice in the disk, equally spaced angles on the circle
//! * dimension ≥ 3: shifted Halton points pushed through Box–Muller
//!
//! Ball nodes in dimension ≥ 2 are mirrored through the origin.
//!
//! A seed only rotates or shifts the point set, so the same
//! `(dim, count, seed)` always reproduces the same nodes.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Equal-weight node set.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    nodes: Vec<f64>,
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dim)
    }

    /// Weighted mean of a scalar function over the nodes.
    pub fn integrate(&self, f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.iter().map(f).sum::<f64>() * self.weight()
    }
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out
            .iter()
            .take_while(|p| *p * *p <= c)
            .all(|p| !c.is_multiple_of(*p))
        {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points in `[0, 1)^k`, each coordinate shifted mod 1 by a seeded
/// offset. Prefixes of the sequence are nested.
struct ShiftedHalton {
    bases: Vec<u64>,
    shift: Vec<f64>,
}

impl ShiftedHalton {
    fn new(k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            bases: first_primes(k),
            shift: (0..k).map(|_| unit_f64(&mut rng)).collect(),
        }
    }

    fn point(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        for (b, s) in self.bases.iter().zip(&self.shift) {
            let u = radical_inverse(i as u64 + 1, *b) + s;
            out.push(u - libm::floor(u));
        }
    }
}

/// Fills `out` with a direction on the unit sphere built from `2⌈dim/2⌉`
/// uniforms via Box–Muller.
fn gaussian_direction(u: &[f64], dim: usize, out: &mut [f64]) {
    let mut norm2 = 0.0;
    for p in 0..dim.div_ceil(2) {
        // keep the radius strictly positive
        let u1 = libm::fmax(u[2 * p], 1e-300);
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let phi = 2.0 * PI * u[2 * p + 1];
        out[2 * p] = r * libm::cos(phi);
        if 2 * p + 1 < dim {
            out[2 * p + 1] = r * libm::sin(phi);
        }
    }
    for x in out.iter() {
        norm2 += x * x;
    }
    let norm = libm::sqrt(norm2);
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    } else {
        out.iter_mut().for_each(|x| *x = 0.0);
        out[0] = 1.0;
    }
}

fn push_antithetic(nodes: &mut Vec<f64>, q: &[f64]) {
    nodes.extend_from_slice(q);
    nodes.extend(q.iter().map(|x| -x));
}

/// Uniform-weight nodes inside the unit Euclidean ball. Nodes come in pairs
/// `±q` (plus the origin for odd counts), so averages of affine maps are
/// exact up to rounding.
pub fn ball_quadrature(dim: usize, node_count: usize, seed: u64) -> Result<QuadratureRule> {
    if dim == 0 || node_count < dim + 1 {
        return Err(Error::InvalidInput(alloc::format!(
            "ball quadrature needs dim >= 1 and at least dim + 1 nodes (dim {dim}, nodes {node_count})"
        )));
    }
    let n = node_count;
    let mut nodes = Vec::with_capacity(n * dim);
    match dim {
        1 => {
            for i in 0..n {
                nodes.push(-1.0 + (2 * i + 1) as f64 / n as f64);
            }
        }
        2 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rot = 2.0 * PI * unit_f64(&mut rng);
            let golden = PI * (3.0 - libm::sqrt(5.0));
            let half = n / 2;
            for i in 0..half {
                let r = libm::sqrt((i as f64 + 0.5) / half as f64);
                let a = rot + golden * i as f64;
                push_antithetic(&mut nodes, &[r * libm::cos(a), r * libm::sin(a)]);
            }
        }
        _ => {
            let pairs = dim.div_ceil(2);
            let halton = ShiftedHalton::new(2 * pairs + 1, seed);
            let mut u = Vec::new();
            let mut dir = alloc::vec![0.0; dim];
            for i in 0..n / 2 {
                halton.point(i, &mut u);
                gaussian_direction(&u, dim, &mut dir);
                let r = libm::pow(u[2 * pairs], 1.0 / dim as f64);
                dir.iter_mut().for_each(|x| *x *= r);
                push_antithetic(&mut nodes, &dir);
            }
        }
    }
    if dim > 1 && n % 2 == 1 {
        nodes.extend(core::iter::repeat_n(0.0, dim));
    }
    Ok(QuadratureRule { dim, nodes })
}

/// Uniform-weight directions on the unit sphere. Used in antithetic pairs
/// `±u`, so dimension 1 only needs `+1` and dimension 2 only a half circle.
pub fn sphere_quadrature(dim: usize, count: usize, seed: u64) -> Result<QuadratureRule> {
    if dim == 0 || count == 0 {
        return Err(Error::InvalidInput(
            "sphere quadrature needs dim >= 1 and count >= 1".into(),
        ));
    }
    let mut nodes = Vec::with_capacity(count * dim);
    match dim {
        1 => nodes.push(1.0),
        2 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rot = unit_f64(&mut rng);
            // half circle suffices because every direction is paired with its negative
            for i in 0..count {
                let a = PI * (i as f64 + rot) / count as f64;
                nodes.push(libm::cos(a));
                nodes.push(libm::sin(a));
            }
        }
        _ => {
            let pairs = dim.div_ceil(2);
            let halton = ShiftedHalton::new(2 * pairs, seed);
            let mut u = Vec::new();
            let mut dir = alloc::vec![0.0; dim];
            for i in 0..count {
                halton.point(i, &mut u);
                gaussian_direction(&u, dim, &mut dir);
                nodes.extend_from_slice(&dir);
            }
        }
    }
    Ok(QuadratureRule { dim, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_midpoints() {
        let q = ball_quadrature(1, 101, 0).unwrap();
        assert_eq!(q.len(), 101);
        assert!((q.weight() - 1.0 / 101.0).abs() < 1e-15);
        assert!(q.iter().all(|x| x[0] > -1.0 && x[0] < 1.0));
        assert!(q.node(50)[0].abs() < 1e-15);
    }

    #[test]
    fn nodes_inside_ball_and_centered() {
        for dim in 1..=5 {
            let q = ball_quadrature(dim, 2000, 7).unwrap();
            assert!(q
                .iter()
                .all(|x| x.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-12));
            for c in 0..dim {
                let m = q.integrate(|x| x[c]);
                assert!(m.abs() < 0.05, "dim {dim} coord {c} mean {m}");
            }
        }
    }

    #[test]
    fn linear_functions_integrate_to_center_value() {
        for dim in 1..=4 {
            let q = ball_quadrature(dim, 10_000, 3).unwrap();
            let v = q.integrate(|x| {
                2.0 + x
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (i as f64 + 1.0) * t)
                    .sum::<f64>()
            });
            assert!((v - 2.0).abs() < 0.01, "dim {dim}: {v}");
        }
    }

    #[test]
    fn second_moment_matches_uniform_ball() {
        // E‖q‖² = m / (m + 2) for q uniform in the unit m-ball
        for dim in 1..=4 {
            let q = ball_quadrature(dim, 20_000, 1).unwrap();
            let m2 = q.integrate(|x| x.iter().map(|v| v * v).sum());
            let exact = dim as f64 / (dim as f64 + 2.0);
            assert!((m2 - exact).abs() < 0.01, "dim {dim}: {m2} vs {exact}");
        }
    }

    #[test]
    fn affine_average_is_exact() {
        for dim in 1..=5 {
            for count in [11, 64] {
                let q = ball_quadrature(dim, count, 2).unwrap();
                assert_eq!(q.len(), count);
                let v = q.integrate(|x| {
                    1.5 + x
                        .iter()
                        .enumerate()
                        .map(|(i, t)| (i as f64 - 2.0) * t)
                        .sum::<f64>()
                });
                assert!((v - 1.5).abs() < 1e-14, "dim {dim}: {v}");
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(
            ball_quadrature(3, 500, 9).unwrap(),
            ball_quadrature(3, 500, 9).unwrap()
        );
        assert_ne!(
            ball_quadrature(3, 500, 9).unwrap(),
            ball_quadrature(3, 500, 10).unwrap()
        );
        assert_eq!(
            sphere_quadrature(2, 64, 4).unwrap(),
            sphere_quadrature(2, 64, 4).unwrap()
        );
    }

    #[test]
    fn sphere_directions_are_unit() {
        for dim in 1..=6 {
            let q = sphere_quadrature(dim, 300, 2).unwrap();
            assert!(q
                .iter()
                .all(|x| (x.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn sphere_second_moment_is_isotropic() {
        // E[u uᵀ] = I/m, which is what the gradient identity relies on
        for dim in 2..=4 {
            let q = sphere_quadrature(dim, 4000, 5).unwrap();
            for a in 0..dim {
                for b in 0..dim {
                    let m = q.integrate(|x| x[a] * x[b]);
                    let exact = if a == b { 1.0 / dim as f64 } else { 0.0 };
                    assert!((m - exact).abs() < 0.01, "dim {dim} ({a},{b}): {m}");
                }
            }
        }
    }

    #[test]
    fn too_few_nodes_rejected() {
        assert!(ball_quadrature(3, 3, 0).is_err());
        assert!(ball_quadrature(0, 10, 0).is_err());
    }
}
