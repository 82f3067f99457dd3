//! Grundmann–Möller quadrature on the reference triangle and tetrahedron.
//!
//! Points are stored in barycentric coordinates and weights are relative to
//! the measure of the simplex, so `Σ w = 1` and an integral over an entity
//! of measure `|E|` is `|E| Σ_q w_q f(x_q)`. A rule of index `s` is exact
//! for polynomials of degree `2s + 1`; some weights are negative.

use crate::error::{FemError, Result};
use crate::geometry::Point3;
use crate::mesh::TetMesh;
use std::sync::OnceLock;

pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule<const K: usize> {
    pub points: Vec<[f64; K]>,
    pub weights: Vec<f64>,
    /// Highest total degree integrated exactly.
    pub degree: usize,
}

pub type TetRule = QuadRule<4>;
pub type TriRule = QuadRule<3>;

impl<const K: usize> QuadRule<K> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; K], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Rule on the reference tetrahedron exact to at least `degree`.
pub fn tet_rule(degree: usize) -> Result<&'static TetRule> {
    static RULES: [OnceLock<TetRule>; MAX_DEGREE + 1] = [const { OnceLock::new() }; MAX_DEGREE + 1];
    check_degree(degree)?;
    Ok(RULES[degree].get_or_init(|| grundmann_moller::<4>(index_for(degree))))
}

/// Rule on the reference triangle exact to at least `degree`.
pub fn tri_rule(degree: usize) -> Result<&'static TriRule> {
    static RULES: [OnceLock<TriRule>; MAX_DEGREE + 1] = [const { OnceLock::new() }; MAX_DEGREE + 1];
    check_degree(degree)?;
    Ok(RULES[degree].get_or_init(|| grundmann_moller::<3>(index_for(degree))))
}

fn check_degree(degree: usize) -> Result<()> {
    if (1..=MAX_DEGREE).contains(&degree) {
        Ok(())
    } else {
        Err(FemError::UnsupportedDegree(degree))
    }
}

fn index_for(degree: usize) -> usize {
    degree.saturating_sub(1).div_ceil(2)
}

/// Grundmann–Möller rule of index `s` on the simplex with `K` barycentric
/// coordinates (dimension `K - 1`).
fn grundmann_moller<const K: usize>(s: usize) -> QuadRule<K> {
    let n = (K - 1) as i32;
    let d = 2 * s as i32 + 1;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    // n! converts from the unit-simplex volume 1/n! to relative weights
    let n_fact = factorial(n as usize);
    for i in 0..=s {
        let denom = (d + n - 2 * i as i32) as f64;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let w =
            sign * 2f64.powi(-2 * s as i32) * denom.powi(d) / (factorial(i) * factorial((d + n) as usize - i)) * n_fact;
        for beta in compositions::<K>(s - i) {
            let mut p = [0.0; K];
            for (pj, bj) in p.iter_mut().zip(beta) {
                *pj = (2 * bj + 1) as f64 / denom;
            }
            points.push(p);
            weights.push(w);
        }
    }
    QuadRule { points, weights, degree: 2 * s + 1 }
}

/// All `K`-tuples of non-negative integers summing to `total`, in
/// lexicographic order.
fn compositions<const K: usize>(total: usize) -> Vec<[usize; K]> {
    fn rec<const K: usize>(slot: usize, left: usize, cur: &mut [usize; K], out: &mut Vec<[usize; K]>) {
        if slot == K - 1 {
            cur[slot] = left;
            out.push(*cur);
            return;
        }
        for v in (0..=left).rev() {
            cur[slot] = v;
            rec(slot + 1, left - v, cur, out);
        }
    }
    let mut out = Vec::new();
    rec(0, total, &mut [0; K], &mut out);
    out
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `∫_T f` over element `t`.
pub fn integrate_tet<F>(mesh: &TetMesh, t: usize, rule: &TetRule, f: F) -> Result<f64>
where
    F: Fn(Point3) -> f64,
{
    let vol = mesh.element_geometry(t)?.volume;
    let sum: f64 = rule.iter().map(|(b, w)| w * f(mesh.map_point(t, b))).sum();
    Ok(vol * sum)
}

/// `∫_F f` over the triangle with corners `p`.
pub fn integrate_triangle<F>(p: [Point3; 3], rule: &TriRule, f: F) -> f64
where
    F: Fn(Point3) -> f64,
{
    let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]).norm();
    let sum: f64 = rule.iter().map(|(b, w)| w * f(b[0] * p[0] + b[1] * p[1] + b[2] * p[2])).sum();
    area * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, BoxDomain};

    /// `∫ Π λ_i^{a_i}` relative to the simplex measure.
    fn dirichlet_moment(exps: &[usize]) -> f64 {
        let dim = exps.len() - 1;
        let total: usize = exps.iter().sum();
        exps.iter().map(|&a| factorial(a)).product::<f64>() * factorial(dim) / factorial(total + dim)
    }

    fn apply<const K: usize>(rule: &QuadRule<K>, exps: &[usize; K]) -> f64 {
        rule.iter().map(|(p, w)| w * p.iter().zip(exps).map(|(x, &e)| x.powi(e as i32)).product::<f64>()).sum()
    }

    #[test]
    fn weights_sum_to_one_and_points_are_barycentric() {
        for d in 1..=MAX_DEGREE {
            for rule in [tet_rule(d).unwrap()] {
                assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                for p in &rule.points {
                    assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
                }
            }
            let tri = tri_rule(d).unwrap();
            assert!((tri.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn unsupported_degrees_rejected() {
        assert!(matches!(tet_rule(0), Err(FemError::UnsupportedDegree(0))));
        assert!(tet_rule(9).is_err());
        assert!(tri_rule(0).is_err());
        assert!(tri_rule(12).is_err());
    }

    #[test]
    fn tet_monomials_exact() {
        for d in 1..=MAX_DEGREE {
            let rule = tet_rule(d).unwrap();
            assert!(rule.degree >= d);
            for a in 0..=d {
                for b in 0..=d - a {
                    for c in 0..=d - a - b {
                        for e in 0..=d - a - b - c {
                            let exact = dirichlet_moment(&[a, b, c, e]);
                            let got = apply(rule, &[a, b, c, e]);
                            assert!((got - exact).abs() <= 1e-12 * exact, "deg {d} {a}{b}{c}{e}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn tri_monomials_exact() {
        for d in 1..=MAX_DEGREE {
            let rule = tri_rule(d).unwrap();
            for a in 0..=d {
                for b in 0..=d - a {
                    for c in 0..=d - a - b {
                        let exact = dirichlet_moment(&[a, b, c]);
                        let got = apply(rule, &[a, b, c]);
                        assert!((got - exact).abs() <= 1e-12 * exact);
                    }
                }
            }
        }
    }

    #[test]
    fn named_moments() {
        let r4 = tet_rule(4).unwrap();
        assert!((apply(r4, &[1, 1, 1, 1]) - 1.0 / 840.0).abs() < 1e-16);
        assert!((256.0 * apply(r4, &[1, 1, 1, 1]) - 32.0 / 105.0).abs() < 1e-14);
        let t2 = tri_rule(2).unwrap();
        assert!((apply(t2, &[1, 1, 0]) - 1.0 / 12.0).abs() < 1e-16);
        let t6 = tri_rule(6).unwrap();
        assert!((apply(t6, &[2, 2, 2]) - 8.0 * 2.0 / 40320.0).abs() < 1e-16);
    }

    #[test]
    fn bubble_integral_matches_monte_carlo() {
        // Deterministic low-discrepancy sampling of the reference tetrahedron
        // via rejection from the unit cube.
        let mut n_in = 0usize;
        let mut acc = 0.0;
        let m = 60;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let (x, y, z) =
                        ((i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64, (k as f64 + 0.5) / m as f64);
                    if x + y + z < 1.0 {
                        n_in += 1;
                        acc += 256.0 * x * y * z * (1.0 - x - y - z);
                    }
                }
            }
        }
        let mean = acc / n_in as f64;
        assert!((mean - 32.0 / 105.0).abs() < 1e-3);
        assert!((256.0 * apply(tet_rule(4).unwrap(), &[1, 1, 1, 1]) - 32.0 / 105.0).abs() < 1e-14);
    }

    #[test]
    fn integrate_on_mesh() {
        let mesh = TetMesh::from_parts(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap();
        let r1 = tet_rule(1).unwrap();
        assert!((integrate_tet(&mesh, 0, r1, |_| 3.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((integrate_tet(&mesh, 0, r1, |p| p.x).unwrap() - 1.0 / 24.0).abs() < 1e-15);
        // x² y z over the reference tet: 2!·1!·1!·0!·3!/(4+3)! · (1/6)
        let exact = 2.0 * 6.0 / 5040.0 / 6.0;
        let got = integrate_tet(&mesh, 0, tet_rule(4).unwrap(), |p| p.x * p.x * p.y * p.z).unwrap();
        assert!((got - exact).abs() < 1e-13 * exact);
    }

    #[test]
    fn constant_integrates_to_volume_on_box() {
        let mesh = build_box_mesh(BoxDomain::unit_cube(), 2).unwrap();
        let r = tet_rule(8).unwrap();
        let total: f64 = (0..mesh.num_tets()).map(|t| integrate_tet(&mesh, t, r, |_| 2.5).unwrap()).sum();
        assert!((total - 2.5).abs() < 1e-13);
    }

    #[test]
    fn triangle_area() {
        let p = [Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0), Point3::new(0.0, 3.0, 1.0)];
        let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]).norm();
        assert!((integrate_triangle(p, tri_rule(1).unwrap(), |_| 1.0) - area).abs() < 1e-14);
    }
}
