//! Numerical log-concavity checks on grids of policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ConditionalRateTable;
use crate::channel::{objective_geomean, RATE_FLOOR};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Central finite-difference Hessian of `f` at `x`.
pub fn hessian_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut y = x.to_vec();
    let f0 = f(x);
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                y[i] = x[i] + si * h;
                y[j] = x[j] + sj * h;
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs()))
            .unwrap();
        if a[piv][c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            a.swap(piv, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

/// Determinants `D_1..D_n` of the leading principal sub-matrices.
pub fn leading_minors(h: &[Vec<f64>]) -> Vec<f64> {
    (1..=h.len())
        .map(|k| determinant(h[..k].iter().map(|row| row[..k].to_vec()).collect()))
        .collect()
}

/// `(-1)^k D_k > 0` for every `k`.
pub fn negative_definite(minors: &[f64]) -> bool {
    minors
        .iter()
        .enumerate()
        .all(|(k, &d)| if k % 2 == 0 { d < 0.0 } else { d > 0.0 })
}

/// Per-device constants of the three-user concavity region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityBounds {
    /// `A_i - B_i^j - B_i^k + C_i^{jk}`.
    pub c: [f64; 3],
    /// Upper bounds `(p~_j, p~_k)` from device `i`, with `j < k` the other two.
    pub p_tilde: [[f64; 2]; 3],
    /// Effective upper bound per coordinate, `min(p~, 1)` over all devices
    /// that constrain it.
    pub upper: [f64; 3],
    /// True when every `c_i > 0`.
    pub applies: bool,
}

pub fn concavity_bounds(table: &ConditionalRateTable) -> Result<ConcavityBounds> {
    if table.num_devices() != 3 {
        return Err(Error::invalid("three-user bounds need exactly 3 devices"));
    }
    let mut c = [0.0; 3];
    let mut p_tilde = [[f64::NAN; 2]; 3];
    let mut upper = [1.0f64; 3];
    for i in 0..3 {
        let (j, k) = match i {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let bit = |d: usize| 1u32 << d;
        let a = table.rate(i, bit(i));
        let bj = table.rate(i, bit(i) | bit(j));
        let bk = table.rate(i, bit(i) | bit(k));
        let cc = table.rate(i, 0b111);
        c[i] = a - bj - bk + cc;
        let root = (a * cc - bj * bk).abs().sqrt();
        let pj = (a - bk - root) / c[i];
        let pk = (a - bj - root) / c[i];
        p_tilde[i] = [pj, pk];
        if c[i] > 0.0 {
            for (coord, bound) in [(j, pj), (k, pk)] {
                let b = if bound.is_nan() { 0.0 } else { bound.clamp(0.0, 1.0) };
                upper[coord] = upper[coord].min(b);
            }
        }
    }
    Ok(ConcavityBounds {
        c,
        p_tilde,
        upper,
        applies: c.iter().all(|&x| x > 0.0),
    })
}

fn inside(bounds: &ConcavityBounds, p: &[f64]) -> bool {
    p.iter()
        .zip(&bounds.upper)
        .all(|(&x, &u)| if u >= 1.0 { x <= 1.0 } else { x < u })
}

/// Minor test of one function at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub point: Vec<f64>,
    /// `log_rate_<i>` or `objective`.
    pub function: String,
    pub minors: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub num_devices: usize,
    pub grid_resolution: usize,
    pub checks: Vec<PointCheck>,
    /// Grid points inside the set where some expected rate is at the floor.
    pub skipped: Vec<Vec<f64>>,
    /// Three-user region constants (absent for two users).
    pub bounds: Option<ConcavityBounds>,
}

impl ConcavityReport {
    pub fn failures(&self) -> impl Iterator<Item = &PointCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn points_checked(&self) -> usize {
        self.checks.iter().filter(|c| c.function == "objective").count()
    }

    /// Rows of `point,function,d1,..,dN,signs,pass`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["point".to_string(), "function".into()];
        header.extend((1..=self.num_devices).map(|k| format!("d{k}")));
        header.extend(["signs".into(), "pass".into()]);
        wr.write_record(&header)?;
        for c in &self.checks {
            let mut row = vec![serde_json::to_string(&c.point)?, c.function.clone()];
            row.extend(c.minors.iter().map(|d| format!("{d:e}")));
            row.push(c.minors.iter().map(|&d| if d > 0.0 { '+' } else if d < 0.0 { '-' } else { '0' }).collect());
            row.push(c.pass.to_string());
            wr.write_record(&row)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Finite-difference Hessians of every `log R_i` and of the objective at the
/// grid points `{1/r, 2/r, .., 1}^N` that lie in the concavity region (all of
/// `(0,1]^2` for two users; the box cut out by the `p~` bounds for three).
pub fn verify_concavity(table: &ConditionalRateTable, grid_resolution: usize) -> Result<ConcavityReport> {
    let n = table.num_devices();
    if !(2..=3).contains(&n) {
        return Err(Error::invalid(format!("concavity check needs 2 or 3 devices, got {n}")));
    }
    if grid_resolution == 0 {
        return Err(Error::invalid("grid_resolution must be >= 1"));
    }
    let bounds = if n == 3 { Some(concavity_bounds(table)?) } else { None };
    let axis: Vec<f64> = (1..=grid_resolution).map(|k| k as f64 / grid_resolution as f64).collect();
    let total = grid_resolution.pow(n as u32);

    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    let mut p = vec![0.0; n];
    for idx in 0..total {
        let mut rest = idx;
        for slot in p.iter_mut().rev() {
            *slot = axis[rest % grid_resolution];
            rest /= grid_resolution;
        }
        if let Some(b) = &bounds {
            if !inside(b, &p) {
                continue;
            }
        }
        if table.expected_rates(&p).iter().any(|&r| r <= RATE_FLOOR) {
            skipped.push(p.clone());
            continue;
        }
        for i in 0..n {
            let h = hessian_fd(|q| table.expected_rates(q)[i].ln(), &p, FD_STEP);
            let minors = leading_minors(&h);
            checks.push(PointCheck {
                point: p.clone(),
                function: format!("log_rate_{i}"),
                pass: negative_definite(&minors),
                minors,
            });
        }
        let h = hessian_fd(|q| objective_geomean(&table.expected_rates(q)).value, &p, FD_STEP);
        let minors = leading_minors(&h);
        checks.push(PointCheck {
            point: p.clone(),
            function: "objective".into(),
            pass: negative_definite(&minors),
            minors,
        });
    }
    Ok(ConcavityReport {
        num_devices: n,
        grid_resolution,
        checks,
        skipped,
        bounds,
    })
}

/// Outcome of a random midpoint-concavity probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidpointCheck {
    pub samples: usize,
    pub violations: usize,
    /// Largest `(f(x) + f(y))/2 - f((x + y)/2)` seen.
    pub worst_gap: f64,
}

/// Samples pairs uniformly in `[lo, hi]^n` and counts pairs where the
/// midpoint value falls more than `tol` below the chord.
pub fn sampled_midpoint_concavity(
    f: impl Fn(&[f64]) -> f64,
    n: usize,
    lo: f64,
    hi: f64,
    samples: usize,
    tol: f64,
    seed: u64,
) -> MidpointCheck {
    let mut rng = rng_from_seed(seed);
    let mut violations = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut mid = vec![0.0; n];
    for _ in 0..samples {
        for k in 0..n {
            x[k] = rng.random_range(lo..=hi);
            y[k] = rng.random_range(lo..=hi);
            mid[k] = 0.5 * (x[k] + y[k]);
        }
        let gap = 0.5 * (f(&x) + f(&y)) - f(&mid);
        worst_gap = worst_gap.max(gap);
        if gap > tol {
            violations += 1;
        }
    }
    MidpointCheck {
        samples,
        violations,
        worst_gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_user(a: f64, b: f64) -> ConditionalRateTable {
        ConditionalRateTable::from_fn(2, |i, m| if m == 1 << i { a } else { b }).unwrap()
    }

    #[test]
    fn two_user_hessian_matches_closed_form() {
        let t = two_user(2.0, 1.0);
        let h = hessian_fd(|q| t.expected_rates(q)[0].ln(), &[0.5, 0.5], FD_STEP);
        assert_relative_eq!(h[0][0], -4.0, epsilon = 1e-4);
        assert_relative_eq!(h[1][1], -1.0 / 2.25, epsilon = 1e-4);
        assert!(h[0][1].abs() < 1e-4);
    }

    #[test]
    fn minors_of_known_matrices() {
        let m = leading_minors(&[vec![-2.0, 1.0], vec![1.0, -3.0]]);
        assert_relative_eq!(m[0], -2.0);
        assert_relative_eq!(m[1], 5.0, epsilon = 1e-12);
        assert!(negative_definite(&m));
        assert!(!negative_definite(&leading_minors(&[vec![-1.0, 0.0], vec![0.0, 0.0]])));
    }

    #[test]
    fn two_user_grid_passes() {
        let r = verify_concavity(&two_user(3.0, 1.2), 25).unwrap();
        assert_eq!(r.points_checked(), 625);
        assert!(r.all_pass());
    }

    #[test]
    fn far_interferer_is_a_boundary_case() {
        let r = verify_concavity(&two_user(2.0, 2.0), 5).unwrap();
        assert!(r.checks.iter().any(|c| c.function == "log_rate_0" && !c.pass));
    }

    #[test]
    fn three_user_bounds_by_hand() {
        // A = 4, B^j = B^k = 2, C = 1 for every device.
        let t = ConditionalRateTable::from_fn(3, |_, m| [0.0, 4.0, 2.0, 1.0][m.count_ones() as usize]).unwrap();
        let b = concavity_bounds(&t).unwrap();
        assert_eq!(b.c, [1.0; 3]);
        assert_relative_eq!(b.p_tilde[0][0], 2.0);
        assert_eq!(b.upper, [1.0; 3]);
        assert!(b.applies);
        let r = verify_concavity(&t, 10).unwrap();
        assert_eq!(r.points_checked(), 1000);
        assert!(r.all_pass());
    }

    #[test]
    fn csv_has_sign_column() {
        let r = verify_concavity(&two_user(3.0, 1.0), 2).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("point,function,d1,d2,signs,pass\n"));
        assert!(text.contains(",-+,true"));
    }

    #[test]
    fn midpoint_check_flags_convex_function() {
        let concave = sampled_midpoint_concavity(|x| -x[0] * x[0] - x[1] * x[1], 2, 0.0, 1.0, 200, 1e-12, 1);
        assert_eq!(concave.violations, 0);
        let convex = sampled_midpoint_concavity(|x| x[0] * x[0], 2, 0.0, 1.0, 200, 1e-12, 1);
        assert!(convex.violations > 150);
    }
}
