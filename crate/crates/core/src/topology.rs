//! Device deployments, base-station placement and nearest-BS association.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A position in the deployment plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const ORIGIN: Point2D = Point2D { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point2D { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Point2D) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2D {
    fn from(v: [f64; 2]) -> Self {
        Point2D { x: v[0], y: v[1] }
    }
}

impl From<Point2D> for [f64; 2] {
    fn from(p: Point2D) -> Self {
        [p.x, p.y]
    }
}

/// Devices, base stations and the serving BS of every device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile")]
pub struct Topology {
    devices: Vec<Point2D>,
    base_stations: Vec<Point2D>,
    association: Vec<usize>,
}

#[derive(Deserialize)]
struct TopologyFile {
    devices: Vec<Point2D>,
    base_stations: Vec<Point2D>,
    association: Vec<usize>,
}

impl TryFrom<TopologyFile> for Topology {
    type Error = Error;

    fn try_from(f: TopologyFile) -> Result<Self> {
        if f.devices.is_empty() || f.base_stations.is_empty() {
            return Err(Error::invalid("topology needs at least one device and one BS"));
        }
        if f.association.len() != f.devices.len() {
            return Err(Error::invalid(format!(
                "association has {} entries for {} devices",
                f.association.len(),
                f.devices.len()
            )));
        }
        if let Some(&bad) = f.association.iter().find(|&&m| m >= f.base_stations.len()) {
            return Err(Error::invalid(format!("association index {bad} out of range")));
        }
        Ok(Topology {
            devices: f.devices,
            base_stations: f.base_stations,
            association: f.association,
        })
    }
}

impl Topology {
    /// Builds a topology, associating every device with its nearest BS.
    pub fn new(devices: Vec<Point2D>, base_stations: Vec<Point2D>) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::invalid("no devices"));
        }
        if devices.iter().chain(&base_stations).any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        let association = associate_nearest(&devices, &base_stations)?;
        Ok(Topology {
            devices,
            base_stations,
            association,
        })
    }

    pub fn devices(&self) -> &[Point2D] {
        &self.devices
    }

    pub fn base_stations(&self) -> &[Point2D] {
        &self.base_stations
    }

    pub fn association(&self) -> &[usize] {
        &self.association
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn num_base_stations(&self) -> usize {
        self.base_stations.len()
    }

    /// Distance from device `i` to base station `m`.
    pub fn distance(&self, i: usize, m: usize) -> f64 {
        self.devices[i].distance(&self.base_stations[m])
    }

    /// Devices served by each BS; the cells partition the device set.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.base_stations.len()];
        for (i, &m) in self.association.iter().enumerate() {
            cells[m].push(i);
        }
        cells
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `n` points drawn i.i.d. uniformly on `[-half_side, half_side]^2`.
pub fn generate_uniform_deployment(n: usize, half_side: f64, seed: u64) -> Result<Vec<Point2D>> {
    if n == 0 {
        return Err(Error::invalid("deployment needs n >= 1"));
    }
    if !(half_side > 0.0 && half_side.is_finite()) {
        return Err(Error::invalid(format!("half_side must be positive, got {half_side}")));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| {
            let x = rng.random_range(-half_side..=half_side);
            let y = rng.random_range(-half_side..=half_side);
            Point2D::new(x, y)
        })
        .collect())
}

/// A `sqrt(n) x sqrt(n)` cell-centered grid covering the square, row-major with
/// x varying fastest.
pub fn generate_mesh_deployment(n: usize, half_side: f64) -> Result<Vec<Point2D>> {
    let side = (n as f64).sqrt().round() as usize;
    if n == 0 || side * side != n {
        return Err(Error::invalid(format!("mesh size {n} is not a perfect square")));
    }
    if !(half_side > 0.0 && half_side.is_finite()) {
        return Err(Error::invalid(format!("half_side must be positive, got {half_side}")));
    }
    let coord = |k: usize| (2.0 * k as f64 + 1.0 - side as f64) * half_side / side as f64;
    let mut points = Vec::with_capacity(n);
    for iy in 0..side {
        for ix in 0..side {
            points.push(Point2D::new(coord(ix), coord(iy)));
        }
    }
    Ok(points)
}

/// Index of the nearest BS for every device; ties go to the lowest index.
pub fn associate_nearest(devices: &[Point2D], base_stations: &[Point2D]) -> Result<Vec<usize>> {
    if base_stations.is_empty() {
        return Err(Error::invalid("no base stations"));
    }
    Ok(devices
        .iter()
        .map(|d| nearest_index(d, base_stations))
        .collect())
}

fn nearest_index(p: &Point2D, centers: &[Point2D]) -> usize {
    let mut best = 0;
    let mut best_d = p.distance_sq(&centers[0]);
    for (m, c) in centers.iter().enumerate().skip(1) {
        let d = p.distance_sq(c);
        if d < best_d {
            best = m;
            best_d = d;
        }
    }
    best
}

/// Result of a Lloyd run, including the clustering objective after every
/// assignment step.
#[derive(Debug, Clone)]
pub struct LloydResult {
    pub centroids: Vec<Point2D>,
    pub iterations: usize,
    pub objective_history: Vec<f64>,
}

/// Places `m` base stations at the Lloyd k-means centroids of the devices.
pub fn place_bs_lloyd(
    devices: &[Point2D],
    m: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<Point2D>> {
    Ok(lloyd(devices, m, seed, max_iters)?.centroids)
}

pub fn lloyd(devices: &[Point2D], m: usize, seed: u64, max_iters: usize) -> Result<LloydResult> {
    if m == 0 {
        return Err(Error::invalid("need at least one cluster"));
    }
    if m > devices.len() {
        return Err(Error::invalid(format!(
            "{m} clusters requested for {} devices",
            devices.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut centroids: Vec<Point2D> = index::sample(&mut rng, devices.len(), m)
        .into_iter()
        .map(|i| devices[i])
        .collect();

    let mut assignment: Vec<usize> = devices.iter().map(|d| nearest_index(d, &centroids)).collect();
    let mut history = vec![sse(devices, &centroids, &assignment)];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![(0.0, 0.0, 0usize); m];
        for (d, &a) in devices.iter().zip(&assignment) {
            sums[a].0 += d.x;
            sums[a].1 += d.y;
            sums[a].2 += 1;
        }
        let mut taken = vec![false; devices.len()];
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = Point2D::new(s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        for k in 0..m {
            if sums[k].2 == 0 {
                // Reseed to the device worst served by its current centroid.
                let far = (0..devices.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| {
                        let da = devices[a].distance_sq(&centroids[assignment[a]]);
                        let db = devices[b].distance_sq(&centroids[assignment[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("m <= n leaves a free device");
                taken[far] = true;
                centroids[k] = devices[far];
            }
        }
        let next: Vec<usize> = devices.iter().map(|d| nearest_index(d, &centroids)).collect();
        history.push(sse(devices, &centroids, &next));
        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
    }

    Ok(LloydResult {
        centroids,
        iterations,
        objective_history: history,
    })
}

fn sse(devices: &[Point2D], centroids: &[Point2D], assignment: &[usize]) -> f64 {
    devices
        .iter()
        .zip(assignment)
        .map(|(d, &a)| d.distance_sq(&centroids[a]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_single_point_inside_square() {
        let pts = generate_uniform_deployment(1, 500.0, 3).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(pts[0].x.abs() <= 500.0 && pts[0].y.abs() <= 500.0);
    }

    #[test]
    fn uniform_is_deterministic() {
        let a = generate_uniform_deployment(100, 500.0, 7).unwrap();
        let b = generate_uniform_deployment(100, 500.0, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_uniform_deployment(100, 500.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_sample_mean_near_zero() {
        // 3 sigma / sqrt(N) with sigma = 500 / sqrt(3) is 8.66 m; the test allows 15 m.
        let pts = generate_uniform_deployment(10_000, 500.0, 11).unwrap();
        let mean_x = pts.iter().map(|p| p.x).sum::<f64>() / pts.len() as f64;
        assert!(mean_x.abs() < 15.0, "mean x = {mean_x}");
    }

    #[test]
    fn uniform_rejects_zero() {
        assert!(matches!(
            generate_uniform_deployment(0, 500.0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mesh_four_points() {
        let pts = generate_mesh_deployment(4, 500.0).unwrap();
        let expect = [(-250.0, -250.0), (250.0, -250.0), (-250.0, 250.0), (250.0, 250.0)];
        for (p, e) in pts.iter().zip(expect) {
            assert_relative_eq!(p.x, e.0);
            assert_relative_eq!(p.y, e.1);
        }
    }

    #[test]
    fn mesh_144_min_corner() {
        let pts = generate_mesh_deployment(144, 500.0).unwrap();
        assert_eq!(pts.len(), 144);
        let min_x = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let min_y = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        assert_relative_eq!(min_x, -458.333_333_333_333_3, epsilon = 1e-9);
        assert_relative_eq!(min_y, -458.333_333_333_333_3, epsilon = 1e-9);
    }

    #[test]
    fn mesh_single_point_at_origin() {
        assert_eq!(generate_mesh_deployment(1, 500.0).unwrap(), vec![Point2D::ORIGIN]);
    }

    #[test]
    fn mesh_rejects_non_square() {
        assert!(generate_mesh_deployment(5, 500.0).is_err());
        assert!(generate_mesh_deployment(0, 500.0).is_err());
    }

    #[test]
    fn lloyd_single_cluster_is_mean() {
        let pts = generate_uniform_deployment(50, 500.0, 2).unwrap();
        let c = place_bs_lloyd(&pts, 1, 9, 100).unwrap();
        let mx = pts.iter().map(|p| p.x).sum::<f64>() / 50.0;
        let my = pts.iter().map(|p| p.y).sum::<f64>() / 50.0;
        assert_relative_eq!(c[0].x, mx, epsilon = 1e-9);
        assert_relative_eq!(c[0].y, my, epsilon = 1e-9);
    }

    #[test]
    fn lloyd_symmetric_corners_give_origin() {
        let pts = generate_mesh_deployment(4, 500.0).unwrap();
        let c = place_bs_lloyd(&pts, 1, 0, 10).unwrap();
        assert_relative_eq!(c[0].x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(c[0].y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lloyd_two_clouds() {
        // Hand-run: whatever two seeds are drawn, one Lloyd pass separates the
        // clouds because the gap (200 m) dwarfs the cloud diameter (~3 m).
        let pts = vec![
            Point2D::new(-100.0, 0.0),
            Point2D::new(-101.0, 1.0),
            Point2D::new(-99.0, -1.0),
            Point2D::new(100.0, 0.0),
            Point2D::new(101.0, 1.0),
            Point2D::new(99.0, -1.0),
        ];
        for seed in 0..10 {
            let mut c = place_bs_lloyd(&pts, 2, seed, 50).unwrap();
            c.sort_by(|a, b| a.x.total_cmp(&b.x));
            assert!(c[0].x >= -101.0 && c[0].x <= -99.0 && c[0].y.abs() <= 1.0);
            assert!(c[1].x >= 99.0 && c[1].x <= 101.0 && c[1].y.abs() <= 1.0);
        }
    }

    #[test]
    fn lloyd_rejects_too_many_clusters() {
        let pts = generate_mesh_deployment(4, 500.0).unwrap();
        assert!(lloyd(&pts, 5, 0, 10).is_err());
        assert!(lloyd(&pts, 0, 0, 10).is_err());
    }

    #[test]
    fn lloyd_objective_non_increasing() {
        for seed in 0..5 {
            let pts = generate_uniform_deployment(200, 500.0, seed).unwrap();
            let r = lloyd(&pts, 5, seed, 100).unwrap();
            for w in r.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.objective_history);
            }
        }
    }

    #[test]
    fn nearest_association_and_ties() {
        let bs = vec![Point2D::new(1.0, 0.0), Point2D::new(10.0, 0.0)];
        assert_eq!(associate_nearest(&[Point2D::ORIGIN], &bs).unwrap(), vec![0]);
        let tie = vec![Point2D::new(-1.0, 0.0), Point2D::new(1.0, 0.0)];
        assert_eq!(associate_nearest(&[Point2D::ORIGIN], &tie).unwrap(), vec![0]);
        assert!(associate_nearest(&[Point2D::ORIGIN], &[]).is_err());
    }

    #[test]
    fn mesh_quadrants_map_to_quadrant_bs() {
        let devices = generate_mesh_deployment(4, 500.0).unwrap();
        let bs = vec![
            Point2D::new(-250.0, -250.0),
            Point2D::new(250.0, -250.0),
            Point2D::new(-250.0, 250.0),
            Point2D::new(250.0, 250.0),
        ];
        let topo = Topology::new(devices, bs).unwrap();
        assert_eq!(topo.association(), &[0, 1, 2, 3]);
        assert_eq!(topo.cells(), vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn topology_json_shape() {
        let topo = Topology::new(
            vec![Point2D::new(1.0, 2.0), Point2D::new(-3.5, 4.0)],
            vec![Point2D::ORIGIN],
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&topo.to_json().unwrap()).unwrap();
        assert_eq!(v["devices"][1][0], -3.5);
        assert_eq!(v["association"], serde_json::json!([0, 0]));
        assert_eq!(Topology::from_json(&topo.to_json().unwrap()).unwrap(), topo);
        assert!(Topology::from_json(r#"{"devices":[[0,0]],"base_stations":[[1,1]],"association":[3]}"#).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn association_is_nearest(seed in 0u64..1000, n in 1usize..40, m in 1usize..6) {
                let devices = generate_uniform_deployment(n, 500.0, seed).unwrap();
                let bs = generate_uniform_deployment(m, 500.0, seed ^ 0xabc).unwrap();
                let topo = Topology::new(devices, bs).unwrap();
                for i in 0..topo.num_devices() {
                    let own = topo.distance(i, topo.association()[i]);
                    for k in 0..topo.num_base_stations() {
                        prop_assert!(own <= topo.distance(i, k));
                    }
                }
                let total: usize = topo.cells().iter().map(Vec::len).sum();
                prop_assert_eq!(total, n);
            }
        }
    }
}
