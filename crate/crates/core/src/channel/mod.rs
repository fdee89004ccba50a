//! Slot-level simulation: Bernoulli channel access, fading, SIC decoding and
//! Monte Carlo rate estimation.

mod decode;
mod model;
mod objective;
mod policy;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use decode::{BsDecode, LinkBudget};
pub use model::{db_to_linear, dbm_to_watts, received_power, ChannelModel, Fading, SPEED_OF_LIGHT};
pub use objective::{objective_geomean, ObjectiveValue, RATE_FLOOR};
pub use policy::{TransmissionPolicy, DEFAULT_P_FLOOR};

pub(crate) use decode::decode_into;
pub(crate) use policy::check_probabilities;

use crate::error::{Error, Result};
use crate::rng::{child_rng, SimRng};
use crate::topology::Topology;

/// Slots simulated per independent RNG stream when estimating rates.
const SHARD_SLOTS: u64 = 8192;

/// Power gains for one slot: one row of `num_bs` entries per transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraws {
    num_bs: usize,
    values: Vec<f64>,
}

impl FadingDraws {
    pub fn unit(num_transmitters: usize, num_bs: usize) -> Self {
        FadingDraws {
            num_bs,
            values: vec![1.0; num_transmitters * num_bs],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_bs = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_bs) {
            return Err(Error::invalid("ragged fading rows"));
        }
        Ok(FadingDraws {
            num_bs,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn num_rows(&self) -> usize {
        if self.num_bs == 0 {
            0
        } else {
            self.values.len() / self.num_bs
        }
    }
}

/// Signals one BS received in a slot, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct BsReception {
    pub ordered: Vec<(usize, f64)>,
    pub decode: BsDecode,
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub transmitters: Vec<usize>,
    pub per_bs: Vec<BsReception>,
    pub decoded: Vec<bool>,
    pub rates: Vec<f64>,
}

/// Monte Carlo estimate of expected per-device rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub mean_rate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub slots: u64,
}

impl RateEstimate {
    /// An exact rate vector (zero standard error).
    pub fn exact(mean_rate: Vec<f64>) -> Self {
        let n = mean_rate.len();
        RateEstimate {
            mean_rate,
            std_error: vec![0.0; n],
            slots: 0,
        }
    }

    pub fn objective(&self) -> ObjectiveValue {
        objective_geomean(&self.mean_rate)
    }

    /// Writes `device_id,mean_rate_bps,std_error,slots` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["device_id", "mean_rate_bps", "std_error", "slots"])?;
        for (i, (m, s)) in self.mean_rate.iter().zip(&self.std_error).enumerate() {
            wr.serialize((i, m, s, self.slots))?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut mean_rate = Vec::new();
        let mut std_error = Vec::new();
        let mut slots = 0;
        for (k, row) in rd.deserialize::<(usize, f64, f64, u64)>().enumerate() {
            let (i, m, s, n) = row?;
            if i != k {
                return Err(Error::invalid(format!("row {k} has device_id {i}")));
            }
            mean_rate.push(m);
            std_error.push(s);
            slots = n;
        }
        Ok(RateEstimate {
            mean_rate,
            std_error,
            slots,
        })
    }
}

#[derive(Debug, Clone)]
struct RateAccumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    slots: u64,
}

impl RateAccumulator {
    fn new(n: usize) -> Self {
        RateAccumulator {
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            slots: 0,
        }
    }

    #[inline]
    fn add(&mut self, dev: usize, rate: f64) {
        self.sum[dev] += rate;
        self.sum_sq[dev] += rate * rate;
    }

    fn merge(&mut self, other: &RateAccumulator) {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
        self.slots += other.slots;
    }

    fn finish(&self) -> RateEstimate {
        let s = self.slots as f64;
        let mean_rate: Vec<f64> = self.sum.iter().map(|&x| x / s).collect();
        let std_error = self
            .sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&a, &b)| {
                if self.slots < 2 {
                    return 0.0;
                }
                let var = ((b - a * a / s) / (s - 1.0)).max(0.0);
                (var / s).sqrt()
            })
            .collect();
        RateEstimate {
            mean_rate,
            std_error,
            slots: self.slots,
        }
    }
}

/// A channel model bound to a topology, with precomputed link gains.
#[derive(Debug, Clone)]
pub struct Network {
    model: ChannelModel,
    topology: Topology,
    link: LinkBudget,
}

/// Reusable per-slot buffers.
struct SlotScratch {
    tx: Vec<usize>,
    fading: Vec<f64>,
    rates: Vec<f64>,
    decoded: Vec<usize>,
}

impl SlotScratch {
    fn new(n: usize) -> Self {
        SlotScratch {
            tx: Vec::with_capacity(n),
            fading: Vec::new(),
            rates: vec![0.0; n],
            decoded: Vec::with_capacity(8),
        }
    }
}

impl Network {
    pub fn new(model: ChannelModel, topology: Topology) -> Result<Self> {
        model.validate()?;
        let link = LinkBudget::new(&model, &topology);
        Ok(Network {
            model,
            topology,
            link,
        })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn link(&self) -> &LinkBudget {
        &self.link
    }

    pub fn num_devices(&self) -> usize {
        self.link.num_devices()
    }

    /// Same network with NOMA decoding switched on or off.
    pub fn with_noma(&self, noma: bool) -> Self {
        let mut net = self.clone();
        net.model.noma = noma;
        net
    }

    pub fn decode_slot(&self, transmitters: &[usize], fading: &FadingDraws) -> Result<SlotOutcome> {
        let n = self.num_devices();
        let nb = self.link.num_bs();
        if fading.num_rows() != transmitters.len() || (!transmitters.is_empty() && fading.num_bs != nb) {
            return Err(Error::invalid(format!(
                "need one fading row of {nb} draws per transmitter ({} transmitters)",
                transmitters.len()
            )));
        }
        let mut seen = vec![false; n];
        for &t in transmitters {
            if t >= n || std::mem::replace(&mut seen[t], true) {
                return Err(Error::invalid(format!("bad or repeated transmitter {t}")));
            }
        }

        let mut rates = vec![0.0; n];
        let mut decoded = vec![false; n];
        let mut per_bs = Vec::with_capacity(nb);
        for bs in 0..nb {
            let d = decode::decode_at_bs(&self.model, &self.link, transmitters, &fading.values, bs);
            let mut ordered: Vec<(usize, f64)> = transmitters
                .iter()
                .enumerate()
                .map(|(s, &dev)| (dev, self.link.gain(dev, bs) * fading.values[s * nb + bs]))
                .collect();
            ordered.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            per_bs.push(BsReception { ordered, decode: d });
        }
        decode_into(&self.model, &self.link, transmitters, &fading.values, &mut rates, |dev| {
            decoded[dev] = true
        });
        Ok(SlotOutcome {
            transmitters: transmitters.to_vec(),
            per_bs,
            decoded,
            rates,
        })
    }

    fn draw_slot(&self, policy: &[f64], rng: &mut SimRng, scratch: &mut SlotScratch) {
        scratch.tx.clear();
        for (i, &p) in policy.iter().enumerate() {
            if rng.random::<f64>() < p {
                scratch.tx.push(i);
            }
        }
        self.draw_fading(scratch.tx.len(), rng, &mut scratch.fading);
    }

    fn draw_fading(&self, count: usize, rng: &mut SimRng, out: &mut Vec<f64>) {
        let len = count * self.link.num_bs();
        out.clear();
        match self.model.fading {
            Fading::None => out.resize(len, 1.0),
            Fading::Rayleigh => out.extend((0..len).map(|_| rng.sample::<f64, _>(Exp1))),
        }
    }

    /// Draws Bernoulli channel access and fading, then decodes.
    pub fn simulate_slot(&self, policy: &[f64], rng: &mut SimRng) -> Result<SlotOutcome> {
        check_probabilities(policy, self.num_devices())?;
        let mut scratch = SlotScratch::new(self.num_devices());
        self.draw_slot(policy, rng, &mut scratch);
        let fading = FadingDraws {
            num_bs: self.link.num_bs(),
            values: scratch.fading,
        };
        self.decode_slot(&scratch.tx, &fading)
    }

    fn run_shard(&self, policy: &[f64], slots: u64, mut rng: SimRng) -> RateAccumulator {
        let n = self.num_devices();
        let mut acc = RateAccumulator::new(n);
        let mut sc = SlotScratch::new(n);
        for _ in 0..slots {
            self.draw_slot(policy, &mut rng, &mut sc);
            sc.decoded.clear();
            let SlotScratch { tx, fading, rates, decoded } = &mut sc;
            decode_into(&self.model, &self.link, tx, fading, rates, |d| decoded.push(d));
            for &d in sc.decoded.iter() {
                acc.add(d, sc.rates[d]);
                sc.rates[d] = 0.0;
            }
        }
        acc.slots = slots;
        acc
    }

    /// Averages per-slot rates over `num_slots` simulated slots. Slots are split
    /// into fixed-size shards with seeds derived from one draw of `rng`, so the
    /// result does not depend on the worker count.
    pub fn estimate_expected_rates(
        &self,
        policy: &[f64],
        num_slots: u64,
        rng: &mut SimRng,
    ) -> Result<RateEstimate> {
        check_probabilities(policy, self.num_devices())?;
        if num_slots == 0 {
            return Err(Error::invalid("num_slots must be >= 1"));
        }
        let base: u64 = rng.random();
        let shards = shard_sizes(num_slots);
        let parts: Vec<RateAccumulator> = shards
            .par_iter()
            .enumerate()
            .map(|(k, &s)| self.run_shard(policy, s, child_rng(base, k as u64)))
            .collect();
        let mut total = RateAccumulator::new(self.num_devices());
        for p in &parts {
            total.merge(p);
        }
        Ok(total.finish())
    }

    fn run_paired_shard(
        &self,
        policy: &[f64],
        silent: usize,
        slots: u64,
        mut rng: SimRng,
    ) -> (RateAccumulator, RateAccumulator) {
        let n = self.num_devices();
        let nb = self.link.num_bs();
        let mut with = RateAccumulator::new(n);
        let mut without = RateAccumulator::new(n);
        let mut sc = SlotScratch::new(n);
        let mut tx_rest = Vec::with_capacity(n);
        let mut fading_rest = Vec::new();
        for _ in 0..slots {
            self.draw_slot(policy, &mut rng, &mut sc);
            sc.decoded.clear();
            {
                let SlotScratch { tx, fading, rates, decoded } = &mut sc;
                decode_into(&self.model, &self.link, tx, fading, rates, |d| decoded.push(d));
            }
            for &d in sc.decoded.iter() {
                with.add(d, sc.rates[d]);
            }
            match sc.tx.iter().position(|&t| t == silent) {
                None => {
                    for &d in sc.decoded.iter() {
                        without.add(d, sc.rates[d]);
                        sc.rates[d] = 0.0;
                    }
                }
                Some(pos) => {
                    for &d in sc.decoded.iter() {
                        sc.rates[d] = 0.0;
                    }
                    tx_rest.clear();
                    fading_rest.clear();
                    for (s, &t) in sc.tx.iter().enumerate() {
                        if s != pos {
                            tx_rest.push(t);
                            fading_rest.extend_from_slice(&sc.fading[s * nb..(s + 1) * nb]);
                        }
                    }
                    sc.decoded.clear();
                    {
                        let SlotScratch { rates, decoded, .. } = &mut sc;
                        decode_into(&self.model, &self.link, &tx_rest, &fading_rest, rates, |d| {
                            decoded.push(d)
                        });
                    }
                    for &d in sc.decoded.iter() {
                        without.add(d, sc.rates[d]);
                        sc.rates[d] = 0.0;
                    }
                }
            }
        }
        with.slots = slots;
        without.slots = slots;
        (with, without)
    }

    /// Two observation windows sharing one random stream: the first at
    /// `policy`, the second with device `silent` removed from every slot. The
    /// shared stream makes the difference between the windows depend only on
    /// the slots where `silent` transmitted.
    pub fn estimate_paired(
        &self,
        policy: &[f64],
        silent: usize,
        num_slots: u64,
        rng: &mut SimRng,
    ) -> Result<(RateEstimate, RateEstimate)> {
        check_probabilities(policy, self.num_devices())?;
        if silent >= self.num_devices() {
            return Err(Error::invalid(format!("no device {silent}")));
        }
        if num_slots == 0 {
            return Err(Error::invalid("num_slots must be >= 1"));
        }
        let base: u64 = rng.random();
        let shards = shard_sizes(num_slots);
        let parts: Vec<(RateAccumulator, RateAccumulator)> = shards
            .par_iter()
            .enumerate()
            .map(|(k, &s)| self.run_paired_shard(policy, silent, s, child_rng(base, k as u64)))
            .collect();
        let n = self.num_devices();
        let mut with = RateAccumulator::new(n);
        let mut without = RateAccumulator::new(n);
        for (a, b) in &parts {
            with.merge(a);
            without.merge(b);
        }
        Ok((with.finish(), without.finish()))
    }
}

fn shard_sizes(total: u64) -> Vec<u64> {
    let full = total / SHARD_SLOTS;
    let rem = total % SHARD_SLOTS;
    let mut v = vec![SHARD_SLOTS; full as usize];
    if rem > 0 {
        v.push(rem);
    }
    v
}

/// Free-function form of [`Network::decode_slot`].
pub fn decode_slot(
    model: &ChannelModel,
    topology: &Topology,
    transmitters: &[usize],
    fading: &FadingDraws,
) -> Result<SlotOutcome> {
    Network::new(model.clone(), topology.clone())?.decode_slot(transmitters, fading)
}

/// Free-function form of [`Network::simulate_slot`].
pub fn simulate_slot(
    model: &ChannelModel,
    topology: &Topology,
    policy: &[f64],
    rng: &mut SimRng,
) -> Result<SlotOutcome> {
    Network::new(model.clone(), topology.clone())?.simulate_slot(policy, rng)
}

/// Free-function form of [`Network::estimate_expected_rates`].
pub fn estimate_expected_rates(
    model: &ChannelModel,
    topology: &Topology,
    policy: &[f64],
    num_slots: u64,
    rng: &mut SimRng,
) -> Result<RateEstimate> {
    Network::new(model.clone(), topology.clone())?.estimate_expected_rates(policy, num_slots, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::topology::Point2D;
    use approx::assert_relative_eq;

    /// Unit-everything model so received powers can be set through distances:
    /// with alpha = 2, d0 tiny and P_TX chosen so `path_gain(d) = 1/d^2`.
    fn normalized_model(noma: bool) -> ChannelModel {
        let mut m = ChannelModel::default();
        let c0 = (m.wavelength_m() / (4.0 * std::f64::consts::PI)).powi(2);
        m.tx_power_w = 1.0 / c0;
        m.noise_floor_w = 1.0;
        m.reference_distance_m = 1e-6;
        m.bandwidth_hz = 1.0;
        m.snir_threshold = db_to_linear(-5.1);
        m.fading = Fading::None;
        m.noma = noma;
        m
    }

    /// Device placed so that its received power at the origin BS is `power`.
    fn at_power(power: f64) -> Point2D {
        Point2D::new((1.0 / power).sqrt(), 0.0)
    }

    #[test]
    fn single_transmitter_decoded() {
        let topo = Topology::new(vec![at_power(10.0)], vec![Point2D::ORIGIN]).unwrap();
        let out = decode_slot(&normalized_model(true), &topo, &[0], &FadingDraws::unit(1, 1)).unwrap();
        assert!(out.decoded[0]);
        assert_relative_eq!(out.rates[0], 11f64.log2(), max_relative = 1e-9);
        assert_relative_eq!(out.rates[0], 3.459, epsilon = 1e-3);
    }

    #[test]
    fn two_transmitters_sic() {
        let topo = Topology::new(vec![at_power(10.0), at_power(3.0)], vec![Point2D::ORIGIN]).unwrap();
        let out = decode_slot(&normalized_model(true), &topo, &[0, 1], &FadingDraws::unit(2, 1)).unwrap();
        let d = out.per_bs[0].decode;
        assert_relative_eq!(d.snir_first, 2.5, max_relative = 1e-9);
        assert_relative_eq!(d.snir_second, 3.0, max_relative = 1e-9);
        assert_relative_eq!(out.rates[0], 3.5f64.log2(), max_relative = 1e-9);
        assert_relative_eq!(out.rates[1], 4f64.log2(), max_relative = 1e-9);

        let capture = decode_slot(&normalized_model(false), &topo, &[0, 1], &FadingDraws::unit(2, 1)).unwrap();
        assert!(capture.decoded[0] && !capture.decoded[1]);
        assert_eq!(capture.rates[1], 0.0);
    }

    #[test]
    fn strongest_from_other_cell_blocks_both() {
        // Device 0 is strongest at BS 0 but served by BS 1 (placed on top of it).
        let left = Point2D::new(-at_power(10.0).x, 0.0);
        let topo = Topology::new(vec![left, at_power(3.0)], vec![Point2D::ORIGIN, left]).unwrap();
        assert_eq!(topo.association(), &[1, 0]);
        let fading = FadingDraws::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let out = decode_slot(&normalized_model(true), &topo, &[0, 1], &fading).unwrap();
        let at0 = out.per_bs[0].decode;
        assert_eq!(at0.strongest, Some(0));
        assert!(!at0.first_decoded && !at0.second_decoded);
        assert!(!out.decoded[1]);
        // Device 0 is decoded at its own BS where it sits at the reference distance.
        assert!(out.decoded[0]);
    }

    #[test]
    fn decode_rejects_missing_fading() {
        let topo = Topology::new(vec![at_power(1.0), at_power(2.0)], vec![Point2D::ORIGIN]).unwrap();
        let err = decode_slot(&normalized_model(true), &topo, &[0, 1], &FadingDraws::unit(1, 1));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        let dup = decode_slot(&normalized_model(true), &topo, &[0, 0], &FadingDraws::unit(2, 1));
        assert!(dup.is_err());
    }

    #[test]
    fn power_ties_broken_by_index() {
        let topo = Topology::new(vec![at_power(5.0), at_power(5.0)], vec![Point2D::ORIGIN]).unwrap();
        let out = decode_slot(&normalized_model(true), &topo, &[1, 0], &FadingDraws::unit(2, 1)).unwrap();
        assert_eq!(out.per_bs[0].decode.strongest, Some(0));
        assert_eq!(out.per_bs[0].ordered[0].0, 0);
    }

    fn random_net(seed: u64, n: usize, m: usize, noma: bool) -> Network {
        let devices = crate::topology::generate_uniform_deployment(n, 500.0, seed).unwrap();
        let bs = crate::topology::place_bs_lloyd(&devices, m, seed, 100).unwrap();
        Network::new(ChannelModel::default().with_noma(noma), Topology::new(devices, bs).unwrap()).unwrap()
    }

    #[test]
    fn empty_slot_has_zero_rates() {
        let net = random_net(1, 5, 1, true);
        let out = net.decode_slot(&[], &FadingDraws::unit(0, 1)).unwrap();
        assert!(out.rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn simulate_slot_deterministic_and_forced_transmitter() {
        let net = random_net(2, 6, 2, true);
        let mut p = vec![DEFAULT_P_FLOOR; 6];
        p[3] = 1.0;
        let a = net.simulate_slot(&p, &mut rng_from_seed(5)).unwrap();
        let b = net.simulate_slot(&p, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
        let mut rng = rng_from_seed(9);
        for _ in 0..200 {
            let s = net.simulate_slot(&p, &mut rng).unwrap();
            assert!(s.transmitters.contains(&3));
        }
    }

    #[test]
    fn all_floor_policy_mostly_silent() {
        let net = random_net(3, 10, 1, true);
        let p = vec![DEFAULT_P_FLOOR; 10];
        let mut rng = rng_from_seed(1);
        let empty = (0..2000)
            .filter(|_| net.simulate_slot(&p, &mut rng).unwrap().transmitters.is_empty())
            .count();
        // (1 - 1e-3)^10 = 0.990
        assert!(empty > 1940, "{empty}");
    }

    #[test]
    fn silent_device_has_zero_mean_rate() {
        let net = random_net(4, 4, 1, true);
        let p = vec![0.5, 0.0, 0.5, 0.5];
        let est = net.estimate_expected_rates(&p, 5000, &mut rng_from_seed(2)).unwrap();
        assert_eq!(est.mean_rate[1], 0.0);
        assert_eq!(est.std_error[1], 0.0);
    }

    #[test]
    fn doubling_slots_shrinks_std_error() {
        let net = random_net(5, 4, 1, true);
        let p = vec![0.3; 4];
        let a = net.estimate_expected_rates(&p, 40_000, &mut rng_from_seed(1)).unwrap();
        let b = net.estimate_expected_rates(&p, 80_000, &mut rng_from_seed(2)).unwrap();
        for i in 0..4 {
            let ratio = a.std_error[i] / b.std_error[i];
            assert!((ratio - 2f64.sqrt()).abs() < 0.15, "ratio {ratio}");
        }
    }

    #[test]
    fn estimate_rejects_bad_input() {
        let net = random_net(6, 3, 1, true);
        assert!(net.estimate_expected_rates(&[0.5; 3], 0, &mut rng_from_seed(0)).is_err());
        assert!(net.estimate_expected_rates(&[0.5; 2], 10, &mut rng_from_seed(0)).is_err());
        assert!(net.estimate_expected_rates(&[1.5, 0.5, 0.5], 10, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn paired_windows_share_the_stream() {
        let net = random_net(7, 6, 2, true);
        let p = vec![0.3; 6];
        let (with, without) = net.estimate_paired(&p, 2, 20_000, &mut rng_from_seed(3)).unwrap();
        assert_eq!(without.mean_rate[2], 0.0);
        let plain = net.estimate_expected_rates(&p, 20_000, &mut rng_from_seed(3)).unwrap();
        assert_eq!(with, plain);
        for k in 0..6 {
            if k != 2 {
                // removing an interferer never hurts under SIC
                assert!(without.mean_rate[k] >= with.mean_rate[k] - 1e-12);
            }
        }
    }

    #[test]
    fn rates_csv_round_trip() {
        let est = RateEstimate {
            mean_rate: vec![0.1 + 0.2, 1.0 / 3.0, 7.25e-9],
            std_error: vec![1e-3, 0.0, std::f64::consts::PI],
            slots: 1234,
        };
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("device_id,mean_rate_bps,std_error,slots\n"));
        assert_eq!(RateEstimate::read_csv(&buf[..]).unwrap(), est);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn noma_decodes_superset(seed in 0u64..10_000, n in 2usize..8, m in 1usize..3) {
                let with = random_net(seed, n, m.min(n), true);
                let without = with.with_noma(false);
                let mut rng = rng_from_seed(seed);
                let p = vec![0.6; n];
                for _ in 0..20 {
                    let mut r1 = rng.clone();
                    let a = with.simulate_slot(&p, &mut rng).unwrap();
                    let b = without.simulate_slot(&p, &mut r1).unwrap();
                    prop_assert_eq!(&a.transmitters, &b.transmitters);
                    for i in 0..n {
                        prop_assert!(!b.decoded[i] || a.decoded[i]);
                        prop_assert!(a.rates[i] >= b.rates[i]);
                    }
                    for rx in &a.per_bs {
                        let decoded = rx.decode.first_decoded as usize + rx.decode.second_decoded as usize;
                        prop_assert!(decoded <= 2);
                        if rx.ordered.len() >= 2 {
                            prop_assert!(rx.ordered[0].1 >= rx.ordered[1].1);
                            prop_assert_eq!(rx.decode.strongest, Some(rx.ordered[0].0));
                            prop_assert_eq!(rx.decode.second, Some(rx.ordered[1].0));
                        }
                    }
                    for rx in &b.per_bs {
                        prop_assert!(!rx.decode.second_decoded);
                    }
                    for i in 0..n {
                        prop_assert_eq!(a.decoded[i], a.rates[i] > 0.0);
                        if !a.transmitters.contains(&i) {
                            prop_assert_eq!(a.rates[i], 0.0);
                        }
                    }
                }
            }
        }
    }
}
