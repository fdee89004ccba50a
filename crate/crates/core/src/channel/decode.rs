//! Per-slot SIC decoding at every BS.

use super::model::ChannelModel;
use crate::topology::Topology;

/// Mean received power for every (device, BS) pair plus the serving BS.
#[derive(Debug, Clone)]
pub struct LinkBudget {
    num_devices: usize,
    num_bs: usize,
    gains: Vec<f64>,
    association: Vec<usize>,
}

impl LinkBudget {
    pub fn new(model: &ChannelModel, topology: &Topology) -> Self {
        let n = topology.num_devices();
        let m = topology.num_base_stations();
        let mut gains = Vec::with_capacity(n * m);
        for i in 0..n {
            for b in 0..m {
                gains.push(model.path_gain(topology.distance(i, b)));
            }
        }
        LinkBudget {
            num_devices: n,
            num_bs: m,
            gains,
            association: topology.association().to_vec(),
        }
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    #[inline]
    pub fn gain(&self, device: usize, bs: usize) -> f64 {
        self.gains[device * self.num_bs + bs]
    }

    #[inline]
    pub fn serving_bs(&self, device: usize) -> usize {
        self.association[device]
    }
}

/// What one BS did with the signals it received in a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsDecode {
    pub strongest: Option<usize>,
    pub second: Option<usize>,
    /// SNIR of the strongest signal against everything else plus noise.
    pub snir_first: f64,
    /// SNIR of the runner-up once the strongest is cancelled.
    pub snir_second: f64,
    pub first_decoded: bool,
    pub second_decoded: bool,
}

/// Is `(pa, a)` received stronger than `(pb, b)`? Ties favour the lower index.
#[inline]
fn stronger(pa: f64, a: usize, pb: f64, b: usize) -> bool {
    pa > pb || (pa == pb && a < b)
}

/// Decodes at BS `bs`. `fading` holds one row of `num_bs` power gains per
/// entry of `transmitters`.
pub(crate) fn decode_at_bs(
    model: &ChannelModel,
    link: &LinkBudget,
    transmitters: &[usize],
    fading: &[f64],
    bs: usize,
) -> BsDecode {
    let nb = link.num_bs;
    let power = |slot: usize| link.gain(transmitters[slot], bs) * fading[slot * nb + bs];

    let mut first: Option<(usize, f64)> = None;
    let mut second: Option<(usize, f64)> = None;
    for (s, &dev) in transmitters.iter().enumerate() {
        let p = power(s);
        match first {
            None => first = Some((s, p)),
            Some((fs, fp)) if stronger(p, dev, fp, transmitters[fs]) => {
                second = first;
                first = Some((s, p));
            }
            _ => match second {
                None => second = Some((s, p)),
                Some((ss, sp)) if stronger(p, dev, sp, transmitters[ss]) => second = Some((s, p)),
                _ => {}
            },
        }
    }

    let mut out = BsDecode {
        strongest: None,
        second: None,
        snir_first: 0.0,
        snir_second: 0.0,
        first_decoded: false,
        second_decoded: false,
    };
    let Some((fs, fp)) = first else {
        return out;
    };
    let mut rest_after_first = 0.0;
    let mut rest_after_second = 0.0;
    for s in 0..transmitters.len() {
        if s == fs {
            continue;
        }
        let p = power(s);
        rest_after_first += p;
        if Some(s) != second.map(|x| x.0) {
            rest_after_second += p;
        }
    }
    let n0 = model.noise_floor_w;
    let first_dev = transmitters[fs];
    out.strongest = Some(first_dev);
    out.snir_first = fp / (n0 + rest_after_first);
    out.first_decoded = link.serving_bs(first_dev) == bs && out.snir_first >= model.snir_threshold;

    if let Some((ss, sp)) = second {
        let second_dev = transmitters[ss];
        out.second = Some(second_dev);
        out.snir_second = sp / (n0 + rest_after_second);
        out.second_decoded = model.noma
            && out.first_decoded
            && link.serving_bs(second_dev) == bs
            && out.snir_second >= model.snir_threshold;
    }
    out
}

/// Decodes a slot at every BS, writing per-device rates into `rates` (which
/// must be zeroed for the transmitters beforehand) and reporting each decoded
/// device through `on_decoded`.
pub(crate) fn decode_into(
    model: &ChannelModel,
    link: &LinkBudget,
    transmitters: &[usize],
    fading: &[f64],
    rates: &mut [f64],
    mut on_decoded: impl FnMut(usize),
) {
    if transmitters.is_empty() {
        return;
    }
    for bs in 0..link.num_bs {
        let d = decode_at_bs(model, link, transmitters, fading, bs);
        if d.first_decoded {
            let dev = d.strongest.unwrap();
            rates[dev] = model.rate(d.snir_first);
            on_decoded(dev);
        }
        if d.second_decoded {
            let dev = d.second.unwrap();
            rates[dev] = model.rate(d.snir_second);
            on_decoded(dev);
        }
    }
}
