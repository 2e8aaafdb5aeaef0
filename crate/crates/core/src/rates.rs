//! Communication metrics at covariance level: CUE and D2D SINRs and the
//! sum-rate objective.

use thiserror::Error;

use crate::channel::ChannelSet;
use crate::linalg::{quad_form, trace_re};
use crate::sensing::TransmitCovariance;
use crate::CVector;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("D2D power {index} = {value:e} mW outside [0, {budget:e}]")]
    OutOfRange { index: usize, value: f64, budget: f64 },
}

/// D2D transmit powers `p_d` in mW.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub d2d_powers: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(d2d_powers: Vec<f64>) -> Self {
        PowerAllocation { d2d_powers }
    }

    pub fn uniform(n: usize, p: f64) -> Self {
        PowerAllocation { d2d_powers: vec![p; n] }
    }

    pub fn len(&self) -> usize {
        self.d2d_powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d2d_powers.is_empty()
    }

    /// Checks `0 <= p_d <= budget` with 1e-9 mW slack.
    pub fn validate(&self, budget: f64) -> Result<(), PowerError> {
        for (index, &value) in self.d2d_powers.iter().enumerate() {
            if !(value >= -1e-9 && value <= budget + 1e-9) {
                return Err(PowerError::OutOfRange { index, value, budget });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub cue_sinr: Vec<f64>,
    pub d2d_sinr: Vec<f64>,
    /// bits/s/Hz.
    pub cue_rates: Vec<f64>,
    pub d2d_rates: Vec<f64>,
    pub sum_rate: f64,
}

/// `v^H W v` with tiny negative rounding clamped to zero.
pub(crate) fn received_power(v: &CVector, w: &crate::CMatrix) -> f64 {
    let x = quad_form(v, w);
    if x < 0.0 && x.abs() <= 1e-12 * trace_re(w).abs() * v.norm_squared() {
        0.0
    } else {
        x
    }
}

/// Interference plus noise at CUE `k`: all BS blocks except `W_k`
/// (including `W_0`), D2D transmitters and noise.
pub fn cue_interference_plus_noise(
    k: usize,
    ch: &ChannelSet,
    cov: &TransmitCovariance,
    pa: &PowerAllocation,
    n_c: f64,
) -> f64 {
    let h = &ch.bs_to_cue[k];
    let mut acc = n_c;
    for (j, w) in cov.blocks().enumerate() {
        if j != k + 1 {
            acc += received_power(h, w);
        }
    }
    for (d, &p) in pa.d2d_powers.iter().enumerate() {
        acc += p * ch.d2d_to_cue[(d, k)].norm_sqr();
    }
    acc
}

/// Interference plus noise at D2D receiver `d`: other D2D transmitters,
/// every BS block and noise.
pub fn d2d_interference_plus_noise(
    d: usize,
    ch: &ChannelSet,
    cov: &TransmitCovariance,
    pa: &PowerAllocation,
    n_c: f64,
) -> f64 {
    let f = &ch.bs_to_d2drx[d];
    let mut acc = n_c;
    for (dp, &p) in pa.d2d_powers.iter().enumerate() {
        if dp != d {
            acc += p * ch.d2d_to_d2d[(dp, d)].norm_sqr();
        }
    }
    for w in cov.blocks() {
        acc += received_power(f, w);
    }
    acc
}

pub fn sinr_cue(k: usize, ch: &ChannelSet, cov: &TransmitCovariance, pa: &PowerAllocation, n_c: f64) -> f64 {
    let desired = received_power(&ch.bs_to_cue[k], &cov.per_cue[k]).max(0.0);
    desired / cue_interference_plus_noise(k, ch, cov, pa, n_c)
}

pub fn sinr_d2d(d: usize, ch: &ChannelSet, cov: &TransmitCovariance, pa: &PowerAllocation, n_c: f64) -> f64 {
    let desired = (pa.d2d_powers[d] * ch.d2d_to_d2d[(d, d)].norm_sqr()).max(0.0);
    desired / d2d_interference_plus_noise(d, ch, cov, pa, n_c)
}

pub fn sum_rate(ch: &ChannelSet, cov: &TransmitCovariance, pa: &PowerAllocation, n_c: f64) -> RateReport {
    let cue_sinr: Vec<f64> = (0..ch.n_cue()).map(|k| sinr_cue(k, ch, cov, pa, n_c)).collect();
    let d2d_sinr: Vec<f64> = (0..ch.n_d2d()).map(|d| sinr_d2d(d, ch, cov, pa, n_c)).collect();
    report_from_sinrs(cue_sinr, d2d_sinr)
}

pub fn report_from_sinrs(cue_sinr: Vec<f64>, d2d_sinr: Vec<f64>) -> RateReport {
    let cue_rates: Vec<f64> = cue_sinr.iter().map(|g| (1.0 + g).log2()).collect();
    let d2d_rates: Vec<f64> = d2d_sinr.iter().map(|g| (1.0 + g).log2()).collect();
    let sum_rate = cue_rates.iter().sum::<f64>() + d2d_rates.iter().sum::<f64>();
    RateReport { cue_sinr, d2d_sinr, cue_rates, d2d_rates, sum_rate }
}

/// The sum rate written as four sums of logarithms:
/// `sum_k [log2(total_k) - log2(interf_k)] + sum_d [log2(total_d) - log2(interf_d)]`.
pub fn sum_rate_log_form(ch: &ChannelSet, cov: &TransmitCovariance, pa: &PowerAllocation, n_c: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..ch.n_cue() {
        let h = &ch.bs_to_cue[k];
        let interf = cue_interference_plus_noise(k, ch, cov, pa, n_c);
        let total = interf + received_power(h, &cov.per_cue[k]);
        acc += total.log2() - interf.log2();
    }
    for d in 0..ch.n_d2d() {
        let interf = d2d_interference_plus_noise(d, ch, cov, pa, n_c);
        let total = interf + pa.d2d_powers[d] * ch.d2d_to_d2d[(d, d)].norm_sqr();
        acc += total.log2() - interf.log2();
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_gaussian, sample_channels};
    use crate::linalg::outer;
    use crate::scenario::{default_config, sample_geometry, RngStream};
    use crate::{CMatrix, C64};
    use rand::Rng;

    fn random_psd<R: Rng>(rng: &mut R, n: usize, rank: usize, power: f64) -> CMatrix {
        let mut w = CMatrix::zeros(n, n);
        for _ in 0..rank {
            w += outer(&CVector::from_fn(n, |_, _| complex_gaussian(rng)));
        }
        let tr = trace_re(&w);
        w.scale(power / tr)
    }

    fn instance(seed: u64) -> (ChannelSet, TransmitCovariance, PowerAllocation) {
        let cfg = default_config();
        let geo = sample_geometry(&cfg, &RngStream::new(seed, "geometry"));
        let ch = sample_channels(&cfg, &geo, &RngStream::new(seed, "fading")).unwrap();
        let mut rng = RngStream::new(seed, "rates-test").rng();
        let per_cue = (0..3).map(|_| random_psd(&mut rng, 8, 1, 200.0)).collect();
        let radar = random_psd(&mut rng, 8, 8, 300.0);
        let pa = PowerAllocation::new((0..2).map(|_| rng.random_range(0.0..10.0)).collect());
        (ch, TransmitCovariance::new(per_cue, radar), pa)
    }

    fn single_cue_channels(h: CVector) -> ChannelSet {
        ChannelSet {
            bs_to_cue: vec![h],
            d2d_to_cue: CMatrix::zeros(0, 1),
            d2d_to_d2d: CMatrix::zeros(0, 0),
            bs_to_d2drx: vec![],
        }
    }

    #[test]
    fn single_term_cue_sinr() {
        let n = 4;
        let mut h = CVector::zeros(n);
        h[0] = C64::new(1.0, 0.0);
        let ch = single_cue_channels(h);
        let mut w1 = CMatrix::zeros(n, n);
        w1[(0, 0)] = C64::new(5.0, 0.0);
        let cov = TransmitCovariance::new(vec![w1], CMatrix::zeros(n, n));
        let pa = PowerAllocation::new(vec![]);
        assert!((sinr_cue(0, &ch, &cov, &pa, 0.5) - 10.0).abs() < 1e-12);
        let zero = TransmitCovariance::zeros(n, 1);
        assert_eq!(sinr_cue(0, &ch, &zero, &pa, 0.5), 0.0);
    }

    #[test]
    fn lone_d2d_pair() {
        let (mut ch, _, _) = instance(1);
        ch.d2d_to_d2d = CMatrix::from_element(1, 1, C64::new(0.3, -0.4));
        ch.bs_to_d2drx.truncate(1);
        ch.d2d_to_cue = ch.d2d_to_cue.rows(0, 1).into_owned();
        let cov = TransmitCovariance::zeros(8, 3);
        let pa = PowerAllocation::new(vec![2.0]);
        let expected = 2.0 * 0.25 / 1e-7;
        assert!((sinr_d2d(0, &ch, &cov, &pa, 1e-7) / expected - 1.0).abs() < 1e-12);
        let off = PowerAllocation::new(vec![0.0]);
        assert_eq!(sinr_d2d(0, &ch, &cov, &off, 1e-7), 0.0);
    }

    #[test]
    fn zf_covariance_removes_bs_interference() {
        let (ch, _, pa) = instance(2);
        let f = &ch.bs_to_d2drx;
        // Project a covariance onto the orthogonal complement of both f_d.
        let fmat = CMatrix::from_columns(&[f[0].clone(), f[1].clone()]);
        let proj = CMatrix::identity(8, 8) - &fmat * (fmat.adjoint() * &fmat).try_inverse().unwrap() * fmat.adjoint();
        let mut rng = RngStream::new(2, "zf").rng();
        let blocks: Vec<CMatrix> = (0..4).map(|_| &proj * random_psd(&mut rng, 8, 2, 100.0) * &proj).collect();
        let cov = TransmitCovariance::from_blocks(blocks);
        for d in 0..2 {
            let with = d2d_interference_plus_noise(d, &ch, &cov, &pa, 1e-7);
            let without = d2d_interference_plus_noise(d, &ch, &TransmitCovariance::zeros(8, 3), &pa, 1e-7);
            assert!((with - without).abs() <= 1e-12 * without);
        }
    }

    #[test]
    fn sum_rate_examples() {
        assert!((report_from_sinrs(vec![1.0], vec![3.0]).sum_rate - 3.0).abs() < 1e-15);
        let (ch, _, _) = instance(3);
        let report = sum_rate(&ch, &TransmitCovariance::zeros(8, 3), &PowerAllocation::uniform(2, 0.0), 1e-7);
        assert_eq!(report.sum_rate, 0.0);
    }

    #[test]
    fn sum_rate_saturates_when_interference_limited() {
        let (ch, cov, pa) = instance(4);
        let mut prev = None;
        let mut values = vec![];
        for lambda in [1e2, 1e4, 1e6] {
            let scaled = cov.scaled(lambda);
            let p = PowerAllocation::new(pa.d2d_powers.iter().map(|x| x * lambda).collect());
            let r = sum_rate(&ch, &scaled, &p, 1e-7).sum_rate;
            values.push(r);
            prev = Some(r);
        }
        // The noise-free limit is the rate with N_c -> 0 at the original scale.
        let limit = sum_rate(&ch, &cov, &pa, 0.0).sum_rate;
        assert!(prev.unwrap() <= limit + 1e-6);
        assert!((values[2] - limit).abs() < (values[0] - limit).abs() + 1e-9);
        assert!((values[2] - limit).abs() < 1e-3 * limit.abs().max(1.0));
    }

    #[test]
    fn log_form_equals_direct_form() {
        for seed in 0..100 {
            let (ch, cov, pa) = instance(seed);
            let a = sum_rate(&ch, &cov, &pa, 1e-7).sum_rate;
            let b = sum_rate_log_form(&ch, &cov, &pa, 1e-7);
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn merged_interference_equals_explicit_form() {
        let (ch, cov, pa) = instance(9);
        for k in 0..3 {
            let h = &ch.bs_to_cue[k];
            let mut explicit = quad_form(h, &cov.radar) + 1e-7;
            for kp in 0..3 {
                if kp != k {
                    explicit += quad_form(h, &cov.per_cue[kp]);
                }
            }
            for d in 0..2 {
                explicit += pa.d2d_powers[d] * ch.d2d_to_cue[(d, k)].norm_sqr();
            }
            let merged = cue_interference_plus_noise(k, &ch, &cov, &pa, 1e-7);
            assert!((explicit - merged).abs() <= 1e-12 * merged);
        }
    }

    #[test]
    fn sinrs_invariant_under_common_rotation() {
        let (ch, cov, pa) = instance(5);
        let mut rng = RngStream::new(5, "unitary").rng();
        let g = CMatrix::from_fn(8, 8, |_, _| complex_gaussian(&mut rng));
        let u = g.qr().q();
        let rot_ch = ChannelSet {
            bs_to_cue: ch.bs_to_cue.iter().map(|h| &u * h).collect(),
            bs_to_d2drx: ch.bs_to_d2drx.iter().map(|f| &u * f).collect(),
            ..ch.clone()
        };
        let rot_cov = TransmitCovariance::new(
            cov.per_cue.iter().map(|w| &u * w * u.adjoint()).collect(),
            &u * &cov.radar * u.adjoint(),
        );
        let a = sum_rate(&ch, &cov, &pa, 1e-7);
        let b = sum_rate(&rot_ch, &rot_cov, &pa, 1e-7);
        for (x, y) in a.cue_sinr.iter().chain(&a.d2d_sinr).zip(b.cue_sinr.iter().chain(&b.d2d_sinr)) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn single_pair_rate_monotone_in_own_power() {
        let (mut ch, cov, _) = instance(6);
        ch.d2d_to_d2d = ch.d2d_to_d2d.view((0, 0), (1, 1)).into_owned();
        ch.bs_to_d2drx.truncate(1);
        ch.d2d_to_cue = ch.d2d_to_cue.rows(0, 1).into_owned();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=20 {
            let p = PowerAllocation::new(vec![i as f64 * 0.5]);
            let d2d_rate = sum_rate(&ch, &cov, &p, 1e-7).d2d_rates[0];
            assert!(d2d_rate >= prev);
            prev = d2d_rate;
        }
    }

    #[test]
    fn two_pairs_can_lose_rate_when_one_raises_power() {
        // Counterexample search: with D >= 2, raising one pair's power can
        // lower the sum rate through cross-interference.
        let mut found = false;
        for seed in 0..200 {
            let (mut ch, cov, _) = instance(seed);
            ch.d2d_to_d2d[(0, 1)] *= 50.0;
            let lo = PowerAllocation::new(vec![0.1, 10.0]);
            let hi = PowerAllocation::new(vec![10.0, 10.0]);
            let zero = TransmitCovariance::zeros(8, 3);
            if sum_rate(&ch, &zero, &hi, 1e-7).sum_rate < sum_rate(&ch, &zero, &lo, 1e-7).sum_rate {
                found = true;
                break;
            }
            let _ = cov;
        }
        assert!(found);
    }

    #[test]
    fn symbol_level_simulation_matches_cue_sinr() {
        let (ch, cov, pa) = instance(7);
        let mut rng = RngStream::new(7, "symbols").rng();
        let n_c: f64 = 1e-7;
        // Precoder factors W = L L^H for symbol generation.
        let factor = |w: &CMatrix| {
            let (vals, vecs) = crate::linalg::hermitian_eigen(w);
            let mut l = vecs.clone();
            for (j, v) in vals.iter().enumerate() {
                let s = v.max(0.0).sqrt();
                for i in 0..l.nrows() {
                    l[(i, j)] *= s;
                }
            }
            l
        };
        let l_cue: Vec<CMatrix> = cov.per_cue.iter().map(factor).collect();
        let l_radar = factor(&cov.radar);
        let k = 1;
        let h = &ch.bs_to_cue[k];
        let (mut sig, mut rest) = (0.0, 0.0);
        let trials = 100_000;
        for _ in 0..trials {
            let mut desired = C64::new(0.0, 0.0);
            let mut other = C64::new(0.0, 0.0);
            for (j, l) in l_cue.iter().enumerate() {
                let s = CVector::from_fn(8, |_, _| complex_gaussian(&mut rng));
                let y = h.dotc(&(l * s));
                if j == k {
                    desired += y;
                } else {
                    other += y;
                }
            }
            let s0 = CVector::from_fn(8, |_, _| complex_gaussian(&mut rng));
            other += h.dotc(&(&l_radar * s0));
            for d in 0..2 {
                other += ch.d2d_to_cue[(d, k)] * pa.d2d_powers[d].sqrt() * complex_gaussian(&mut rng);
            }
            other += complex_gaussian(&mut rng) * n_c.sqrt();
            sig += desired.norm_sqr();
            rest += other.norm_sqr();
        }
        let empirical = sig / rest;
        let exact = sinr_cue(k, &ch, &cov, &pa, n_c);
        assert!((empirical / exact - 1.0).abs() < 0.02, "{empirical} vs {exact}");
    }
}
