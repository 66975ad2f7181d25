//! Reconstruction quality: NMSE and squared generalized cosine similarity.

use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NmseResult {
    pub nmse_linear: f64,
    pub nmse_db: f64,
    /// Samples skipped because `‖H‖_F = 0`.
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SgcsResult {
    pub sgcs: f64,
    /// Subcarriers skipped because `h_n` or `ĥ_n` is zero.
    pub excluded_columns: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricResult {
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub sgcs: f64,
    pub excluded_samples: usize,
    pub excluded_columns: usize,
}

fn check_pairs(h: &[ChannelMatrix], h_hat: &[ChannelMatrix]) -> Result<()> {
    if h.len() != h_hat.len() {
        return Err(Error::Dimension(format!(
            "{} channels vs {} reconstructions",
            h.len(),
            h_hat.len()
        )));
    }
    if let Some((a, b)) = h.iter().zip(h_hat).find(|(a, b)| a.dims() != b.dims()) {
        return Err(Error::Dimension(format!(
            "shape {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `‖H − Ĥ‖²_F / ‖H‖²_F`, or `None` for a zero `H`.
pub fn nmse_sample(h: &ChannelMatrix, h_hat: &ChannelMatrix) -> Option<f64> {
    let den = h.frobenius_sq();
    if den == 0.0 {
        return None;
    }
    let num: f64 = h
        .as_slice()
        .iter()
        .zip(h_hat.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Some(num / den)
}

/// Per-subcarrier squared cosine similarities of one sample; zero columns
/// yield `None`.
pub fn sgcs_columns(h: &ChannelMatrix, h_hat: &ChannelMatrix) -> Vec<Option<f64>> {
    (0..h.n_c())
        .map(|n| {
            let mut inner = Complex64::new(0.0, 0.0);
            let (mut nh, mut nhh) = (0.0, 0.0);
            for a in 0..h.n_t() {
                let x = h.get(a, n);
                let y = h_hat.get(a, n);
                inner += y.conj() * x;
                nh += x.norm_sqr();
                nhh += y.norm_sqr();
            }
            if nh == 0.0 || nhh == 0.0 {
                return None;
            }
            // |ĥᴴh|² / (‖ĥ‖²‖h‖²), clamped against rounding above 1
            Some((inner.norm_sqr() / (nh * nhh)).min(1.0))
        })
        .collect()
}

/// Mean over included subcarriers of one sample.
pub fn sgcs_sample(h: &ChannelMatrix, h_hat: &ChannelMatrix) -> (Option<f64>, usize) {
    let cols = sgcs_columns(h, h_hat);
    let kept: Vec<f64> = cols.iter().flatten().copied().collect();
    let excluded = cols.len() - kept.len();
    if kept.is_empty() {
        (None, excluded)
    } else {
        (Some(kept.iter().sum::<f64>() / kept.len() as f64), excluded)
    }
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn nmse(h: &[ChannelMatrix], h_hat: &[ChannelMatrix]) -> Result<NmseResult> {
    check_pairs(h, h_hat)?;
    let vals: Vec<f64> = h.iter().zip(h_hat).filter_map(|(a, b)| nmse_sample(a, b)).collect();
    let excluded = h.len() - vals.len();
    if vals.is_empty() {
        return Err(Error::Contract("no nonzero channel to normalize by".into()));
    }
    let lin = vals.iter().sum::<f64>() / vals.len() as f64;
    Ok(NmseResult {
        nmse_linear: lin,
        nmse_db: to_db(lin),
        excluded,
    })
}

pub fn sgcs(h: &[ChannelMatrix], h_hat: &[ChannelMatrix]) -> Result<SgcsResult> {
    check_pairs(h, h_hat)?;
    let mut total = 0.0;
    let mut count = 0usize;
    let mut excluded_columns = 0;
    for (a, b) in h.iter().zip(h_hat) {
        let (v, ex) = sgcs_sample(a, b);
        excluded_columns += ex;
        if let Some(v) = v {
            total += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("every subcarrier has a zero column".into()));
    }
    Ok(SgcsResult {
        sgcs: total / count as f64,
        excluded_columns,
    })
}

pub fn evaluate_pairs(h: &[ChannelMatrix], h_hat: &[ChannelMatrix]) -> Result<MetricResult> {
    let n = nmse(h, h_hat)?;
    let s = sgcs(h, h_hat)?;
    Ok(MetricResult {
        nmse_linear: n.nmse_linear,
        nmse_db: n.nmse_db,
        sgcs: s.sgcs,
        excluded_samples: n.excluded,
        excluded_columns: s.excluded_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_h(seed: u64, n_t: usize, n_c: usize) -> ChannelMatrix {
        let mut rng = substream(seed, &[]);
        let data = (0..n_t * n_c)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ChannelMatrix::new(n_t, n_c, data).unwrap()
    }

    #[test]
    fn nmse_examples() {
        let h = random_h(1, 4, 8);
        let r = nmse(&[h.clone()], &[h.clone()]).unwrap();
        assert_eq!(r.nmse_linear, 0.0);
        assert_eq!(r.nmse_db, f64::NEG_INFINITY);
        let z = ChannelMatrix::zeros(4, 8);
        let r = nmse(&[h.clone()], &[z.clone()]).unwrap();
        assert_eq!(r.nmse_linear, 1.0);
        assert_eq!(r.nmse_db, 0.0);
        let r = nmse(&[h.clone()], &[h.scaled(1.1)]).unwrap();
        assert!((r.nmse_linear - 0.01).abs() < 1e-12);
        assert!((r.nmse_db + 20.0).abs() < 1e-9);
        let r = nmse(&[h.clone(), z.clone()], &[z.clone(), z.clone()]).unwrap();
        assert_eq!((r.nmse_linear, r.excluded), (1.0, 1));
        assert!(nmse(&[h.clone()], &[]).is_err());
    }

    #[test]
    fn sgcs_examples() {
        let h = random_h(2, 4, 8);
        let rot = Complex64::from_polar(2.5, 0.7);
        let h_rot = ChannelMatrix::new(4, 8, h.as_slice().iter().map(|z| z * rot).collect()).unwrap();
        assert!((sgcs(&[h.clone()], &[h_rot]).unwrap().sgcs - 1.0).abs() < 1e-12);
        assert!((sgcs(&[h.clone()], &[h.clone()]).unwrap().sgcs - 1.0).abs() < 1e-12);

        // ĥ_n ⟂ h_n: h_n = e_0, ĥ_n = e_1
        let mut a = ChannelMatrix::zeros(2, 3);
        let mut b = ChannelMatrix::zeros(2, 3);
        for n in 0..3 {
            a.set(0, n, Complex64::new(1.0, 0.0));
            b.set(1, n, Complex64::new(0.0, 1.0));
        }
        assert_eq!(sgcs(&[a.clone()], &[b]).unwrap().sgcs, 0.0);

        let mut c = a.clone();
        c.set(0, 1, Complex64::new(0.0, 0.0));
        let r = sgcs(&[a.clone()], &[c]).unwrap();
        assert_eq!((r.sgcs, r.excluded_columns), (1.0, 1));
    }

    proptest! {
        #[test]
        fn sgcs_column_scaling_invariance(seed in 0u64..1000, mag in 0.1f64..10.0, ph in -3.0f64..3.0, col in 0usize..8) {
            let h = random_h(seed, 4, 8);
            let hh = random_h(seed + 5000, 4, 8);
            let mut scaled = hh.clone();
            let c = Complex64::from_polar(mag, ph);
            for a in 0..4 {
                scaled.set(a, col, hh.get(a, col) * c);
            }
            let s0 = sgcs(&[h.clone()], &[hh]).unwrap().sgcs;
            let s1 = sgcs(&[h], &[scaled]).unwrap().sgcs;
            prop_assert!((s0 - s1).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&s0));
        }

        #[test]
        fn nmse_is_scale_free(seed in 0u64..1000, c in 0.01f64..100.0) {
            let h = random_h(seed, 4, 8);
            let hh = random_h(seed + 1, 4, 8);
            let a = nmse(&[h.clone()], &[hh.clone()]).unwrap().nmse_linear;
            let b = nmse(&[h.scaled(c)], &[hh.scaled(c)]).unwrap().nmse_linear;
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
