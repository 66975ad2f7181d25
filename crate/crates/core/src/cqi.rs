//! Per-subcarrier SNR and wideband/subband CQI.

use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const NUM_CQI: usize = 16;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudget {
            tx_power_dbm: 23.0,
            noise_power_dbm: -95.0,
        }
    }
}

impl LinkBudget {
    pub fn tx_to_noise_linear(&self) -> f64 {
        db_to_linear(self.tx_power_dbm - self.noise_power_dbm)
    }
}

/// 15 ascending SNR thresholds (dB). `thresholds_db[i]` is the lower edge of
/// CQI index `i + 1`; anything below the first threshold is index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CqiTable {
    thresholds_db: [f64; NUM_CQI - 1],
}

impl Default for CqiTable {
    /// Uniform thresholds from −6 dB to +22 dB.
    fn default() -> Self {
        let mut t = [0.0; NUM_CQI - 1];
        for (i, v) in t.iter_mut().enumerate() {
            *v = -6.0 + 2.0 * i as f64;
        }
        CqiTable { thresholds_db: t }
    }
}

impl TryFrom<Vec<f64>> for CqiTable {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        CqiTable::new(&v)
    }
}

impl From<CqiTable> for Vec<f64> {
    fn from(t: CqiTable) -> Vec<f64> {
        t.thresholds_db.to_vec()
    }
}

impl CqiTable {
    pub fn new(thresholds_db: &[f64]) -> Result<Self> {
        let t: [f64; NUM_CQI - 1] = thresholds_db.try_into().map_err(|_| {
            Error::Config(format!(
                "cqi.thresholds_db needs exactly {} values, got {}",
                NUM_CQI - 1,
                thresholds_db.len()
            ))
        })?;
        if t.iter().any(|v| !v.is_finite()) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "cqi.thresholds_db must be finite and strictly increasing".into(),
            ));
        }
        Ok(CqiTable { thresholds_db: t })
    }

    pub fn thresholds_db(&self) -> &[f64] {
        &self.thresholds_db
    }

    /// CQI index for an SNR in dB (`-inf` maps to 0).
    pub fn index_db(&self, snr_db: f64) -> u8 {
        self.thresholds_db.iter().take_while(|&&t| snr_db >= t).count() as u8
    }

    pub fn index_linear(&self, snr: f64) -> u8 {
        if snr <= 0.0 {
            0
        } else {
            self.index_db(linear_to_db(snr))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CqiMode {
    None,
    Wideband,
    #[default]
    Subband,
}

impl std::fmt::Display for CqiMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CqiMode::None => "none",
            CqiMode::Wideband => "wideband",
            CqiMode::Subband => "subband",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CqiReport {
    None,
    Wideband(u8),
    Subband(Vec<u8>),
}

impl CqiReport {
    pub fn mode(&self) -> CqiMode {
        match self {
            CqiReport::None => CqiMode::None,
            CqiReport::Wideband(_) => CqiMode::Wideband,
            CqiReport::Subband(_) => CqiMode::Subband,
        }
    }

    pub fn indices(&self) -> &[u8] {
        match self {
            CqiReport::None => &[],
            CqiReport::Wideband(k) => std::slice::from_ref(k),
            CqiReport::Subband(v) => v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.indices().iter().find(|&&k| k as usize >= NUM_CQI) {
            Some(k) => Err(Error::Contract(format!("CQI index {k} outside 0..15"))),
            None => Ok(()),
        }
    }
}

/// CQI settings shared by reporting and the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqiConfig {
    pub thresholds_db: CqiTable,
    pub subcarriers_per_subband: usize,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
}

impl Default for CqiConfig {
    fn default() -> Self {
        let lb = LinkBudget::default();
        CqiConfig {
            thresholds_db: CqiTable::default(),
            subcarriers_per_subband: 4,
            tx_power_dbm: lb.tx_power_dbm,
            noise_power_dbm: lb.noise_power_dbm,
        }
    }
}

impl CqiConfig {
    pub fn link_budget(&self) -> LinkBudget {
        LinkBudget {
            tx_power_dbm: self.tx_power_dbm,
            noise_power_dbm: self.noise_power_dbm,
        }
    }

    pub fn validate(&self, n_c: usize) -> Result<()> {
        if !self.tx_power_dbm.is_finite() || !self.noise_power_dbm.is_finite() {
            return Err(Error::Config("cqi: link budget must be finite".into()));
        }
        num_subbands(n_c, self.subcarriers_per_subband).map(|_| ())
    }

    /// CQI report of `h` in the requested mode.
    pub fn report(&self, h: &ChannelMatrix, mode: CqiMode) -> Result<CqiReport> {
        let rho = subcarrier_snr(h, &self.link_budget());
        Ok(match mode {
            CqiMode::None => CqiReport::None,
            CqiMode::Wideband => CqiReport::Wideband(wideband_cqi(&rho, &self.thresholds_db)),
            CqiMode::Subband => CqiReport::Subband(subband_cqi(
                &rho,
                &self.thresholds_db,
                self.subcarriers_per_subband,
            )?),
        })
    }
}

pub fn num_subbands(n_c: usize, per_subband: usize) -> Result<usize> {
    if per_subband == 0 || n_c % per_subband != 0 {
        return Err(Error::Config(format!(
            "N_c = {n_c} is not divisible by {per_subband} subcarriers per subband"
        )));
    }
    Ok(n_c / per_subband)
}

/// Linear MRT SNR per subcarrier: `ρ_n = (P_tx / σ²) · ‖h_n‖²`.
pub fn subcarrier_snr(h: &ChannelMatrix, lb: &LinkBudget) -> Vec<f64> {
    let ratio = lb.tx_to_noise_linear();
    let (n_t, n_c) = h.dims();
    let mut rho = vec![0.0; n_c];
    for a in 0..n_t {
        for (n, r) in rho.iter_mut().enumerate() {
            *r += h.get(a, n).norm_sqr();
        }
    }
    rho.iter_mut().for_each(|r| *r *= ratio);
    rho
}

/// Index of the linear mean SNR over all subcarriers.
pub fn wideband_cqi(rho: &[f64], tbl: &CqiTable) -> u8 {
    let mean = order_free_sum(rho) / rho.len() as f64;
    tbl.index_linear(mean)
}

/// Per-subband indices over contiguous blocks of `per_subband` subcarriers.
pub fn subband_cqi(rho: &[f64], tbl: &CqiTable, per_subband: usize) -> Result<Vec<u8>> {
    num_subbands(rho.len(), per_subband)?;
    Ok(rho
        .chunks(per_subband)
        .map(|block| tbl.index_linear(order_free_sum(block) / per_subband as f64))
        .collect())
}

// Sorted summation: reordering subcarriers cannot change the rounded mean, and
// one subband spanning the band reproduces the wideband value bit for bit.
fn order_free_sum(block: &[f64]) -> f64 {
    let mut v = block.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}
