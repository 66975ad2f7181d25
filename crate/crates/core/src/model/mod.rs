//! CQI-conditioned transformer autoencoder with learned-constellation
//! (JCM) or analog modulation over an AWGN feedback link.

pub mod checkpoint;
mod config;
mod constellation;
mod net;
mod params;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use config::{ConstellationKind, HardDecision, ModelConfig, ModulationMode};
pub use constellation::Constellation;
pub use net::{
    awgn, awgn_noise, gumbel, modulate_jcm, modulate_jcm_on_tape, Bound, Forward, LinkOptions,
    Model, Side, SymbolMode, SymbolSequence,
};
pub use params::{ParamId, ParamStore};

use crate::error::Result;

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                model: self.config().clone(),
                input_scale: self.input_scale(),
                cqi: None,
                train: None,
            },
            params: self.params().clone(),
            moments: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        Model::from_parts(ck.header.model.clone(), ck.params.clone(), ck.header.input_scale)
    }
}
