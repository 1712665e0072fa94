//! Labeled clips: the planted-signal generator and the SAPB feature file.

mod bankfile;
mod generator;

pub use bankfile::{decode_bank, encode_bank, read_bank_file, write_bank_file, BankDataset, BankDims, FormatError, MAGIC, VERSION};
pub use generator::{
    generate_dataset, generate_planted, nearest_prototype, GenError, GeneratorSpec, PlantedEpisode, World,
};

use crate::sap::{BranchFeature, ObjectBank, SapInputs};
use crate::training::Labels;

/// One labeled clip: both global features, the object bank and the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub verb_feature: BranchFeature,
    pub noun_feature: BranchFeature,
    pub bank: ObjectBank,
    pub labels: Labels,
}

impl Episode {
    pub fn inputs(&self) -> SapInputs<'_> {
        SapInputs {
            verb: &self.verb_feature,
            noun: &self.noun_feature,
            bank: &self.bank,
        }
    }
}
