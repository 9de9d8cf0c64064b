use std::path::Path;

use super::{DataSource, FarconConfig};
use crate::data::{
    build_counterfactual_pairs, corrupt_sensitive, load_tabular, split, Dataset, PairedDataset, Schema, Standardizer,
};
use crate::error::Result;

/// Every split an experiment needs, standardized with train statistics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Training rows after `s` corruption, with counterfactual partners.
    pub train: PairedDataset,
    pub train_clean: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    /// Clean rows for the s-probe: the whole tabular dataset, or the
    /// independent probe draw for synthetic data.
    pub probe: Dataset,
    pub standardizer: Standardizer,
}

pub fn prepare_data(cfg: &FarconConfig, data_dir: &Path) -> Result<PreparedData> {
    let (train, valid, test, probe) = match &cfg.data {
        DataSource::Tabular { csv, schema } => {
            let schema = Schema::load(&data_dir.join(schema))?;
            let full = load_tabular(&data_dir.join(csv), &schema)?;
            let parts = split(&full, cfg.split, cfg.split_seed)?;
            (parts.train, parts.valid, parts.test, full)
        }
        DataSource::Synthetic { spec } => {
            let (draw, test) = spec.generate()?;
            let head = cfg.split[0] + cfg.split[1];
            let parts = split(&draw, [cfg.split[0] / head, cfg.split[1] / head, 0.0], cfg.split_seed)?;
            (parts.train, parts.valid, test, spec.probe_set()?)
        }
    };
    let standardizer = Standardizer::fit(&train)?;
    let train_clean = standardizer.apply(&train);
    let noisy = corrupt_sensitive(&train_clean, cfg.sensitive_noise, cfg.seed)?;
    Ok(PreparedData {
        train: build_counterfactual_pairs(&noisy, cfg.pairing)?,
        train_clean,
        valid: standardizer.apply(&valid),
        test: standardizer.apply(&test),
        probe: standardizer.apply(&probe),
        standardizer,
    })
}
