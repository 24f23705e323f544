use super::config::{ExperimentConfig, ModelKind};
use super::report::RunReport;
use super::train::train_labelled;
use crate::cnn::Placement;
use crate::error::{Error, Result};
use crate::sample::Dataset;

/// One cell of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub config: ExperimentConfig,
}

/// The ablation grid for an NSATP model, in table order: every
/// stationarization-on row first, then the same switches with it off.
pub fn ablation_grid(cfg: &ExperimentConfig) -> Result<Vec<AblationCell>> {
    let switches: Vec<(&str, ExperimentConfig)> = match cfg.model {
        ModelKind::NsatpCnn => [
            ("IN", Placement::InsideEachBlock),
            ("OUT", Placement::AfterLastBlock),
        ]
        .into_iter()
        .map(|(name, placement)| {
            let mut c = cfg.clone();
            c.cnn.placement = placement;
            (name, c)
        })
        .collect(),
        ModelKind::NsatpSwin => [
            ("only τ¹,Δ¹", true, false),
            ("only τ²,Δ²", false, true),
            ("both", true, true),
        ]
        .into_iter()
        .map(|(name, inner, outer)| {
            let mut c = cfg.clone();
            c.swin.comp_inner = inner;
            c.swin.comp_outer = outer;
            (name, c)
        })
        .collect(),
        other => {
            return Err(Error::Config(format!(
                "ablation needs nsatp_cnn or nsatp_swin, got {}",
                other.name()
            )))
        }
    };
    let mut cells = Vec::with_capacity(2 * switches.len());
    for ss in [true, false] {
        for (name, c) in &switches {
            let mut config = c.clone();
            config.stationarization = ss;
            config.revin = config.revin && ss;
            let label = format!(
                "{} SS {} {name}",
                cfg.model.name(),
                if ss { "w/" } else { "w/o" }
            );
            config.validate()?;
            cells.push(AblationCell { label, config });
        }
    }
    Ok(cells)
}

/// Trains every cell of the grid on `ds`.
pub fn ablate(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<RunReport>> {
    ablation_grid(cfg)?
        .iter()
        .map(|cell| Ok(train_labelled(&cell.config, ds, &cell.label)?.report))
        .collect()
}
