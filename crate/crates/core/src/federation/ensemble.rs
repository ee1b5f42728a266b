use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::gbdt::{fit, GbdtModel, GbdtParams};

/// Device id under which the server's own member is recorded.
pub const SERVER_DEVICE_ID: u32 = 0;

/// The server's bagged "supermodel": edge models plus one server-trained
/// member, combined by majority vote.
///
/// Vote ties go to the tied class with the highest mean predicted
/// probability across all members, then to the lowest class id.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    members: Vec<GbdtModel>,
    origins: Vec<u32>,
}

impl EnsembleModel {
    pub fn new(members: Vec<GbdtModel>, origins: Vec<u32>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::IncompatibleModels("an ensemble needs at least one member".into()))?;
        if origins.len() != members.len() {
            return Err(Error::IncompatibleModels(format!(
                "{} members but {} origins",
                members.len(),
                origins.len()
            )));
        }
        for (m, o) in members.iter().zip(&origins) {
            if m.n_classes() != first.n_classes() || m.n_features() != first.n_features() {
                return Err(Error::IncompatibleModels(format!(
                    "member from device {o} has {} classes x {} features, expected {} x {}",
                    m.n_classes(),
                    m.n_features(),
                    first.n_classes(),
                    first.n_features()
                )));
            }
        }
        Ok(Self { members, origins })
    }

    pub fn members(&self) -> &[GbdtModel] {
        &self.members
    }

    pub fn origins(&self) -> &[u32] {
        &self.origins
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }

    pub fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let k = self.n_classes();
        let mut votes = vec![0usize; k];
        let mut mean_proba = vec![0.0; k];
        for m in &self.members {
            let p = m.predict_proba(x)?;
            votes[crate::gbdt::argmax(&p)] += 1;
            for (acc, v) in mean_proba.iter_mut().zip(&p) {
                *acc += v;
            }
        }
        let top = *votes.iter().max().expect("k >= 1");
        let mut best: Option<usize> = None;
        for c in (0..k).filter(|&c| votes[c] == top) {
            if best.is_none_or(|b| mean_proba[c] > mean_proba[b]) {
                best = Some(c);
            }
        }
        Ok(best.expect("some class has the top vote"))
    }
}

/// Combines edge models with a member trained on the server's own split.
pub fn build_ensemble(
    edge_models: Vec<(u32, GbdtModel)>,
    server_train: &Dataset,
    params: &GbdtParams,
) -> Result<EnsembleModel> {
    if edge_models.is_empty() {
        return Err(Error::IncompatibleModels("no edge models to aggregate".into()));
    }
    let (k, d) = (edge_models[0].1.n_classes(), edge_models[0].1.n_features());
    if server_train.n_classes() != k || server_train.n_features() != d {
        return Err(Error::IncompatibleModels(format!(
            "server data has {} classes x {} features, edge models {k} x {d}",
            server_train.n_classes(),
            server_train.n_features()
        )));
    }
    let server = fit(server_train, params)?;
    let (mut origins, mut members): (Vec<u32>, Vec<GbdtModel>) = edge_models.into_iter().unzip();
    origins.push(SERVER_DEVICE_ID);
    members.push(server);
    EnsembleModel::new(members, origins)
}

pub fn ensemble_predict(e: &EnsembleModel, x: &[f64]) -> Result<usize> {
    e.predict(x)
}
