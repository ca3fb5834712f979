use std::path::Path;

use fimlab::fim::LocalModel;
use fimlab::network::ParamSet;
use fimlab::{Activation, FamilyKind, FamilyModel, FimError, Limits, NetworkSpec, Params, Subset};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::args::ModelArgs;
use crate::error::{CliError, CliResult};

/// `"bernoulli"` or `{"family": "bernoulli", "dim": 2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyField {
    Name(String),
    Full {
        family: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
}

/// Network JSON as written by users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub layers: Vec<usize>,
    pub activation: String,
    pub family: FamilyField,
    /// Weight initialization seed, and the default sampling seed.
    #[serde(default)]
    pub seed: u64,
    /// `W_l` as rows of length `n_l + 1`, bias last.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<Vec<f64>>>>,
    pub x: Vec<f64>,
}

impl NetworkFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::InvalidJson {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// A validated network at one input, with its subset-local derivatives.
pub struct Model {
    pub spec: NetworkSpec,
    pub params: Params,
    pub x: Array1<f64>,
    pub subset: Subset,
    pub local: LocalModel<f64>,
    pub master_seed: u64,
}

fn family_from(field: &FamilyField, override_name: Option<&str>, n_out: usize) -> CliResult<FamilyModel> {
    let (name, dim) = match (override_name, field) {
        (Some(name), _) => (name, None),
        (None, FamilyField::Name(name)) => (name.as_str(), None),
        (None, FamilyField::Full { family, dim }) => (family.as_str(), *dim),
    };
    let kind: FamilyKind = name.parse()?;
    Ok(FamilyModel::new(kind, dim.unwrap_or(n_out))?)
}

/// Zeroes the last layer and sets its bias so every mean parameter is `p`.
fn pin_mean(spec: &NetworkSpec, params: &mut Params, p: f64) -> CliResult<()> {
    let family = spec.family();
    if !family.kind().is_factorized() {
        return Err(CliError::Config(format!("--p needs a factorized family, not {}", family.kind())));
    }
    let h = family.natural_from_mean(&Array1::from_elem(family.dim_h(), p))?;
    let w = params.weight_mut(spec.depth() - 1);
    w.fill(0.0);
    let bias = w.ncols() - 1;
    w.column_mut(bias).assign(&h);
    Ok(())
}

pub fn build_model(file: &NetworkFile, args: &ModelArgs) -> CliResult<Model> {
    let activation: Activation = file.activation.parse()?;
    let n_out = *file
        .layers
        .last()
        .ok_or_else(|| FimError::InvalidNetwork("`layers` is empty".into()))?;
    let family = family_from(&file.family, args.family.as_deref(), n_out)?;
    let spec = NetworkSpec::new(file.layers.clone(), activation, family)?;
    let mut params = match &file.weights {
        Some(ws) => {
            let mats = ws
                .iter()
                .map(|rows| {
                    let r = rows.len();
                    let c = rows.first().map_or(0, Vec::len);
                    if rows.iter().any(|row| row.len() != c) {
                        return Err(CliError::Config("weight rows have unequal lengths".into()));
                    }
                    Array2::from_shape_vec((r, c), rows.concat()).map_err(|e| CliError::Config(e.to_string()))
                })
                .collect::<CliResult<Vec<_>>>()?;
            ParamSet::from_weights(&spec, mats)?
        }
        None => ParamSet::init_uniform(&spec, file.seed),
    };
    if let Some(p) = args.p {
        pin_mean(&spec, &mut params, p)?;
    }
    let x = Array1::from(file.x.clone());
    spec.check_input(&x)?;
    let subset = Subset::parse(&args.subset, &spec.layer_ranges(), spec.num_params())?;
    let local = LocalModel::new(&spec, &params, &x, &subset, &Limits::default())?;
    Ok(Model {
        spec,
        params,
        x,
        subset,
        local,
        master_seed: args.seed.unwrap_or(file.seed),
    })
}
