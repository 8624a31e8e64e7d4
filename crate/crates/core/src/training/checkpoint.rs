//! Training state on disk: network weights, Adam moments, the discriminator
//! and the iteration counter in one tensor container.

use std::collections::HashMap;
use std::path::Path;

use photoseq_tensor::{Adam, ParamStore, Tensor};

use super::{Discriminator, LossWeights, TrainSchedule};
use crate::container::{self, Metadata};
use crate::net::Decomposer;
use crate::{Error, Result};

const FORMAT: &str = "photoseq-checkpoint";
const VERSION: &str = "1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Iterations completed.
    pub iteration: u64,
    pub net: Decomposer,
    pub adam: Adam,
    pub discriminator: Option<Discriminator>,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
}

fn push<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, store: &'a ParamStore, m: &'a [Tensor], v: &'a [Tensor]) {
    for (((_, name, t), m), v) in store.iter().zip(m).zip(v) {
        out.push((format!("{prefix}.{name}"), t));
        out.push((format!("{prefix}_adam_m.{name}"), m));
        out.push((format!("{prefix}_adam_v.{name}"), v));
    }
}

fn bad(detail: impl ToString) -> Error {
    Error::Weights(format!("checkpoint: {}", detail.to_string()))
}

/// Remove `prefix.` tensors, rebuilding a store in `names` order plus its
/// Adam moments.
fn take(
    tensors: &mut HashMap<String, Tensor>,
    prefix: &str,
    names: &[String],
) -> Result<(Vec<(String, Tensor)>, Vec<Tensor>, Vec<Tensor>)> {
    let mut get = |k: String| tensors.remove(&k).ok_or_else(|| bad(format!("missing {k}")));
    let mut params = Vec::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for name in names {
        params.push((name.clone(), get(format!("{prefix}.{name}"))?));
        m.push(get(format!("{prefix}_adam_m.{name}"))?);
        v.push(get(format!("{prefix}_adam_v.{name}"))?);
    }
    Ok((params, m, v))
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut meta = Metadata::new();
        meta.insert("format".into(), FORMAT.into());
        meta.insert("version".into(), VERSION.into());
        meta.insert("iteration".into(), self.iteration.to_string());
        meta.insert("adam_step".into(), self.adam.steps_taken().to_string());
        meta.insert("schedule".into(), serde_json::to_string(&self.schedule).expect("schedule serializes"));
        meta.insert("loss_weights".into(), serde_json::to_string(&self.weights).expect("weights serialize"));
        for (k, v) in self.net.weight_metadata() {
            meta.insert(format!("net.{k}"), v);
        }
        let mut tensors = Vec::new();
        push(&mut tensors, "net", self.net.params(), self.adam.first_moments(), self.adam.second_moments());
        if let Some(d) = &self.discriminator {
            meta.insert("disc.base".into(), d.base_channels().to_string());
            meta.insert("disc.adam_step".into(), d.optimizer().steps_taken().to_string());
            push(&mut tensors, "disc", d.params(), d.optimizer().first_moments(), d.optimizer().second_moments());
        }
        container::encode(&tensors, &meta)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = container::decode(bytes)?;
        let field = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing metadata key {k}")));
        let number = |k: &str| field(k)?.parse::<u64>().map_err(|e| bad(format!("{k}: {e}")));
        if field("format")? != FORMAT || field("version")? != VERSION {
            return Err(bad(format!("unsupported format {} v{}", field("format")?, field("version")?)));
        }
        let iteration = number("iteration")?;
        let schedule: TrainSchedule = serde_json::from_str(field("schedule")?).map_err(bad)?;
        let weights: LossWeights = serde_json::from_str(field("loss_weights")?).map_err(bad)?;
        let net_meta: Metadata = meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("net.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let config: crate::NetworkConfig =
            serde_json::from_str(net_meta.get("config").ok_or_else(|| bad("missing network config"))?).map_err(bad)?;
        config.validate()?;

        let mut tensors: HashMap<String, Tensor> = tensors.into_iter().collect();
        let names: Vec<String> = config.param_layout().into_iter().map(|(n, _)| n).collect();
        let (params, m, v) = take(&mut tensors, "net", &names)?;
        let net = Decomposer::from_parts(&net_meta, params)?;
        let adam = Adam::from_state(number("adam_step")?, m, v, net.params()).map_err(bad)?;

        let discriminator = match meta.get("disc.base") {
            None => None,
            Some(base) => {
                let base: usize = base.parse().map_err(|e| bad(format!("disc.base: {e}")))?;
                let probe = Discriminator::new(base, 0)?;
                let names: Vec<String> = probe.params().iter().map(|(_, n, _)| n.to_string()).collect();
                let (params, m, v) = take(&mut tensors, "disc", &names)?;
                let mut store = ParamStore::new();
                for (n, t) in params {
                    store.insert(n, t)?;
                }
                let adam = Adam::from_state(number("disc.adam_step")?, m, v, &store).map_err(bad)?;
                Some(Discriminator::from_parts(base, store, adam)?)
            }
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(bad(format!("unexpected tensor {extra}")));
        }
        Ok(Self { iteration, net, adam, discriminator, schedule, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format { what, detail } => Error::Weights(format!("{}: malformed {what}: {detail}", path.display())),
            other => other,
        })
    }
}
