//! Single-file checkpoints: safetensors payload holding every network weight
//! and both optimizers' moments, with the network config and training state
//! as JSON metadata.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use super::{AdamState, TrainState};
use crate::error::{Error, Result};
use crate::model::{NetKind, NetworkConfig, Networks};
use crate::objectives::LossReport;
use crate::tensor::to_vec_f32;

pub const FORMAT_TAG: &str = "regionswap-ckpt-v1";

const WEIGHTS: &str = "weights.";
const OPT_G: &str = "opt_g.";
const OPT_D: &str = "opt_d.";

#[derive(Serialize, Deserialize)]
struct StateJson {
    iteration: u64,
    k_interval: u64,
    warmup: u64,
    seed: u64,
    history_len: usize,
    history: Vec<LossReport>,
    opt_g_step: u64,
    opt_d_step: u64,
}

struct Blob {
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

fn blob(t: &Tensor) -> Blob {
    Blob {
        shape: t.size().iter().map(|&d| d as usize).collect(),
        bytes: to_vec_f32(t).iter().flat_map(|v| v.to_le_bytes()).collect(),
    }
}

fn add_moments(out: &mut BTreeMap<String, Blob>, prefix: &str, st: &AdamState) {
    for (name, (m, v)) in &st.moments {
        out.insert(format!("{prefix}m.{name}"), blob(m));
        out.insert(format!("{prefix}v.{name}"), blob(v));
    }
}

pub fn save_checkpoint(path: &Path, state: &TrainState, nets: &Networks) -> Result<()> {
    let mut blobs = BTreeMap::new();
    for (name, t) in nets.parameters(&NetKind::ALL) {
        blobs.insert(format!("{WEIGHTS}{name}"), blob(&t));
    }
    add_moments(&mut blobs, OPT_G, &state.opt_g);
    add_moments(&mut blobs, OPT_D, &state.opt_d);
    let views = blobs
        .iter()
        .map(|(k, b)| {
            TensorView::new(Dtype::F32, b.shape.clone(), &b.bytes)
                .map(|v| (k.clone(), v))
                .map_err(|e| Error::checkpoint(path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let st = StateJson {
        iteration: state.iteration,
        k_interval: state.k_interval,
        warmup: state.warmup,
        seed: state.seed,
        history_len: state.history_len,
        history: state.history.iter().cloned().collect(),
        opt_g_step: state.opt_g.step,
        opt_d_step: state.opt_d.step,
    };
    let meta = HashMap::from([
        ("format".to_string(), FORMAT_TAG.to_string()),
        ("network_config".to_string(), serde_json::to_string(nets.config())?),
        ("train_state".to_string(), serde_json::to_string(&st)?),
    ]);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    safetensors::serialize_to_file(views, &Some(meta), &tmp)
        .map_err(|e| Error::checkpoint(path, e.to_string()))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn to_tensor(view: &TensorView<'_>) -> Result<Tensor> {
    let data: Vec<f32> = view
        .data()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let shape: Vec<i64> = view.shape().iter().map(|&d| d as i64).collect();
    Ok(Tensor::from_slice(&data).view(shape.as_slice()))
}

fn moments(st: &SafeTensors<'_>, prefix: &str, step: u64) -> Result<AdamState> {
    let mut out = AdamState {
        step,
        moments: BTreeMap::new(),
    };
    let mprefix = format!("{prefix}m.");
    for (key, view) in st.tensors() {
        if let Some(name) = key.strip_prefix(&mprefix) {
            let v = st
                .tensor(&format!("{prefix}v.{name}"))
                .map_err(|e| Error::checkpoint(Path::new(&key), e.to_string()))?;
            out.moments
                .insert(name.to_string(), (to_tensor(&view)?, to_tensor(&v)?));
        }
    }
    Ok(out)
}

/// Reads the header only: format tag and network config.
pub fn read_header(path: &Path) -> Result<(NetworkConfig, HashMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    header_from(path, &bytes)
}

fn header_from(path: &Path, bytes: &[u8]) -> Result<(NetworkConfig, HashMap<String, String>)> {
    let (_, meta) =
        SafeTensors::read_metadata(bytes).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    let meta = meta.metadata().clone().unwrap_or_default();
    match meta.get("format") {
        Some(tag) if tag == FORMAT_TAG => {}
        Some(tag) => {
            return Err(Error::checkpoint(
                path,
                format!("format tag {tag:?}, expected {FORMAT_TAG:?}"),
            ))
        }
        None => return Err(Error::checkpoint(path, "missing format tag")),
    }
    let cfg = meta
        .get("network_config")
        .ok_or_else(|| Error::checkpoint(path, "missing network_config"))?;
    let cfg: NetworkConfig =
        serde_json::from_str(cfg).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok((cfg, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainState, Networks)> {
    let bytes = std::fs::read(path).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    let (cfg, meta) = header_from(path, &bytes)?;
    let st: StateJson = serde_json::from_str(
        meta.get("train_state")
            .ok_or_else(|| Error::checkpoint(path, "missing train_state"))?,
    )
    .map_err(|e| Error::checkpoint(path, e.to_string()))?;
    let tensors =
        SafeTensors::deserialize(&bytes).map_err(|e| Error::checkpoint(path, e.to_string()))?;

    let nets = Networks::new(cfg)?;
    tch::no_grad(|| -> Result<()> {
        for (name, mut p) in nets.parameters(&NetKind::ALL) {
            let view = tensors
                .tensor(&format!("{WEIGHTS}{name}"))
                .map_err(|_| Error::checkpoint(path, format!("missing weight {name}")))?;
            if view.dtype() != Dtype::F32 {
                return Err(Error::checkpoint(path, format!("{name}: expected f32")));
            }
            let t = to_tensor(&view)?;
            if t.size() != p.size() {
                return Err(Error::checkpoint(
                    path,
                    format!("{name}: shape {:?} vs model {:?}", t.size(), p.size()),
                ));
            }
            p.copy_(&t.to_kind(Kind::Float));
        }
        Ok(())
    })?;
    let state = TrainState {
        iteration: st.iteration,
        k_interval: st.k_interval,
        warmup: st.warmup,
        seed: st.seed,
        history: VecDeque::from(st.history),
        history_len: st.history_len,
        opt_g: moments(&tensors, OPT_G, st.opt_g_step)?,
        opt_d: moments(&tensors, OPT_D, st.opt_d_step)?,
    };
    Ok((state, nets))
}
