//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LAMPCKPT"  u32 version
//! u32 n, n bytes        config as key=value lines
//! 5 × f64               per-metric thresholds (acc, ha, ebf1, mif1, maf1)
//! u32 L, L·L bytes      label adjacency (L = 0 when absent)
//! u32 N, u32 E, E × (u32, u32)   input graph (N = 0 when absent)
//! u32 count, then per tensor:
//!     u32 len, name, u32 rank, rank × u64 dims, u8 dtype (4 | 8), data
//! 32 bytes              SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use lamp_core::graph::{GraphMode, InputGraph, LabelGraph};
use lamp_core::loss::IntermediateStages;
use lamp_core::model::LampConfig;
use lamp_core::{InputKind, MlpBaseline, MultiLabelModel, ParamStore, Precision, Real, Schema, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LAMPCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Lamp,
    Mlp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lamp => "lamp",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lamp" => Some(ModelKind::Lamp),
            "mlp" => Some(ModelKind::Mlp),
            _ => None,
        }
    }
}

/// Hyperparameters of the MLP baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub schema: Schema,
    pub d: usize,
    pub dropout: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl MlpConfig {
    pub fn build<T: Real>(&self) -> Result<MlpBaseline<T>> {
        Ok(MlpBaseline::new(self.schema.clone(), self.d, self.dropout, self.seed)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub thresholds: [f64; 5],
    pub adjacency: Option<Vec<bool>>,
    pub input_graph: Option<(usize, Vec<(usize, usize)>)>,
    pub tensors: Vec<StoredTensor>,
}

fn schema_kv(map: &mut BTreeMap<String, String>, s: &Schema) {
    map.insert("num_labels".into(), s.num_labels.to_string());
    map.insert("num_features".into(), s.num_features.to_string());
    map.insert("input_kind".into(), s.input_kind.as_str().into());
    map.insert("max_len".into(), s.max_len.to_string());
}

pub fn lamp_config_to_kv(c: &LampConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("model".into(), ModelKind::Lamp.as_str().into());
    schema_kv(&mut m, &c.schema());
    for (k, v) in [
        ("d", c.d.to_string()),
        ("heads", c.heads.to_string()),
        ("steps", c.steps.to_string()),
        ("lambda", c.lambda.to_string()),
        ("dropout", c.dropout.to_string()),
        ("use_fmp", c.use_fmp.to_string()),
        ("fmp_layers", c.fmp_layers.to_string()),
        ("graph_mode", c.graph_mode.as_str().into()),
        ("use_positional", c.use_positional.to_string()),
        ("intermediate", c.intermediate.as_str().into()),
        ("precision", c.precision.as_str().into()),
        ("seed", c.seed.to_string()),
    ] {
        m.insert(k.into(), v);
    }
    m
}

pub fn mlp_config_to_kv(c: &MlpConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("model".into(), ModelKind::Mlp.as_str().into());
    schema_kv(&mut m, &c.schema);
    m.insert("d".into(), c.d.to_string());
    m.insert("dropout".into(), c.dropout.to_string());
    m.insert("seed".into(), c.seed.to_string());
    m.insert("precision".into(), c.precision.as_str().into());
    m
}

struct Kv<'a>(&'a BTreeMap<String, String>);

impl Kv<'_> {
    fn str(&self, k: &str) -> Result<&str> {
        self.0.get(k).map(String::as_str).ok_or_else(|| Error::Checkpoint(format!("config key {k} missing")))
    }

    fn parse<T: std::str::FromStr>(&self, k: &str) -> Result<T> {
        let v = self.str(k)?;
        v.parse().map_err(|_| Error::Checkpoint(format!("config key {k} has bad value {v:?}")))
    }

    fn with<T>(&self, k: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
        let v = self.str(k)?;
        f(v).ok_or_else(|| Error::Checkpoint(format!("config key {k} has bad value {v:?}")))
    }

    fn schema(&self) -> Result<Schema> {
        Ok(Schema {
            num_labels: self.parse("num_labels")?,
            num_features: self.parse("num_features")?,
            input_kind: self.with("input_kind", InputKind::parse)?,
            max_len: self.parse("max_len")?,
        })
    }
}

pub fn lamp_config_from_kv(map: &BTreeMap<String, String>) -> Result<LampConfig> {
    let kv = Kv(map);
    let schema = kv.schema()?;
    Ok(LampConfig {
        num_labels: schema.num_labels,
        num_features: schema.num_features,
        input_kind: schema.input_kind,
        max_len: schema.max_len,
        d: kv.parse("d")?,
        heads: kv.parse("heads")?,
        steps: kv.parse("steps")?,
        lambda: kv.parse("lambda")?,
        dropout: kv.parse("dropout")?,
        use_fmp: kv.parse("use_fmp")?,
        fmp_layers: kv.parse("fmp_layers")?,
        graph_mode: kv.with("graph_mode", GraphMode::parse)?,
        use_positional: kv.parse("use_positional")?,
        intermediate: kv.with("intermediate", IntermediateStages::parse)?,
        precision: kv.with("precision", Precision::parse)?,
        seed: kv.parse("seed")?,
    })
}

pub fn mlp_config_from_kv(map: &BTreeMap<String, String>) -> Result<MlpConfig> {
    let kv = Kv(map);
    Ok(MlpConfig {
        schema: kv.schema()?,
        d: kv.parse("d")?,
        dropout: kv.parse("dropout")?,
        seed: kv.parse("seed")?,
        precision: kv.with("precision", Precision::parse)?,
    })
}

fn store_tensors<T: Real>(store: &ParamStore<T>) -> Vec<StoredTensor> {
    store
        .entries()
        .iter()
        .map(|e| StoredTensor {
            name: e.name.clone(),
            shape: e.tensor.shape().to_vec(),
            data: match T::PRECISION {
                Precision::F32 => TensorData::F32(e.tensor.data().iter().map(|v| v.as_f64() as f32).collect()),
                Precision::F64 => TensorData::F64(e.tensor.data().iter().map(|v| v.as_f64()).collect()),
            },
        })
        .collect()
}

impl Checkpoint {
    pub fn from_lamp<T: Real>(model: &lamp_core::LampModel<T>, thresholds: [f64; 5]) -> Self {
        let graph = model.label_graph();
        Checkpoint {
            config: lamp_config_to_kv(model.config()),
            thresholds,
            adjacency: Some(graph.adjacency().to_vec()),
            input_graph: model.input_graph().map(|g| (g.num_nodes(), g.edges().collect())),
            tensors: store_tensors(model.params()),
        }
    }

    pub fn from_mlp<T: Real>(model: &MlpBaseline<T>, config: &MlpConfig, thresholds: [f64; 5]) -> Self {
        Checkpoint {
            config: mlp_config_to_kv(config),
            thresholds,
            adjacency: None,
            input_graph: None,
            tensors: store_tensors(model.params()),
        }
    }

    pub fn kind(&self) -> Result<ModelKind> {
        Kv(&self.config).with("model", ModelKind::parse)
    }

    pub fn precision(&self) -> Result<Precision> {
        Kv(&self.config).with("precision", Precision::parse)
    }

    pub fn schema(&self) -> Result<Schema> {
        Kv(&self.config).schema()
    }

    /// Fails unless `schema` matches the one the model was trained with.
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        let mine = self.schema()?;
        if &mine != schema {
            return Err(Error::Checkpoint(format!(
                "schema mismatch: checkpoint has L={} delta={} input_kind={} max_len={}, data has L={} delta={} input_kind={} max_len={}",
                mine.num_labels,
                mine.num_features,
                mine.input_kind.as_str(),
                mine.max_len,
                schema.num_labels,
                schema.num_features,
                schema.input_kind.as_str(),
                schema.max_len
            )));
        }
        Ok(())
    }

    fn load_params<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, t) in ids.into_iter().zip(&self.tensors) {
            if store.name(id) != t.name || store.get(id).shape() != t.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model tensor {} {:?}",
                    t.name,
                    t.shape,
                    store.name(id),
                    store.get(id).shape()
                )));
            }
            let data: Vec<T> = match &t.data {
                TensorData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
                TensorData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
            };
            *store.get_mut(id) = Tensor::new(t.shape.clone(), data)?;
        }
        Ok(())
    }

    pub fn build_lamp<T: Real>(&self) -> Result<lamp_core::LampModel<T>> {
        if self.kind()? != ModelKind::Lamp {
            return Err(Error::Checkpoint("not a LaMP checkpoint".into()));
        }
        let config = lamp_config_from_kv(&self.config)?;
        let l = config.num_labels;
        let adjacency = self.adjacency.clone().ok_or_else(|| Error::Checkpoint("label graph missing".into()))?;
        let graph = LabelGraph::from_adjacency(l, config.graph_mode, adjacency)
            .map_err(|e| Error::Checkpoint(format!("label graph: {e}")))?;
        let input_graph = match &self.input_graph {
            Some((n, edges)) => {
                Some(InputGraph::from_edges(*n, edges).map_err(|e| Error::Checkpoint(format!("input graph: {e}")))?)
            }
            None => None,
        };
        let mut model = lamp_core::LampModel::new(config, graph, input_graph)
            .map_err(|e| Error::Checkpoint(format!("config rejected: {e}")))?;
        self.load_params(model.params_mut())?;
        Ok(model)
    }

    pub fn build_mlp<T: Real>(&self) -> Result<(MlpBaseline<T>, MlpConfig)> {
        if self.kind()? != ModelKind::Mlp {
            return Err(Error::Checkpoint("not an MLP checkpoint".into()));
        }
        let config = mlp_config_from_kv(&self.config)?;
        let mut model = config.build::<T>().map_err(|e| Error::Checkpoint(format!("config rejected: {e}")))?;
        self.load_params(model.params_mut())?;
        Ok((model, config))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        let text: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_u32(&mut w, text.len() as u32);
        w.extend_from_slice(text.as_bytes());
        for t in self.thresholds {
            w.extend_from_slice(&t.to_le_bytes());
        }
        match &self.adjacency {
            Some(a) => {
                let l = (a.len() as f64).sqrt().round() as u32;
                put_u32(&mut w, l);
                w.extend(a.iter().map(|&b| u8::from(b)));
            }
            None => put_u32(&mut w, 0),
        }
        match &self.input_graph {
            Some((n, edges)) => {
                put_u32(&mut w, *n as u32);
                put_u32(&mut w, edges.len() as u32);
                for &(a, b) in edges {
                    put_u32(&mut w, a as u32);
                    put_u32(&mut w, b as u32);
                }
            }
            None => {
                put_u32(&mut w, 0);
                put_u32(&mut w, 0);
            }
        }
        put_u32(&mut w, self.tensors.len() as u32);
        for t in &self.tensors {
            put_u32(&mut w, t.name.len() as u32);
            w.extend_from_slice(t.name.as_bytes());
            put_u32(&mut w, t.shape.len() as u32);
            for &d in &t.shape {
                w.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => {
                    w.push(4);
                    v.iter().for_each(|x| w.extend_from_slice(&x.to_le_bytes()));
                }
                TensorData::F64(v) => {
                    w.push(8);
                    v.iter().for_each(|x| w.extend_from_slice(&x.to_le_bytes()));
                }
            }
        }
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        w
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a LaMP checkpoint (bad magic)".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let mut config = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
            config.insert(k.to_string(), v.to_string());
        }
        let mut thresholds = [0.0; 5];
        for t in &mut thresholds {
            *t = r.f64()?;
        }
        let l = r.u32()? as usize;
        let adjacency = if l == 0 { None } else { Some(r.take(l * l)?.iter().map(|&b| b != 0).collect()) };
        let nodes = r.u32()? as usize;
        let ne = r.u32()? as usize;
        let mut edges = Vec::with_capacity(ne);
        for _ in 0..ne {
            edges.push((r.u32()? as usize, r.u32()? as usize));
        }
        let input_graph = if nodes == 0 { None } else { Some((nodes, edges)) };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = match r.take(1)?[0] {
                4 => TensorData::F32(
                    r.take(numel * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                8 => TensorData::F64(
                    r.take(numel * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                d => return Err(Error::Checkpoint(format!("unknown dtype tag {d}"))),
            };
            tensors.push(StoredTensor { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        Ok(Checkpoint { config, thresholds, adjacency, input_graph, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
