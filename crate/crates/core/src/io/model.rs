use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{Reader, Writer};
use super::{write_atomic, FORMAT_VERSION, TOOL_VERSION};
use crate::error::{Error, Result};
use crate::net::{Activation, Block, LinearMap, MeanFieldLayer, Network};

const MAGIC: &[u8; 4] = b"WFM1";
/// Above this many parameters the binary container is the default.
const BINARY_THRESHOLD: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            seed: 0,
            config_hash: String::new(),
            tool_version: TOOL_VERSION.into(),
        }
    }
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            seed,
            config_hash: config_hash.into(),
            tool_version: TOOL_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum BlockRecord {
    #[serde(rename = "meanfield")]
    MeanField {
        d_in: usize,
        d_out: usize,
        m: usize,
        theta0: Vec<f64>,
        theta1: Vec<f64>,
    },
    Linear {
        rows: usize,
        cols: usize,
        a: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelRecord {
    format_version: u32,
    activation: Activation,
    blocks: Vec<BlockRecord>,
    provenance: Provenance,
}

/// A network together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub network: Network,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFormat {
    Json,
    Binary,
}

impl ModelFormat {
    /// `.wfm` is binary, `.json` is JSON; otherwise binary above 10^6
    /// parameters.
    pub fn for_path(path: &Path, params: usize) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("wfm") => ModelFormat::Binary,
            Some("json") => ModelFormat::Json,
            _ if params > BINARY_THRESHOLD => ModelFormat::Binary,
            _ => ModelFormat::Json,
        }
    }
}

fn to_record(net: &Network, provenance: &Provenance) -> ModelRecord {
    let blocks = net
        .blocks()
        .iter()
        .map(|b| match b {
            Block::MeanField(l) => BlockRecord::MeanField {
                d_in: l.d_in(),
                d_out: l.d_out(),
                m: l.width(),
                theta0: l.theta0_flat().to_vec(),
                theta1: l.theta1_flat().to_vec(),
            },
            Block::Linear(l) => BlockRecord::Linear {
                rows: l.rows(),
                cols: l.cols(),
                a: l.entries().to_vec(),
            },
        })
        .collect();
    ModelRecord {
        format_version: FORMAT_VERSION,
        activation: net.activation(),
        blocks,
        provenance: provenance.clone(),
    }
}

fn array_len(i: usize, what: &str, declared: usize, actual: usize) -> Result<()> {
    if declared != actual {
        return Err(Error::Malformed(format!(
            "block {i}: {what} has {actual} entries, dims declare {declared}"
        )));
    }
    Ok(())
}

fn from_record(rec: ModelRecord) -> Result<ModelFile> {
    if rec.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: rec.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if rec.blocks.is_empty() {
        return Err(Error::Malformed("model has no blocks".into()));
    }
    let mut blocks = Vec::with_capacity(rec.blocks.len());
    for (i, b) in rec.blocks.into_iter().enumerate() {
        blocks.push(match b {
            BlockRecord::MeanField {
                d_in,
                d_out,
                m,
                theta0,
                theta1,
            } => {
                if d_in == 0 || d_out == 0 || m == 0 {
                    return Err(Error::Malformed(format!("block {i}: zero dimension")));
                }
                array_len(i, "theta0", d_in.saturating_mul(m), theta0.len())?;
                array_len(i, "theta1", d_out.saturating_mul(m), theta1.len())?;
                MeanFieldLayer::from_flat(d_in, d_out, theta0, theta1).map_err(|e| e.at(i))?.into()
            }
            BlockRecord::Linear { rows, cols, a } => {
                if rows == 0 || cols == 0 {
                    return Err(Error::Malformed(format!("block {i}: zero dimension")));
                }
                array_len(i, "a", rows.saturating_mul(cols), a.len())?;
                LinearMap::new(rows, cols, a).map_err(|e| e.at(i))?.into()
            }
        });
    }
    Ok(ModelFile {
        network: Network::new(blocks, rec.activation)?,
        provenance: rec.provenance,
    })
}

fn encode_json(net: &Network, provenance: &Provenance) -> Vec<u8> {
    let mut s = serde_json::to_string(&to_record(net, provenance)).expect("model serializes");
    s.push('\n');
    s.into_bytes()
}

fn decode_json(bytes: &[u8]) -> Result<ModelFile> {
    let parse = |e: serde_json::Error| Error::Malformed(format!("line {} column {}: {e}", e.line(), e.column()));
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(parse)?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Malformed("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: FORMAT_VERSION,
        });
    }
    from_record(serde_json::from_value(value).map_err(parse)?)
}

fn encode_binary(net: &Network, provenance: &Provenance) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, FORMAT_VERSION);
    w.u8(match net.activation() {
        Activation::Tanh => 0,
        Activation::Sigmoid => 1,
    });
    w.bytes(serde_json::to_string(provenance).expect("provenance serializes").as_bytes());
    w.u64(net.len() as u64);
    for b in net.blocks() {
        match b {
            Block::MeanField(l) => {
                w.u8(0);
                w.u64(l.d_in() as u64);
                w.u64(l.d_out() as u64);
                w.u64(l.width() as u64);
                w.f64s(l.theta0_flat());
                w.f64s(l.theta1_flat());
            }
            Block::Linear(l) => {
                w.u8(1);
                w.u64(l.rows() as u64);
                w.u64(l.cols() as u64);
                w.f64s(l.entries());
            }
        }
    }
    w.0
}

fn decode_binary(bytes: &[u8]) -> Result<ModelFile> {
    let (mut r, version) = Reader::open(bytes, MAGIC)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Sigmoid,
        k => return Err(Error::Malformed(format!("unknown activation code {k}"))),
    };
    let provenance: Provenance =
        serde_json::from_slice(r.bytes()?).map_err(|e| Error::Malformed(format!("provenance: {e}")))?;
    let n = r.usize()?;
    let mut blocks = Vec::new();
    for _ in 0..n {
        blocks.push(match r.u8()? {
            0 => {
                let (d_in, d_out, m) = (r.usize()?, r.usize()?, r.usize()?);
                let theta0 = r.f64s(d_in.saturating_mul(m))?;
                let theta1 = r.f64s(d_out.saturating_mul(m))?;
                BlockRecord::MeanField {
                    d_in,
                    d_out,
                    m,
                    theta0,
                    theta1,
                }
            }
            1 => {
                let (rows, cols) = (r.usize()?, r.usize()?);
                BlockRecord::Linear {
                    rows,
                    cols,
                    a: r.f64s(rows.saturating_mul(cols))?,
                }
            }
            k => return Err(Error::Malformed(format!("unknown block kind {k}"))),
        });
    }
    r.finish()?;
    from_record(ModelRecord {
        format_version: version,
        activation,
        blocks,
        provenance,
    })
}

pub fn save_model_as(net: &Network, provenance: &Provenance, path: &Path, format: ModelFormat) -> Result<()> {
    let bytes = match format {
        ModelFormat::Json => encode_json(net, provenance),
        ModelFormat::Binary => encode_binary(net, provenance),
    };
    write_atomic(path, &bytes)
}

/// Save in the format implied by the path (see [`ModelFormat::for_path`]).
pub fn save_model(net: &Network, provenance: &Provenance, path: &Path) -> Result<()> {
    save_model_as(net, provenance, path, ModelFormat::for_path(path, net.num_params()))
}

/// Load either container, detected by content.
pub fn load_model_file(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        decode_json(&bytes)
    }
}

pub fn load_model(path: &Path) -> Result<Network> {
    load_model_file(path).map(|f| f.network)
}
