//! Precoder documents (JSON) and the results CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::PrecoderSet;
use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix};

pub const PRECODER_FORMAT: &str = "macprecode-precoders";
pub const PRECODER_VERSION: u32 = 1;
pub const CSV_SCHEMA: &str = "# macprecode-sweep v1";

pub fn build_id() -> String {
    match option_env!("MACPRECODE_BUILD_ID") {
        Some(id) => format!("{}+{id}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// SHA-256 of the canonical experiment config.
    pub config_hash: String,
    pub seed: u64,
    pub build_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Config index of each stored user (users are stored in decoding order).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_order: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrecoderDocument {
    format: String,
    version: u32,
    n_users: usize,
    n_t: usize,
    powers: Vec<f64>,
    weights: Vec<f64>,
    /// Per user, rows of `[re, im]` pairs.
    precoders: Vec<Vec<Vec<[f64; 2]>>>,
    provenance: Provenance,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn save_precoders(path: &Path, set: &PrecoderSet, provenance: &Provenance) -> Result<()> {
    let doc = PrecoderDocument {
        format: PRECODER_FORMAT.into(),
        version: PRECODER_VERSION,
        n_users: set.len(),
        n_t: set.n_t(),
        powers: set.powers().to_vec(),
        weights: set.weights().to_vec(),
        precoders: set
            .precoders()
            .iter()
            .map(|b| {
                (0..b.nrows())
                    .map(|i| (0..b.ncols()).map(|j| [b[(i, j)].re, b[(i, j)].im]).collect())
                    .collect()
            })
            .collect(),
        provenance: provenance.clone(),
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &doc)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_precoders(path: &Path) -> Result<(PrecoderSet, Provenance)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_precoders(&text, path)
}

pub fn parse_precoders(text: &str, path: &Path) -> Result<(PrecoderSet, Provenance)> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let doc: PrecoderDocument = serde_json::from_str(text)
        .map_err(|e| parse_err(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    if doc.format != PRECODER_FORMAT || doc.version != PRECODER_VERSION {
        return Err(parse_err(format!(
            "unsupported document {} v{} (expected {PRECODER_FORMAT} v{PRECODER_VERSION})",
            doc.format, doc.version
        )));
    }
    if doc.precoders.len() != doc.n_users {
        return Err(parse_err(format!(
            "field `precoders`: {} matrices for n_users = {}",
            doc.precoders.len(),
            doc.n_users
        )));
    }
    let mut mats = Vec::with_capacity(doc.n_users);
    for (k, rows) in doc.precoders.iter().enumerate() {
        if rows.len() != doc.n_t || rows.iter().any(|r| r.len() != doc.n_t) {
            return Err(parse_err(format!("field `precoders[{k}]`: expected {0}x{0} entries", doc.n_t)));
        }
        mats.push(CMatrix::from_fn(doc.n_t, doc.n_t, |i, j| c(rows[i][j][0], rows[i][j][1])));
    }
    let set = PrecoderSet::new(mats, doc.powers, doc.weights)?;
    Ok((set, doc.provenance))
}

/// One SNR point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub wsr_opt_bits: Option<f64>,
    pub wsr_np_bits: f64,
    pub mc_exact_bits: Option<f64>,
    pub mc_se_bits: Option<f64>,
    pub residual: f64,
    pub converged: bool,
    pub seconds: f64,
    /// Per-user power budget, in config user order; not part of the CSV.
    #[serde(skip)]
    pub powers: Vec<f64>,
    /// Error message when the point failed; not part of the CSV.
    #[serde(skip)]
    pub error: Option<String>,
}

/// CSV writer that flushes after every row.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = create(path)?;
        writeln!(w, "{CSV_SCHEMA}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(w),
        })
    }

    pub fn write(&mut self, row: &SweepRow) -> Result<()> {
        let to_io = |e: csv::Error| std::io::Error::other(e);
        self.writer
            .serialize(row)
            .map_err(|e| Error::io(&self.path, to_io(e)))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}
