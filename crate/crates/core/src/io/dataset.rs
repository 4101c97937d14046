use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::binary::{Reader, Writer};
use super::{write_atomic, FORMAT_VERSION};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::train::fmt_f64;

const MAGIC: &[u8; 4] = b"WFD1";
const CSV_TAG: &str = "# winforge-dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    /// `.wfd` is binary, anything else CSV.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("wfd") => DatasetFormat::Binary,
            _ => DatasetFormat::Csv,
        }
    }
}

/// `# winforge-dataset d=<d> N=<N> c=<c> generator=<descriptor>` followed by
/// rows `x_1,...,x_d,y`.
pub fn write_dataset_csv<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    writeln!(
        out,
        "{CSV_TAG} d={} N={} c={} generator={}",
        data.dim(),
        data.len(),
        fmt_f64(data.bound()),
        data.generator()
    )?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut row = Vec::with_capacity(data.dim() + 1);
    for i in 0..data.len() {
        row.clear();
        row.extend(data.x(i).iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(data.y(i)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    header
        .split(' ')
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Malformed(format!("dataset header lacks {key}=")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Malformed(format!("cannot parse {what} from {s:?}")))
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let header = header.trim_end_matches(['\n', '\r']);
    let rest = header
        .strip_prefix(CSV_TAG)
        .ok_or_else(|| Error::Malformed("missing dataset header line".into()))?;
    let d: usize = parse(header_field(rest, "d")?, "d")?;
    let n: usize = parse(header_field(rest, "N")?, "N")?;
    let c: f64 = parse(header_field(rest, "c")?, "c")?;
    let generator = rest
        .split_once(" generator=")
        .map(|(_, g)| g.to_string())
        .ok_or_else(|| Error::Malformed("dataset header lacks generator=".into()))?;
    let mut xs = Vec::with_capacity(n.saturating_mul(d));
    let mut ys = Vec::with_capacity(n);
    let mut rows = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    for (i, rec) in rows.records().enumerate() {
        let rec = rec?;
        if rec.len() != d + 1 {
            return Err(Error::Malformed(format!("row {i} has {} fields, expected {}", rec.len(), d + 1)));
        }
        for f in rec.iter().take(d) {
            xs.push(parse(f, "x")?);
        }
        ys.push(parse(&rec[d], "y")?);
    }
    if ys.len() != n {
        return Err(Error::Malformed(format!("header declares {n} rows, found {}", ys.len())));
    }
    Dataset::new(d, xs, ys, c, generator)
}

fn encode_binary(data: &Dataset) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, FORMAT_VERSION);
    w.u64(data.dim() as u64);
    w.u64(data.len() as u64);
    w.f64(data.bound());
    w.bytes(data.generator().as_bytes());
    for i in 0..data.len() {
        w.f64s(data.x(i));
        w.f64(data.y(i));
    }
    w.0
}

fn decode_binary(bytes: &[u8]) -> Result<Dataset> {
    let (mut r, version) = Reader::open(bytes, MAGIC)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let d = r.usize()?;
    let n = r.usize()?;
    let c = r.f64()?;
    let generator = String::from_utf8(r.bytes()?.to_vec())
        .map_err(|_| Error::Malformed("generator descriptor is not UTF-8".into()))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        xs.extend(r.f64s(d)?);
        ys.push(r.f64()?);
    }
    r.finish()?;
    Dataset::new(d, xs, ys, c, generator)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let bytes = match DatasetFormat::for_path(path) {
        DatasetFormat::Binary => encode_binary(data),
        DatasetFormat::Csv => {
            let mut buf = Vec::new();
            write_dataset_csv(data, &mut buf)?;
            buf
        }
    };
    write_atomic(path, &bytes)
}

/// Load either container, detected by content.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        read_dataset_csv(bytes.as_slice())
    }
}
