//! Post corpora: validation, the JSONL and EMBD on-disk formats, and strided chunking.
//!
//! EMBD layout (little-endian):
//!
//! ```text
//! "GTE1"            4 bytes
//! n                 u32
//! d                 u32
//! embeddings        n * d f32, row-major
//! coordinates       n * (f64 lat, f64 lon)
//! trailer length    u64
//! trailer           UTF-8 JSON {"ids": [...], "texts": [...] | null}
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBD_MAGIC: &[u8; 4] = b"GTE1";
pub const EMBD_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    pub lat: f64,
    pub lon: f64,
}

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let c = GeoCoordinate { lat, lon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon);
        if ok {
            Ok(())
        } else {
            Err(Error::CoordinateOutOfRange {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

/// A single post as supplied by callers; the corpus stores posts column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Post {
    pub id: String,
    pub embedding: Vec<f32>,
    pub coord: GeoCoordinate,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    ids: Vec<String>,
    embeddings: Array2<f32>,
    coords: Vec<GeoCoordinate>,
    texts: Vec<Option<String>>,
}

impl Corpus {
    /// Builds a validated corpus, preserving post order.
    pub fn new(posts: Vec<Post>) -> Result<Self> {
        let first = posts.first().ok_or(Error::EmptyCorpus)?;
        let dim = first.embedding.len();
        let n = posts.len();
        let mut ids = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        let mut texts = Vec::with_capacity(n);
        let mut flat = Vec::with_capacity(n * dim);
        for post in posts {
            if post.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: post.embedding.len(),
                    context: format!("post {:?}", post.id),
                });
            }
            flat.extend_from_slice(&post.embedding);
            ids.push(post.id);
            coords.push(post.coord);
            texts.push(post.text);
        }
        let embeddings = Array2::from_shape_vec((n, dim), flat).expect("shape checked above");
        Self::from_parts(ids, embeddings, coords, texts)
    }

    pub fn from_parts(
        ids: Vec<String>,
        embeddings: Array2<f32>,
        coords: Vec<GeoCoordinate>,
        texts: Vec<Option<String>>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        if embeddings.ncols() == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be >= 1".into()));
        }
        for (len, what) in [
            (embeddings.nrows(), "embedding rows"),
            (coords.len(), "coordinates"),
            (texts.len(), "texts"),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                    context: what.into(),
                });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            coords[i].validate()?;
            if embeddings.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteEmbedding(id.clone()));
            }
        }
        Ok(Corpus {
            ids,
            embeddings,
            coords,
            texts,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Array2<f32> {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> ArrayView1<'_, f32> {
        self.embeddings.row(i)
    }

    /// Embeddings widened to f64 for the numeric pipeline.
    pub fn features(&self) -> Array2<f64> {
        self.embeddings.mapv(f64::from)
    }

    pub fn coords(&self) -> &[GeoCoordinate] {
        &self.coords
    }

    pub fn texts(&self) -> &[Option<String>] {
        &self.texts
    }

    /// True when every post carries text.
    pub fn has_text(&self) -> bool {
        self.texts.iter().all(Option::is_some)
    }

    pub fn post(&self, i: usize) -> Post {
        Post {
            id: self.ids[i].clone(),
            embedding: self.embeddings.row(i).to_vec(),
            coord: self.coords[i],
            text: self.texts[i].clone(),
        }
    }

    /// Same posts with the embedding matrix replaced (e.g. by learned embeddings).
    pub fn with_embeddings(&self, embeddings: Array2<f32>) -> Result<Self> {
        Self::from_parts(self.ids.clone(), embeddings, self.coords.clone(), self.texts.clone())
    }

    /// Sub-corpus over the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let embeddings = self.embeddings.select(ndarray::Axis(0), indices);
        Self::from_parts(
            indices.iter().map(|&i| self.ids[i].clone()).collect(),
            embeddings,
            indices.iter().map(|&i| self.coords[i]).collect(),
            indices.iter().map(|&i| self.texts[i].clone()).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Embd,
}

impl CorpusFormat {
    /// Infers the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "json" | "ndjson" => Some(CorpusFormat::Jsonl),
            "embd" | "bin" => Some(CorpusFormat::Embd),
            _ => None,
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "embd" => Ok(CorpusFormat::Embd),
            other => Err(Error::InvalidParameter(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    id: String,
    lat: f64,
    lon: f64,
    embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct EmbdTrailer {
    ids: Vec<String>,
    texts: Option<Vec<Option<String>>>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        CorpusFormat::Jsonl => read_jsonl(reader, path),
        CorpusFormat::Embd => read_embd(reader, path),
    }
}

pub fn write_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        CorpusFormat::Jsonl => write_jsonl(corpus, &mut writer),
        CorpusFormat::Embd => write_embd(corpus, &mut writer),
    }
    .map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Corpus> {
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut texts = Vec::new();
    let mut flat: Vec<f32> = Vec::new();
    let mut dim = None;
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        let d = *dim.get_or_insert(rec.embedding.len());
        if rec.embedding.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: rec.embedding.len(),
                context: format!("line {line_no}"),
            });
        }
        let coord = GeoCoordinate {
            lat: rec.lat,
            lon: rec.lon,
        };
        coord.validate()?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        flat.extend(rec.embedding.iter().map(|&v| v as f32));
        ids.push(rec.id);
        coords.push(coord);
        texts.push(rec.text);
    }
    let d = dim.ok_or(Error::EmptyCorpus)?;
    let embeddings = Array2::from_shape_vec((ids.len(), d), flat).expect("rows checked");
    Corpus::from_parts(ids, embeddings, coords, texts)
}

fn write_jsonl(corpus: &Corpus, w: &mut impl Write) -> std::io::Result<()> {
    for i in 0..corpus.len() {
        let rec = JsonlRecord {
            id: corpus.ids[i].clone(),
            lat: corpus.coords[i].lat,
            lon: corpus.coords[i].lon,
            embedding: corpus.embeddings.row(i).iter().map(|&v| f64::from(v)).collect(),
            text: corpus.texts[i].clone(),
        };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn embd_err(message: impl Into<String>) -> Error {
    Error::MalformedFile {
        format: "EMBD",
        message: message.into(),
    }
}

fn read_embd(mut reader: impl Read, path: &Path) -> Result<Corpus> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < EMBD_HEADER_LEN || &bytes[..4] != EMBD_MAGIC {
        return Err(embd_err("bad magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let emb_len = n * d * 4;
    let coord_len = n * 16;
    let fixed = EMBD_HEADER_LEN + emb_len + coord_len + 8;
    if bytes.len() < fixed {
        return Err(embd_err(format!(
            "truncated: {} bytes, need at least {fixed}",
            bytes.len()
        )));
    }
    let mut off = EMBD_HEADER_LEN;
    let flat: Vec<f32> = bytes[off..off + emb_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    off += emb_len;
    let coords: Vec<GeoCoordinate> = bytes[off..off + coord_len]
        .chunks_exact(16)
        .map(|c| GeoCoordinate {
            lat: f64::from_le_bytes(c[..8].try_into().unwrap()),
            lon: f64::from_le_bytes(c[8..].try_into().unwrap()),
        })
        .collect();
    off += coord_len;
    let trailer_len = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
    off += 8;
    if bytes.len() != off + trailer_len {
        return Err(embd_err(format!(
            "trailer length {trailer_len} does not match remaining {} bytes",
            bytes.len() - off
        )));
    }
    let trailer: EmbdTrailer = serde_json::from_slice(&bytes[off..]).map_err(|e| embd_err(e.to_string()))?;
    if trailer.ids.len() != n {
        return Err(embd_err(format!("trailer has {} ids for {n} posts", trailer.ids.len())));
    }
    let texts = match trailer.texts {
        Some(t) if t.len() == n => t,
        Some(t) => return Err(embd_err(format!("trailer has {} texts for {n} posts", t.len()))),
        None => vec![None; n],
    };
    let embeddings = Array2::from_shape_vec((n, d), flat).expect("length computed from n*d");
    Corpus::from_parts(trailer.ids, embeddings, coords, texts)
}

fn write_embd(corpus: &Corpus, w: &mut impl Write) -> std::io::Result<()> {
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "too large for EMBD"))
    };
    w.write_all(EMBD_MAGIC)?;
    w.write_all(&to_u32(corpus.len())?.to_le_bytes())?;
    w.write_all(&to_u32(corpus.dim())?.to_le_bytes())?;
    for v in corpus.embeddings.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for c in &corpus.coords {
        w.write_all(&c.lat.to_le_bytes())?;
        w.write_all(&c.lon.to_le_bytes())?;
    }
    let trailer = EmbdTrailer {
        ids: corpus.ids.clone(),
        texts: corpus.texts.iter().any(Option::is_some).then(|| corpus.texts.clone()),
    };
    let json = serde_json::to_vec(&trailer)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)
}

/// Interleaved index subsets: chunk `i` holds `i, i+s, i+2s, ...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub stride: usize,
    pub chunks: Vec<Vec<usize>>,
}

pub fn stride_chunks(n: usize, stride: usize) -> Result<ChunkPlan> {
    if stride < 1 || stride > n {
        return Err(Error::InvalidParameter(format!(
            "stride must satisfy 1 <= s <= n (s={stride}, n={n})"
        )));
    }
    let chunks = (0..stride).map(|i| (i..n).step_by(stride).collect()).collect();
    Ok(ChunkPlan { stride, chunks })
}
