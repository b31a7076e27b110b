//! Neumann-to-Dirichlet datasets: one receiver trace per basis source.
//!
//! On disk a dataset is
//!
//! ```text
//! "BCND1" | header length (u64 LE) | header (TOML text) | traces (f64 LE)
//! ```
//!
//! Traces are stored source by source in basis order; each trace is laid out
//! receiver time major, `(l, k)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::HalfPlaneGeometry;
use crate::wave_sim::basis::{ReceiverGrid, SourceBasis};
use crate::wave_sim::solver::{FdMesh, Forcing, SolverParams, WaveSolver, SCHEME_ID};

pub const DATASET_MAGIC: &[u8; 5] = b"BCND1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub scheme: String,
    pub params: SolverParams,
    pub mesh: FdMesh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub geometry: HalfPlaneGeometry,
    pub basis: SourceBasis,
    pub receivers: ReceiverGrid,
    pub solver: SolverMeta,
    pub sources: usize,
    pub samples_per_source: usize,
}

impl DatasetHeader {
    fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot encode dataset header: {e}")))
    }

    fn check(&self) -> Result<()> {
        if self.sources != self.basis.len() || self.samples_per_source != self.receivers.len() {
            return Err(Error::Format(format!(
                "header declares {} x {} samples but the grids give {} x {}",
                self.sources,
                self.samples_per_source,
                self.basis.len(),
                self.receivers.len()
            )));
        }
        Ok(())
    }
}

/// Sampled `Λ^{2T} φ_idx` for every basis function.
#[derive(Debug, Clone, PartialEq)]
pub struct NtDDataset {
    pub header: DatasetHeader,
    traces: Vec<f64>,
}

impl NtDDataset {
    pub fn new(header: DatasetHeader, traces: Vec<f64>) -> Result<Self> {
        header.check()?;
        if traces.len() != header.sources * header.samples_per_source {
            return Err(Error::Dimension(format!(
                "{} trace samples for {} sources of {} samples",
                traces.len(),
                header.sources,
                header.samples_per_source
            )));
        }
        Ok(Self { header, traces })
    }

    pub fn len(&self) -> usize {
        self.header.sources
    }

    pub fn is_empty(&self) -> bool {
        self.header.sources == 0
    }

    pub fn trace(&self, idx: usize) -> &[f64] {
        let n = self.header.samples_per_source;
        &self.traces[idx * n..(idx + 1) * n]
    }

    pub fn basis(&self) -> &SourceBasis {
        &self.header.basis
    }

    pub fn receivers(&self) -> &ReceiverGrid {
        &self.header.receivers
    }

    pub fn geometry(&self) -> &HalfPlaneGeometry {
        &self.header.geometry
    }

    /// SHA-256 of the serialized dataset.
    pub fn content_hash(&self) -> Result<String> {
        let mut w = HashingWriter::new(std::io::sink());
        self.write_to(&mut w)?;
        Ok(w.finish().1)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut sink = DatasetWriter::new(w, &self.header)?;
        for idx in 0..self.len() {
            sink.push(self.trace(idx))?;
        }
        sink.finish()?;
        Ok(())
    }

    /// Writes the dataset and returns its content hash.
    pub fn save(&self, path: &Path) -> Result<String> {
        let file = BufWriter::new(File::create(path)?);
        let mut w = HashingWriter::new(file);
        self.write_to(&mut w)?;
        let (mut file, hash) = w.finish();
        file.flush()?;
        Ok(hash)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = DatasetReader::open(path)?;
        let n = reader.header.samples_per_source;
        let mut traces = vec![0.0; reader.header.sources * n];
        for chunk in traces.chunks_mut(n.max(1)) {
            if !reader.next_trace(chunk)? {
                return Err(Error::Format("dataset ends before the declared number of sources".into()));
            }
        }
        let header = reader.header.clone();
        Self::new(header, traces)
    }
}

/// Streams traces to a writer in basis order.
pub struct DatasetWriter<'a, W: Write> {
    inner: &'a mut W,
    samples: usize,
    remaining: usize,
    buf: Vec<u8>,
}

impl<'a, W: Write> DatasetWriter<'a, W> {
    pub fn new(inner: &'a mut W, header: &DatasetHeader) -> Result<Self> {
        header.check()?;
        let text = header.to_text()?;
        inner.write_all(DATASET_MAGIC)?;
        inner.write_all(&(text.len() as u64).to_le_bytes())?;
        inner.write_all(text.as_bytes())?;
        Ok(Self { inner, samples: header.samples_per_source, remaining: header.sources, buf: Vec::new() })
    }

    pub fn push(&mut self, trace: &[f64]) -> Result<()> {
        if self.remaining == 0 {
            return Err(Error::Dimension("more traces than declared sources".into()));
        }
        if trace.len() != self.samples {
            return Err(Error::Dimension(format!("trace of {} samples, expected {}", trace.len(), self.samples)));
        }
        self.buf.clear();
        for v in trace {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&self.buf)?;
        self.remaining -= 1;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::Dimension(format!("{} traces missing", self.remaining)));
        }
        Ok(())
    }
}

/// Reads a dataset one trace at a time.
pub struct DatasetReader<R: Read> {
    pub header: DatasetHeader,
    inner: R,
    remaining: usize,
    buf: Vec<u8>,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        inner.read_exact(&mut magic).map_err(|_| Error::Format("file too short for a dataset".into()))?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a BCND1 dataset".into()));
        }
        let mut len = [0u8; 8];
        inner.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 32 {
            return Err(Error::Format(format!("implausible header length {len}")));
        }
        let mut text = vec![0u8; len as usize];
        inner.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|_| Error::Format("dataset header is not UTF-8".into()))?;
        let header: DatasetHeader =
            toml::from_str(&text).map_err(|e| Error::Format(format!("bad dataset header: {e}")))?;
        header.check()?;
        let remaining = header.sources;
        Ok(Self { header, inner, remaining, buf: Vec::new() })
    }

    /// Fills `out` with the next trace; `false` once all traces are read.
    pub fn next_trace(&mut self, out: &mut [f64]) -> Result<bool> {
        if self.remaining == 0 {
            return Ok(false);
        }
        let n = self.header.samples_per_source;
        if out.len() != n {
            return Err(Error::Dimension(format!("buffer of {} samples, expected {n}", out.len())));
        }
        self.buf.resize(8 * n, 0);
        self.inner
            .read_exact(&mut self.buf)
            .map_err(|_| Error::Format("dataset truncated".into()))?;
        for (o, b) in out.iter_mut().zip(self.buf.chunks_exact(8)) {
            *o = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
        self.remaining -= 1;
        Ok(true)
    }
}

/// Writer adapter that hashes everything passing through it.
pub struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> HashingWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, hasher: Sha256::new() }
    }

    pub fn finish(self) -> (W, String) {
        (self.inner, hex::encode(self.hasher.finalize()))
    }
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// SHA-256 of a file on disk.
pub fn file_hash(path: &Path) -> Result<String> {
    let mut f = BufReader::new(File::open(path)?);
    let mut w = HashingWriter::new(std::io::sink());
    std::io::copy(&mut f, &mut w)?;
    Ok(w.finish().1)
}

/// Builds the solver for an acquisition together with the matching header.
pub fn prepare_dataset(
    geom: &HalfPlaneGeometry,
    basis: &SourceBasis,
    receivers: &ReceiverGrid,
    params: &SolverParams,
) -> Result<(WaveSolver, DatasetHeader)> {
    receivers.validate(geom, Some(basis))?;
    let solver = WaveSolver::new(geom, receivers, basis, params)?;
    let header = DatasetHeader {
        geometry: geom.clone(),
        basis: basis.clone(),
        receivers: *receivers,
        solver: SolverMeta { scheme: SCHEME_ID.to_string(), params: params.clone(), mesh: solver.mesh().clone() },
        sources: basis.len(),
        samples_per_source: receivers.len(),
    };
    Ok((solver, header))
}

/// Simulates every basis source and hands the traces to `sink` in basis
/// order. Sources are simulated in parallel on the current rayon pool.
pub fn simulate_sources<F>(solver: &WaveSolver, basis: &SourceBasis, mut sink: F) -> Result<()>
where
    F: FnMut(usize, &[f64]) -> Result<()>,
{
    let m = solver.mesh();
    log::info!(
        "simulating {} sources on a {}x{} mesh (h = {}, dt = {})",
        basis.len(),
        m.nx,
        m.nz,
        m.h,
        m.dt
    );
    let chunk = 4 * rayon::current_num_threads().max(1);
    let indices: Vec<usize> = (0..basis.len()).collect();
    for block in indices.chunks(chunk) {
        let traces: Vec<Result<Vec<f64>>> = block
            .par_iter()
            .map(|&idx| solver.simulate_trace(&Forcing::basis_function(basis, idx)))
            .collect();
        for (&idx, trace) in block.iter().zip(traces) {
            let trace = trace?;
            if trace.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite samples in the trace of source {idx}")));
            }
            sink(idx, &trace)?;
        }
        log::debug!("simulated {}/{} sources", block.last().map_or(0, |i| i + 1), basis.len());
    }
    Ok(())
}

/// Simulates the full dataset in memory.
pub fn build_ntd_dataset(
    geom: &HalfPlaneGeometry,
    basis: &SourceBasis,
    receivers: &ReceiverGrid,
    params: &SolverParams,
) -> Result<NtDDataset> {
    let (solver, header) = prepare_dataset(geom, basis, receivers, params)?;
    let mut traces = Vec::with_capacity(basis.len() * receivers.len());
    simulate_sources(&solver, basis, |_, trace| {
        traces.extend_from_slice(trace);
        Ok(())
    })?;
    NtDDataset::new(header, traces)
}

/// Simulates the dataset straight to disk and returns its content hash.
pub fn simulate_to_file(
    geom: &HalfPlaneGeometry,
    basis: &SourceBasis,
    receivers: &ReceiverGrid,
    params: &SolverParams,
    path: &Path,
) -> Result<String> {
    let (solver, header) = prepare_dataset(geom, basis, receivers, params)?;
    let tmp = path.with_extension("partial");
    let mut out = HashingWriter::new(BufWriter::new(File::create(&tmp)?));
    let mut writer = DatasetWriter::new(&mut out, &header)?;
    simulate_sources(&solver, basis, |_, trace| writer.push(trace))?;
    writer.finish()?;
    let (mut file, hash) = out.finish();
    file.flush()?;
    drop(file);
    std::fs::rename(&tmp, path)?;
    Ok(hash)
}
